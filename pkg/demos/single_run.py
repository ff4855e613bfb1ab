"""One run of the four-target scenario, printed track by track.

    python demos/single_run.py [seed]

Targets 1 and 2 fly north 100 m apart and turn together at scan 11;
targets 3 and 4 appear at scan 11 heading west and turn at scan 21. The
pairs cross each other's paths, which is where association gets hard.
"""

import sys

import numpy as np

from mpmmtt.metrics import assign_tracks, evaluate
from mpmmtt.simulator import simulate, table1_scenario
from mpmmtt.tracker import MPMMTTracker, TrackerConfig

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
spec = table1_scenario()
truth, frames = simulate(spec, seed)
print("scans: %d, measurements: %d, clutter points: %d"
      % (len(frames), sum(len(f) for f in frames),
         sum(int((f.labels < 0).sum()) for f in frames)))

mods = spec.motion_models()
tracker = MPMMTTracker(TrackerConfig(), [mods["CV"], mods["CT"]], spec.sensor())
estimates = tracker.run(frames)

# which target each emitted track ended up following
asg = assign_tracks(estimates, truth)
by_track = {}
for e in estimates:
    by_track.setdefault(e.track_id, []).append(e)
for tid, est in sorted(by_track.items()):
    target = asg.target_of[tid]
    label = "false" if target is None else "target %d" % (target + 1)
    ct = np.array([e.model_probs[1] for e in est])
    print("track %2d  scans %2d-%2d  %-9s  mean p(CT) %.2f  max p(CT) %.2f"
          % (tid, est[0].time, est[-1].time, label, ct.mean(), ct.max()))

iters = [w["iterations"] for w in tracker.windows]
print("window iterations: mean %.2f, max %d" % (np.mean(iters), max(iters)))

report, series = evaluate(estimates, truth, frames)
print()
for k, v in report.as_dict().items():
    if k == "TET_s":
        continue
    print("%-6s %8.3f" % (k, v))
print("OSPA per scan:", np.round(series["OSPA"], 1))
