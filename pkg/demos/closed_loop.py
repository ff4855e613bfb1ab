"""Effect of the window iterations and of smoothing, on paired seeds.

    python demos/closed_loop.py [runs]

``r_max = 0`` keeps the forward-filter beliefs (no feedback between the
association, visibility, model and kinematic updates); ``r_max = 3`` lets
them refine each other. Real-time output reports the newest scan of every
window instead of the window-final smoothed estimate.
"""

import sys

import numpy as np

from mpmmtt.experiment import MetricConfig, run_single
from mpmmtt.simulator import table1_scenario
from mpmmtt.tracker import TrackerConfig

runs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
spec = table1_scenario()
modes = {
    "open loop, smoothed": TrackerConfig(r_max=0),
    "r_max=3, smoothed": TrackerConfig(r_max=3),
    "r_max=3, real-time": TrackerConfig(r_max=3, output="realtime"),
}
cols = ["NVT", "NFT", "TPD", "MAER", "DAER", "MOSPA", "TET_s"]
print("%-22s" % "" + "".join("%9s" % c for c in cols))
for name, cfg in modes.items():
    rows = [run_single(spec, cfg, MetricConfig(), i, i)[0] for i in range(runs)]
    print("%-22s" % name + "".join("%9.3f" % np.mean([r[c] for r in rows]) for c in cols))
