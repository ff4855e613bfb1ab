"""Sliding-window multi-target tracker with iterative message passing.

Each scan first runs a forward step for every live track: per-model
prediction, single-scan association, unscented update with the synthetic
measurement and forward updates of the model and visibility chains. The
window of the last ``l`` scans is then refined by repeating four updates
until the beliefs stop moving:

1. association marginals for every scan, by loopy BP;
2. visibility posteriors, by forward-backward on the visibility chain;
3. model posteriors, by forward-backward on the model chain;
4. kinematic posteriors, by a multi-model filter/RTS pass over the window.

Tracks are born from pairs of unassociated measurements on consecutive
scans and confirmed or deleted from their smoothed visibility.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import chi2

from .association import lbp_batch, pair_loglik
from .filters import (GaussianBelief, SyntheticMeasurement, filter_sequence,
                      imm_mix, model_dynamics_loglik, moment_match, predict_models,
                      model_measurement_loglik, rts_backward, safe_inv,
                      sigma_points, symmetrize, synthetic_measurement, update)
from .hmm import forward_backward_batch

log = logging.getLogger(__name__)

TENTATIVE = "tentative"
PRELIMINARY = "preliminary"
CONFIRMED = "confirmed"
DELETED = "deleted"


@dataclass
class TrackerConfig:
    """Tracker parameters.

    Probability vectors are ordered ``[p(e=0), p(e=1)]`` for visibility
    and in model order for the motion models. ``pd`` holds the detection
    probability of an invisible and of a visible target.
    """

    T: float = 1.0
    window: int = 10
    step: int = 1
    r_max: int = 10
    delta_T: float = 1e-3
    delta_c: float = 0.85
    delta_d: float = 0.3
    P_g: float = 0.997
    pi_e: tuple = (0.5, 0.5)
    T_e: tuple = ((0.85, 0.15), (0.15, 0.85))
    pi_m: tuple = (0.9, 0.1)
    T_m: tuple = ((0.9, 0.1), (0.1, 0.9))
    pd: tuple = (0.1, 0.9)
    clutter_density: float = 1e-4
    volume: float = 1800.0
    clutter_weight: str = "volume"
    vmax: float = 300.0
    confirm: str = "averaged"
    output: str = "smoothed"
    init_threshold: float = 0.9
    lbp_iters: int = 100
    lbp_tol: float = 1e-6
    damping: float = 0.5
    warm_start: bool = True
    normalized_model_lik: bool = True
    model_evidence: str = "predictive"
    window_mixing: bool = True
    fusion: str = "moment"

    def __post_init__(self):
        if not 0 < self.delta_d < self.delta_c < 1:
            raise ValueError("need 0 < delta_d < delta_c < 1")
        if not 0 < self.P_g < 1:
            raise ValueError("P_g must lie in (0, 1)")
        if self.window < 1 or self.step < 1 or self.step > self.window:
            raise ValueError("need 1 <= step <= window")
        if self.r_max < 0:
            raise ValueError("r_max must be non-negative")
        if self.confirm not in ("averaged", "instant"):
            raise ValueError("confirm must be 'averaged' or 'instant'")
        if self.output not in ("smoothed", "realtime"):
            raise ValueError("output must be 'smoothed' or 'realtime'")
        if self.model_evidence not in ("predictive", "meanfield"):
            raise ValueError("model_evidence must be 'predictive' or 'meanfield'")
        if self.clutter_weight not in ("volume", "density"):
            raise ValueError("clutter_weight must be 'volume' or 'density'")

    @property
    def gate_threshold(self):
        return float(chi2.ppf(self.P_g, 2))

    @property
    def log_clutter(self):
        if self.clutter_weight == "density":
            return float(np.log(self.clutter_density))
        return float(-np.log(self.volume))


@dataclass
class TrackEstimate:
    track_id: int
    time: int
    mean: np.ndarray
    cov: np.ndarray
    model_probs: np.ndarray
    visibility: float
    assoc_row: np.ndarray


@dataclass
class Track:
    """One potential target. Per-scan quantities are dicts keyed by scan.

    ``fx``/``fpm``/``fpe`` are forward (filtered) beliefs, ``sx``/``spm``/
    ``spe`` the current window posteriors, ``ppred`` the per-model
    predicted covariances and ``arow`` the association row of each scan.
    """

    id: int
    birth: int
    status: str = PRELIMINARY
    confirmed_at: int = None
    deleted_at: int = None
    fx: dict = field(default_factory=dict)
    fxm: dict = field(default_factory=dict)
    fpm: dict = field(default_factory=dict)
    fpe: dict = field(default_factory=dict)
    sx: dict = field(default_factory=dict)
    spm: dict = field(default_factory=dict)
    spe: dict = field(default_factory=dict)
    ppred: dict = field(default_factory=dict)
    cross: dict = field(default_factory=dict)
    mll: dict = field(default_factory=dict)
    arow: dict = field(default_factory=dict)
    emitted: set = field(default_factory=set)

    @property
    def active(self):
        return self.status in (PRELIMINARY, CONFIRMED)


@dataclass
class WindowState:
    """Beliefs of one window; position 0 is the scan before the window."""

    times: list
    tracks: list
    start: np.ndarray
    r: int = 0
    change: float = np.inf
    lbp_converged: bool = True
    history: list = field(default_factory=list)

    @property
    def anchor_time(self):
        return self.times[0] - 1


def gate(means, innov_covs, z, sensor, P_g):
    """Indices of measurements inside the gate of at least one model.

    ``means`` is ``(M, 4)`` (or ``(4,)`` for a shared mean) and
    ``innov_covs`` ``(M, 2, 2)``.
    """
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    if len(z) == 0:
        return np.zeros(0, dtype=int)
    S = np.asarray(innov_covs, dtype=float).reshape(-1, 2, 2)
    means = np.broadcast_to(np.asarray(means, dtype=float), (len(S), 4))
    r = sensor.residual(z[None], sensor.measure(means)[:, None])
    d2 = np.einsum("mea,mab,meb->me", r, np.linalg.inv(S), r)
    thr = chi2.ppf(P_g, 2)
    return np.flatnonzero((d2 <= thr).any(axis=0))


def polar_to_cartesian(y, R, sensor, alpha=1.0, beta=0.0, kappa=1.0):
    """Unscented conversion of a range/azimuth measurement to a position."""
    pts, Wm, Wc = sigma_points(np.asarray(y, dtype=float), np.asarray(R, dtype=float),
                               alpha, beta, kappa)
    P = sensor.to_cartesian(pts)
    mean = Wm @ P
    d = P - mean
    return mean, symmetrize(np.einsum("i,ia,ib->ab", Wc, d, d))


def two_point_init(y1, y2, T, vmax, sensor):
    """Track head from measurements on two consecutive scans.

    Returns ``(mean, cov)`` of the state at the second scan, or ``None``
    when the implied speed exceeds ``vmax``.
    """
    p1, R1 = polar_to_cartesian(y1, sensor.R, sensor)
    p2, R2 = polar_to_cartesian(y2, sensor.R, sensor)
    v = (p2 - p1) / T
    if np.hypot(*v) > vmax:
        return None
    mean = np.array([p2[0], v[0], p2[1], v[1]])
    pos, vel = [0, 2], [1, 3]
    cov = np.zeros((4, 4))
    cov[np.ix_(pos, pos)] = R2
    cov[np.ix_(pos, vel)] = R2 / T
    cov[np.ix_(vel, pos)] = R2 / T
    cov[np.ix_(vel, vel)] = (R1 + R2) / T ** 2
    return mean, cov


def track_decision(visibility, status, cfg):
    """Lifecycle decision from the last three visibility probabilities.

    Returns ``"delete"``, ``"confirm"`` or ``"keep"``.
    """
    v = np.asarray(visibility, dtype=float)
    if len(v) < 3:
        return "keep"
    avg = v[-3:].mean()
    if avg < cfg.delta_d:
        return "delete"
    if status == PRELIMINARY:
        score = avg if cfg.confirm == "averaged" else v[-1]
        if score > cfg.delta_c:
            return "confirm"
    return "keep"


def complexity(n_iter, window, n_tracks, n_models, n_meas, lbp_iters, n_x=4):
    """Operation-count model of one window: per-iteration costs of the
    kinematic, visibility, model and association updates."""
    n_meas = np.broadcast_to(np.asarray(n_meas, dtype=float), (window,))
    c_x = window * n_tracks * n_models * n_x ** 3
    c_e = 4 * window * n_tracks
    c_m = window * n_tracks * n_models ** 2
    c_a = lbp_iters * float(np.sum(4 * n_tracks * n_meas))
    return {"c_x": c_x, "c_e": c_e, "c_m": c_m, "c_a": c_a,
            "total": n_iter * (c_x + c_e + c_m + c_a)}


def _xi(a0, pd):
    """Log visibility emission ``[ln xi(0), ln xi(1)]`` given miss weight ``a0``."""
    a0 = np.asarray(a0, dtype=float)[..., None]
    pd = np.asarray(pd, dtype=float)
    return (1.0 - a0) * np.log(pd) + a0 * np.log1p(-pd)


class MPMMTTracker:
    """Online tracker; feed frames with :meth:`step`, then call :meth:`finish`.

    Parameters
    ----------
    cfg : TrackerConfig
    models : sequence of MotionModel
    sensor : measurement model with ``measure``, ``jacobian``, ``residual``
        and ``R``; polar sensors also need ``to_cartesian``.
    """

    def __init__(self, cfg, models, sensor):
        self.cfg = cfg
        self.models = list(models)
        self.sensor = sensor
        self.M = len(self.models)
        self.F = np.stack([m.F for m in self.models])
        self.Q = np.stack([m.Q for m in self.models])
        self.T_e = np.asarray(cfg.T_e, dtype=float)
        self.T_m = np.asarray(cfg.T_m, dtype=float)
        self.pi_e = np.asarray(cfg.pi_e, dtype=float)
        self.pi_m = np.asarray(cfg.pi_m, dtype=float)
        if len(self.pi_m) != self.M:
            raise ValueError("pi_m has %d entries for %d models" % (len(self.pi_m), self.M))
        self.pd = np.asarray(cfg.pd, dtype=float)
        self.gate_thr = cfg.gate_threshold
        self.frames = {}
        self.tracks = []
        self.initiators = (None, np.zeros((0, 2)))
        self.estimates = []
        self.windows = []
        self._next_id = 1
        self._first = None
        self._last = None

    # ------------------------------------------------------------------
    # public driver

    def step(self, frame):
        k = frame.time
        if self._last is not None and k != self._last + 1:
            raise ValueError("frames must arrive on consecutive scans")
        if self._first is None:
            self._first = k
        self._last = k
        self.frames[k] = frame
        self.forward(k)
        state = None
        if (k - self._first) % self.cfg.step == 0 or self.cfg.step == 1:
            state = self.build_window(k)
            if not self.cfg.warm_start:
                self.cold_start(state)
            self.run_window(state)
            self.windows.append({"time": k, "iterations": state.r,
                                 "change": state.change,
                                 "lbp_converged": state.lbp_converged,
                                 "n_tracks": len(state.tracks)})
        self.manage_tracks(k)
        self.spawn(k)
        self.emit(k)
        return state

    def finish(self):
        """Release the estimates still inside the final window."""
        if self.cfg.output == "smoothed" and self._last is not None:
            for trk in self.tracks:
                if trk.confirmed_at is not None and trk.status != DELETED:
                    self._emit_track(trk, trk.birth, self._last)
        self.estimates.sort(key=lambda e: (e.time, e.track_id))
        return self.estimates

    def run(self, frames):
        for fr in frames:
            self.step(fr)
        return self.finish()

    @property
    def active_tracks(self):
        return [t for t in self.tracks if t.active]

    # ------------------------------------------------------------------
    # forward step

    def _innov(self, means, Ppred):
        """Innovation covariances ``(B, M, 2, 2)`` at fused ``means``."""
        H = self.sensor.jacobian(means)[:, None]
        return symmetrize(H @ Ppred @ np.swapaxes(H, -1, -2) + self.sensor.R)

    def forward(self, k):
        """Predict, associate and update every live track at scan ``k``."""
        trks = [t for t in self.active_tracks if t.birth < k]
        z = self.frames[k].z
        n_e = len(z)
        if not trks:
            self._clutter_k = np.ones(n_e)
            return
        B, M = len(trks), self.M
        um = np.stack([t.fxm[k - 1][0] for t in trks])
        uP = np.stack([t.fxm[k - 1][1] for t in trks])
        pe = np.stack([t.fpe[k - 1] for t in trks]) @ self.T_e
        mixed, pm = imm_mix(um, uP, np.stack([t.fpm[k - 1] for t in trks]), self.T_m)
        mp = np.einsum("mij,bmj->bmi", self.F, mixed.mean)
        Pp = symmetrize(self.F[None] @ mixed.cov @ np.swapaxes(self.F, -1, -2)[None]
                        + self.Q[None])
        pred = GaussianBelief(mp, Pp)
        fused = moment_match(mp, Pp, pm)
        S = self._innov(fused.mean, Pp)
        a = self._associate([pe[:, 1]], [fused.mean], [fused.cov], [pm], [S], [z])[0]
        synth = synthetic_measurement(a[1:B + 1, :n_e + 1][:, None, :],
                                      z, self.sensor.R, self.sensor)
        synth = SyntheticMeasurement(synth.y_bar, synth.R_bar, synth.miss_weight,
                                     np.broadcast_to(synth.valid, (B, M)))
        res = update(pred, synth, self.sensor)
        lp = np.log(np.maximum(pm, 1e-300)) + res.loglik
        lp -= lp.max(-1, keepdims=True)
        pm_post = np.exp(lp)
        pm_post /= pm_post.sum(-1, keepdims=True)
        post = moment_match(res.belief.mean, res.belief.cov, pm_post)
        pe_post = pe * np.exp(_xi(a[1:B + 1, 0], self.pd))
        pe_post /= pe_post.sum(-1, keepdims=True)
        # cross-covariance Cov(x_k, x_{k-1}) through the fused smoother gain
        xP = np.stack([t.fx[k - 1][1] for t in trks])
        Ft = np.swapaxes(self.F, -1, -2)
        G = xP[:, None] @ Ft[None] @ safe_inv(Pp, "predicted covariance")
        Gbar = np.einsum("bm,bmij->bij", pm_post, G)
        cross = post.cov @ np.swapaxes(Gbar, -1, -2)
        for i, t in enumerate(trks):
            t.fx[k] = (post.mean[i], post.cov[i])
            t.fxm[k] = (res.belief.mean[i], res.belief.cov[i])
            t.sx[k] = (post.mean[i], post.cov[i])
            t.fpm[k] = t.spm[k] = pm_post[i]
            t.fpe[k] = t.spe[k] = pe_post[i]
            t.ppred[k] = Pp[i]
            t.cross[k] = cross[i]
            t.mll[k] = res.loglik[i]
            t.arow[k] = a[i + 1, :n_e + 1].copy()
        self._clutter_k = a[0, 1:n_e + 1].copy()

    def _associate(self, vis, means, covs, pms, Ss, zs):
        """Batched LBP over several scans.

        Each argument is a list with one entry per scan. Returns the padded
        marginals ``(n_scans, N_T + 1, N_E + 1)``.
        """
        cfg = self.cfg
        L = len(vis)
        n_t = max(len(v) for v in vis)
        n_e = max(len(z) for z in zs)
        Lw = np.full((L, n_t, n_e), -np.inf)
        l_row = np.zeros((L, n_t))
        l_col = np.zeros((L, n_e))
        for s in range(L):
            nt, ne = len(vis[s]), len(zs[s])
            if nt == 0:
                continue
            p_det = vis[s] * self.pd[1] + (1.0 - vis[s]) * self.pd[0]
            l_row[s, :nt] = np.log1p(-p_det)
            if ne == 0:
                continue
            l_col[s, :ne] = cfg.log_clutter
            lik, maha = pair_loglik(means[s], covs[s], pms[s], Ss[s], zs[s], self.sensor)
            lik = np.where((maha <= self.gate_thr).any(axis=1), lik, -np.inf)
            Lw[s, :nt, :ne] = np.log(p_det)[:, None] + lik
        a, _, ok = lbp_batch(Lw, l_row, l_col, max_iters=cfg.lbp_iters,
                             tol=cfg.lbp_tol, damping=cfg.damping)
        self._lbp_ok = ok
        return a

    # ------------------------------------------------------------------
    # window iteration

    def build_window(self, k):
        w0 = max(self._first, k - self.cfg.window + 1)
        times = list(range(w0, k + 1))
        trks = [t for t in self.active_tracks if t.birth <= k]
        start = np.array([max(t.birth, w0 - 1) - (w0 - 1) for t in trks], dtype=int)
        return WindowState(times, trks, start)

    def cold_start(self, state):
        """Reset window posteriors to priors and forward estimates."""
        for trk, s in zip(state.tracks, state.start):
            for t in state.times[max(s - 1, 0):]:
                if t in trk.fx:
                    trk.sx[t] = trk.fx[t]
                    trk.spm[t] = self.pi_m.copy()
                    trk.spe[t] = self.pi_e.copy()

    def _gather(self, state):
        """Current window posteriors as arrays over (track, position)."""
        B, P = len(state.tracks), len(state.times) + 1
        t0 = state.anchor_time
        mean = np.zeros((B, P, 4))
        cov = np.tile(np.eye(4), (B, P, 1, 1))
        pm = np.tile(self.pi_m, (B, P, 1))
        pe = np.tile(self.pi_e, (B, P, 1))
        for b, trk in enumerate(state.tracks):
            for p in range(state.start[b], P):
                t = t0 + p
                mean[b, p], cov[b, p] = trk.sx[t]
                pm[b, p] = trk.spm[t]
                pe[b, p] = trk.spe[t]
            # slots before the anchor only need a valid placeholder
            mean[b, :state.start[b]] = mean[b, state.start[b]]
            cov[b, :state.start[b]] = cov[b, state.start[b]]
        return mean, cov, pm, pe

    def _assoc_tensor(self, state):
        B, P = len(state.tracks), len(state.times) + 1
        n_e = max([len(self.frames[t]) for t in state.times] + [0])
        A = np.zeros((B, P, n_e + 1))
        A[..., 0] = 1.0
        t0 = state.anchor_time
        for b, trk in enumerate(state.tracks):
            for p in range(max(state.start[b], 1), P):
                row = trk.arow[t0 + p]
                A[b, p, :len(row)] = row
                A[b, p, len(row):] = 0.0
        return A

    def iterate_window(self, state):
        """One outer iteration over the window; updates the tracks in place
        and returns the largest belief change."""
        if not state.tracks:
            state.r += 1
            state.change = 0.0
            return state
        B, P, M = len(state.tracks), len(state.times) + 1, self.M
        t0 = state.anchor_time
        start = state.start
        mean0, cov0, pm0, pe0 = self._gather(state)
        A0 = self._assoc_tensor(state)
        active = np.arange(P)[None, :] >= np.maximum(start, 1)[:, None]

        # (a) association for every scan of the window
        vis, means, covs, pms, Ss, zs, rows = [], [], [], [], [], [], []
        for p in range(1, P):
            idx = np.flatnonzero(active[:, p])
            t = t0 + p
            rows.append(idx)
            zs.append(self.frames[t].z)
            vis.append(pe0[idx, p, 1])
            means.append(mean0[idx, p])
            covs.append(cov0[idx, p])
            pms.append(pm0[idx, p])
            Pp = np.stack([state.tracks[b].ppred[t] for b in idx]) if len(idx) \
                else np.zeros((0, M, 4, 4))
            Ss.append(self._innov(mean0[idx, p], Pp) if len(idx)
                      else np.zeros((0, M, 2, 2)))
        a = self._associate(vis, means, covs, pms, Ss, zs)
        state.lbp_converged = bool(self._lbp_ok)
        A = np.zeros_like(A0)
        A[..., 0] = 1.0
        for p in range(1, P):
            idx = rows[p - 1]
            n_e = len(zs[p - 1])
            A[idx, p, :n_e + 1] = a[p - 1, 1:len(idx) + 1, :n_e + 1]
            for b in idx:
                state.tracks[b].arow[t0 + p] = A[b, p, :n_e + 1].copy()
        clutter = {t0 + p: a[p - 1, 0, 1:len(zs[p - 1]) + 1] for p in range(1, P)}
        self._clutter_window = clutter

        # (b) visibility chains
        le = np.zeros((B, P, 2))
        le[active] = _xi(A[active][:, 0], self.pd)
        prior_e = np.empty((B, 2))
        for b, trk in enumerate(state.tracks):
            prior_e[b] = trk.fpe[t0] if start[b] == 0 else self.pi_e
        post_e, filt_e = self._chain(prior_e, self.T_e, le, start)

        # (c) model chains
        synth = self._synth(A, state)
        lm = self._model_loglik(state, mean0, cov0, synth, start)
        prior_m = np.empty((B, M))
        for b, trk in enumerate(state.tracks):
            prior_m[b] = trk.fpm[t0] if start[b] == 0 else self.pi_m
        post_m, filt_m = self._chain(prior_m, self.T_m, lm, start)

        # (d) kinematics: multi-model forward filter and RTS pass
        anchor_m = np.empty((B, 4))
        anchor_P = np.empty((B, 4, 4))
        for b, trk in enumerate(state.tracks):
            anchor_m[b], anchor_P[b] = trk.fx[t0 + start[b]]
        mixing = self.T_m if self.cfg.window_mixing else None
        # with mixing the window filter is a self-contained IMM; its model
        # likelihoods then do not depend on the smoothed model chain
        filt, upd, pred, _, ll, _ = filter_sequence(
            GaussianBelief(anchor_m, anchor_P), synth, self.models,
            None if mixing is not None else post_m, self.sensor, start=start,
            transition=mixing, fusion=self.cfg.fusion, prior=prior_m)
        back = pred
        if mixing is not None and self.cfg.fusion == "information":
            # the backward pass runs on the fused filtered sequence
            nxt = predict_models(filt[:, :-1], self.models)
            back = GaussianBelief(np.concatenate([pred.mean[:, :1], nxt.mean], 1),
                                  np.concatenate([pred.cov[:, :1], nxt.cov], 1))
        sm, sP, cross, _, _ = rts_backward(filt, back, self.models, post_m,
                                           start=start, fusion=self.cfg.fusion)

        for b, trk in enumerate(state.tracks):
            for p in range(start[b], P):
                t = t0 + p
                trk.sx[t] = (sm[b, p], sP[b, p])
                if p > start[b]:
                    trk.fx[t] = (filt.mean[b, p], filt.cov[b, p])
                    trk.fxm[t] = (upd.mean[b, p], upd.cov[b, p])
                    trk.ppred[t] = pred.cov[b, p]
                    trk.cross[t] = cross[b, p]
                    trk.mll[t] = ll[b, p]
                if p >= 1:
                    trk.spm[t] = post_m[b, p]
                    trk.spe[t] = post_e[b, p]
                    trk.fpm[t] = filt_m[b, p]
                    trk.fpe[t] = filt_e[b, p]

        # belief change over the window scans
        dA = np.abs(A - A0)[:, 1:].max(initial=0.0)
        de = np.abs(post_e - pe0)[active].max(initial=0.0)
        dm = np.abs(post_m - pm0)[active].max(initial=0.0)
        d = sm - mean0
        info = safe_inv(sP, "smoothed covariance")
        dx = np.sqrt(np.maximum(np.einsum("bpi,bpij,bpj->bp", d, info, d), 0.0))
        dx = dx[active].max(initial=0.0)
        state.change = float(max(dA, de, dm, dx))
        state.history.append(state.change)
        state.r += 1
        return state

    def _chain(self, prior, T, le, start):
        """Forward-backward per track starting at each track's anchor."""
        B, P, S = le.shape
        shifted = np.zeros_like(le)
        for b in range(B):
            n = P - start[b]
            shifted[b, :n] = le[b, start[b]:]
        post_s, filt_s = forward_backward_batch(prior, T, shifted)
        post = np.tile(prior[:, None], (1, P, 1))
        filt = post.copy()
        for b in range(B):
            n = P - start[b]
            post[b, start[b]:] = post_s[b, :n]
            filt[b, start[b]:] = filt_s[b, :n]
        return post, filt

    def _synth(self, A, state):
        P = A.shape[1]
        n_e = A.shape[2] - 1
        Z = np.zeros((P, n_e, 2))
        for p in range(1, P):
            z = self.frames[state.anchor_time + p].z
            Z[p, :len(z)] = z
            # padding sits on a real point so angle offsets stay finite
            if 0 < len(z) < n_e:
                Z[p, len(z):] = z[0]
        return synthetic_measurement(A, Z[None], self.sensor.R, self.sensor)

    def _model_loglik(self, state, mean, cov, synth, start):
        """Per-scan model emissions: dynamics fit plus measurement fit."""
        B, P, M = len(state.tracks), len(state.times) + 1, self.M
        t0 = state.anchor_time
        lm = np.zeros((B, P, M))
        if self.cfg.model_evidence == "predictive":
            for b, trk in enumerate(state.tracks):
                for p in range(start[b] + 1, P):
                    lm[b, p] = trk.mll[t0 + p]
            return lm
        prev_m = np.zeros((B, P, 4))
        prev_P = np.tile(np.eye(4), (B, P, 1, 1))
        cross = np.zeros((B, P, 4, 4))
        Pp = np.tile(np.eye(4), (B, P, M, 1, 1))
        has_prev = np.zeros((B, P), dtype=bool)
        for b, trk in enumerate(state.tracks):
            for p in range(start[b] + 1, P):
                t = t0 + p
                prev_m[b, p], prev_P[b, p] = trk.sx[t - 1]
                cross[b, p] = trk.cross[t]
                Pp[b, p] = trk.ppred[t]
                has_prev[b, p] = True
        H = self.sensor.jacobian(mean)
        for m, mod in enumerate(self.models):
            mx = model_dynamics_loglik(mean, cov, prev_m, prev_P, cross, mod)
            S = symmetrize(H @ Pp[:, :, m] @ np.swapaxes(H, -1, -2) + synth.R_bar)
            my = model_measurement_loglik(mean, cov, synth, self.sensor, S)
            if self.cfg.normalized_model_lik:
                Ppred = symmetrize(mod.F @ prev_P @ mod.F.T + mod.Q)
                mx = mx - 0.5 * np.linalg.slogdet(Ppred)[1]
                my = my - 0.5 * np.where(synth.valid, np.linalg.slogdet(S)[1], 0.0)
            lm[:, :, m] = np.where(has_prev, mx + my, 0.0)
        return lm

    def run_window(self, state):
        """Iterate until the belief change drops below ``delta_T`` or
        ``r_max`` iterations have run."""
        while state.r < self.cfg.r_max:
            self.iterate_window(state)
            if state.change < self.cfg.delta_T:
                break
        return state

    # ------------------------------------------------------------------
    # lifecycle

    def manage_tracks(self, k):
        for trk in self.active_tracks:
            if k - trk.birth < 2:
                continue
            vis = [trk.spe[t][1] for t in range(k - 2, k + 1)]
            dec = track_decision(vis, trk.status, self.cfg)
            if dec == "confirm":
                trk.status = CONFIRMED
                trk.confirmed_at = k
            elif dec == "delete":
                if trk.confirmed_at is not None and self.cfg.output == "smoothed":
                    self._emit_track(trk, trk.birth, k)
                trk.status = DELETED
                trk.deleted_at = k

    def _unassociated(self, k):
        """Clutter marginals of scan ``k`` under the latest association."""
        cl = getattr(self, "_clutter_window", {}).get(k)
        if cl is None or len(cl) != len(self.frames[k]):
            cl = self._clutter_k
        return cl

    def spawn(self, k):
        """Pair last scan's initiators with this scan's unassociated
        measurements and start new tracks; the rest become initiators."""
        z = self.frames[k].z
        free = np.flatnonzero(self._unassociated(k) > self.cfg.init_threshold)
        prev_k, prev_z = self.initiators
        used = np.zeros(len(free), dtype=bool)
        if prev_k == k - 1 and len(prev_z) and len(free):
            p1 = self.sensor.to_cartesian(prev_z)
            p2 = self.sensor.to_cartesian(z[free])
            cost = np.linalg.norm(p1[:, None] - p2[None], axis=-1) / self.cfg.T
            big = 1e12
            rows, cols = linear_sum_assignment(np.where(cost <= self.cfg.vmax, cost, big))
            for i, j in zip(rows, cols):
                if cost[i, j] > self.cfg.vmax:
                    continue
                init = two_point_init(prev_z[i], z[free[j]], self.cfg.T,
                                      self.cfg.vmax, self.sensor)
                if init is None:
                    continue
                used[j] = True
                self._new_track(k, init, free[j])
        self.initiators = (k, z[free[~used]].copy())

    def _new_track(self, k, init, j):
        trk = Track(self._next_id, k)
        self._next_id += 1
        n_e = len(self.frames[k])
        row = np.zeros(n_e + 1)
        row[j + 1] = 1.0
        pe = self.pi_e * np.exp(_xi(0.0, self.pd))
        pe /= pe.sum()
        trk.fx[k] = trk.sx[k] = init
        trk.fxm[k] = (np.repeat(init[0][None], self.M, axis=0),
                      np.repeat(init[1][None], self.M, axis=0))
        trk.fpm[k] = trk.spm[k] = self.pi_m.copy()
        trk.fpe[k] = trk.spe[k] = pe
        trk.ppred[k] = np.repeat(init[1][None], self.M, axis=0)
        trk.cross[k] = np.zeros((4, 4))
        trk.mll[k] = np.zeros(self.M)
        trk.arow[k] = row
        self.tracks.append(trk)
        return trk

    # ------------------------------------------------------------------
    # output

    def _estimate(self, trk, t):
        m, P = trk.sx[t]
        return TrackEstimate(trk.id, t, m.copy(), P.copy(), trk.spm[t].copy(),
                             float(trk.spe[t][1]), trk.arow[t].copy())

    def _emit_track(self, trk, first, last):
        for t in range(first, last + 1):
            if t in trk.emitted or t not in trk.sx:
                continue
            trk.emitted.add(t)
            if trk.spe[t][1] > 0.5:
                self.estimates.append(self._estimate(trk, t))

    def emit(self, k):
        if self.cfg.output == "realtime":
            for trk in self.tracks:
                if trk.status == CONFIRMED and k in trk.sx and k not in trk.emitted:
                    trk.emitted.add(k)
                    if trk.spe[k][1] > 0.5:
                        self.estimates.append(self._estimate(trk, k))
            return
        f = k - self.cfg.window + 1
        if f < self._first:
            return
        for trk in self.tracks:
            if trk.status == CONFIRMED:
                self._emit_track(trk, trk.birth, f)
