"""Gaussian filtering and smoothing with synthetic measurements.

Everything here broadcasts over leading batch dimensions so the tracker can
run all (track, model) chains of a window in one pass. A belief of shape
``mean (..., 4)``, ``cov (..., 4, 4)`` is a stack of independent Gaussians.

Multi-model sequences come in two flavours. With a model transition matrix
each model keeps its own chain and the chains are mixed before every
prediction (interacting multiple models); without one every model predicts
from the fused estimate of the previous scan. Model-conditioned posteriors
are combined either by mixture moment matching or in information form.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

REG = 1e-9


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)

    def __getitem__(self, idx):
        return GaussianBelief(self.mean[idx], self.cov[idx])

    def __len__(self):
        return len(self.mean)


@dataclass
class SyntheticMeasurement:
    """Association-weighted measurement ``y_bar`` with inflated noise ``R_bar``.

    ``valid`` is False where the miss weight is (numerically) one; those
    scans carry no measurement information and are skipped by
    :func:`update`.
    """

    y_bar: np.ndarray
    R_bar: np.ndarray
    miss_weight: np.ndarray
    valid: np.ndarray


@dataclass
class UpdateResult:
    belief: GaussianBelief
    S: np.ndarray
    innovation: np.ndarray
    loglik: np.ndarray


@dataclass
class SmoothedSequence:
    """RTS output for one or more chains.

    ``cross_cov[..., k, :, :]`` is Cov(x_k, x_{k-1}); it is zero at the first
    index. ``pred_cov`` holds each model's prediction from the filtered
    belief of the previous scan, indexed ``[..., k, m, :, :]``.
    """

    mean: np.ndarray
    cov: np.ndarray
    cross_cov: np.ndarray
    model_mean: np.ndarray
    model_cov: np.ndarray
    pred_cov: np.ndarray
    innov_cov: np.ndarray = None

    @property
    def beliefs(self):
        return GaussianBelief(self.mean, self.cov)


def symmetrize(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def clamp_psd(P, floor=0.0):
    """Symmetrize and clip negative eigenvalues to ``floor``."""
    P = symmetrize(P)
    w, V = np.linalg.eigh(P)
    if np.all(w >= floor):
        return P
    w = np.maximum(w, floor)
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


def safe_inv(A, what="matrix"):
    try:
        return np.linalg.inv(A)
    except np.linalg.LinAlgError:
        log.warning("singular %s; adding %.0e*I", what, REG)
        return np.linalg.inv(A + REG * np.eye(A.shape[-1]))


def _sqrt_psd(P):
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(symmetrize(P))
        return V * np.sqrt(np.maximum(w, 0.0))[..., None, :]


def sigma_points(mean, cov, alpha=1e-3, beta=2.0, kappa=0.0):
    """Scaled unscented sigma points.

    Returns ``(points, Wm, Wc)`` with ``points`` of shape ``(..., 2n+1, n)``.
    """
    n = mean.shape[-1]
    lam = alpha ** 2 * (n + kappa) - n
    L = _sqrt_psd((n + lam) * cov)
    cols = np.swapaxes(L, -1, -2)
    pts = np.concatenate([mean[..., None, :],
                          mean[..., None, :] + cols,
                          mean[..., None, :] - cols], axis=-2)
    Wm = np.full(2 * n + 1, 0.5 / (n + lam))
    Wc = Wm.copy()
    Wm[0] = lam / (n + lam)
    Wc[0] = lam / (n + lam) + (1.0 - alpha ** 2 + beta)
    return pts, Wm, Wc


def predict(prior, model):
    """Propagate a belief through a linear motion model."""
    F, Q = model.F, model.Q
    mean = prior.mean @ F.T
    cov = symmetrize(F @ prior.cov @ F.T + Q)
    return GaussianBelief(mean, cov)


def synthetic_measurement(a_row, z, R, sensor=None, eps=1e-9):
    """Collapse association weights into one synthetic measurement.

    ``a_row[..., 0]`` is the miss weight and ``a_row[..., j]`` the weight
    of measurement ``z[j-1]``. Angular components are averaged as offsets
    from the highest-weighted measurement so wrap-around cannot bias them.
    """
    a_row = np.asarray(a_row, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.ndim < 2:
        z = z.reshape(-1, 2)
    miss = a_row[..., 0]
    if np.any(a_row < -1e-12) or np.any(a_row > 1 + 1e-12):
        raise ValueError("association weights must lie in [0, 1]")
    if np.any(np.abs(a_row.sum(-1) - 1.0) > 1e-6):
        raise ValueError("association weights must sum to one")
    det = 1.0 - miss
    valid = det > eps
    batch = a_row.shape[:-1]
    if z.shape[-2] == 0:
        y_bar = np.zeros(batch + (2,))
        valid = np.zeros(batch, dtype=bool)
    else:
        w = a_row[..., 1:]
        angle = getattr(sensor, "angle_index", 1) if sensor is not None else 1
        zb = np.broadcast_to(z, w.shape + (2,))
        idx = np.argmax(w, axis=-1)[..., None, None]
        ref = np.take_along_axis(zb, idx, axis=-2)[..., 0, :]
        d = zb - ref[..., None, :]
        if angle is not None:
            d[..., angle] = np.mod(d[..., angle] + np.pi, 2 * np.pi) - np.pi
        safe = np.where(valid, det, 1.0)
        y_bar = ref + np.einsum("...j,...jd->...d", w, d) / safe[..., None]
        if angle is not None:
            y_bar[..., angle] = np.mod(y_bar[..., angle] + np.pi, 2 * np.pi) - np.pi
    safe = np.where(valid, det, 1.0)
    R_bar = np.asarray(R, dtype=float) / safe[..., None, None]
    return SyntheticMeasurement(y_bar, R_bar, miss, np.asarray(valid))


def unscented_moments(belief, sensor, alpha=1e-3, beta=2.0, kappa=0.0):
    """Predicted measurement mean, covariance and state cross-covariance."""
    pts, Wm, Wc = sigma_points(belief.mean, belief.cov, alpha, beta, kappa)
    Z = sensor.measure(pts)
    dZ = sensor.residual(Z, Z[..., :1, :])
    z_mean = Z[..., 0, :] + np.einsum("i,...id->...d", Wm, dZ)
    if sensor.angle_index is not None:
        k = sensor.angle_index
        z_mean[..., k] = np.mod(z_mean[..., k] + np.pi, 2 * np.pi) - np.pi
    dz = sensor.residual(Z, z_mean[..., None, :])
    dx = pts - belief.mean[..., None, :]
    Pzz = np.einsum("i,...ia,...ib->...ab", Wc, dz, dz)
    Pxz = np.einsum("i,...ia,...ib->...ab", Wc, dx, dz)
    return z_mean, symmetrize(Pzz), Pxz


def update(pred, synth, sensor, alpha=1e-3, beta=2.0, kappa=0.0):
    """Unscented measurement update with a synthetic measurement.

    Entries whose synthetic measurement is invalid keep the predicted
    belief. Returns an :class:`UpdateResult`; ``loglik`` is the Gaussian
    log-density of the innovation (zero where no update happened).
    """
    z_mean, Pzz, Pxz = unscented_moments(pred, sensor, alpha, beta, kappa)
    S = symmetrize(Pzz + synth.R_bar)
    try:
        S_inv = np.linalg.inv(S)
        bad = ~np.all(np.isfinite(S_inv), axis=(-1, -2))
    except np.linalg.LinAlgError:
        bad = np.ones(S.shape[:-2], dtype=bool)
    if np.any(bad) or np.any(np.linalg.det(S) <= 0):
        log.warning("innovation covariance not positive definite; regularizing")
        S = S + REG * np.eye(S.shape[-1])
        S_inv = np.linalg.inv(S)
    K = Pxz @ S_inv
    nu = sensor.residual(synth.y_bar, z_mean)
    valid = np.asarray(synth.valid)
    mean = pred.mean + np.einsum("...ab,...b->...a", K, nu)
    cov = symmetrize(pred.cov - K @ S @ np.swapaxes(K, -1, -2))
    mean = np.where(valid[..., None], mean, pred.mean)
    cov = np.where(valid[..., None, None], cov, pred.cov)
    maha = np.einsum("...a,...ab,...b->...", nu, S_inv, nu)
    _, logdet = np.linalg.slogdet(S)
    ll = -0.5 * (maha + logdet + nu.shape[-1] * np.log(2 * np.pi))
    ll = np.where(valid, ll, 0.0)
    return UpdateResult(GaussianBelief(mean, cov), S, nu, ll)


def fuse_models(beliefs, weights):
    """Information-form fusion of model-conditioned beliefs.

    ``beliefs`` is either a list of :class:`GaussianBelief` (one per model)
    or a single belief stacked along axis -2 of the mean. ``weights`` are the
    model probabilities, last axis over models.
    """
    if isinstance(beliefs, (list, tuple)):
        means = np.stack([b.mean for b in beliefs], axis=-2)
        covs = np.stack([b.cov for b in beliefs], axis=-3)
    else:
        means, covs = beliefs.mean, beliefs.cov
    w = np.asarray(weights, dtype=float)
    if np.any(w < -1e-12):
        raise ValueError("model weights must be non-negative")
    total = w.sum(-1)
    if np.any(total <= 0):
        raise ValueError("at least one model weight must be positive")
    if np.any(np.abs(total - 1.0) > 1e-6):
        raise ValueError("model weights must sum to one")
    infos = safe_inv(covs, "model covariance")
    info = np.einsum("...m,...mab->...ab", w, infos)
    cov = symmetrize(safe_inv(info, "fused information"))
    vec = np.einsum("...m,...mab,...mb->...a", w, infos, means)
    mean = np.einsum("...ab,...b->...a", cov, vec)
    return GaussianBelief(mean, cov)


def model_dynamics_loglik(mean, cov, prev_mean, prev_cov, cross_cov, model):
    """Expected transition log-likelihood term for one model.

    Evaluates ``-1/2 Tr{P_pred^-1 E[(x_k - F x_{k-1})(x_k - F x_{k-1})^T]}``
    under the smoothed marginals, with ``P_pred = F P_{k-1} F^T + Q`` and
    ``cross_cov = Cov(x_k, x_{k-1})``.
    """
    F, Q = model.F, model.Q
    P_pred = symmetrize(F @ prev_cov @ F.T + Q)
    d = mean - prev_mean @ F.T
    C = cross_cov
    E = (cov - C @ F.T - F @ np.swapaxes(C, -1, -2) + F @ prev_cov @ F.T
         + d[..., :, None] * d[..., None, :])
    return -0.5 * np.trace(safe_inv(P_pred, "predicted covariance") @ E,
                           axis1=-2, axis2=-1)


def model_measurement_loglik(mean, cov, synth, sensor, S):
    """Expected measurement log-likelihood term ``-1/2 Tr{S^-1 (r r^T + H P H^T)}``.

    Scans with no valid synthetic measurement contribute zero.
    """
    H = sensor.jacobian(mean)
    r = sensor.residual(synth.y_bar, sensor.measure(mean))
    E = r[..., :, None] * r[..., None, :] + H @ cov @ np.swapaxes(H, -1, -2)
    val = -0.5 * np.trace(safe_inv(S, "innovation covariance") @ E,
                          axis1=-2, axis2=-1)
    return np.where(synth.valid, val, 0.0)


def moment_match(means, covs, weights):
    """Single Gaussian matching the first two moments of a mixture.

    The mixture axis is -2 of ``means`` and -3 of ``covs``.
    """
    w = np.asarray(weights, dtype=float)
    mean = np.einsum("...m,...mi->...i", w, means)
    d = means - mean[..., None, :]
    cov = np.einsum("...m,...mij->...ij", w,
                    covs + d[..., :, None] * d[..., None, :])
    return GaussianBelief(mean, symmetrize(cov))


def imm_mix(means, covs, probs, transition):
    """Interaction step of an interacting-multiple-model filter.

    Returns the mixed per-model beliefs and the predicted model
    probabilities ``c_j = sum_i mu_i T_ij``.
    """
    probs = np.asarray(probs, dtype=float)
    T = np.asarray(transition, dtype=float)
    joint = probs[..., :, None] * T
    c = joint.sum(-2)
    mix = joint / np.where(c > 0, c, 1.0)[..., None, :]
    mean = np.einsum("...ij,...ia->...ja", mix, means)
    d = means[..., None, :, :] - mean[..., :, None, :]
    cov = np.einsum("...ij,...jiab->...jab", mix,
                    covs[..., None, :, :, :] + d[..., :, None] * d[..., None, :])
    return GaussianBelief(mean, symmetrize(cov)), c


def _stack_models(models):
    F = np.stack([m.F for m in models])
    Q = np.stack([m.Q for m in models])
    return F, Q


def filter_sequence(anchor, synth, models, weights, sensor, start=None,
                    ut=(1e-3, 2.0, 0.0), transition=None, fusion="information",
                    prior=None):
    """Forward pass over ``K`` scans for a batch of chains.

    Parameters
    ----------
    anchor : GaussianBelief
        Belief at index ``start`` of each chain, shapes ``(B, 4)`` and
        ``(B, 4, 4)``. It is taken as already filtered and is not updated.
    synth : SyntheticMeasurement
        Batched over ``(B, K)``.
    models : sequence of MotionModel
    weights : ndarray, shape (B, K, M), or None
        Model probabilities used for mixing and fusion at each scan. With
        ``None`` the filter runs its own model recursion from ``prior``.
    start : ndarray of int, shape (B,), optional
        Anchor index per chain; defaults to zero.
    transition : ndarray (M, M), optional
        When given, each model keeps its own chain and the chains are mixed
        before every prediction as in an interacting-multiple-model filter,
        using ``weights`` of the previous scan. Otherwise every model
        predicts from the fused belief.
    fusion : {"information", "moment"}
        How model-conditioned posteriors are combined: information-form
        fusion (:func:`fuse_models`) or mixture moment matching.
    prior : ndarray (B, M), optional
        Model probabilities at the anchor; required when ``weights`` is None.

    Returns
    -------
    filt : GaussianBelief, shapes ``(B, K, 4)`` / ``(B, K, 4, 4)``
    model_post : GaussianBelief, per-model posteriors ``(B, K, M, ...)``
    pred : GaussianBelief, per-model predictions ``(B, K, M, ...)``
    S : ndarray ``(B, K, M, 2, 2)`` innovation covariances
    loglik : ndarray ``(B, K, M)``
    probs : ndarray ``(B, K, M)`` model probabilities used for fusion
    """
    B, K = synth.valid.shape
    M = len(models)
    F, Q = _stack_models(models)
    start = np.zeros(B, dtype=int) if start is None else np.asarray(start)
    fm = np.empty((B, K, 4))
    fP = np.empty((B, K, 4, 4))
    pm = np.empty((B, K, M, 4))
    pP = np.empty((B, K, M, 4, 4))
    um = np.empty((B, K, M, 4))
    uP = np.empty((B, K, M, 4, 4))
    S = np.empty((B, K, M, 2, 2))
    ll = np.zeros((B, K, M))
    cur_m = anchor.mean.copy()
    cur_P = anchor.cov.copy()
    chain_m = np.repeat(cur_m[:, None], M, axis=1)
    chain_P = np.repeat(cur_P[:, None], M, axis=1)
    Ft = np.swapaxes(F, -1, -2)[None]
    own = weights is None
    if own:
        if prior is None or transition is None:
            raise ValueError("the internal model recursion needs prior and transition")
        mu = np.asarray(prior, dtype=float).copy()
    probs = np.empty((B, K, M))
    for k in range(K):
        at_anchor = start == k
        before = start > k
        c = None
        if transition is None:
            src_m, src_P = cur_m[:, None], cur_P[:, None]
        else:
            w_prev = mu if own else weights[:, max(k - 1, 0)]
            mixed, c = imm_mix(chain_m, chain_P, w_prev, transition)
            src_m, src_P = mixed.mean, mixed.cov
        mean_k = np.einsum("mij,bmj->bmi", F, np.broadcast_to(src_m, (B, M, 4)))
        cov_k = symmetrize(F[None] @ src_P @ Ft + Q[None])
        pred = GaussianBelief(mean_k, cov_k)
        sk = SyntheticMeasurement(synth.y_bar[:, k, None, :],
                                  synth.R_bar[:, k, None],
                                  synth.miss_weight[:, k, None],
                                  np.broadcast_to(synth.valid[:, k, None], (B, M)))
        res = update(pred, sk, sensor, *ut)
        hold = at_anchor | before
        if own:
            lp = np.log(np.maximum(c, 1e-300)) + res.loglik
            post = np.exp(lp - lp.max(-1, keepdims=True))
            mu = np.where(hold[:, None], mu, post / post.sum(-1, keepdims=True))
            w_k = mu
        else:
            w_k = weights[:, k]
        probs[:, k] = w_k
        fused = _combine(res.belief, w_k, fusion)
        pm[:, k], pP[:, k] = mean_k, cov_k
        um[:, k], uP[:, k] = res.belief.mean, res.belief.cov
        S[:, k] = res.S
        ll[:, k] = res.loglik
        new_m = np.where(hold[:, None], anchor.mean, fused.mean)
        new_P = np.where(hold[:, None, None], anchor.cov, fused.cov)
        fm[:, k], fP[:, k] = new_m, new_P
        cur_m, cur_P = new_m, new_P
        chain_m = np.where(hold[:, None, None], anchor.mean[:, None], res.belief.mean)
        chain_P = np.where(hold[:, None, None, None], anchor.cov[:, None], res.belief.cov)
    return (GaussianBelief(fm, fP), GaussianBelief(um, uP),
            GaussianBelief(pm, pP), S, ll, probs)


def predict_models(belief, models):
    """Per-model predictions of a (batched) belief, model axis inserted at -2."""
    F, Q = _stack_models(models)
    mean = np.einsum("mij,...j->...mi", F, belief.mean)
    cov = symmetrize(F @ belief.cov[..., None, :, :] @ np.swapaxes(F, -1, -2) + Q)
    return GaussianBelief(mean, cov)


def _combine(beliefs, weights, fusion):
    if fusion == "information":
        return fuse_models(beliefs, weights)
    if fusion == "moment":
        return moment_match(beliefs.mean, beliefs.cov, weights)
    raise ValueError("unknown fusion %r" % fusion)


def rts_backward(filt, pred, models, weights, start=None, fusion="information"):
    """Backward RTS pass matching :func:`filter_sequence`.

    ``pred`` holds the per-model predictions made from the filtered belief
    of the previous scan; ``weights[:, k]`` weights the models for the
    transition into scan ``k``.
    """
    B, K = filt.mean.shape[:2]
    M = len(models)
    F, _ = _stack_models(models)
    start = np.zeros(B, dtype=int) if start is None else np.asarray(start)
    sm = filt.mean.copy()
    sP = filt.cov.copy()
    cross = np.zeros((B, K, 4, 4))
    mm = np.empty((B, K, M, 4))
    mP = np.empty((B, K, M, 4, 4))
    mm[:, K - 1] = sm[:, K - 1, None, :]
    mP[:, K - 1] = sP[:, K - 1, None]
    Ft = np.swapaxes(F, -1, -2)
    if fusion == "moment":
        return _rts_mixture(filt, models, weights, start, sm, sP, cross, mm, mP)
    for k in range(K - 2, -1, -1):
        Pf = filt.cov[:, k]
        pinv = safe_inv(pred.cov[:, k + 1], "predicted covariance")
        G = Pf[:, None] @ Ft[None] @ pinv
        dx = sm[:, k + 1, None, :] - pred.mean[:, k + 1]
        m_mean = filt.mean[:, k, None, :] + np.einsum("bmij,bmj->bmi", G, dx)
        dP = sP[:, k + 1, None] - pred.cov[:, k + 1]
        m_cov = symmetrize(Pf[:, None] + G @ dP @ np.swapaxes(G, -1, -2))
        w = weights[:, k + 1]
        fused = _combine(GaussianBelief(m_mean, m_cov), w, fusion)
        Gbar = np.einsum("bm,bmij->bij", w, G)
        ok = k >= start
        sm[:, k] = np.where(ok[:, None], fused.mean, sm[:, k])
        sP[:, k] = np.where(ok[:, None, None], fused.cov, sP[:, k])
        cross[:, k + 1] = np.where(ok[:, None, None],
                                   sP[:, k + 1] @ np.swapaxes(Gbar, -1, -2), 0.0)
        mm[:, k], mP[:, k] = m_mean, m_cov
    return sm, sP, cross, mm, mP


def _rts_mixture(filt, models, weights, start, sm, sP, cross, mm, mP):
    """RTS pass through the moment-matched mixture of the model transitions.

    The transition into scan ``k + 1`` is replaced by the Gaussian with the
    mean and covariance of the model mixture weighted by ``weights[:, k+1]``;
    its spread between models widens the effective process noise when the
    model is uncertain.
    """
    B, K = filt.mean.shape[:2]
    F, _ = _stack_models(models)
    for k in range(K - 2, -1, -1):
        xf, Pf = filt.mean[:, k], filt.cov[:, k]
        w = weights[:, k + 1]
        per = predict_models(GaussianBelief(xf, Pf), models)
        pred = moment_match(per.mean, per.cov, w)
        Fbar = np.einsum("bm,mij->bij", w, F)
        G = Pf @ np.swapaxes(Fbar, -1, -2) @ safe_inv(pred.cov, "predicted covariance")
        mean = xf + np.einsum("bij,bj->bi", G, sm[:, k + 1] - pred.mean)
        cov = symmetrize(Pf + G @ (sP[:, k + 1] - pred.cov) @ np.swapaxes(G, -1, -2))
        ok = k >= start
        sm[:, k] = np.where(ok[:, None], mean, sm[:, k])
        sP[:, k] = np.where(ok[:, None, None], cov, sP[:, k])
        cross[:, k + 1] = np.where(ok[:, None, None],
                                   sP[:, k + 1] @ np.swapaxes(G, -1, -2), 0.0)
        mm[:, k] = sm[:, k, None]
        mP[:, k] = sP[:, k, None]
    return sm, sP, cross, mm, mP


def smooth(filtered, models, weights=None):
    """RTS smoothing of a single filtered sequence.

    Parameters
    ----------
    filtered : GaussianBelief
        Fused filtered beliefs, shapes ``(K, 4)`` and ``(K, 4, 4)``.
    models : MotionModel or sequence of MotionModel
    weights : ndarray, shape (K, M), optional
        Model probabilities; required when more than one model is given.

    Returns
    -------
    SmoothedSequence
    """
    if not isinstance(models, (list, tuple)):
        models = [models]
    K = len(filtered.mean)
    if K < 1:
        raise ValueError("need at least one scan to smooth")
    M = len(models)
    if weights is None:
        if M != 1:
            raise ValueError("model weights required for several models")
        weights = np.ones((K, 1))
    weights = np.asarray(weights, dtype=float)
    pm = np.empty((K, M, 4))
    pP = np.empty((K, M, 4, 4))
    for m, mod in enumerate(models):
        pm[0, m], pP[0, m] = filtered.mean[0], filtered.cov[0]
        if K > 1:
            p = predict(filtered[:-1], mod)
            pm[1:, m], pP[1:, m] = p.mean, p.cov
    filt_b = GaussianBelief(filtered.mean[None], filtered.cov[None])
    pred_b = GaussianBelief(pm[None], pP[None])
    sm, sP, cross, mm, mP = rts_backward(filt_b, pred_b, models, weights[None])
    return SmoothedSequence(sm[0], sP[0], cross[0], mm[0], mP[0], pP)

