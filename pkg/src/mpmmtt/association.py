"""Marginal data-association probabilities under one-to-one frame constraints.

Each scan is a bipartite problem between tracks (rows) and measurements
(columns). Row ``i`` either misses (column 0) or takes exactly one
measurement; each measurement is either clutter (row 0) or claimed by
exactly one track. :func:`lbp_marginals` runs loopy belief propagation
with log-ratio messages; :func:`enumerate_marginals` sums over every
feasible event and serves as the exact reference on small problems.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class AssociationWeights:
    """Log-weights for one scan.

    ``miss_w[i]`` and ``detect_w[i]`` are the logs of the expected miss and
    detection probabilities of track ``i``; ``lik_w[i, j]`` is the expected
    log-likelihood of measurement ``j`` under track ``i`` (``-inf`` when
    gated out); ``clutter_w[j]`` is the log clutter weight of measurement
    ``j``.
    """

    miss_w: np.ndarray
    detect_w: np.ndarray
    lik_w: np.ndarray
    clutter_w: np.ndarray

    def __post_init__(self):
        self.miss_w = np.asarray(self.miss_w, dtype=float).reshape(-1)
        self.detect_w = np.asarray(self.detect_w, dtype=float).reshape(-1)
        n_t = len(self.miss_w)
        self.lik_w = np.asarray(self.lik_w, dtype=float).reshape(n_t, -1)
        n_e = self.lik_w.shape[1]
        self.clutter_w = np.broadcast_to(
            np.asarray(self.clutter_w, dtype=float), (n_e,)).copy()
        if len(self.detect_w) != n_t:
            raise ValueError("detect_w and miss_w lengths differ")
        if np.any(np.isnan(self.lik_w)):
            raise ValueError("likelihood weights contain NaN")

    @property
    def shape(self):
        return self.lik_w.shape

    @property
    def pair_w(self):
        """Total log-weight of each track-measurement pairing."""
        return self.detect_w[:, None] + self.lik_w


@dataclass
class AssociationMatrix:
    """Marginals ``a_hat[i, j]``; row 0 is clutter and column 0 is a miss."""

    a_hat: np.ndarray
    iterations: int = 0
    converged: bool = True

    @property
    def n_targets(self):
        return self.a_hat.shape[0] - 1

    @property
    def n_measurements(self):
        return self.a_hat.shape[1] - 1


def build_weights(visibility, means, covs, model_probs, innov_covs, z, sensor,
                  pd=(0.1, 0.9), clutter_w=None, volume=None,
                  gate_threshold=None):
    """Association log-weights from the current track beliefs.

    Parameters
    ----------
    visibility : (N_T,) probabilities that each track is visible
    means, covs : fused kinematic beliefs, ``(N_T, 4)`` and ``(N_T, 4, 4)``
    model_probs : (N_T, M)
    innov_covs : (N_T, M, 2, 2) innovation covariance per model
    z : (N_E, 2) measurements
    pd : detection probability when invisible and when visible
    clutter_w : log clutter weight; defaults to ``-log(volume)``
    gate_threshold : squared Mahalanobis gate; pairs outside every model's
        gate get ``-inf``
    """
    visibility = np.asarray(visibility, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    n_t, n_e = len(visibility), len(z)
    p_det = visibility * pd[1] + (1.0 - visibility) * pd[0]
    with np.errstate(divide="ignore"):
        detect_w = np.log(p_det)
        miss_w = np.log1p(-p_det)
    if clutter_w is None:
        if volume is None:
            raise ValueError("need clutter_w or the surveillance volume")
        clutter_w = -np.log(volume)
    if n_t == 0 or n_e == 0:
        return AssociationWeights(miss_w, detect_w, np.zeros((n_t, n_e)), clutter_w)
    lik, maha = pair_loglik(means, covs, model_probs, innov_covs, z, sensor)
    if gate_threshold is not None:
        lik = np.where((maha <= gate_threshold).any(axis=1), lik, -np.inf)
    return AssociationWeights(miss_w, detect_w, lik, clutter_w)


def pair_loglik(means, covs, model_probs, innov_covs, z, sensor):
    """Expected log-likelihood of each measurement under each track.

    ``z`` is either shared, ``(N_E, 2)``, or per track, ``(N_T, N_E, 2)``.
    Returns the model-averaged log-likelihood ``(N_T, N_E)`` and the squared
    Mahalanobis distances ``(N_T, M, N_E)`` used for gating.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    S = np.asarray(innov_covs, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.ndim == 2:
        z = z[None]
    H = sensor.jacobian(means)
    HPH = H @ covs @ np.swapaxes(H, -1, -2)
    r = sensor.residual(z, sensor.measure(means)[:, None, :])
    S_inv = np.linalg.inv(S)
    quad = np.einsum("tea,tmab,teb->tme", r, S_inv, r)
    tr = np.einsum("tmab,tba->tm", S_inv, HPH)
    _, logdet = np.linalg.slogdet(S)
    X = -0.5 * (quad + tr[..., None]) - LOG_2PI - 0.5 * logdet[..., None]
    return np.einsum("tm,tme->te", model_probs, X), quad


def _loo_lse(T, extra):
    """Leave-one-out log-sum-exp along the last axis, plus ``extra``.

    Entry ``i`` of the result is ``log(sum_{j != i} exp(T[j]) + exp(extra))``.
    Works in O(n) per row: entries other than the row maximum subtract their
    own term from the full sum, the maximum is recomputed without itself.
    """
    X = np.concatenate([T, extra[..., None]], axis=-1)
    n = T.shape[-1]
    top = np.argmax(X, axis=-1)
    m1 = np.take_along_axis(X, top[..., None], -1)
    E = np.exp(X - m1)
    S1 = E.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        out = m1 + np.log(np.maximum(S1 - E[..., :n], 0.0))
    # rows whose maximum is one of the first n entries
    hit = top < n
    if np.any(hit):
        Xh = X[hit]
        th = top[hit]
        Xh[np.arange(len(th)), th] = -np.inf
        m2 = Xh.max(axis=-1)
        out[hit, th] = m2 + np.log(np.exp(Xh - m2[:, None]).sum(axis=-1))
    return out


def _lse(X, axis):
    m = np.max(X, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.exp(X - m).sum(axis=axis))


def lbp_batch(L, l_row, l_col, max_iters=200, tol=1e-9, damping=0.5):
    """Loopy BP on a batch of padded scans.

    ``L`` has shape ``(B, N_T, N_E)`` with total pairing log-weights,
    ``l_row`` ``(B, N_T)`` the miss log-weights and ``l_col`` ``(B, N_E)``
    the clutter log-weights. Padding rows/columns carry ``L = -inf``.

    Returns ``(a_hat, iterations, converged)`` with ``a_hat`` of shape
    ``(B, N_T + 1, N_E + 1)``.
    """
    B, n_t, n_e = L.shape
    a = np.zeros((B, n_t + 1, n_e + 1))
    if n_t == 0:
        a[:, 0, 1:] = 1.0
        return a, 0, True
    if n_e == 0:
        a[:, 1:, 0] = 1.0
        return a, 0, True
    log_mu = np.broadcast_to(-l_row[..., None], L.shape).copy()
    log_nu = np.broadcast_to(-l_col[:, None, :], L.shape).copy()
    converged = False
    it = 0
    with np.errstate(invalid="ignore"):
        for it in range(1, max_iters + 1):
            new_mu = -_loo_lse(L + log_nu, l_row)
            new_mu = damping * log_mu + (1.0 - damping) * new_mu
            U = np.swapaxes(L + new_mu, -1, -2)
            new_nu = -np.swapaxes(_loo_lse(U, l_col), -1, -2)
            new_nu = damping * log_nu + (1.0 - damping) * new_nu
            delta = max(np.max(np.abs(new_mu - log_mu)),
                        np.max(np.abs(new_nu - log_nu)))
            log_mu, log_nu = new_mu, new_nu
            if delta < tol:
                converged = True
                break
        # one undamped row sweep makes every row sum to one exactly
        log_mu = -_loo_lse(L + log_nu, l_row)
    t = L + log_mu + log_nu
    a[:, 1:, 1:] = np.where(np.isneginf(L), 0.0, expit(t))
    row_tot = _lse(np.concatenate([l_row[..., None], L + log_nu], -1), -1)
    a[:, 1:, 0] = np.exp(l_row - row_tot)
    col_tot = _lse(np.concatenate([l_col[:, None, :], L + log_mu], -2), -2)
    a[:, 0, 1:] = np.exp(l_col - col_tot)
    return a, it, converged


def lbp_marginals(w, max_iters=200, tol=1e-9, damping=0.5):
    """Loopy-BP association marginals for a single scan."""
    a, it, ok = lbp_batch(w.pair_w[None], w.miss_w[None], w.clutter_w[None],
                          max_iters=max_iters, tol=tol, damping=damping)
    return AssociationMatrix(a[0], it, ok)


def enumerate_marginals(w, max_size=6):
    """Exact marginals by summing over all feasible joint events.

    The joint weight of an event is the product of miss weights of missed
    tracks, pairing weights of assigned pairs, and clutter weights of
    unclaimed measurements.
    """
    n_t, n_e = w.shape
    if n_t > max_size or n_e > max_size:
        raise ValueError("enumeration limited to %d targets and measurements"
                         % max_size)
    pair = w.pair_w
    logs = []
    events = []

    def recurse(i, used, acc, choice):
        if i == n_t:
            free = [j for j in range(n_e) if j not in used]
            logs.append(acc + w.clutter_w[free].sum())
            events.append(tuple(choice))
            return
        recurse(i + 1, used, acc + w.miss_w[i], choice + [0])
        for j in range(n_e):
            if j not in used and np.isfinite(pair[i, j]):
                recurse(i + 1, used | {j}, acc + pair[i, j], choice + [j + 1])

    recurse(0, frozenset(), 0.0, [])
    logs = np.array(logs)
    p = np.exp(logs - logsumexp(logs))
    a = np.zeros((n_t + 1, n_e + 1))
    for prob, ev in zip(p, events):
        claimed = np.zeros(n_e + 1, dtype=bool)
        for i, j in enumerate(ev):
            a[i + 1, j] += prob
            claimed[j] = True
        a[0, 1:] += prob * ~claimed[1:]
    return AssociationMatrix(a, iterations=len(events), converged=True)


def consistency_check(A):
    """Frame-constraint residuals of an association matrix."""
    a = A.a_hat
    rows = np.abs(a[1:].sum(axis=1) - 1.0) if a.shape[0] > 1 else np.zeros(0)
    cols = np.abs(a[:, 1:].sum(axis=0) - 1.0) if a.shape[1] > 1 else np.zeros(0)
    return {
        "row_dev": float(rows.max(initial=0.0)),
        "col_dev": float(cols.max(initial=0.0)),
        "iterations": A.iterations,
        "converged": A.converged,
    }
