"""Discrete hidden Markov chains: forward filtering and forward-backward smoothing.

Emissions are passed as log-weights, one row per scan. The chains here are
the visibility chain (two states) and the motion-model chain of each track.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MarkovChain:
    prior: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.prior, dtype=float)
        T = np.asarray(self.transition, dtype=float)
        if pi.ndim != 1 or T.shape != (len(pi), len(pi)):
            raise ValueError("prior and transition dimensions disagree")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("prior must be a probability vector")
        if np.any(T < 0) or np.any(np.abs(T.sum(1) - 1.0) > 1e-12):
            raise ValueError("transition rows must sum to one")
        object.__setattr__(self, "prior", pi)
        object.__setattr__(self, "transition", T)

    @property
    def n_states(self):
        return len(self.prior)

    def stationary(self):
        w, V = np.linalg.eig(self.transition.T)
        v = np.real(V[:, np.argmin(np.abs(w - 1.0))])
        return v / v.sum()


@dataclass
class ChainPosterior:
    posterior: np.ndarray   # (K, S) smoothed marginals
    filtered: np.ndarray    # (K, S) forward marginals
    log_norm: np.ndarray    # (K,) per-step log normalizers


def _clean(log_emis):
    log_emis = np.atleast_2d(np.asarray(log_emis, dtype=float))
    dead = ~np.isfinite(log_emis).any(axis=1) | np.all(log_emis == -np.inf, axis=1)
    if np.any(np.isnan(log_emis)):
        raise ValueError("emission log-weights contain NaN")
    if np.any(dead):
        log.warning("all-zero emission at %d step(s); substituting uniform",
                    int(dead.sum()))
        log_emis = log_emis.copy()
        log_emis[dead] = 0.0
    return log_emis


def forward_step(prev, chain, log_emission):
    """One predict-weight-normalize step of the forward algorithm."""
    log_e = _clean(log_emission)[0]
    pred = np.asarray(prev, dtype=float) @ chain.transition
    with np.errstate(divide="ignore"):
        a = np.log(pred) + log_e
    a -= logsumexp(a)
    return np.exp(a)


def forward_backward(chain, log_emissions):
    """Smoothed state marginals of a chain given per-scan log emissions.

    The first row of ``log_emissions`` weights the prior directly.
    """
    le = _clean(log_emissions)
    K, S = le.shape
    if S != chain.n_states:
        raise ValueError("emission width does not match the chain")
    with np.errstate(divide="ignore"):
        logT = np.log(chain.transition)
        alpha = np.empty((K, S))
        a = np.log(chain.prior) + le[0]
    c = np.empty(K)
    c[0] = logsumexp(a)
    alpha[0] = a - c[0]
    for k in range(1, K):
        a = logsumexp(alpha[k - 1][:, None] + logT, axis=0) + le[k]
        c[k] = logsumexp(a)
        alpha[k] = a - c[k]
    beta = np.zeros((K, S))
    for k in range(K - 2, -1, -1):
        b = logsumexp(logT + (le[k + 1] + beta[k + 1])[None, :], axis=1)
        beta[k] = b - c[k + 1]
    g = alpha + beta
    g -= logsumexp(g, axis=1, keepdims=True)
    return ChainPosterior(np.exp(g), np.exp(alpha), c)


def forward_backward_batch(prior, transition, log_emissions):
    """Forward-backward for ``B`` independent chains sharing one transition.

    Parameters
    ----------
    prior : (B, S) state distribution at the first step, before emission
    transition : (S, S)
    log_emissions : (B, K, S)

    Returns
    -------
    posterior, filtered : (B, K, S)
    """
    le = np.asarray(log_emissions, dtype=float)
    if np.any(np.isnan(le)):
        raise ValueError("emission log-weights contain NaN")
    B, K, S = le.shape
    le = le - le.max(axis=-1, keepdims=True)
    le = np.where(np.isfinite(le), le, -np.inf)
    E = np.exp(le)
    T = np.asarray(transition, dtype=float)
    alpha = np.empty((B, K, S))
    c = np.empty((B, K))
    a = np.asarray(prior, dtype=float) * E[:, 0]
    c[:, 0] = a.sum(-1)
    alpha[:, 0] = a / c[:, 0, None]
    for k in range(1, K):
        a = (alpha[:, k - 1] @ T) * E[:, k]
        c[:, k] = a.sum(-1)
        alpha[:, k] = a / c[:, k, None]
    beta = np.ones((B, K, S))
    for k in range(K - 2, -1, -1):
        beta[:, k] = (E[:, k + 1] * beta[:, k + 1]) @ T.T / c[:, k + 1, None]
    g = alpha * beta
    g /= g.sum(-1, keepdims=True)
    return g, alpha
