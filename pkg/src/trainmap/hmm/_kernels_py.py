"""Pure-numpy HMM recursions, the fallback for the compiled kernels.

All functions work in log space on float64 arrays: ``log_pi`` (K,),
``log_A`` (K, K) row-stochastic in probability space, ``log_B`` (T, K)
per-step emission log-densities. Entries may be -inf.
"""

from __future__ import annotations

import numpy as np


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def forward(log_pi: np.ndarray, log_A: np.ndarray, log_B: np.ndarray) -> tuple[float, np.ndarray]:
    """Scaled-free forward pass; returns (log-likelihood, log-alpha)."""
    T, K = log_B.shape
    log_alpha = np.empty((T, K))
    log_alpha[0] = log_pi + log_B[0]
    for t in range(1, T):
        log_alpha[t] = _logsumexp(log_alpha[t - 1][:, None] + log_A, axis=0) + log_B[t]
    return float(_logsumexp(log_alpha[-1], axis=0)), log_alpha


def backward(log_A: np.ndarray, log_B: np.ndarray) -> np.ndarray:
    T, K = log_B.shape
    log_beta = np.empty((T, K))
    log_beta[-1] = 0.0
    for t in range(T - 2, -1, -1):
        log_beta[t] = _logsumexp(log_A + (log_B[t + 1] + log_beta[t + 1])[None, :], axis=1)
    return log_beta


def viterbi_path(log_pi: np.ndarray, log_A: np.ndarray, log_B: np.ndarray) -> np.ndarray:
    """Maximum-probability state path; ties break toward the lower index."""
    T, K = log_B.shape
    delta = log_pi + log_B[0]
    psi = np.empty((T, K), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_A
        # np.argmax returns the first maximum, i.e. the lowest state index
        psi[t] = np.argmax(scores, axis=0)
        delta = scores[psi[t], np.arange(K)] + log_B[t]
    states = np.empty(T, dtype=np.int64)
    states[-1] = int(np.argmax(delta))
    for t in range(T - 2, -1, -1):
        states[t] = psi[t + 1, states[t + 1]]
    return states


def transition_weights(
    log_alpha: np.ndarray,
    log_beta: np.ndarray,
    log_A: np.ndarray,
    log_B: np.ndarray,
    loglik: float,
) -> np.ndarray:
    """Expected transition counts summed over time (the xi accumulator)."""
    T, K = log_B.shape
    if T < 2:
        return np.zeros((K, K))
    log_xi = (
        log_alpha[:-1, :, None]
        + log_A[None, :, :]
        + (log_B[1:] + log_beta[1:])[:, None, :]
        - loglik
    )
    return np.exp(log_xi).sum(axis=0)
