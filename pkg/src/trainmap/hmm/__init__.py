"""Gaussian-emission hidden Markov models over multivariate sequences.

Fitting runs Baum-Welch over multiple sequences with diagonal covariance,
k-means++ mean initialization, and several random restarts; the best
restart by final log-likelihood wins. Decoding is Viterbi with ties broken
toward the lower state index. State-count selection minimizes BIC.

Model files are JSON documents (UTF-8) with the keys ``format`` (fixed
string "trainmap-hmm"), ``version`` (1), ``feature_names`` (list of D
strings), ``initial`` (K floats), ``transition`` (K lists of K floats),
``means`` and ``variances`` (K lists of D floats).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DataError
from . import _backend
from ._backend import BACKEND

__all__ = [
    "BACKEND",
    "DEFAULT_NUM_STATES",
    "FitConfig",
    "FitReport",
    "HmmModel",
    "bic_score",
    "fit",
    "load_model",
    "num_free_parameters",
    "permute_states",
    "save_model",
    "select_num_states",
    "sequence_log_likelihood",
    "viterbi",
]

# Shared default for cross-size comparisons.
DEFAULT_NUM_STATES = 5

_LOG_2PI = math.log(2.0 * math.pi)
_STOCHASTIC_ATOL = 1e-9


@dataclass(frozen=True)
class HmmModel:
    """Fitted HMM parameters: diagonal-covariance Gaussian emissions."""

    initial: np.ndarray
    transition: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=np.float64))
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=np.float64))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=np.float64))
        k, d = self.means.shape
        if self.initial.shape != (k,) or self.transition.shape != (k, k):
            raise DataError("initial/transition shapes inconsistent with means")
        if self.variances.shape != (k, d):
            raise DataError("variances shape inconsistent with means")
        if len(self.feature_names) != d:
            raise DataError(f"expected {d} feature names, got {len(self.feature_names)}")
        if abs(self.initial.sum() - 1.0) > _STOCHASTIC_ATOL:
            raise DataError("initial distribution does not sum to 1")
        rows = self.transition.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > _STOCHASTIC_ATOL):
            raise DataError("transition matrix rows do not sum to 1")
        if np.any(self.variances <= 0.0):
            raise DataError("variances must be positive")

    @property
    def num_states(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def emission_log_likelihood(self, seq: np.ndarray) -> np.ndarray:
        """Per-step, per-state Gaussian log-densities, shape (T, K)."""
        x = _check_sequence(seq, self.dim)
        inv_var = 1.0 / self.variances
        log_det = np.sum(np.log(self.variances), axis=1)
        # ||x - mu||^2 / var expanded into three matrix products
        sq = (
            (x * x) @ inv_var.T
            - 2.0 * (x @ (self.means * inv_var).T)
            + np.sum(self.means * self.means * inv_var, axis=1)[None, :]
        )
        return -0.5 * (self.dim * _LOG_2PI + log_det[None, :] + sq)

    def _log_params(self) -> tuple[np.ndarray, np.ndarray]:
        with np.errstate(divide="ignore"):
            return np.log(self.initial), np.log(self.transition)


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 10
    max_iterations: int = 500
    tolerance: float = 1e-6
    variance_floor: float = 1e-6
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.restarts < 1 or self.max_iterations < 1:
            raise ValueError("restarts and max_iterations must be positive")
        if self.tolerance <= 0 or self.variance_floor <= 0:
            raise ValueError("tolerance and variance_floor must be positive")


@dataclass(frozen=True)
class FitReport:
    restart_log_likelihoods: tuple[float, ...]
    chosen_restart: int
    iteration_log_likelihoods: tuple[float, ...]
    converged: bool


def _check_sequence(seq: np.ndarray, dim: int | None = None) -> np.ndarray:
    x = np.ascontiguousarray(seq, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"sequences must be 2-d (time x features), got ndim {x.ndim}")
    if not np.all(np.isfinite(x)):
        raise DataError("sequence contains non-finite values")
    if dim is not None and x.shape[1] != dim:
        raise DataError(f"sequence dimension {x.shape[1]} does not match model dimension {dim}")
    return x


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over pooled observations."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[i] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def _em_run(
    sequences: list[np.ndarray],
    k: int,
    cfg: FitConfig,
    restart: int,
    feature_names: tuple[str, ...],
) -> tuple[HmmModel, list[float], bool]:
    d = sequences[0].shape[1]
    rng = np.random.default_rng([cfg.rng_seed, restart])
    pooled = np.concatenate(sequences, axis=0)

    means = _kmeanspp_centers(pooled, k, rng)
    variances = np.maximum(np.var(pooled, axis=0), cfg.variance_floor)
    variances = np.tile(variances, (k, 1))
    initial = np.full(k, 1.0 / k)
    transition = np.full((k, k), 1.0 / k)

    trace: list[float] = []
    converged = False
    model = HmmModel(initial, transition, means, variances, feature_names)
    for iteration in range(cfg.max_iterations):
        log_pi, log_A = model._log_params()
        total_ll = 0.0
        init_post = np.zeros(k)
        trans_num = np.zeros((k, k))
        gamma_sum = np.zeros(k)
        gamma_sum_no_last = np.zeros(k)
        x_sum = np.zeros((k, d))
        x2_sum = np.zeros((k, d))

        for seq in sequences:
            log_B = model.emission_log_likelihood(seq)
            ll, log_alpha = _backend.kernels.forward(log_pi, log_A, log_B)
            log_beta = _backend.kernels.backward(log_A, log_B)
            total_ll += ll
            gamma = np.exp(log_alpha + log_beta - ll)
            init_post += gamma[0]
            trans_num += _backend.kernels.transition_weights(log_alpha, log_beta, log_A, log_B, ll)
            gamma_sum += gamma.sum(axis=0)
            gamma_sum_no_last += gamma[:-1].sum(axis=0)
            x_sum += gamma.T @ seq
            x2_sum += gamma.T @ (seq * seq)

        if trace and total_ll < trace[-1] - 1e-8 * max(1.0, abs(trace[-1])):
            raise RuntimeError(
                f"log-likelihood decreased during EM: {trace[-1]} -> {total_ll} "
                f"(restart {restart}, iteration {iteration})"
            )
        previous = trace[-1] if trace else None
        trace.append(total_ll)
        if previous is not None and (total_ll - previous) <= cfg.tolerance * max(1.0, abs(total_ll)):
            converged = True
            break
        if iteration == cfg.max_iterations - 1:
            break

        # M-step
        initial = init_post / init_post.sum()
        row_sums = trans_num.sum(axis=1, keepdims=True)
        transition = np.where(row_sums > 0.0, trans_num / np.where(row_sums > 0, row_sums, 1.0), 1.0 / k)
        transition /= transition.sum(axis=1, keepdims=True)
        occ = np.where(gamma_sum > 0.0, gamma_sum, 1.0)
        means = x_sum / occ[:, None]
        variances = np.maximum(x2_sum / occ[:, None] - means**2, cfg.variance_floor)
        model = HmmModel(initial, transition, means, variances, feature_names)

    return model, trace, converged


def fit(
    sequences: Sequence[np.ndarray],
    num_states: int,
    cfg: FitConfig = FitConfig(),
    feature_names: Sequence[str] | None = None,
) -> tuple[HmmModel, FitReport]:
    """Baum-Welch over all sequences jointly; best of ``cfg.restarts``
    random restarts by final log-likelihood. Deterministic given
    ``cfg.rng_seed``."""
    if num_states < 1:
        raise DataError("need at least one state")
    seqs = [_check_sequence(s) for s in sequences]
    if not seqs:
        raise DataError("no sequences given")
    d = seqs[0].shape[1]
    for s in seqs:
        if s.shape[1] != d:
            raise DataError("sequences have mismatched feature dimensions")
    total_obs = sum(s.shape[0] for s in seqs)
    if total_obs <= num_states:
        raise DataError(f"{total_obs} observations cannot support {num_states} states")
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"f{i}" for i in range(d)
    )
    if len(names) != d:
        raise DataError(f"expected {d} feature names, got {len(names)}")

    def run(restart: int) -> tuple[HmmModel, list[float], bool]:
        return _em_run(seqs, num_states, cfg, restart, names)

    threads = int(os.environ.get("TRAINMAP_THREADS", "1") or "1")
    if threads > 1 and cfg.restarts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(cfg.restarts)))
    else:
        results = [run(r) for r in range(cfg.restarts)]

    finals = [r[1][-1] for r in results]
    best = int(np.argmax(finals))
    model, trace, converged = results[best]
    report = FitReport(
        restart_log_likelihoods=tuple(finals),
        chosen_restart=best,
        iteration_log_likelihoods=tuple(trace),
        converged=converged,
    )
    return model, report


def sequence_log_likelihood(model: HmmModel, seq: np.ndarray) -> float:
    """log p(seq | model) via the forward recursion."""
    log_B = model.emission_log_likelihood(seq)
    log_pi, log_A = model._log_params()
    ll, _ = _backend.kernels.forward(log_pi, log_A, log_B)
    return float(ll)


def viterbi(model: HmmModel, seq: np.ndarray) -> np.ndarray:
    """A maximum-probability state path (ties toward lower state index)."""
    log_B = model.emission_log_likelihood(seq)
    log_pi, log_A = model._log_params()
    return np.asarray(_backend.kernels.viterbi_path(log_pi, log_A, log_B))


def permute_states(model: HmmModel, perm: Sequence[int]) -> HmmModel:
    """Relabel states so that old state i becomes ``perm[i]``.

    The permuted model assigns identical likelihoods to every sequence.
    """
    p = np.asarray(perm, dtype=np.int64)
    if sorted(p.tolist()) != list(range(model.num_states)):
        raise DataError(f"{perm!r} is not a permutation of {model.num_states} states")
    inv = np.empty_like(p)
    inv[p] = np.arange(model.num_states)
    return HmmModel(
        initial=model.initial[inv],
        transition=model.transition[np.ix_(inv, inv)],
        means=model.means[inv],
        variances=model.variances[inv],
        feature_names=model.feature_names,
    )


def num_free_parameters(num_states: int, dim: int) -> int:
    """Free parameters: initial (K-1) + transition K(K-1) + 2KD emissions."""
    return (num_states - 1) + num_states * (num_states - 1) + 2 * num_states * dim


def bic_score(model: HmmModel, sequences: Sequence[np.ndarray]) -> float:
    """BIC = -2 log L + p ln(n) with n the total observation count."""
    total_ll = sum(sequence_log_likelihood(model, s) for s in sequences)
    n = sum(np.asarray(s).shape[0] for s in sequences)
    p = num_free_parameters(model.num_states, model.dim)
    return -2.0 * total_ll + p * math.log(n)


def select_num_states(
    sequences: Sequence[np.ndarray],
    k_range: Sequence[int],
    cfg: FitConfig = FitConfig(),
    feature_names: Sequence[str] | None = None,
) -> tuple[int, list[tuple[int, float]]]:
    """Fit each candidate state count and pick the BIC minimizer.

    Returns the chosen K and the full (K, BIC) table for reporting.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise DataError("empty state-count range")
    table: list[tuple[int, float]] = []
    for k in ks:
        model, _ = fit(sequences, k, cfg, feature_names)
        table.append((k, bic_score(model, sequences)))
    chosen = min(table, key=lambda kb: (kb[1], kb[0]))[0]
    return chosen, table


def save_model(model: HmmModel, destination: str | Path) -> None:
    doc = {
        "format": "trainmap-hmm",
        "version": 1,
        "feature_names": list(model.feature_names),
        "initial": model.initial.tolist(),
        "transition": model.transition.tolist(),
        "means": model.means.tolist(),
        "variances": model.variances.tolist(),
    }
    Path(destination).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(source: str | Path) -> HmmModel:
    try:
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {source}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "trainmap-hmm":
        raise DataError(f"{source}: not a trainmap HMM model document")
    if doc.get("version") != 1:
        raise DataError(f"{source}: unsupported model version {doc.get('version')!r}")
    try:
        return HmmModel(
            initial=np.array(doc["initial"], dtype=np.float64),
            transition=np.array(doc["transition"], dtype=np.float64),
            means=np.array(doc["means"], dtype=np.float64),
            variances=np.array(doc["variances"], dtype=np.float64),
            feature_names=tuple(doc["feature_names"]),
        )
    except KeyError as exc:
        raise DataError(f"{source}: missing key {exc}") from exc
