"""Variational linear probing with a description-length objective.

A probe is a linear classifier over a learned convex combination of layer
representations. Its weights carry a Gaussian posterior (mean and log
variance per weight); the objective is the summed token cross-entropy of
a reparameterized weight sample plus the KL divergence from the posterior
to a prior, i.e. the number of nats needed to transmit the labels plus
the model. Two priors are supported: the sparsity-inducing log-uniform
prior with its standard analytic KL approximation, and a standard-normal
prior whose KL is exact and easy to verify.

Also here: macro-F1, the codelength ratio against a random-representation
baseline, principal angles between probe subspaces, and Fisher-averaged
trajectory correlations.

Representation dumps reuse the tensor container: one rank-2 record per
layer named ``h/<index>`` (tokens x dim), a rank-1 label record ``y`` of
kind "other", an optional ``seq`` record with sequence ids, and a
metadata record whose name encodes the header keys, e.g.
``meta:task=pos;size=14m;seed=0;step=1000``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as _scipy_stats

from .errors import DataError
from .tensorstore import TensorKind, TensorRecord, read_checkpoint, write_checkpoint

LN2 = math.log(2.0)

# Constants of the analytic KL approximation for the log-uniform prior.
_KL_K1 = 0.63576
_KL_K2 = 1.87320
_KL_K3 = 1.48695
_ALPHA_EPS = 1e-8

PRIORS = ("log-uniform", "standard-normal")


@dataclass(frozen=True)
class ProbeDataset:
    """Token representations stacked per layer, with labels.

    ``stacks`` has shape (tokens, layers, dim); ``labels`` in
    [0, num_classes); ``sequence_ids`` groups tokens into input sequences.
    """

    stacks: np.ndarray
    labels: np.ndarray
    sequence_ids: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "stacks", np.asarray(self.stacks, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "sequence_ids", np.asarray(self.sequence_ids, dtype=np.int64))
        if self.stacks.ndim != 3:
            raise DataError("stacks must be (tokens, layers, dim)")
        n = self.stacks.shape[0]
        if self.labels.shape != (n,) or self.sequence_ids.shape != (n,):
            raise DataError("labels and sequence ids must align with tokens")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    @property
    def num_tokens(self) -> int:
        return self.stacks.shape[0]

    @property
    def num_layers(self) -> int:
        return self.stacks.shape[1]

    @property
    def dim(self) -> int:
        return self.stacks.shape[2]

    def subset(self, index: np.ndarray) -> "ProbeDataset":
        return ProbeDataset(
            self.stacks[index], self.labels[index], self.sequence_ids[index], self.num_classes
        )


@dataclass(frozen=True)
class ProbeModel:
    """Posterior means/log-variances of the classifier plus mixing logits."""

    weight_means: np.ndarray
    weight_log_variances: np.ndarray
    mix_logits: np.ndarray
    prior: str = "log-uniform"

    def __post_init__(self) -> None:
        object.__setattr__(self, "weight_means", np.asarray(self.weight_means, dtype=np.float64))
        object.__setattr__(
            self, "weight_log_variances", np.asarray(self.weight_log_variances, dtype=np.float64)
        )
        object.__setattr__(self, "mix_logits", np.asarray(self.mix_logits, dtype=np.float64))
        if self.weight_means.ndim != 2:
            raise DataError("weight means must be (dim, classes)")
        if self.weight_log_variances.shape != self.weight_means.shape:
            raise DataError("weight log-variances must match the means' shape")
        if self.mix_logits.ndim != 1:
            raise DataError("mix logits must be a vector")
        if self.prior not in PRIORS:
            raise DataError(f"unknown prior {self.prior!r}; expected one of {PRIORS}")
        for arr in (self.weight_means, self.weight_log_variances, self.mix_logits):
            if not np.all(np.isfinite(arr)):
                raise DataError("probe parameters must be finite")

    @property
    def dim(self) -> int:
        return self.weight_means.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weight_means.shape[1]

    @property
    def num_layers(self) -> int:
        return self.mix_logits.shape[0]

    def mix_weights(self) -> np.ndarray:
        return _softmax(self.mix_logits)


@dataclass(frozen=True)
class CodelengthReport:
    data_bits: float
    kl_bits: float
    macro_f1: float

    @property
    def total_bits(self) -> float:
        return self.data_bits + self.kl_bits


@dataclass(frozen=True)
class CorrelationSummary:
    names: tuple[str, ...]
    r_matrix: np.ndarray
    fisher_mean: float
    p_values: np.ndarray


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def mix_layers(stack: np.ndarray, mix_logits: np.ndarray) -> np.ndarray:
    """Convex combination of layer vectors with softmax(mix_logits) weights."""
    stack = np.asarray(stack, dtype=np.float64)
    logits = np.asarray(mix_logits, dtype=np.float64)
    if stack.ndim != 2 or stack.shape[0] != logits.shape[0]:
        raise DataError(f"stack {stack.shape} does not match {logits.shape[0]} mixing logits")
    return _softmax(logits) @ stack


def _kl_and_grads(
    probe: ProbeModel,
) -> tuple[float, np.ndarray, np.ndarray]:
    """KL(posterior || prior) in nats, its gradients w.r.t. means and
    log-variances."""
    M = probe.weight_means
    V = probe.weight_log_variances
    if probe.prior == "standard-normal":
        sigma2 = np.exp(V)
        kl = 0.5 * np.sum(sigma2 + M * M - 1.0 - V)
        return float(kl), M.copy(), 0.5 * (sigma2 - 1.0)

    # log-uniform: analytic approximation in log alpha = V - log(M^2),
    # clamped at zero elementwise (gradient is zero where clamped)
    m2 = M * M + _ALPHA_EPS
    t = V - np.log(m2)
    sig = 1.0 / (1.0 + np.exp(-(_KL_K2 + _KL_K3 * t)))
    softplus_neg_t = np.logaddexp(0.0, -t)
    kl_elem = -_KL_K1 * sig + 0.5 * softplus_neg_t + _KL_K1
    active = kl_elem > 0.0
    dkl_dt = -_KL_K1 * _KL_K3 * sig * (1.0 - sig) - 0.5 / (1.0 + np.exp(t))
    dkl_dt = np.where(active, dkl_dt, 0.0)
    grad_M = dkl_dt * (-2.0 * M / m2)
    grad_V = dkl_dt
    return float(np.sum(np.where(active, kl_elem, 0.0))), grad_M, grad_V


def mdl_objective(
    probe: ProbeModel,
    stacks: np.ndarray,
    labels: np.ndarray,
    noise: np.ndarray,
    kl_weight: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss (nats) and analytic gradients for one batch.

    The loss is the summed token cross-entropy under the reparameterized
    weights ``mean + exp(log_var / 2) * noise`` plus ``kl_weight`` times
    the KL term. ``noise`` must have one draw per weight and is supplied
    by the caller so the function stays deterministic.
    """
    stacks = np.asarray(stacks, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    noise = np.asarray(noise, dtype=np.float64)
    n, L, d = stacks.shape
    if L != probe.num_layers or d != probe.dim:
        raise DataError(
            f"batch shape {stacks.shape} does not match probe ({probe.num_layers} layers, dim {probe.dim})"
        )
    if noise.shape != probe.weight_means.shape:
        raise DataError("noise must have one draw per weight")

    w = _softmax(probe.mix_logits)
    h = np.einsum("nld,l->nd", stacks, w)
    std = np.exp(0.5 * probe.weight_log_variances)
    theta = probe.weight_means + std * noise
    logits = h @ theta
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    data_nats = -float(log_probs[np.arange(n), labels].sum())

    # backprop: d(data)/d(logits) = softmax - onehot
    g = np.exp(log_probs)
    g[np.arange(n), labels] -= 1.0
    grad_theta = h.T @ g
    grad_means = grad_theta.copy()
    grad_log_vars = grad_theta * (0.5 * std * noise)
    grad_h = g @ theta.T
    grad_w = np.einsum("nld,nd->l", stacks, grad_h)
    grad_logits_mix = w * (grad_w - float(w @ grad_w))

    kl_nats, kl_grad_M, kl_grad_V = _kl_and_grads(probe)
    loss = data_nats + kl_weight * kl_nats
    grads = {
        "weight_means": grad_means + kl_weight * kl_grad_M,
        "weight_log_variances": grad_log_vars + kl_weight * kl_grad_V,
        "mix_logits": grad_logits_mix,
    }
    if not math.isfinite(loss):
        raise DataError("non-finite probe loss")
    return loss, grads


def _codelength_parts(probe: ProbeModel, dataset: ProbeDataset) -> tuple[float, float]:
    """(data nats, kl nats) at the posterior means (no weight noise)."""
    zero_noise = np.zeros_like(probe.weight_means)
    kl_nats, _, _ = _kl_and_grads(probe)
    loss, _ = mdl_objective(probe, dataset.stacks, dataset.labels, zero_noise, kl_weight=0.0)
    return loss, kl_nats


def predict(probe: ProbeModel, stacks: np.ndarray) -> np.ndarray:
    """Class predictions at the posterior means."""
    stacks = np.asarray(stacks, dtype=np.float64)
    h = np.einsum("nld,l->nd", stacks, probe.mix_weights())
    return np.argmax(h @ probe.weight_means, axis=1)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.5
    momentum: float = 0.9
    batch_size: int | None = None
    rng_seed: int = 0
    prior: str = "log-uniform"
    heldout_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("epochs and learning_rate must be positive")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must be in (0, 1)")
        if self.prior not in PRIORS:
            raise ValueError(f"unknown prior {self.prior!r}")


def _stratified_split(
    labels: np.ndarray, heldout_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    train_idx: list[np.ndarray] = []
    held_idx: list[np.ndarray] = []
    for cls in np.unique(labels):
        members = np.nonzero(labels == cls)[0]
        members = rng.permutation(members)
        n_held = int(round(len(members) * heldout_fraction))
        n_held = min(max(n_held, 1 if len(members) > 1 else 0), len(members) - 1)
        held_idx.append(members[:n_held])
        train_idx.append(members[n_held:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(held_idx))


def train(dataset: ProbeDataset, config: TrainConfig = TrainConfig()) -> tuple[ProbeModel, CodelengthReport]:
    """Fit the probe by gradient descent on the description-length loss.

    Per step the data term is averaged over the batch and the KL term is
    scaled by the batch fraction, so every step descends an unbiased
    estimate of the full objective. The report's codelength uses the full
    training split at the posterior means; macro-F1 uses the held-out
    split. Deterministic given ``config.rng_seed``.
    """
    if dataset.num_tokens < 4:
        raise DataError("dataset too small to split")
    rng = np.random.default_rng(config.rng_seed)
    train_idx, held_idx = _stratified_split(dataset.labels, config.heldout_fraction, rng)
    train_split = dataset.subset(train_idx)
    held_split = dataset.subset(held_idx)
    if np.unique(train_split.labels).size < 2:
        raise DataError("training split has fewer than 2 classes")

    d, C, L = dataset.dim, dataset.num_classes, dataset.num_layers
    means = np.zeros((d, C))
    log_vars = np.full((d, C), -3.0)
    mix = np.zeros(L)
    velocity = {
        "weight_means": np.zeros_like(means),
        "weight_log_variances": np.zeros_like(log_vars),
        "mix_logits": np.zeros_like(mix),
    }

    n_train = train_split.num_tokens
    batch = config.batch_size if config.batch_size is not None else n_train
    batch = min(batch, n_train)
    for _ in range(config.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, batch):
            take = order[start : start + batch]
            probe = ProbeModel(means, log_vars, mix, config.prior)
            noise = rng.standard_normal((d, C))
            _, grads = mdl_objective(
                probe,
                train_split.stacks[take],
                train_split.labels[take],
                noise,
                kl_weight=len(take) / n_train,
            )
            scale = config.learning_rate / len(take)
            for key, param in (
                ("weight_means", means),
                ("weight_log_variances", log_vars),
                ("mix_logits", mix),
            ):
                velocity[key] = config.momentum * velocity[key] - scale * grads[key]
                param += velocity[key]

    probe = ProbeModel(means, log_vars, mix, config.prior)
    data_nats, kl_nats = _codelength_parts(probe, train_split)
    report = CodelengthReport(
        data_bits=data_nats / LN2,
        kl_bits=kl_nats / LN2,
        macro_f1=evaluate_macro_f1(probe, held_split),
    )
    return probe, report


def evaluate_macro_f1(probe: ProbeModel, dataset: ProbeDataset) -> float:
    """Unweighted mean F1 over the classes present in the gold labels."""
    if dataset.num_tokens == 0:
        raise DataError("empty dataset")
    predictions = predict(probe, dataset.stacks)
    gold = dataset.labels
    scores = []
    for cls in np.unique(gold):
        tp = int(np.sum((predictions == cls) & (gold == cls)))
        fp = int(np.sum((predictions == cls) & (gold != cls)))
        fn = int(np.sum((predictions != cls) & (gold == cls)))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def codelength_ratio(model_report: CodelengthReport, baseline_report: CodelengthReport) -> float:
    """Total codelength relative to the random-representation baseline;
    values near zero mean the representations compress the labels well."""
    if baseline_report.total_bits <= 0.0:
        raise DataError("baseline codelength must be positive")
    return model_report.total_bits / baseline_report.total_bits


def _orthonormal_columns(matrix: np.ndarray, label: str) -> np.ndarray:
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DataError(f"{label} is a zero matrix; its column span is undefined")
    rank = int(np.sum(s > 1e-10 * s[0]))
    if rank < matrix.shape[1]:
        warnings.warn(
            f"{label} is rank deficient (effective rank {rank} of {matrix.shape[1]}); "
            "near-zero directions dropped",
            stacklevel=3,
        )
    return u[:, :rank]


def subspace_angles(theta_a: np.ndarray, theta_b: np.ndarray) -> tuple[np.ndarray, float]:
    """Principal angles (degrees, ascending) between two column spans.

    Cosines from the SVD of Qa'Qb are ill-conditioned near zero angle, so
    angles below 45 degrees are recomputed from the sine form (SVD of
    Qb - Qa(Qa'Qb)).
    """
    A = np.asarray(theta_a, dtype=np.float64)
    B = np.asarray(theta_b, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2:
        raise DataError(f"probe matrices must share a 2-d shape, got {A.shape} vs {B.shape}")
    qa = _orthonormal_columns(A, "first matrix")
    qb = _orthonormal_columns(B, "second matrix")
    if qa.shape[1] > qb.shape[1]:
        qa, qb = qb, qa
    cross = qa.T @ qb
    cosines = np.clip(np.linalg.svd(cross, compute_uv=False), 0.0, 1.0)
    angles = np.arccos(cosines)  # ascending: smallest angle first
    small = cosines**2 >= 0.5
    if np.any(small):
        sines = np.clip(np.linalg.svd(qb - qa @ cross, compute_uv=False), 0.0, 1.0)
        sines = np.sort(sines)[: qa.shape[1]]
        angles[small] = np.arcsin(sines[small])
    angles = np.degrees(angles)
    return angles, float(angles.mean())


def fisher_average(r_values: Sequence[float]) -> float:
    """tanh of the mean arctanh; values at the boundary are clamped."""
    values = np.asarray(r_values, dtype=np.float64)
    if values.size == 0:
        raise DataError("no correlation values to average")
    if np.any(np.abs(values) > 1.0):
        raise DataError("correlations must lie in [-1, 1]")
    limit = 1.0 - 1e-9
    if np.any(np.abs(values) > limit):
        warnings.warn("correlations at the boundary clamped before Fisher averaging", stacklevel=2)
        values = np.clip(values, -limit, limit)
    return float(np.tanh(np.mean(np.arctanh(values))))


def trajectory_correlations(trajectories: Mapping[str, Sequence[float]]) -> CorrelationSummary:
    """Pairwise Pearson correlations between per-size metric trajectories.

    The Fisher average runs over the full pair set, self-pairs included,
    with boundary values clamped. P-values come from the two-sided t-test
    of each coefficient (0 for self-pairs).
    """
    names = tuple(trajectories.keys())
    if not names:
        raise DataError("no trajectories given")
    series = [np.asarray(trajectories[n], dtype=np.float64) for n in names]
    length = series[0].shape[0]
    for name, s in zip(names, series):
        if s.ndim != 1 or s.shape[0] != length:
            raise DataError(f"trajectory {name!r} has mismatched length")
        if np.std(s) == 0.0:
            raise DataError(f"trajectory {name!r} has zero variance")
    m = len(names)
    r = np.eye(m)
    p = np.zeros((m, m))
    df = length - 2
    for i in range(m):
        for j in range(i + 1, m):
            rij = float(np.corrcoef(series[i], series[j])[0, 1])
            r[i, j] = r[j, i] = rij
            if df > 0 and abs(rij) < 1.0:
                ts = abs(rij) * math.sqrt(df / (1.0 - rij * rij))
                p[i, j] = p[j, i] = 2.0 * float(_scipy_stats.t.sf(ts, df))
            else:
                p[i, j] = p[j, i] = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fisher_mean = fisher_average(r.ravel())
    return CorrelationSummary(names=names, r_matrix=r, fisher_mean=fisher_mean, p_values=p)


def save_probe(probe: ProbeModel, destination: str | Path) -> None:
    doc = {
        "format": "trainmap-probe",
        "version": 1,
        "prior": probe.prior,
        "weight_means": probe.weight_means.tolist(),
        "weight_log_variances": probe.weight_log_variances.tolist(),
        "mix_logits": probe.mix_logits.tolist(),
    }
    Path(destination).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_probe(source: str | Path) -> ProbeModel:
    try:
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read probe {source}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "trainmap-probe":
        raise DataError(f"{source}: not a trainmap probe document")
    try:
        return ProbeModel(
            weight_means=np.array(doc["weight_means"], dtype=np.float64),
            weight_log_variances=np.array(doc["weight_log_variances"], dtype=np.float64),
            mix_logits=np.array(doc["mix_logits"], dtype=np.float64),
            prior=str(doc["prior"]),
        )
    except KeyError as exc:
        raise DataError(f"{source}: missing key {exc}") from exc


def write_representation_dump(
    dataset: ProbeDataset, meta: Mapping[str, str | int], destination: str | Path
) -> None:
    """Store a probing dataset in the tensor container format."""
    records = [
        TensorRecord.from_array(f"h/{l:03d}", dataset.stacks[:, l, :], TensorKind.WEIGHT_MATRIX)
        for l in range(dataset.num_layers)
    ]
    records.append(TensorRecord.from_array("y", dataset.labels.astype(np.float32), TensorKind.OTHER))
    records.append(
        TensorRecord.from_array("seq", dataset.sequence_ids.astype(np.float32), TensorKind.OTHER)
    )
    pairs = ";".join(f"{k}={meta[k]}" for k in ("task", "size", "seed", "step"))
    records.append(TensorRecord.from_array(f"meta:{pairs}", np.zeros(1, dtype=np.float32), TensorKind.OTHER))
    write_checkpoint(records, destination)


def read_representation_dump(source: str | Path) -> tuple[ProbeDataset, dict[str, str]]:
    records = {r.name: r for r in read_checkpoint(source)}
    layer_names = sorted(n for n in records if n.startswith("h/"))
    if not layer_names or "y" not in records:
        raise DataError(f"{source}: not a representation dump (need h/* and y records)")
    stacks = np.stack([records[n].data.astype(np.float64) for n in layer_names], axis=1)
    labels = records["y"].data.astype(np.int64)
    if "seq" in records:
        seq = records["seq"].data.astype(np.int64)
    else:
        seq = np.arange(labels.shape[0], dtype=np.int64)
    meta: dict[str, str] = {}
    for name in records:
        if name.startswith("meta:"):
            for pair in name[len("meta:") :].split(";"):
                key, _, value = pair.partition("=")
                meta[key] = value
    num_classes = int(labels.max()) + 1 if labels.size else 0
    return ProbeDataset(stacks, labels, seq, num_classes), meta
