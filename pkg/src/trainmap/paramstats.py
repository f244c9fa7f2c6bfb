"""Per-checkpoint parameter statistics.

Fourteen quantities summarize a checkpoint: entrywise L1 norm, Frobenius
L2 norm and their ratio, mean/median/variance of weight entries, the same
three for bias entries, trace, spectral norm, trace over spectral norm,
and mean/variance of singular values. Matrix-level quantities are averaged
(unweighted) over the selected weight matrices; entry-level quantities are
computed over the concatenation of all selected entries.

Conventions fixed here: population (1/n) variance, median of an even count
is the mean of the two middle values, trace of a rectangular matrix is the
diagonal sum over the leading square block, and everything is computed in
double precision regardless of the stored dtype.
"""

from __future__ import annotations

import csv
import fnmatch
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .tensorstore import RunManifest, TensorKind, TensorRecord, read_checkpoint

STAT_NAMES: tuple[str, ...] = (
    "l1",
    "l2",
    "l1_over_l2",
    "mu_w",
    "median_w",
    "sigma_w",
    "mu_b",
    "median_b",
    "sigma_b",
    "trace",
    "lambda_max",
    "trace_over_lambda_max",
    "mu_lambda",
    "sigma_lambda",
)

_MATRIX_STAT_NAMES = (
    "l1",
    "l2",
    "l1_over_l2",
    "trace",
    "lambda_max",
    "trace_over_lambda_max",
    "mu_lambda",
    "sigma_lambda",
)


@dataclass(frozen=True)
class StatConfig:
    """Tensor selection and numeric conventions for statistics extraction."""

    include_patterns: tuple[str, ...] = ("*",)
    exclude_patterns: tuple[str, ...] = ()
    variance_convention: str = "population"
    svd_tolerance: float = 0.0

    def __post_init__(self) -> None:
        if self.variance_convention != "population":
            raise ValueError(f"unsupported variance convention {self.variance_convention!r}")
        if self.svd_tolerance < 0:
            raise ValueError("svd_tolerance must be non-negative")

    def selects(self, name: str) -> bool:
        if not any(fnmatch.fnmatch(name, pat) for pat in self.include_patterns):
            return False
        return not any(fnmatch.fnmatch(name, pat) for pat in self.exclude_patterns)


@dataclass(frozen=True)
class MatrixStats:
    l1: float
    l2: float
    l1_over_l2: float
    trace: float
    lambda_max: float
    trace_over_lambda_max: float
    mu_lambda: float
    sigma_lambda: float


@dataclass(frozen=True)
class StatVector:
    """The 14 statistics for one checkpoint, plus its step and any flags."""

    l1: float
    l2: float
    l1_over_l2: float
    mu_w: float
    median_w: float
    sigma_w: float
    mu_b: float
    median_b: float
    sigma_b: float
    trace: float
    lambda_max: float
    trace_over_lambda_max: float
    mu_lambda: float
    sigma_lambda: float
    step: int = 0
    flags: tuple[str, ...] = ()

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in STAT_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float], step: int = 0, flags: tuple[str, ...] = ()) -> "StatVector":
        if len(values) != len(STAT_NAMES):
            raise ValueError(f"expected {len(STAT_NAMES)} values, got {len(values)}")
        return cls(*(float(v) for v in values), step=step, flags=flags)


@dataclass(frozen=True)
class StatSeries:
    """Statistics of one run, aligned to its checkpoint steps."""

    size: str
    seed: int
    stats: tuple[StatVector, ...]

    @property
    def steps(self) -> list[int]:
        return [s.step for s in self.stats]

    def values(self) -> np.ndarray:
        """The (checkpoints x 14) statistics matrix in canonical order."""
        return np.stack([s.as_array() for s in self.stats])

    def __len__(self) -> int:
        return len(self.stats)


def _ratio(num: float, den: float) -> float:
    # 0/0 -> 0 by convention; a nonzero numerator with zero denominator
    # cannot arise for these statistics (l2 = 0 or lambda_max = 0 forces
    # the whole matrix, hence the numerator, to zero).
    return num / den if den != 0.0 else 0.0


def matrix_statistics(m: np.ndarray, svd_tolerance: float = 0.0) -> MatrixStats:
    """Matrix-level statistics of a rank-2 tensor."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DataError(f"matrix statistics need a rank-2 tensor, got rank {m.ndim}")
    if m.size == 0:
        raise DataError("matrix statistics of an empty tensor")
    if not np.all(np.isfinite(m)):
        raise DataError("matrix contains non-finite entries")

    l1 = float(np.sum(np.abs(m)))
    l2 = float(np.linalg.norm(m))
    trace = float(np.trace(m))
    sv = np.linalg.svd(m, compute_uv=False)
    if svd_tolerance > 0.0 and sv.size:
        sv = np.where(sv < svd_tolerance * sv[0], 0.0, sv)
    lambda_max = float(sv[0]) if sv.size else 0.0
    return MatrixStats(
        l1=l1,
        l2=l2,
        l1_over_l2=_ratio(l1, l2),
        trace=trace,
        lambda_max=lambda_max,
        trace_over_lambda_max=_ratio(trace, lambda_max),
        mu_lambda=float(np.mean(sv)),
        sigma_lambda=float(np.var(sv)),
    )


def _entry_stats(values: np.ndarray) -> tuple[float, float, float]:
    return float(np.mean(values)), float(np.median(values)), float(np.var(values))


def checkpoint_statistics(
    records: Sequence[TensorRecord], cfg: StatConfig = StatConfig(), step: int = 0
) -> StatVector:
    """Aggregate statistics over all selected tensors of one checkpoint."""
    weights = [r for r in records if r.kind == TensorKind.WEIGHT_MATRIX and cfg.selects(r.name)]
    biases = [r for r in records if r.kind == TensorKind.BIAS_VECTOR and cfg.selects(r.name)]
    if not weights:
        raise DataError("no weight matrices match the configured patterns")

    per_matrix = [matrix_statistics(w.data, cfg.svd_tolerance) for w in weights]
    matrix_means = {
        name: float(np.mean([getattr(s, name) for s in per_matrix])) for name in _MATRIX_STAT_NAMES
    }

    w_entries = np.concatenate([w.data.ravel().astype(np.float64) for w in weights])
    mu_w, median_w, sigma_w = _entry_stats(w_entries)

    flags: tuple[str, ...] = ()
    if biases:
        b_entries = np.concatenate([b.data.ravel().astype(np.float64) for b in biases])
        if not np.all(np.isfinite(b_entries)):
            raise DataError("bias tensor contains non-finite entries")
        mu_b, median_b, sigma_b = _entry_stats(b_entries)
    else:
        mu_b = median_b = sigma_b = 0.0
        flags = ("no_bias",)

    vec = StatVector(
        mu_w=mu_w,
        median_w=median_w,
        sigma_w=sigma_w,
        mu_b=mu_b,
        median_b=median_b,
        sigma_b=sigma_b,
        step=step,
        flags=flags,
        **matrix_means,
    )
    if not np.all(np.isfinite(vec.as_array())):
        raise DataError("non-finite statistic produced")
    return vec


def run_statistics(manifest: RunManifest, cfg: StatConfig = StatConfig()) -> StatSeries:
    """One StatVector per checkpoint of the run, in step order.

    Checkpoints are independent; set TRAINMAP_THREADS > 1 to read and
    process them concurrently (results are assembled in step order).
    """

    def one(item: tuple[int, str]) -> StatVector:
        step, path = item
        try:
            records = read_checkpoint(path)
            return checkpoint_statistics(records, cfg, step=step)
        except (DataError, OSError) as exc:
            raise DataError(f"step {step} ({path}): {exc}") from exc

    threads = int(os.environ.get("TRAINMAP_THREADS", "1") or "1")
    if threads > 1 and len(manifest.checkpoints) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(one, manifest.checkpoints))
    else:
        stats = [one(item) for item in manifest.checkpoints]
    return StatSeries(size=manifest.size, seed=manifest.seed, stats=tuple(stats))


CSV_HEADER = ("size", "seed", "step") + STAT_NAMES


def write_stats_csv(series: Iterable[StatSeries], destination: str | Path) -> None:
    """CSV export: one row per checkpoint, ``size,seed,step`` plus the 14
    statistics in canonical order."""
    with open(destination, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for s in series:
            for vec in s.stats:
                writer.writerow(
                    [s.size, s.seed, vec.step] + [repr(getattr(vec, n)) for n in STAT_NAMES]
                )


def read_stats_csv(source: str | Path) -> list[StatSeries]:
    """Read a stats CSV back into one StatSeries per (size, seed), each
    sorted by step."""
    groups: dict[tuple[str, int], list[StatVector]] = {}
    order: list[tuple[str, int]] = []
    with open(source, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise DataError(f"{source}: expected header {','.join(CSV_HEADER)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise DataError(f"{source}: row has {len(row)} fields, expected {len(CSV_HEADER)}")
            key = (row[0], int(row[1]))
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(StatVector.from_array([float(v) for v in row[3:]], step=int(row[2])))
    return [
        StatSeries(size=size, seed=seed, stats=tuple(sorted(groups[(size, seed)], key=lambda v: v.step)))
        for size, seed in order
    ]
