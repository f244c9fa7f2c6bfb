"""Run-level stability analyses.

Covers outlier flagging from standardized final accuracies, bag-of-states
regression of final performance on state occupancy, zero-shot decoding of
one size's runs under another size's model, and the truncation curve that
shows how much of a run the regression needs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import cartography, hmm
from .cartography import StandardizedEnsemble, TrainingMap
from .errors import DataError


@dataclass(frozen=True)
class AccuracyTable:
    """Final-checkpoint accuracy per (size, seed) row and task column."""

    tasks: tuple[str, ...]
    cells: dict[tuple[str, int], np.ndarray]

    def __post_init__(self) -> None:
        if not self.tasks or not self.cells:
            raise DataError("accuracy table must have at least one task and one row")
        for key, values in self.cells.items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != (len(self.tasks),):
                raise DataError(f"row {key}: expected {len(self.tasks)} cells, got {arr.shape}")
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise DataError(f"row {key}: accuracies must lie in [0, 1]")
            self.cells[key] = arr

    def sizes(self) -> list[str]:
        return sorted({size for size, _ in self.cells})

    def seeds(self, size: str) -> list[int]:
        return sorted(seed for s, seed in self.cells if s == size)

    def matrix(self, size: str) -> tuple[list[int], np.ndarray]:
        seeds = self.seeds(size)
        return seeds, np.stack([self.cells[(size, seed)] for seed in seeds])


@dataclass(frozen=True)
class ZScoreTable:
    """Accuracies standardized across seeds within each (size, task)."""

    tasks: tuple[str, ...]
    cells: dict[tuple[str, int], np.ndarray]
    row_average: dict[tuple[str, int], float]
    degenerate: dict[str, tuple[str, ...]]

    def seeds(self, size: str) -> list[int]:
        return sorted(seed for s, seed in self.cells if s == size)

    def averages(self, size: str) -> dict[int, float]:
        return {seed: self.row_average[(size, seed)] for seed in self.seeds(size)}


@dataclass(frozen=True)
class OutlierFlag:
    size: str
    seed: int
    tasks: tuple[str, ...]


@dataclass(frozen=True)
class BagOfStates:
    """Visit counts per latent state for one run."""

    counts: tuple[int, ...]
    seed: int
    size: str

    @classmethod
    def from_map(cls, training_map: TrainingMap, num_states: int) -> "BagOfStates":
        return bag_of_states(training_map, num_states)


@dataclass(frozen=True)
class RegressionResult:
    coefficients: np.ndarray
    intercept: float
    fitted: np.ndarray
    residuals: np.ndarray
    r_squared: float


def zscore(table: AccuracyTable) -> ZScoreTable:
    """Column-wise standardization (sample std) within each size, with the
    per-seed average z-score appended."""
    cells: dict[tuple[str, int], np.ndarray] = {}
    row_average: dict[tuple[str, int], float] = {}
    degenerate: dict[str, tuple[str, ...]] = {}
    for size in table.sizes():
        seeds, acc = table.matrix(size)
        if len(seeds) < 2:
            raise DataError(f"size {size}: z-scores need at least 2 seeds")
        mean = acc.mean(axis=0)
        std = acc.std(axis=0, ddof=1)
        degenerate_mask = std == 0.0
        degenerate[size] = tuple(t for t, d in zip(table.tasks, degenerate_mask) if d)
        z = np.where(degenerate_mask, 0.0, (acc - mean) / np.where(degenerate_mask, 1.0, std))
        for i, seed in enumerate(seeds):
            cells[(size, seed)] = z[i]
            row_average[(size, seed)] = float(z[i].mean())
    return ZScoreTable(tasks=table.tasks, cells=cells, row_average=row_average, degenerate=degenerate)


def flag_outliers(
    z: ZScoreTable, threshold: float = 2.0, rule: str = "any-task"
) -> list[OutlierFlag]:
    """Flag (size, seed) rows whose |z| exceeds the threshold on at least
    one task ("any-task") or on more than half the tasks ("majority")."""
    if rule not in ("any-task", "majority"):
        raise ValueError(f"unknown outlier rule {rule!r}")
    flags = []
    for (size, seed), values in sorted(z.cells.items()):
        offending = tuple(t for t, v in zip(z.tasks, values) if abs(v) > threshold)
        n_needed = 1 if rule == "any-task" else len(z.tasks) // 2 + 1
        if len(offending) >= n_needed:
            flags.append(OutlierFlag(size=size, seed=seed, tasks=offending))
    return flags


def bag_of_states(training_map: TrainingMap, num_states: int) -> BagOfStates:
    states = np.asarray(training_map.states)
    if states.size and states.max() >= num_states:
        raise DataError(
            f"map for seed {training_map.seed} visits state {states.max()}, "
            f"but only {num_states} states were declared"
        )
    counts = np.bincount(states, minlength=num_states)
    return BagOfStates(counts=tuple(int(c) for c in counts), seed=training_map.seed, size=training_map.size)


def ols_fit(design: np.ndarray, response: np.ndarray, add_intercept: bool = True) -> RegressionResult:
    """Minimum-norm least squares via the pseudo-inverse.

    R-squared is 1 - SSres/SStot about the response mean; a constant
    response with zero residuals yields 1 by convention, and a constant
    response the design cannot reproduce is an error.
    """
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DataError(f"design {X.shape} and response {y.shape} are misaligned")
    if X.shape[0] < 1:
        raise DataError("need at least one observation")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("non-finite values in regression inputs")

    Xa = np.column_stack([X, np.ones(X.shape[0])]) if add_intercept else X
    beta = np.linalg.lstsq(Xa, y, rcond=None)[0]
    fitted = Xa @ beta
    residuals = y - fitted
    ss_res = float(residuals @ residuals)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    if ss_tot == 0.0:
        if ss_res > np.finfo(np.float64).eps * max(1.0, float(y @ y)) * y.size:
            raise DataError("constant response with nonzero residual")
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    if add_intercept:
        coefficients, intercept = beta[:-1], float(beta[-1])
    else:
        coefficients, intercept = beta, 0.0
    return RegressionResult(
        coefficients=coefficients,
        intercept=intercept,
        fitted=fitted,
        residuals=residuals,
        r_squared=r2,
    )


def _align_response(
    bags: Sequence[BagOfStates], z: Mapping[int, float] | Sequence[float]
) -> np.ndarray:
    if isinstance(z, Mapping):
        try:
            return np.array([z[b.seed] for b in bags], dtype=np.float64)
        except KeyError as exc:
            raise DataError(f"no z-score for seed {exc}") from exc
    y = np.asarray(z, dtype=np.float64)
    if y.shape != (len(bags),):
        raise DataError(f"{len(bags)} bags but {y.shape} response values")
    return y


def map_performance_regression(
    bags: Sequence[BagOfStates], z: Mapping[int, float] | Sequence[float]
) -> RegressionResult:
    """Regress per-seed average z-scores on state-visit counts."""
    if not bags:
        raise DataError("no bags given")
    design = np.array([b.counts for b in bags], dtype=np.float64)
    return ols_fit(design, _align_response(bags, z), add_intercept=True)


def zero_shot_decode(
    foreign_model: hmm.HmmModel, ensemble: StandardizedEnsemble
) -> list[TrainingMap]:
    """Decode one size's standardized runs under another size's model.

    Feature names must match exactly and in order; reordering silently
    would invalidate the emission means.
    """
    if tuple(foreign_model.feature_names) != tuple(ensemble.feature_names):
        raise DataError(
            "feature names differ between model and ensemble: "
            f"{foreign_model.feature_names} vs {ensemble.feature_names}"
        )
    return cartography.decode_maps(foreign_model, ensemble)


def truncation_curve(
    maps: Sequence[TrainingMap],
    z: Mapping[int, float] | Sequence[float],
    truncation_steps: Sequence[int],
) -> list[tuple[int, float]]:
    """Regression quality as a function of how much of each run is kept.

    For each cutoff, bags count only checkpoints at steps <= cutoff; the
    final cutoff therefore reproduces the full-run regression exactly.
    """
    if not maps:
        raise DataError("no maps given")
    if not truncation_steps:
        raise DataError("empty truncation list")
    num_states = max(max(m.states) for m in maps) + 1
    first_step = min(m.steps[0] for m in maps)
    curve = []
    for cutoff in truncation_steps:
        if cutoff < first_step:
            raise DataError(f"truncation step {cutoff} precedes the first checkpoint")
        truncated_bags = []
        for m in maps:
            kept = tuple(s for step, s in zip(m.steps, m.states) if step <= cutoff)
            truncated = TrainingMap(
                size=m.size,
                seed=m.seed,
                steps=tuple(step for step in m.steps if step <= cutoff),
                states=kept,
                fork_positions=cartography.fork_positions(kept),
            )
            truncated_bags.append(bag_of_states(truncated, num_states))
        result = map_performance_regression(truncated_bags, z)
        curve.append((int(cutoff), float(result.r_squared)))
    return curve


ACCURACY_CSV_HEADER = ("size", "seed", "task", "accuracy")


def read_accuracy_csv(source: str | Path) -> AccuracyTable:
    records: dict[tuple[str, int], dict[str, float]] = {}
    tasks: list[str] = []
    with open(source, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != ACCURACY_CSV_HEADER:
            raise DataError(f"{source}: expected header {','.join(ACCURACY_CSV_HEADER)}")
        for row in reader:
            if not row:
                continue
            size, seed, task, acc = row[0], int(row[1]), row[2], float(row[3])
            if task not in tasks:
                tasks.append(task)
            records.setdefault((size, seed), {})[task] = acc
    cells = {}
    for key, by_task in records.items():
        missing = [t for t in tasks if t not in by_task]
        if missing:
            raise DataError(f"{source}: row {key} is missing tasks {missing}")
        cells[key] = np.array([by_task[t] for t in tasks], dtype=np.float64)
    return AccuracyTable(tasks=tuple(tasks), cells=cells)


def write_accuracy_csv(table: AccuracyTable, destination: str | Path) -> None:
    with open(destination, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(ACCURACY_CSV_HEADER)
        for (size, seed), values in sorted(table.cells.items()):
            for task, acc in zip(table.tasks, values):
                writer.writerow([size, seed, task, repr(float(acc))])


def write_regression_csv(
    bags: Sequence[BagOfStates],
    z: Mapping[int, float] | Sequence[float],
    result: RegressionResult,
    destination: str | Path,
) -> None:
    """Per-seed actual/fitted values with the shared R-squared column."""
    y = _align_response(bags, z)
    with open(destination, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["size", "seed", "actual_z", "fitted_z", "residual", "r_squared"])
        for bag, actual, fitted, resid in zip(bags, y, result.fitted, result.residuals):
            writer.writerow(
                [bag.size, bag.seed, repr(float(actual)), repr(float(fitted)), repr(float(resid)), repr(result.r_squared)]
            )


def write_outliers_csv(flags: Sequence[OutlierFlag], destination: str | Path) -> None:
    with open(destination, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["size", "seed", "tasks"])
        for flag in flags:
            writer.writerow([flag.size, flag.seed, ";".join(flag.tasks)])
