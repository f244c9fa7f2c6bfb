"""Agreement metrics over multiple-choice prediction logs.

Prediction logs are JSON Lines files: a header record with the task,
size, seed, and step, then one record per item with the chosen option,
the gold option, and the option count. Alignment between two logs is
always by item id, never by file position.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class PredictionItem:
    item_id: str
    chosen: int
    gold: int
    n_options: int

    def __post_init__(self) -> None:
        if self.n_options < 2:
            raise DataError(f"item {self.item_id!r}: need at least 2 options")
        if not (0 <= self.chosen < self.n_options):
            raise DataError(f"item {self.item_id!r}: chosen option {self.chosen} out of range")
        if not (0 <= self.gold < self.n_options):
            raise DataError(f"item {self.item_id!r}: gold option {self.gold} out of range")


@dataclass(frozen=True)
class PredictionLog:
    task: str
    size: str
    seed: int
    step: int
    items: tuple[PredictionItem, ...]

    def __post_init__(self) -> None:
        ids = [it.item_id for it in self.items]
        if len(set(ids)) != len(ids):
            dup = [i for i, c in Counter(ids).items() if c > 1]
            raise DataError(f"duplicate item ids in log: {dup[:5]}")

    def by_id(self) -> dict[str, PredictionItem]:
        return {it.item_id: it for it in self.items}


@dataclass(frozen=True)
class AgreementResult:
    kappa: float
    observed_agreement: float
    expected_agreement: float
    n_items: int


def cohens_kappa(a: Sequence[int], b: Sequence[int]) -> AgreementResult:
    """Cohen's kappa between two aligned choice sequences.

    Expected agreement uses each rater's own marginal distribution. A
    degenerate expected agreement of 1 forces identical constant raters,
    for which kappa is 1.
    """
    x = np.asarray(a)
    y = np.asarray(b)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"choice sequences are misaligned: {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n < 1:
        raise DataError("empty choice sequences")
    p_o = float(np.mean(x == y))
    values = np.union1d(x, y)
    ma = np.array([np.mean(x == v) for v in values])
    mb = np.array([np.mean(y == v) for v in values])
    p_e = float(ma @ mb)
    if p_e >= 1.0:
        if p_o == 1.0:
            return AgreementResult(1.0, p_o, p_e, n)
        raise DataError("expected agreement is 1 but raters disagree")
    kappa = (p_o - p_e) / (1.0 - p_e)
    return AgreementResult(float(kappa), p_o, p_e, n)


def _aligned_choices(a: PredictionLog, b: PredictionLog) -> tuple[np.ndarray, np.ndarray]:
    ids_a = set(it.item_id for it in a.items)
    ids_b = set(it.item_id for it in b.items)
    if ids_a != ids_b:
        only_a = sorted(ids_a - ids_b)[:3]
        only_b = sorted(ids_b - ids_a)[:3]
        raise DataError(f"item sets differ (e.g. only in first: {only_a}, only in second: {only_b})")
    by_a, by_b = a.by_id(), b.by_id()
    order = sorted(ids_a)
    return (
        np.array([by_a[i].chosen for i in order]),
        np.array([by_b[i].chosen for i in order]),
    )


def inter_seed_agreement(
    logs: Sequence[PredictionLog], reference_seed: int = 0
) -> dict[int, AgreementResult]:
    """Kappa of every seed's choices against the reference seed's, for logs
    taken at one (task, size, step)."""
    if not logs:
        raise DataError("no logs given")
    keys = {(log.task, log.size, log.step) for log in logs}
    if len(keys) > 1:
        raise DataError(f"logs mix tasks/sizes/steps: {sorted(keys)}")
    reference = next((log for log in logs if log.seed == reference_seed), None)
    if reference is None:
        raise DataError(f"reference seed {reference_seed} not among logs")
    results = {}
    for log in logs:
        a, b = _aligned_choices(log, reference)
        results[log.seed] = cohens_kappa(a, b)
    return results


def self_consistency(run_logs: Sequence[PredictionLog]) -> dict[int, AgreementResult]:
    """Kappa of every step's choices against the final step's, for one
    seed's logs across training."""
    if not run_logs:
        raise DataError("no logs given")
    keys = {(log.task, log.size, log.seed) for log in run_logs}
    if len(keys) > 1:
        raise DataError(f"logs mix tasks/sizes/seeds: {sorted(keys)}")
    final = max(run_logs, key=lambda log: log.step)
    results = {}
    for log in run_logs:
        a, b = _aligned_choices(log, final)
        results[log.step] = cohens_kappa(a, b)
    return results


def accuracy(log: PredictionLog) -> float:
    if not log.items:
        raise DataError("empty prediction log")
    return float(np.mean([it.chosen == it.gold for it in log.items]))


def preference_proportion(pairs: Sequence[tuple[float, float]]) -> float:
    """Fraction of pairs preferring the first score; exact ties count 0.5."""
    if not pairs:
        raise DataError("no score pairs given")
    total = 0.0
    for preferred, other in pairs:
        if not (math.isfinite(preferred) and math.isfinite(other)):
            raise DataError(f"non-finite scores ({preferred}, {other})")
        if preferred > other:
            total += 1.0
        elif preferred == other:
            total += 0.5
    return total / len(pairs)


def write_log(log: PredictionLog, destination: str | Path) -> None:
    with open(destination, "w", encoding="utf-8") as f:
        header = {"task": log.task, "size": log.size, "seed": log.seed, "step": log.step}
        f.write(json.dumps(header) + "\n")
        for it in log.items:
            f.write(
                json.dumps(
                    {"item": it.item_id, "chosen": it.chosen, "gold": it.gold, "n_options": it.n_options}
                )
                + "\n"
            )


def read_log(source: str | Path) -> PredictionLog:
    path = Path(source)
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise DataError(f"{path}: empty log file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("task", "size", "seed", "step"):
        if key not in header:
            raise DataError(f"{path}: header is missing {key!r}")
    items = []
    for rec in records:
        try:
            items.append(
                PredictionItem(
                    item_id=str(rec["item"]),
                    chosen=int(rec["chosen"]),
                    gold=int(rec["gold"]),
                    n_options=int(rec["n_options"]),
                )
            )
        except KeyError as exc:
            raise DataError(f"{path}: item record missing {exc}") from exc
    return PredictionLog(
        task=str(header["task"]),
        size=str(header["size"]),
        seed=int(header["seed"]),
        step=int(header["step"]),
        items=tuple(items),
    )
