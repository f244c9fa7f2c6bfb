"""From statistic series to training maps.

The pipeline: standardize an ensemble of per-run statistic series (across
seeds at each checkpoint, or pooled over the whole size), decode each run
with a fitted HMM, relabel states canonically (state first entered
earliest in the majority sequence becomes 0), and annotate forks, i.e.
positions where a run re-enters a state it previously exited.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import hmm
from .errors import DataError
from .paramstats import STAT_NAMES, StatSeries

PER_CHECKPOINT = "per-checkpoint-across-seeds"
POOLED = "pooled-within-size"
_MODE_ALIASES = {
    PER_CHECKPOINT: PER_CHECKPOINT,
    "per-checkpoint": PER_CHECKPOINT,
    POOLED: POOLED,
    "pooled": POOLED,
}
MODE_CHOICES = tuple(sorted(_MODE_ALIASES))


@dataclass(frozen=True)
class StandardizationMode:
    kind: str = PER_CHECKPOINT
    epsilon: float = 1e-12

    def __post_init__(self) -> None:
        if self.kind not in _MODE_ALIASES:
            raise ValueError(f"unknown standardization mode {self.kind!r}")
        object.__setattr__(self, "kind", _MODE_ALIASES[self.kind])
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class StandardizedEnsemble:
    """Standardized (seeds x checkpoints x features) data plus the scaler
    used, retained so the same transform can be reapplied or audited."""

    size: str
    seeds: tuple[int, ...]
    steps: tuple[int, ...]
    data: np.ndarray
    feature_names: tuple[str, ...]
    mode: str
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    degenerate: np.ndarray

    def sequences(self) -> list[np.ndarray]:
        return [np.ascontiguousarray(self.data[i]) for i in range(self.data.shape[0])]


@dataclass(frozen=True)
class TrainingMap:
    """Decoded state sequence of one run, with fork annotations."""

    size: str
    seed: int
    steps: tuple[int, ...]
    states: tuple[int, ...]
    fork_positions: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.steps) != len(self.states):
            raise DataError("steps and states must have equal length")

    @property
    def has_fork(self) -> bool:
        return bool(self.fork_positions)


@dataclass(frozen=True)
class TransitionDriver:
    from_state: int
    to_state: int
    feature: str
    direction: str
    magnitude: float


@dataclass(frozen=True)
class TransitionSummary:
    from_state: int
    to_state: int
    mean_step: float
    std_step: float
    steps_by_seed: dict[int, int]
    missing_seeds: tuple[int, ...]


def standardize(
    ensemble: Sequence[StatSeries], mode: StandardizationMode = StandardizationMode()
) -> StandardizedEnsemble:
    """Standardize each feature to zero mean and unit sample std.

    Per-checkpoint mode normalizes across seeds at every step separately;
    pooled mode uses one mean/std per feature over all (seed, step) cells.
    Features whose std falls below ``mode.epsilon`` are mapped to zero and
    flagged as degenerate.
    """
    if not ensemble:
        raise DataError("empty ensemble")
    sizes = {s.size for s in ensemble}
    if len(sizes) > 1:
        raise DataError(f"ensemble mixes sizes {sorted(sizes)}; standardize one size at a time")
    steps0 = ensemble[0].steps
    for s in ensemble:
        if s.steps != steps0:
            raise DataError(f"seed {s.seed}: checkpoint steps differ from seed {ensemble[0].seed}")
    raw = np.stack([s.values() for s in ensemble])  # (S, T, D)

    if mode.kind == PER_CHECKPOINT:
        if raw.shape[0] < 2:
            raise DataError("per-checkpoint standardization needs at least 2 seeds")
        mean = raw.mean(axis=0)
        std = raw.std(axis=0, ddof=1)
    else:
        mean = raw.reshape(-1, raw.shape[2]).mean(axis=0)
        std = raw.reshape(-1, raw.shape[2]).std(axis=0, ddof=1)

    degenerate = std < mode.epsilon
    safe_std = np.where(degenerate, 1.0, std)
    data = (raw - mean) / safe_std
    data = np.where(degenerate, 0.0, data)
    return StandardizedEnsemble(
        size=ensemble[0].size,
        seeds=tuple(s.seed for s in ensemble),
        steps=tuple(steps0),
        data=data,
        feature_names=STAT_NAMES,
        mode=mode.kind,
        scaler_mean=mean,
        scaler_std=std,
        degenerate=degenerate,
    )


def fork_positions(states: Sequence[int]) -> tuple[int, ...]:
    """Indices where the sequence re-enters a state it had already exited."""
    exited: set[int] = set()
    positions: list[int] = []
    for i in range(1, len(states)):
        if states[i] != states[i - 1]:
            if states[i] in exited:
                positions.append(i)
            exited.add(states[i - 1])
    return tuple(positions)


def detect_fork(training_map: TrainingMap) -> tuple[bool, tuple[int, ...]]:
    positions = fork_positions(training_map.states)
    return bool(positions), positions


def _majority_sequence(raw_paths: np.ndarray, num_states: int) -> np.ndarray:
    """Per-step majority state across runs; ties go to the lower index."""
    counts = np.zeros((raw_paths.shape[1], num_states), dtype=np.int64)
    for s in range(raw_paths.shape[0]):
        counts[np.arange(raw_paths.shape[1]), raw_paths[s]] += 1
    return counts.argmax(axis=1)  # argmax takes the first (lowest) maximum


def canonical_relabeling(raw_paths: np.ndarray, num_states: int) -> np.ndarray:
    """Permutation mapping raw state labels to canonical ones.

    Canonical order follows first appearance in the per-step majority
    sequence; states never reaching a majority follow by earliest first
    appearance in any run, then by raw index; unvisited states last.
    """
    majority = _majority_sequence(raw_paths, num_states)
    order: list[int] = []
    for s in majority:
        if s not in order:
            order.append(int(s))
    first_seen = {}
    for state in np.unique(raw_paths):
        positions = np.nonzero(raw_paths == state)[1]
        first_seen[int(state)] = int(positions.min())
    leftovers = [s for s in sorted(first_seen) if s not in order]
    order.extend(sorted(leftovers, key=lambda s: (first_seen[s], s)))
    order.extend(s for s in range(num_states) if s not in order)
    perm = np.empty(num_states, dtype=np.int64)
    for canonical, raw in enumerate(order):
        perm[raw] = canonical
    return perm


def decode_maps(model: hmm.HmmModel, ensemble: StandardizedEnsemble) -> list[TrainingMap]:
    """Viterbi-decode every run and apply one canonical relabeling to all."""
    if len(ensemble.feature_names) != model.dim:
        raise DataError(
            f"ensemble has {len(ensemble.feature_names)} features, model expects {model.dim}"
        )
    raw_paths = np.stack([hmm.viterbi(model, seq) for seq in ensemble.sequences()])
    perm = canonical_relabeling(raw_paths, model.num_states)
    maps = []
    for i, seed in enumerate(ensemble.seeds):
        states = tuple(int(s) for s in perm[raw_paths[i]])
        maps.append(
            TrainingMap(
                size=ensemble.size,
                seed=seed,
                steps=ensemble.steps,
                states=states,
                fork_positions=fork_positions(states),
            )
        )
    return maps


def canonicalize_model(
    model: hmm.HmmModel, ensemble: StandardizedEnsemble
) -> tuple[hmm.HmmModel, list[TrainingMap]]:
    """Permute the model's state labels into the canonical order of this
    ensemble, so that saved models and decoded maps agree on labels."""
    raw_paths = np.stack([hmm.viterbi(model, seq) for seq in ensemble.sequences()])
    perm = canonical_relabeling(raw_paths, model.num_states)
    permuted = hmm.permute_states(model, perm)
    return permuted, decode_maps(permuted, ensemble)


def transition_step_summary(
    maps: Sequence[TrainingMap], exclude_seeds: Iterable[int] = ()
) -> list[TransitionSummary]:
    """First-crossing steps for each forward transition a -> a+1.

    Runs that never make a transition are listed as missing rather than
    averaged; ``exclude_seeds`` drops runs (e.g. outliers) entirely.
    """
    excluded = set(exclude_seeds)
    included = [m for m in maps if m.seed not in excluded]
    if not included:
        raise DataError("no maps left after exclusions")
    # the state universe comes from the whole ensemble, exclusions only
    # drop runs from the statistics
    num_states = max(max(m.states) for m in maps) + 1
    summaries = []
    for a in range(num_states - 1):
        b = a + 1
        steps_by_seed: dict[int, int] = {}
        missing: list[int] = []
        for m in included:
            found = None
            for i in range(1, len(m.states)):
                if m.states[i - 1] == a and m.states[i] == b:
                    found = m.steps[i]
                    break
            if found is None:
                missing.append(m.seed)
            else:
                steps_by_seed[m.seed] = found
        values = np.array(sorted(steps_by_seed.values()), dtype=np.float64)
        mean = float(values.mean()) if values.size else float("nan")
        std = float(values.std(ddof=1)) if values.size >= 2 else float("nan")
        summaries.append(
            TransitionSummary(
                from_state=a,
                to_state=b,
                mean_step=mean,
                std_step=std,
                steps_by_seed=steps_by_seed,
                missing_seeds=tuple(missing),
            )
        )
    return summaries


def transition_drivers(
    model: hmm.HmmModel, transition: tuple[int, int], k: int = 3
) -> list[TransitionDriver]:
    """Top-k features by absolute emission-mean change across a transition."""
    a, b = transition
    if not (0 <= a < model.num_states and 0 <= b < model.num_states):
        raise DataError(f"transition {a}->{b} outside the model's {model.num_states} states")
    delta = model.means[b] - model.means[a]
    ranked = sorted(
        zip(model.feature_names, delta), key=lambda item: (-abs(item[1]), item[0])
    )
    return [
        TransitionDriver(
            from_state=a,
            to_state=b,
            feature=name,
            direction="down" if d < 0 else "up",
            magnitude=float(abs(d)),
        )
        for name, d in ranked[: min(k, len(ranked))]
    ]


MAPS_CSV_HEADER = ("size", "seed", "step", "state", "is_fork")


def write_maps_csv(maps: Iterable[TrainingMap], destination: str | Path) -> None:
    with open(destination, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MAPS_CSV_HEADER)
        for m in maps:
            forks = set(m.fork_positions)
            for i, (step, state) in enumerate(zip(m.steps, m.states)):
                writer.writerow([m.size, m.seed, step, state, int(i in forks)])


def read_maps_csv(source: str | Path) -> list[TrainingMap]:
    rows: dict[tuple[str, int], list[tuple[int, int]]] = {}
    order: list[tuple[str, int]] = []
    with open(source, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != MAPS_CSV_HEADER:
            raise DataError(f"{source}: expected header {','.join(MAPS_CSV_HEADER)}")
        for row in reader:
            if not row:
                continue
            key = (row[0], int(row[1]))
            if key not in rows:
                rows[key] = []
                order.append(key)
            rows[key].append((int(row[2]), int(row[3])))
    maps = []
    for size, seed in order:
        entries = sorted(rows[(size, seed)])
        steps = tuple(e[0] for e in entries)
        states = tuple(e[1] for e in entries)
        maps.append(
            TrainingMap(
                size=size,
                seed=seed,
                steps=steps,
                states=states,
                fork_positions=fork_positions(states),
            )
        )
    return maps


def write_drivers_csv(drivers: Iterable[TransitionDriver], destination: str | Path) -> None:
    with open(destination, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["from", "to", "feature", "direction", "magnitude"])
        for d in drivers:
            writer.writerow([d.from_state, d.to_state, d.feature, d.direction, repr(d.magnitude)])


def write_transition_summary_csv(
    summaries: Iterable[TransitionSummary], destination: str | Path
) -> None:
    with open(destination, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["from", "to", "mean_step", "std_step", "num_runs", "steps_by_seed", "missing_seeds"])
        for s in summaries:
            per_seed = ";".join(f"{seed}:{step}" for seed, step in sorted(s.steps_by_seed.items()))
            missing = ";".join(str(m) for m in s.missing_seeds)
            writer.writerow(
                [s.from_state, s.to_state, repr(s.mean_step), repr(s.std_step), len(s.steps_by_seed), per_seed, missing]
            )
