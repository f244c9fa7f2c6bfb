"""Deterministic synthetic-data generators.

Everything here is a pure function of (config, seed): random numbers come
from the counter-based Philox 4x64 generator keyed through a SeedSequence,
so outputs are bit-identical across runs and platforms. Generators emit
ground-truth sidecars so downstream analyses can be scored without
re-deriving the truth.

Regime scripts drive both statistic series (values drawn directly from
per-regime Gaussians) and checkpoint tensors. Tensor construction matches
the scripted L2 norm and weight mean exactly per checkpoint by scaling
and shifting a per-run base matrix; the other statistics follow from that
construction and are recorded as realized ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .agreement import PredictionItem, PredictionLog
from .errors import DataError
from .paramstats import STAT_NAMES, StatConfig, StatSeries, StatVector, checkpoint_statistics
from .probe import ProbeDataset
from .tensorstore import RunManifest, TensorKind, TensorRecord, default_schedule, save_manifest, write_checkpoint

_NUM_FEATURES = len(STAT_NAMES)
_L2 = STAT_NAMES.index("l2")
_MU_W = STAT_NAMES.index("mu_w")
_MU_B = STAT_NAMES.index("mu_b")
_SIGMA_B = STAT_NAMES.index("sigma_b")


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


@dataclass(frozen=True)
class Regime:
    start_index: int
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "means", _as_feature_vector(self.means, "means"))
        object.__setattr__(self, "stds", _as_feature_vector(self.stds, "stds"))
        if np.any(self.stds <= 0.0):
            raise DataError("regime stds must be positive")


def _as_feature_vector(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(_NUM_FEATURES, float(arr))
    if arr.shape != (_NUM_FEATURES,):
        raise DataError(f"regime {what} must have {_NUM_FEATURES} entries, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Anomaly:
    seeds: frozenset[int]
    spike_index: int
    spike_regime: int
    return_to_regime: int


@dataclass(frozen=True)
class RegimeScript:
    regimes: tuple[Regime, ...]
    seeds: int = 10
    schedule: tuple[int, ...] = tuple(default_schedule())
    anomaly: Anomaly | None = None
    size_label: str = "synth"

    def __post_init__(self) -> None:
        if not self.regimes:
            raise DataError("script needs at least one regime")
        starts = [r.start_index for r in self.regimes]
        if starts[0] != 0:
            raise DataError("first regime must start at index 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise DataError("regime start indices must strictly increase")
        if starts[-1] >= len(self.schedule):
            raise DataError("regime start beyond the schedule")
        if self.seeds < 1:
            raise DataError("need at least one seed")
        if self.anomaly is not None:
            if not (0 <= self.anomaly.spike_index < len(self.schedule)):
                raise DataError("anomaly spike index outside the schedule")
            for ref in (self.anomaly.spike_regime, self.anomaly.return_to_regime):
                if not (0 <= ref < len(self.regimes)):
                    raise DataError(f"anomaly references regime {ref}, script has {len(self.regimes)}")

    def regime_labels(self, seed: int) -> np.ndarray:
        """Active regime index per checkpoint for one run.

        Anomalous runs jump to the spike regime at the spike index, hold
        it until the next scripted regime boundary, then fall back to the
        return regime for the rest of the run.
        """
        n = len(self.schedule)
        labels = np.zeros(n, dtype=np.int64)
        starts = [r.start_index for r in self.regimes] + [n]
        for i in range(len(self.regimes)):
            labels[starts[i] : starts[i + 1]] = i
        if self.anomaly is not None and seed in self.anomaly.seeds:
            spike = self.anomaly.spike_index
            boundary = next((s for s in starts if s > spike), n)
            labels[spike:boundary] = self.anomaly.spike_regime
            labels[boundary:] = self.anomaly.return_to_regime
        return labels

    @classmethod
    def from_json(cls, source: str | Path) -> "RegimeScript":
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read script {source}: {exc}") from exc
        try:
            regimes = tuple(
                Regime(int(r["start"]), r["means"], r["stds"]) for r in doc["regimes"]
            )
            anomaly = None
            if doc.get("anomaly") is not None:
                a = doc["anomaly"]
                anomaly = Anomaly(
                    seeds=frozenset(int(s) for s in a["seeds"]),
                    spike_index=int(a["spike_index"]),
                    spike_regime=int(a["spike_regime"]),
                    return_to_regime=int(a["return_to"]),
                )
            schedule = tuple(int(s) for s in doc["schedule"]) if "schedule" in doc else tuple(default_schedule())
            return cls(
                regimes=regimes,
                seeds=int(doc.get("seeds", 10)),
                schedule=schedule,
                anomaly=anomaly,
                size_label=str(doc.get("size", "synth")),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"{source}: malformed script ({exc})") from exc


def generate_stat_series(
    script: RegimeScript, rng_seed: int = 0
) -> tuple[list[StatSeries], dict[int, tuple[int, ...]]]:
    """Draw one statistic series per run from the scripted regimes.

    Returns the ensemble plus the ground-truth regime label of every
    checkpoint of every run.
    """
    ensemble = []
    truth: dict[int, tuple[int, ...]] = {}
    for seed in range(script.seeds):
        labels = script.regime_labels(seed)
        rng = _rng(rng_seed, seed)
        noise = rng.standard_normal((len(script.schedule), _NUM_FEATURES))
        vectors = []
        for t, step in enumerate(script.schedule):
            regime = script.regimes[labels[t]]
            values = regime.means + regime.stds * noise[t]
            vectors.append(StatVector.from_array(values, step=step))
        ensemble.append(StatSeries(size=script.size_label, seed=seed, stats=tuple(vectors)))
        truth[seed] = tuple(int(x) for x in labels)
    return ensemble, truth


DEFAULT_TENSOR_SHAPES: dict[str, tuple[int, ...]] = {
    "blocks.0.weight": (8, 6),
    "blocks.1.weight": (6, 6),
    "blocks.0.bias": (6,),
}


def generate_checkpoints(
    script: RegimeScript,
    out_dir: str | Path,
    rng_seed: int = 0,
    shapes: Mapping[str, tuple[int, ...]] | None = None,
) -> tuple[list[RunManifest], list[StatSeries], dict[int, tuple[int, ...]]]:
    """Write checkpoint files whose measured statistics track the script.

    Each weight matrix at each checkpoint is ``s * Z + c`` for a fixed
    per-run base matrix Z (zero mean, unit Frobenius norm), with c the
    scripted weight mean and s solved so the Frobenius norm matches the
    scripted L2 exactly. Biases are drawn from the scripted bias mean and
    variance. The realized statistics (recomputed from the written
    tensors) and the regime labels are returned as ground truth.
    """
    shapes = dict(shapes) if shapes is not None else dict(DEFAULT_TENSOR_SHAPES)
    weight_names = sorted(n for n, s in shapes.items() if len(s) == 2)
    bias_names = sorted(n for n, s in shapes.items() if len(s) == 1)
    if not weight_names:
        raise DataError("need at least one weight-matrix shape")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = []
    realized = []
    truth: dict[int, tuple[int, ...]] = {}
    for seed in range(script.seeds):
        labels = script.regime_labels(seed)
        truth[seed] = tuple(int(x) for x in labels)
        bases = {}
        for i, name in enumerate(weight_names):
            z = _rng(rng_seed, seed, 7000 + i).standard_normal(shapes[name])
            z -= z.mean()
            bases[name] = z / np.linalg.norm(z)
        run_dir = out_dir / f"{script.size_label}-seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        checkpoints = []
        vectors = []
        for t, step in enumerate(script.schedule):
            regime = script.regimes[labels[t]]
            rng = _rng(rng_seed, seed, 1000 + t)
            l2_target = regime.means[_L2] + regime.stds[_L2] * rng.standard_normal()
            mu_target = regime.means[_MU_W] + regime.stds[_MU_W] * rng.standard_normal()
            if l2_target < 0:
                raise DataError(f"seed {seed} step {step}: negative L2 target {l2_target}")
            records = []
            for name in weight_names:
                n_entries = int(np.prod(shapes[name]))
                spread = l2_target**2 - n_entries * mu_target**2
                if spread < 0:
                    raise DataError(
                        f"seed {seed} step {step}: weight mean {mu_target} over {n_entries} "
                        f"entries cannot fit inside L2 {l2_target}"
                    )
                matrix = np.sqrt(spread) * bases[name] + mu_target
                records.append(TensorRecord.from_array(name, matrix, TensorKind.WEIGHT_MATRIX))
            for name in bias_names:
                mu_b = regime.means[_MU_B]
                sigma_b = max(regime.means[_SIGMA_B], 0.0)
                bias = mu_b + np.sqrt(sigma_b) * rng.standard_normal(shapes[name])
                records.append(TensorRecord.from_array(name, bias, TensorKind.BIAS_VECTOR))
            path = run_dir / f"step-{step:06d}.ptns"
            write_checkpoint(records, path)
            checkpoints.append((step, path.name))
            vectors.append(checkpoint_statistics(records, StatConfig(), step=step))
        manifest = RunManifest(
            size=script.size_label,
            seed=seed,
            checkpoints=tuple(checkpoints),
            metadata={"generator": "synthlab"},
        )
        save_manifest(manifest, run_dir / "manifest.txt")
        manifests.append(
            RunManifest(
                size=script.size_label,
                seed=seed,
                checkpoints=tuple((s, str(run_dir / p)) for s, p in checkpoints),
                metadata={"generator": "synthlab"},
            )
        )
        realized.append(StatSeries(size=script.size_label, seed=seed, stats=tuple(vectors)))
    return manifests, realized, truth


def write_truth_csv(
    truth: Mapping[int, Sequence[int]], schedule: Sequence[int], destination: str | Path
) -> None:
    """Ground-truth sidecar: the active regime per seed per step."""
    with open(destination, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", "step", "regime"])
        for seed in sorted(truth):
            for step, regime in zip(schedule, truth[seed]):
                writer.writerow([seed, step, regime])


@dataclass(frozen=True)
class SynthTaskConfig:
    classes: int = 4
    dim: int = 16
    layers: int = 3
    informative_layer: int = 1
    separation: float = 5.0
    tokens_per_class: int = 64
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise DataError("need at least 2 classes")
        if self.separation < 0:
            raise DataError("separation must be non-negative")
        if not (0 <= self.informative_layer < self.layers):
            raise DataError("informative layer outside the stack")
        if self.classes > self.dim:
            raise DataError("class count cannot exceed the dimension")


def generate_probe_task(config: SynthTaskConfig) -> ProbeDataset:
    """Balanced classification task separable in exactly one layer.

    Class means sit ``separation`` apart (in noise-std units) along
    orthonormal directions in the informative layer; all other layers are
    pure noise.
    """
    rng = _rng(config.rng_seed)
    directions, _ = np.linalg.qr(rng.standard_normal((config.dim, config.classes)))
    n = config.classes * config.tokens_per_class
    labels = np.repeat(np.arange(config.classes), config.tokens_per_class)
    stacks = rng.standard_normal((n, config.layers, config.dim))
    stacks[:, config.informative_layer, :] += config.separation * directions[:, labels].T
    order = rng.permutation(n)
    return ProbeDataset(
        stacks=stacks[order],
        labels=labels[order],
        sequence_ids=np.arange(n) // 16,
        num_classes=config.classes,
    )


@dataclass(frozen=True)
class SynthLogConfig:
    items: int = 10_000
    options: int = 4
    target_kappa: float = 0.5
    accuracy: float = 0.5
    rng_seed: int = 0
    raters: int = 2
    task: str = "synth"
    size: str = "synth"
    step: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.target_kappa <= 1.0):
            raise DataError("target kappa must lie in [0, 1]")
        if not (0.0 <= self.accuracy <= 1.0):
            raise DataError("accuracy must lie in [0, 1]")
        if self.items < 1 or self.options < 2 or self.raters < 2:
            raise DataError("need at least 1 item, 2 options, and 2 raters")


def generate_prediction_logs(config: SynthLogConfig) -> list[PredictionLog]:
    """Prediction logs with a controlled agreement level.

    Rater 0 answers the gold option with probability ``accuracy`` and a
    uniformly random wrong option otherwise. Every other rater copies
    rater 0 with probability p and resamples uniformly over all options
    otherwise. With gold options uniform, both raters' marginals are
    uniform and kappa(rater, rater 0) = p, so p is the target kappa.
    """
    rng = _rng(config.rng_seed)
    m = config.options
    gold = rng.integers(m, size=config.items)
    correct = rng.random(config.items) < config.accuracy
    wrong_offset = rng.integers(1, m, size=config.items)
    base = np.where(correct, gold, (gold + wrong_offset) % m)

    ids = [f"item-{i:06d}" for i in range(config.items)]

    def to_log(seed: int, chosen: np.ndarray) -> PredictionLog:
        items = tuple(
            PredictionItem(item_id=ids[i], chosen=int(chosen[i]), gold=int(gold[i]), n_options=m)
            for i in range(config.items)
        )
        return PredictionLog(task=config.task, size=config.size, seed=seed, step=config.step, items=items)

    logs = [to_log(0, base)]
    for rater in range(1, config.raters):
        copy_mask = rng.random(config.items) < config.target_kappa
        resampled = rng.integers(m, size=config.items)
        logs.append(to_log(rater, np.where(copy_mask, base, resampled)))
    return logs


def echo_config_jsonl(
    destination: str | Path, config: object, realized: Mapping[str, float]
) -> None:
    """Sidecar echoing the generator config together with realized metrics.

    Overwrites: one generator invocation owns one sidecar, keeping reruns
    byte-identical.
    """
    doc = {"config": _dataclass_to_dict(config), "realized": dict(realized)}
    with open(destination, "w", encoding="utf-8") as f:
        f.write(json.dumps(doc, default=str) + "\n")


def _dataclass_to_dict(obj: object) -> dict:
    from dataclasses import asdict, is_dataclass

    if is_dataclass(obj) and not isinstance(obj, type):
        raw = asdict(obj)
        return {k: (sorted(v) if isinstance(v, frozenset) else v) for k, v in raw.items()}
    return {"value": str(obj)}
