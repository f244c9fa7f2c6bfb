"""Checkpoint tensor containers and run manifests.

Container layout (all integers little-endian):

    magic   4 bytes  b"PTNS"
    version u32      currently 1
    count   u32      number of records
    then per record:
        name_len u32, name (UTF-8, name_len bytes)
        kind     u8   0 = weight matrix, 1 = bias vector, 2 = other
        dtype    u8   0 = float32 (the only supported dtype; code 1 is
                      reserved for float64)
        rank     u8
        dims     rank x u64
        payload  row-major float32 data, prod(dims) * 4 bytes

Manifests are UTF-8 text files of ``key = value`` lines followed by
``[checkpoint]`` sections, each carrying a ``step`` and a ``path`` line.
Checkpoint paths are stored as written; :func:`load_manifest` resolves
relative paths against the manifest's own directory.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import ContainerError, ManifestError

MAGIC = b"PTNS"
FORMAT_VERSION = 1
DTYPE_F32 = 0

# Full run schedule: step 0, powers of two up to 512, then every 1000
# steps up to 143000; 154 checkpoints in total.
FULL_SCHEDULE_LAST_STEP = 143_000


class TensorKind(enum.IntEnum):
    WEIGHT_MATRIX = 0
    BIAS_VECTOR = 1
    OTHER = 2


def kind_from_rank(rank: int) -> TensorKind:
    """Infer the tensor role from its rank: 2 -> weight, 1 -> bias."""
    if rank == 2:
        return TensorKind.WEIGHT_MATRIX
    if rank == 1:
        return TensorKind.BIAS_VECTOR
    return TensorKind.OTHER


@dataclass(frozen=True)
class TensorRecord:
    """A single named tensor inside a checkpoint.

    ``data`` is always float32 and C-contiguous; the constructor casts and
    copies as needed so round trips through the container are bit-exact.
    """

    name: str
    kind: TensorKind
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", arr)
        if arr.ndim == 0 or any(d <= 0 for d in arr.shape):
            raise ContainerError(
                f"record {self.name!r}: dimensions must be positive, got shape {arr.shape}"
            )
        if self.kind == TensorKind.WEIGHT_MATRIX and arr.ndim != 2:
            raise ContainerError(f"record {self.name!r}: weight matrices must be rank 2")
        if self.kind == TensorKind.BIAS_VECTOR and arr.ndim != 1:
            raise ContainerError(f"record {self.name!r}: bias vectors must be rank 1")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @classmethod
    def from_array(cls, name: str, array: np.ndarray, kind: TensorKind | None = None) -> "TensorRecord":
        arr = np.asarray(array, dtype=np.float32)
        return cls(name, kind if kind is not None else kind_from_rank(arr.ndim), arr)


def _check_unique_names(records: Sequence[TensorRecord]) -> None:
    seen: set[str] = set()
    for rec in records:
        if rec.name in seen:
            raise ContainerError(f"duplicate record name {rec.name!r}")
        seen.add(rec.name)


def write_checkpoint(records: Sequence[TensorRecord], destination: str | Path) -> None:
    """Write records to ``destination``; byte-identical for identical input."""
    _check_unique_names(records)
    with open(destination, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(records)))
        for rec in records:
            name_bytes = rec.name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BBB", int(rec.kind), DTYPE_F32, rec.data.ndim))
            f.write(struct.pack(f"<{rec.data.ndim}Q", *rec.data.shape))
            f.write(rec.data.tobytes(order="C"))


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ContainerError(f"truncated container: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def read_checkpoint(source: str | Path) -> list[TensorRecord]:
    """Read a container written by :func:`write_checkpoint` (its inverse)."""
    with open(source, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ContainerError(f"bad magic bytes {magic!r} in {source}")
        version, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != FORMAT_VERSION:
            raise ContainerError(f"unsupported container version {version}")
        records: list[TensorRecord] = []
        for i in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, f"record {i} name length"))
            name = _read_exact(f, name_len, f"record {i} name").decode("utf-8")
            kind_code, dtype, rank = struct.unpack("<BBB", _read_exact(f, 3, f"record {name!r} header"))
            if dtype != DTYPE_F32:
                raise ContainerError(f"record {name!r}: unsupported dtype code {dtype}")
            try:
                kind = TensorKind(kind_code)
            except ValueError:
                raise ContainerError(f"record {name!r}: unknown kind code {kind_code}") from None
            dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, f"record {name!r} dims"))
            n_elems = 1
            for d in dims:
                n_elems *= d
            payload = f.read(4 * n_elems)
            if len(payload) != 4 * n_elems:
                raise ContainerError(
                    f"truncated payload for record {name!r}: "
                    f"expected {4 * n_elems} bytes, got {len(payload)}"
                )
            arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
            records.append(TensorRecord(name, kind, arr))
        _check_unique_names(records)
        return records


@dataclass(frozen=True)
class RunManifest:
    """Index of all checkpoints belonging to one (size, seed) training run."""

    size: str
    seed: int
    checkpoints: tuple[tuple[int, str], ...]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.checkpoints:
            raise ManifestError("manifest has an empty checkpoint list")
        if self.seed < 0:
            raise ManifestError(f"seed must be non-negative, got {self.seed}")
        steps = [s for s, _ in self.checkpoints]
        for a, b in zip(steps, steps[1:]):
            if b <= a:
                raise ManifestError(f"checkpoint steps must strictly increase ({a} then {b})")
        if steps[0] < 0:
            raise ManifestError("checkpoint steps must be non-negative")

    @property
    def steps(self) -> list[int]:
        return [s for s, _ in self.checkpoints]

    @property
    def paths(self) -> list[str]:
        return [p for _, p in self.checkpoints]


def default_schedule(last_step: int = FULL_SCHEDULE_LAST_STEP, interval: int = 1000) -> list[int]:
    """The full checkpoint schedule: 0, 1, 2, 4, ..., 512, then every
    ``interval`` steps up to ``last_step`` inclusive."""
    steps = [0]
    p = 1
    while p < interval:
        steps.append(p)
        p *= 2
    steps.extend(range(interval, last_step + 1, interval))
    return steps


def load_manifest(source: str | Path) -> RunManifest:
    """Parse a manifest file; relative checkpoint paths are resolved
    against the manifest's directory."""
    source = Path(source)
    base = source.parent
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {source}: {exc}") from exc

    top: dict[str, str] = {}
    sections: list[dict[str, str]] = []
    current: dict[str, str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[checkpoint]":
            current = {}
            sections.append(current)
            continue
        if line.startswith("["):
            raise ManifestError(f"{source}:{lineno}: unknown section {line!r}")
        if "=" not in line:
            raise ManifestError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        target = top if current is None else current
        target[key.strip()] = value.strip()

    for key in ("size", "seed"):
        if key not in top:
            raise ManifestError(f"{source}: missing required key {key!r}")
    if not sections:
        raise ManifestError(f"{source}: no [checkpoint] sections")

    checkpoints: list[tuple[int, str]] = []
    for i, sec in enumerate(sections):
        for key in ("step", "path"):
            if key not in sec:
                raise ManifestError(f"{source}: checkpoint {i} is missing {key!r}")
        try:
            step = int(sec["step"])
        except ValueError:
            raise ManifestError(f"{source}: checkpoint {i} has non-integer step {sec['step']!r}") from None
        path = sec["path"]
        if not Path(path).is_absolute():
            path = str(base / path)
        checkpoints.append((step, path))

    try:
        seed = int(top["seed"])
    except ValueError:
        raise ManifestError(f"{source}: seed must be an integer, got {top['seed']!r}") from None

    metadata = {k: v for k, v in top.items() if k not in ("size", "seed")}
    return RunManifest(size=top["size"], seed=seed, checkpoints=tuple(checkpoints), metadata=metadata)


def save_manifest(manifest: RunManifest, destination: str | Path) -> None:
    """Write a manifest in the text format read by :func:`load_manifest`.

    Paths are written as given; callers that want a relocatable manifest
    should pass paths relative to ``destination``'s directory.
    """
    lines = [f"size = {manifest.size}", f"seed = {manifest.seed}"]
    for key, value in manifest.metadata.items():
        lines.append(f"{key} = {value}")
    for step, path in manifest.checkpoints:
        lines.append("")
        lines.append("[checkpoint]")
        lines.append(f"step = {step}")
        lines.append(f"path = {path}")
    Path(destination).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_many(paths: Iterable[str | Path]) -> list[list[TensorRecord]]:
    return [read_checkpoint(p) for p in paths]
