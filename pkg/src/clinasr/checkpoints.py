"""Checkpoint selection by validation loss and uniform weight averaging.

Weights travel in a framework-neutral *tensor file*: a UTF-8 text header
followed by raw little-endian float32 data::

    TENSORFILE 1
    source <path>            (zero or more)
    entry <name> <d0,d1,...>  (one per tensor, in data order)
    END
    <float32 values of each entry, row-major, concatenated>
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

MAGIC = "TENSORFILE 1"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class CheckpointMeta:
    path: str
    step: int
    val_loss: float

    def __post_init__(self):
        if not math.isfinite(self.val_loss):
            raise CheckpointError(f"{self.path}: validation loss must be finite")


@dataclass
class TensorFile:
    entries: dict[str, np.ndarray]
    sources: list[str] = field(default_factory=list)

    def __post_init__(self):
        clean = {}
        for name, arr in self.entries.items():
            if not name or any(c.isspace() for c in name):
                raise CheckpointError(f"invalid entry name {name!r}")
            arr = np.asarray(arr, dtype=np.float32)
            if arr.ndim == 0 or 0 in arr.shape:
                raise CheckpointError(f"entry {name!r} needs a non-empty shape, got {arr.shape}")
            clean[name] = arr
        self.entries = clean


def write_tensor_file(tf: TensorFile, path) -> Path:
    path = Path(path)
    header = [MAGIC]
    header += [f"source {s}" for s in tf.sources]
    header += [f"entry {n} {','.join(map(str, a.shape))}" for n, a in tf.entries.items()]
    header.append("END")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("utf-8"))
        for arr in tf.entries.values():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return path


def read_tensor_file(path) -> TensorFile:
    path = Path(path)
    data = path.read_bytes()
    first = data.split(b"\n", 1)[0]
    if first != MAGIC.encode():
        raise CheckpointError(f"{path}: not a version-1 tensor file (first line {first[:40]!r})")
    pos, sources, shapes = len(first) + 1, [], []
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise CheckpointError(f"{path}: header not terminated by END")
        line = data[pos:end].decode("utf-8")
        pos = end + 1
        if line == "END":
            break
        kind, _, rest = line.partition(" ")
        if kind == "source":
            sources.append(rest)
        elif kind == "entry":
            name, dims = rest.rsplit(" ", 1)
            shapes.append((name, tuple(int(d) for d in dims.split(","))))
        else:
            raise CheckpointError(f"{path}: unexpected header line {line!r}")
    entries = {}
    for name, shape in shapes:
        count = math.prod(shape)
        if pos + 4 * count > len(data):
            raise CheckpointError(f"{path}: data for entry {name!r} is truncated")
        entries[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes after last entry")
    return TensorFile(entries, sources)


def select_top_checkpoints(metas: Sequence[CheckpointMeta], keep: int) -> list[CheckpointMeta]:
    """Lowest validation loss first; ties go to the later step."""
    if keep < 1:
        raise CheckpointError("keep must be at least 1")
    if not metas:
        raise CheckpointError("no checkpoints to select from")
    paths = [m.path for m in metas]
    if len(set(paths)) != len(paths):
        raise CheckpointError("checkpoint paths must be unique")
    return sorted(metas, key=lambda m: (m.val_loss, -m.step))[:keep]


def read_checkpoint_metas(path) -> list[CheckpointMeta]:
    """CSV with columns path, step, val_loss; relative paths resolve against the CSV's folder."""
    base = Path(path).parent
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            p = Path(row["path"])
            out.append(CheckpointMeta(str(p if p.is_absolute() else base / p), int(row["step"]), float(row["val_loss"])))
    return out


def average_checkpoints(files: Sequence[Union[TensorFile, str, Path]], out=None) -> TensorFile:
    """Element-wise mean of identically shaped tensor files.

    Accumulation is in float64 over values sorted along the checkpoint axis,
    so the result does not depend on input order.  Output entries are
    ordered by name.
    """
    if not files:
        raise CheckpointError("need at least one checkpoint to average")
    sources = [str(f) if not isinstance(f, TensorFile) else f"<memory:{i}>" for i, f in enumerate(files)]
    tfs = [f if isinstance(f, TensorFile) else read_tensor_file(f) for f in files]
    ref = tfs[0]
    for src, tf in zip(sources[1:], tfs[1:]):
        if set(tf.entries) != set(ref.entries):
            diff = sorted(set(tf.entries) ^ set(ref.entries))
            raise CheckpointError(f"{src}: entry names differ from {sources[0]} (offending: {diff[0]!r})")
        for name, arr in tf.entries.items():
            if arr.shape != ref.entries[name].shape:
                raise CheckpointError(
                    f"{src}: entry {name!r} has shape {arr.shape}, expected {ref.entries[name].shape}"
                )
    averaged = {}
    for name in sorted(ref.entries):
        stack = np.sort(np.stack([tf.entries[name].astype(np.float64) for tf in tfs]), axis=0)
        averaged[name] = (stack.sum(axis=0) / len(tfs)).astype(np.float32)
    result = TensorFile(averaged, sources)
    if out is not None:
        write_tensor_file(result, out)
    return result


def top_k_average(metas: Sequence[CheckpointMeta], retain: int = 20, average: int = 10, out=None) -> TensorFile:
    """Retain the best ``retain`` checkpoints by validation loss and average the best ``average``."""
    kept = select_top_checkpoints(metas, retain)
    return average_checkpoints([m.path for m in kept[:average]], out)
