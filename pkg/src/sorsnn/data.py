"""Task sequences: synthetic Gaussian splits and file-backed image sets."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataFormatError(ValueError):
    """Malformed input file; the message names the byte offset or row."""


class ManifestError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray           # [N, ...] float64 in [0, 1]
    y: np.ndarray           # [N] int64 class ids
    source: str = "synthetic-gaussians"
    access_count: int = field(default=0, compare=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise DataFormatError(f"{self.x.shape[0]} samples but {self.y.shape[0]} labels")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def read(self, idx=None) -> tuple[np.ndarray, np.ndarray]:
        """Counted access to samples (all of them when ``idx`` is None)."""
        self.access_count += 1
        if idx is None:
            return self.x, self.y
        return self.x[idx], self.y[idx]

    def subset(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.x[mask], self.y[mask], self.source)


@dataclass
class Task:
    task_id: int
    classes: list[int]
    train: Dataset
    test: Dataset

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def local_labels(self, y: np.ndarray) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes)}
        return np.array([lookup[int(v)] for v in y], dtype=np.int64)


@dataclass
class TaskSequence:
    tasks: list[Task]
    domain_incremental: bool = False

    def __post_init__(self):
        if not self.domain_incremental:
            seen: set[int] = set()
            for t in self.tasks:
                if seen & set(t.classes):
                    raise ValueError(f"task {t.task_id} reuses classes of an earlier task")
                seen |= set(t.classes)

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i) -> Task:
        return self.tasks[i]

    def task(self, task_id: int) -> Task:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(f"unknown task {task_id}")


def make_synthetic_tasks(n_tasks: int = 5, classes_per_task: int = 2, dim: int = 64,
                         separation: float = 1.0, seed: int = 0, noise: float = 0.15,
                         n_train: int = 64, n_test: int = 64) -> TaskSequence:
    """Gaussian clusters in [0, 1]^dim, pairwise mean distance ``separation`` within a task.

    ``n_train`` / ``n_test`` are per class.
    """
    if separation <= 0:
        raise ValueError("separation must be > 0")
    if n_tasks < 1 or classes_per_task < 1 or dim < classes_per_task:
        raise ValueError(f"invalid dims: n_tasks={n_tasks}, classes_per_task={classes_per_task}, dim={dim}")
    rng = np.random.default_rng(seed)
    tasks = []
    for t in range(n_tasks):
        base = rng.uniform(0.3, 0.7, dim)
        q, _ = np.linalg.qr(rng.standard_normal((dim, classes_per_task)))
        means = base + (separation / np.sqrt(2.0)) * q.T       # orthonormal offsets
        classes = list(range(t * classes_per_task, (t + 1) * classes_per_task))
        parts = {}
        for split, n in (("train", n_train), ("test", n_test)):
            xs, ys = [], []
            for c, mu in zip(classes, means):
                xs.append(np.clip(mu + noise * rng.standard_normal((n, dim)), 0.0, 1.0))
                ys.append(np.full(n, c))
            x = np.concatenate(xs)
            y = np.concatenate(ys)
            order = rng.permutation(len(y))
            parts[split] = Dataset(x[order], y[order])
        tasks.append(Task(t + 1, classes, parts["train"], parts["test"]))
    return TaskSequence(tasks)


# ----------------------------------------------------------------- file formats

_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    if raw[0] != 0 or raw[1] != 0:
        raise DataFormatError(f"{path}: bad magic at byte offset 0")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise DataFormatError(f"{path}: unknown dtype code 0x{code:02x} at byte offset 2")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated dimension table at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dt = np.dtype(_IDX_DTYPES[code])
    need = header + int(np.prod(dims)) * dt.itemsize
    if len(raw) != need:
        raise DataFormatError(f"{path}: expected {need} bytes, data ends at byte offset {len(raw)}")
    return np.frombuffer(raw, dtype=dt, offset=header).reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    rev = {np.dtype(v).newbyteorder("=").str[1:]: k for k, v in _IDX_DTYPES.items()}
    key = arr.dtype.newbyteorder("=").str[1:]
    if key not in rev:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    code = rev[key]
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(_IDX_DTYPES[code]).tobytes())


def _normalize(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        if x.min() >= 0.0 and x.max() <= 255.0:
            return x / 255.0
        lo, hi = x.min(), x.max()
        return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return x


def load_image_dataset(path, fmt: str, labels_path=None) -> Dataset:
    """IDX (images + separate label file) or CSV (header row, first column label)."""
    if fmt == "idx":
        if labels_path is None:
            raise ValueError("idx format needs a labels file")
        images = read_idx(path)
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise DataFormatError(f"{labels_path}: label file must be 1-d, dimension table at byte offset 4")
        if images.shape[0] != labels.shape[0]:
            raise DataFormatError(f"{path}: {images.shape[0]} images vs {labels.shape[0]} labels "
                                  f"(label count at byte offset 4 of {labels_path})")
        x = images.astype(np.float64) / 255.0 if images.dtype == np.uint8 else _normalize(images)
        return Dataset(x, labels.astype(np.int64), source="file")
    if fmt == "csv":
        rows = []
        labels = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataFormatError(f"{path}: empty file at row 0")
            width = len(header)
            for i, row in enumerate(reader, start=1):
                if not row:
                    continue
                if len(row) != width:
                    raise DataFormatError(f"{path}: row {i} has {len(row)} fields, header has {width}")
                try:
                    labels.append(int(row[0]))
                    rows.append([float(v) for v in row[1:]])
                except ValueError as exc:
                    raise DataFormatError(f"{path}: row {i}: {exc}") from None
        x = _normalize(np.array(rows, dtype=np.float64).reshape(len(rows), width - 1))
        return Dataset(x, np.array(labels, dtype=np.int64), source="file")
    raise ValueError(f"unknown dataset format {fmt!r}")


def load_manifest(path_or_obj) -> dict:
    if isinstance(path_or_obj, dict):
        return path_or_obj
    return json.loads(Path(path_or_obj).read_text())


def split_by_manifest(train: Dataset, test: Dataset, manifest) -> TaskSequence:
    """Manifest: ``{"tasks": [{"classes": [...]}, ...], "domain_incremental": false}``."""
    manifest = load_manifest(manifest)
    present = set(np.unique(train.y).tolist()) | set(np.unique(test.y).tolist())
    tasks = []
    for i, entry in enumerate(manifest.get("tasks", []), start=1):
        classes = [int(c) for c in entry["classes"]]
        missing = [c for c in classes if c not in present]
        if missing:
            raise ManifestError(f"task {i} references absent class ids {missing}")
        keep_tr = np.isin(train.y, classes)
        keep_te = np.isin(test.y, classes)
        tasks.append(Task(i, classes, train.subset(keep_tr), test.subset(keep_te)))
    if not tasks:
        raise ManifestError("manifest defines no tasks")
    return TaskSequence(tasks, domain_incremental=bool(manifest.get("domain_incremental", False)))


def task_sequence_from_arrays(tasks: Sequence[tuple]) -> TaskSequence:
    """Build from ``(classes, x_train, y_train, x_test, y_test)`` tuples."""
    out = []
    for i, (classes, xtr, ytr, xte, yte) in enumerate(tasks, start=1):
        out.append(Task(i, list(classes), Dataset(xtr, ytr), Dataset(xte, yte)))
    return TaskSequence(out)
