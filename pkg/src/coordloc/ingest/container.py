"""On-disk dataset container.

A directory holding

* ``meta.json``      task, sample shape, sample count
* ``manifest.jsonl`` one record per sample: base_id, augment_index, target, offset
* ``tensors.bin``    little-endian float32 arrays concatenated in manifest order
"""
from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MANIFEST = "manifest.jsonl"
BLOB = "tensors.bin"
META = "meta.json"


class ContainerError(ValueError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class ContainerWriter:
    """Streaming writer; samples must all share one shape."""

    def __init__(self, path, task: str, sample_shape: tuple, force: bool = False, extra_meta=None):
        self.path = Path(path)
        if self.path.exists():
            if not force:
                raise FileExistsError(f"{self.path} exists; pass force to overwrite")
            shutil.rmtree(self.path)
        self.tmp = self.path.with_name(self.path.name + ".partial")
        if self.tmp.exists():
            shutil.rmtree(self.tmp)
        self.tmp.mkdir(parents=True)
        self.task = task
        self.shape = tuple(int(s) for s in sample_shape)
        self.extra_meta = extra_meta or {}
        self._blob = open(self.tmp / BLOB, "wb")
        self._manifest = open(self.tmp / MANIFEST, "w", encoding="ascii", newline="\n")
        self._offset = 0
        self.count = 0

    def add(self, array: np.ndarray, target, base_id: str, augment_index: int):
        a = np.asarray(array)
        if a.shape != self.shape:
            raise ContainerError(f"sample shape {a.shape} != container shape {self.shape}")
        data = np.ascontiguousarray(a, dtype="<f4").tobytes()
        rec = dict(base_id=str(base_id), augment_index=int(augment_index),
                   target=[float(np.float64(t)) for t in np.atleast_1d(target)], offset=self._offset)
        self._blob.write(data)
        self._manifest.write(_dump(rec) + "\n")
        self._offset += len(data)
        self.count += 1

    def close(self):
        self._blob.close()
        self._manifest.close()
        meta = dict(task=self.task, shape=list(self.shape), count=self.count, dtype="<f4", **self.extra_meta)
        (self.tmp / META).write_text(_dump(meta) + "\n", encoding="ascii")
        os.replace(self.tmp, self.path)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._blob.close()
            self._manifest.close()
            shutil.rmtree(self.tmp, ignore_errors=True)


@dataclass
class Dataset:
    """Read view of a container; arrays are memory-mapped."""

    path: Path
    task: str
    shape: tuple
    base_ids: list
    augment_index: np.ndarray
    targets: np.ndarray
    arrays: np.ndarray  # memmap (N, *shape)

    def __len__(self):
        return len(self.base_ids)


def open_dataset(path) -> Dataset:
    path = Path(path)
    if not (path / META).exists():
        raise ContainerError(f"{path} is not a dataset container")
    meta = json.loads((path / META).read_text())
    recs = [json.loads(line) for line in (path / MANIFEST).read_text().splitlines() if line]
    shape = tuple(meta["shape"])
    n = len(recs)
    if n != meta["count"]:
        raise ContainerError(f"manifest has {n} records, meta says {meta['count']}")
    item = int(np.prod(shape)) * 4
    for i, r in enumerate(recs):
        if r["offset"] != i * item:
            raise ContainerError(f"record {i} offset {r['offset']} breaks contiguous layout")
    arrays = np.memmap(path / BLOB, dtype="<f4", mode="r", shape=(n,) + shape) if n else np.zeros((0,) + shape, "<f4")
    return Dataset(path, meta["task"], shape, [r["base_id"] for r in recs],
                   np.array([r["augment_index"] for r in recs], dtype=np.int64),
                   np.array([r["target"] for r in recs], dtype=np.float64), arrays)
