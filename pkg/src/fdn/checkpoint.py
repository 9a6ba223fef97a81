"""Checkpoint container: text header plus raw little-endian float64 buffers.

Layout:

    line 1: ``fdnckpt 1``
    line 2: one JSON object ``{"config": {...}, "tensors": [[name, shape, offset], ...]}``
    rest:   the tensors' float64 buffers, concatenated in manifest order

Offsets are byte positions into the blob. Parameters and batch-norm running
statistics are both stored; reload is bit-exact.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .model import FdnNetwork, ModelConfig

MAGIC = "fdnckpt 1"


def _entries(model: FdnNetwork):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, buf in model.named_buffers():
        yield name, buf


def save_checkpoint(path, model: FdnNetwork):
    manifest = []
    buffers = []
    offset = 0
    for name, arr in _entries(model):
        manifest.append([name, list(arr.shape), offset])
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        buffers.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": dataclasses.asdict(model.config), "tensors": manifest},
        sort_keys=True, separators=(",", ":"),
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC.encode("ascii") + b"\n")
        fh.write(header.encode("utf-8") + b"\n")
        for raw in buffers:
            fh.write(raw)


def load_checkpoint(path) -> FdnNetwork:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != MAGIC.encode("ascii"):
            raise ValueError(f"not a checkpoint file (bad magic {magic!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()

    config = ModelConfig(**header["config"])
    model = FdnNetwork(config)
    targets = dict(_entries(model))
    seen = set()
    for name, shape, offset in header["tensors"]:
        if name not in targets:
            raise ValueError(f"checkpoint names unknown tensor {name!r}")
        arr = targets[name]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        if tuple(shape) != arr.shape:
            raise ValueError(f"checkpoint tensor {name!r} has shape {shape}, expected {list(arr.shape)}")
        arr[...] = values.reshape(arr.shape)
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise ValueError(f"checkpoint is missing tensors: {sorted(missing)}")
    return model
