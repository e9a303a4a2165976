"""On-disk container for checkpoints and datasets.

Layout (documented so any implementation can read it):

    bytes 0..7    magic b"CDCONT01" (format version is part of the magic)
    bytes 8..15   unsigned little-endian 64-bit header length H
    bytes 16..16+H  UTF-8 JSON header:
        {"kind": str, "meta": {...},
         "tensors": [{"name": str, "shape": [int, ...], "offset": int}, ...]}
    remainder     concatenated little-endian float64 tensor payloads;
                  each tensor starts at its header offset (relative to the
                  start of the payload section) and is row-major.

All tensors are float64; kind and meta are free-form per producer.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np
import torch

from .errors import CheckpointError
from .numerics import DTYPE

MAGIC = b"CDCONT01"


def write_container(path: str | Path, kind: str, meta: dict, tensors: Mapping[str, torch.Tensor]) -> None:
    entries = []
    payload = bytearray()
    for name, t in tensors.items():
        # ascontiguousarray promotes 0-d to 1-d, so take the shape from the tensor
        arr = np.ascontiguousarray(t.detach().to(DTYPE).numpy(), dtype="<f8")
        entries.append({"name": name, "shape": list(t.shape), "offset": len(payload)})
        payload += arr.tobytes()
    header = json.dumps({"kind": kind, "meta": meta, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(bytes(payload))


def read_container(path: str | Path) -> Tuple[str, dict, Dict[str, torch.Tensor]]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        try:
            header = json.loads(f.read(hlen).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt header: {e}") from e
        payload = f.read()
    tensors: Dict[str, torch.Tensor] = {}
    for ent in header["tensors"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        raw = payload[start : start + 8 * count]
        if len(raw) != 8 * count:
            raise CheckpointError(f"{path}: truncated payload for tensor {ent['name']!r}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        tensors[ent["name"]] = torch.from_numpy(arr)
    return header["kind"], header["meta"], tensors
