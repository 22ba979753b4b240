"""Parameter checkpoint file format.

Layout (all text is UTF-8, all numbers little-endian)::

    MMFUSION-CHECKPOINT\\n          magic line
    version 1\\n                     format version
    <header JSON>\\n                 one line, see below
    <payload>                       raw float64 values, concatenated

The header is ``{"meta": {...}, "tensors": [entry, ...]}`` where each entry is
``{"name": "backbone.stage1.conv0.weight", "shape": [8, 1, 3, 3],
"offset": 0, "count": 72}``. ``offset`` and ``count`` are measured in float64
elements from the start of the payload; values are row-major. Tensors are
written in the order given, which for models is the deterministic
``named_parameters`` order. ``meta`` carries free-form JSON such as the model
config.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from mmfusion.errors import ContractError

MAGIC = b"MMFUSION-CHECKPOINT\n"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True)
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(f"version {VERSION}\n".encode())
        fh.write(header.encode() + b"\n")
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ContractError(f"{path}: not a checkpoint (bad magic)")
    rest = raw[len(MAGIC):]
    version_line, rest = rest.split(b"\n", 1)
    if version_line.strip() != f"version {VERSION}".encode():
        raise ContractError(f"{path}: unsupported checkpoint {version_line.decode(errors='replace')!r}")
    header_line, payload = rest.split(b"\n", 1)
    header = json.loads(header_line)
    values = np.frombuffer(payload, dtype="<f8")
    tensors = {}
    for e in header["tensors"]:
        chunk = values[e["offset"]:e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise ContractError(f"{path}: truncated payload for {e['name']}")
        tensors[e["name"]] = chunk.reshape(e["shape"]).astype(np.float64)
    return tensors, header["meta"]
