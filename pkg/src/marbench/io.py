"""Tensor, checkpoint, CSV and manifest persistence.

All array payloads live in a shared container format: a raw little-endian
float32 row-major binary ``<stem>.f32`` next to a JSON sidecar
``<stem>.json`` describing kind and dimensions.  Checkpoints pack an
ordered table of named parameter arrays into one such container.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from collections import OrderedDict
from pathlib import Path

import numpy as np


class ContainerError(ValueError):
    """Malformed or inconsistent tensor container on disk."""


def _sidecar(stem: Path) -> Path:
    return stem.with_suffix(".json")


def _payload(stem: Path) -> Path:
    return stem.with_suffix(".f32")


def save_array(stem, data, meta):
    """Write ``data`` as <stem>.f32 plus a JSON sidecar with ``meta``.

    ``meta`` must contain a ``kind`` key; the sidecar additionally records
    the array shape so the payload can be rebuilt without guessing.
    """
    stem = Path(stem)
    arr = np.ascontiguousarray(data, dtype="<f4")
    if "kind" not in meta:
        raise ContainerError("sidecar meta requires a 'kind' entry")
    sidecar = dict(meta)
    sidecar["shape"] = list(arr.shape)
    stem.parent.mkdir(parents=True, exist_ok=True)
    _payload(stem).write_bytes(arr.tobytes())
    write_json(_sidecar(stem), sidecar)


def load_array(stem):
    """Read a container back as (float32 ndarray, sidecar dict)."""
    stem = Path(stem)
    meta = json.loads(_sidecar(stem).read_text())
    raw = np.frombuffer(_payload(stem).read_bytes(), dtype="<f4")
    shape = tuple(meta["shape"])
    if raw.size != int(np.prod(shape)):
        raise ContainerError(f"payload size {raw.size} does not match shape {shape}")
    return raw.reshape(shape).copy(), meta


def save_checkpoint(stem, tensors, meta=None):
    """Persist an ordered name -> array table in the shared container.

    The payload is the concatenation of the float32 tensors in table
    order; the sidecar records name, shape and offset per entry.
    """
    stem = Path(stem)
    table = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    stem.parent.mkdir(parents=True, exist_ok=True)
    _payload(stem).write_bytes(b"".join(blobs))
    write_json(_sidecar(stem), {"kind": "checkpoint", "tensors": table, "meta": meta or {}})


def load_checkpoint(stem):
    """Read a checkpoint back as (OrderedDict[name, ndarray], meta)."""
    stem = Path(stem)
    sidecar = json.loads(_sidecar(stem).read_text())
    if sidecar.get("kind") != "checkpoint":
        raise ContainerError(f"{stem} is not a checkpoint container")
    raw = np.frombuffer(_payload(stem).read_bytes(), dtype="<f4")
    out = OrderedDict()
    for entry in sidecar["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        chunk = raw[entry["offset"] : entry["offset"] + size]
        if chunk.size != size:
            raise ContainerError(f"truncated checkpoint entry {entry['name']}")
        out[entry["name"]] = chunk.reshape(shape).copy()
    return out, sidecar.get("meta", {})


def write_json(path, obj):
    """Atomically write JSON with sorted keys (reproducible bytes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows):
    """RFC-4180 CSV (CRLF line endings, quoted where needed)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def sha256_file(path):
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def fmt(x):
    """Canonical scalar formatting for CSV cells (repr round-trips floats)."""
    if isinstance(x, (np.floating, float)):
        return repr(float(x))
    return str(x)
