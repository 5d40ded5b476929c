"""Checkpoint container: magic, JSON header, then named little-endian float32 arrays.

Layout::

    b"W2PXCKPT" | uint64 LE header length | UTF-8 JSON header | array bytes

The header carries ``format_version``, free-form metadata and an ``arrays``
index of ``{"name", "shape", "offset"}`` entries (offsets relative to the
start of the array section).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"W2PXCKPT"
FORMAT_VERSION = 1
DTYPE = np.dtype("<f4")


class CheckpointVersionError(ValueError):
    pass


def write_container(path, metadata: dict, arrays: dict, version: int = FORMAT_VERSION) -> Path:
    """Atomically write ``arrays`` (name -> array) with ``metadata`` to ``path``."""
    path = Path(path)
    index, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=DTYPE)
        index.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = dict(metadata, format_version=version, dtype=DTYPE.str, arrays=index)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            for b in blobs:
                fh.write(b)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_container(path, expected_version: int = FORMAT_VERSION):
    """Return ``(metadata, arrays)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint at {path}")
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        body = fh.read()
    version = header.get("format_version")
    if version != expected_version:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {version}, this reader expects {expected_version}"
        )
    dtype = np.dtype(header["dtype"])
    arrays = {}
    for entry in header.pop("arrays"):
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arrays[entry["name"]] = np.frombuffer(
            body, dtype=dtype, count=count, offset=entry["offset"]
        ).reshape(entry["shape"]).copy()
    return header, arrays
