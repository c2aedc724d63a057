"""Named-tensor checkpoint container.

Layout::

    EMOFUSE-CKPT 1\\n
    <name>\\t<dtype>\\t<d0,d1,...>\\n      one line per tensor (UTF-8)
    \\n                                   end of manifest
    <raw little-endian payloads, concatenated in manifest order>

Scalars have an empty shape field.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = "EMOFUSE-CKPT 1"
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4", "bool": "|b1"}


class CheckpointError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    lines = [MAGIC]
    payloads = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if "\t" in name or "\n" in name or not name:
            raise CheckpointError(f"invalid tensor name {name!r}")
        dt = arr.dtype.name
        if dt not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dt} for '{name}'")
        lines.append(f"{name}\t{dt}\t{','.join(str(s) for s in arr.shape)}")
        payloads.append(np.ascontiguousarray(arr, dtype=np.dtype(_DTYPES[dt])).tobytes())
    head = ("\n".join(lines) + "\n\n").encode("utf-8")
    return head + b"".join(payloads)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    end = blob.find(b"\n\n")
    if end < 0:
        raise CheckpointError("manifest terminator not found")
    lines = blob[:end].decode("utf-8").split("\n")
    if lines[0] != MAGIC:
        raise CheckpointError(f"bad magic line {lines[0]!r}")
    offset = end + 2
    out: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        name, dt, shape_s = line.split("\t")
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        dtype = np.dtype(_DTYPES[dt])
        n = int(np.prod(shape)) * dtype.itemsize
        if offset + n > len(blob):
            raise CheckpointError(f"truncated payload for '{name}'")
        arr = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape)), offset=offset)
        out[name] = arr.reshape(shape).astype(dt)
        offset += n
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after payloads")
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def manifest_diff(expected: Mapping[str, tuple], found: Mapping[str, np.ndarray]) -> dict:
    """Names missing from / unexpected in a loaded checkpoint, plus shape mismatches."""
    missing = sorted(set(expected) - set(found))
    extra = sorted(set(found) - set(expected))
    bad = sorted(n for n in set(expected) & set(found) if tuple(expected[n]) != found[n].shape)
    return {"missing": missing, "unexpected": extra, "shape_mismatch": bad}
