"""Reader/writer for the flat float32 tensor file used for weights and vectors.

Layout::

    [8 bytes]  little-endian uint64 N, length of the header
    [N bytes]  UTF-8 JSON header:
               {"dtype": "float32",
                "metadata": {...},
                "tensors": [{"name": str, "shape": [int, ...], "offset": int}, ...]}
    [rest]     little-endian float32 payload; ``offset`` counts elements from
               the start of the payload, tensors are stored back to back in
               header order, row-major.
"""

from __future__ import annotations

import json
import struct
from math import prod
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ShapeMismatch, WeightsFileError

_LEN = struct.Struct("<Q")
_DTYPE = np.dtype("<f4")


def write_tensors(
    path: str | Path,
    tensors: Mapping[str, np.ndarray],
    metadata: Mapping[str, Any] | None = None,
) -> Path:
    """Write ``tensors`` (in mapping order) with optional JSON ``metadata``."""

    entries = []
    chunks: list[bytes] = []
    offset = 0
    for name, array in tensors.items():
        data = np.ascontiguousarray(np.asarray(array, dtype=_DTYPE))
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.size

    header = json.dumps(
        {"dtype": "float32", "metadata": dict(metadata or {}), "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("wb") as fh:
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)
    return out


def read_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(tensors, metadata)``; arrays are read-only float32."""

    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise WeightsFileError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _LEN.size:
        raise WeightsFileError(f"{path}: file too short for a header")

    (header_len,) = _LEN.unpack_from(blob, 0)
    start = _LEN.size + header_len
    if start > len(blob):
        raise WeightsFileError(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(blob[_LEN.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFileError(f"{path}: corrupt header: {exc}") from exc
    if header.get("dtype") != "float32":
        raise WeightsFileError(f"{path}: unsupported dtype {header.get('dtype')!r}")

    payload = np.frombuffer(blob, dtype=_DTYPE, offset=start, count=(len(blob) - start) // 4)
    tensors: dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        try:
            name = str(entry["name"])
            shape = tuple(int(n) for n in entry["shape"])
            begin = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise WeightsFileError(f"{path}: malformed tensor entry {entry!r}") from exc
        end = begin + prod(shape)
        if end > payload.size:
            raise ShapeMismatch(
                f"{path}: tensor {name!r} needs {prod(shape)} values, "
                f"only {max(payload.size - begin, 0)} present"
            )
        array = payload[begin:end].reshape(shape).copy()
        array.flags.writeable = False
        tensors[name] = array
    return tensors, dict(header.get("metadata") or {})


__all__ = ["write_tensors", "read_tensors"]
