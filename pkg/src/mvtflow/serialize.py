"""Single-file model container: JSON header + raw little-endian blobs.

Layout:

    MVTAD1\\n                      magic line
    <header length as 16 ASCII digits>\\n
    <header JSON, UTF-8>
    <concatenated raw tensor blobs>

The header is human-readable and fully describes the payload: a ``kind`` tag
(mvt-flow, knn, pca), arbitrary model metadata, and a ``tensors`` list with
name, shape, dtype and byte offset (relative to the end of the header) for
every blob. Blobs are C-order little-endian; float32 for production models,
float64 when a model was built in 64-bit test mode. Loading restores every
array bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"MVTAD1\n"

_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def save_container(path: str | Path, kind: str, meta: dict,
                   arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        tag = _DTYPE_TAGS.get(arr.dtype.name)
        if tag is None:
            raise ValueError(f"unsupported array dtype {arr.dtype} for {name!r}")
        blob = np.ascontiguousarray(arr).astype(tag, copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": tag,
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = dict(meta)
    header["format_version"] = 1
    header["kind"] = kind
    header["tensors"] = entries
    header_bytes = json.dumps(header, indent=1, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(b"%016d\n" % len(header_bytes))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_container(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a model container (bad magic)")
        header_len = int(fh.read(17).rstrip(b"\n"))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in header.pop("tensors"):
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start:start + n], dtype=entry["dtype"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(
            _TAG_DTYPES[entry["dtype"]], copy=True)
    kind = header.pop("kind")
    header.pop("format_version")
    return kind, header, arrays
