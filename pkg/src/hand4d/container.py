"""Little-endian binary container with a JSON header.

Layout:

    bytes 0..4      magic ``H4DC``
    bytes 4..8      uint32 (LE) byte length of the header block
    header block    UTF-8 JSON padded with trailing spaces so the data
                    section starts on a 16-byte boundary
    data section    raw array bytes, C-order, little-endian

The header is ``{"version": 1, "meta": {...}, "arrays": {name: {"dtype",
"shape", "offset"}}}`` with offsets relative to the start of the data
section.  Arrays are laid out in sorted-name order so files are
byte-deterministic for identical content.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from hand4d.errors import FormatError

MAGIC = b"H4DC"
VERSION = 1

_DTYPES = {
    "float64": "<f8",
    "float32": "<f4",
    "int64": "<i8",
    "int32": "<i4",
    "uint32": "<u4",
    "uint8": "|u1",
}
_DTYPE_NAMES = {np.dtype(v): k for k, v in _DTYPES.items()}


def write_container(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays plus a JSON-serializable meta dict to ``path``."""
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype not in _DTYPE_NAMES:
            arr = arr.astype(np.float64)
        dtype_name = _DTYPE_NAMES[arr.dtype]
        raw = arr.astype(_DTYPES[dtype_name]).tobytes(order="C")
        entries[name] = {"dtype": dtype_name, "shape": list(arr.shape), "offset": offset}
        blobs.append(raw)
        offset += len(raw)
    header = {"version": VERSION, "meta": meta or {}, "arrays": entries}
    header_json = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    pad = (-(8 + len(header_json))) % 16
    header_bytes = header_json + b" " * pad

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(len(header_bytes).to_bytes(4, "little"))
        f.write(header_bytes)
        for raw in blobs:
            f.write(raw)
    os.replace(tmp, path)


def read_container(path) -> tuple[dict, dict]:
    """Read a container file; returns ``(arrays, meta)``."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a container file (bad magic)")
    header_len = int.from_bytes(blob[4:8], "little")
    if 8 + header_len > len(blob):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported container version {header.get('version')!r}")
    data = blob[8 + header_len :]
    arrays = {}
    for name, entry in header.get("arrays", {}).items():
        try:
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed entry for array {name!r}") from exc
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        if offset < 0 or offset + nbytes > len(data):
            raise FormatError(f"{path}: array {name!r} extends past end of file")
        arrays[name] = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
    return arrays, header.get("meta", {})
