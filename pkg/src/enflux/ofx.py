"""OFX1 field files.

Layout: one JSON header line terminated by ``\\n``, then the samples as
little-endian float64, component-major with x3 varying fastest, i.e. C order
of shape ``(3, *grid.shape)``. Half-slab files carry ``N3 + 1`` planes along x3
(``x3_nodes`` in the header). Reading back what was written is bit exact.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import StorageError, ValidationError
from .spectral import Domain, Grid, VelocityField

MAGIC = "OFX1"
_DTYPE = np.dtype("<f8")
_MAX_HEADER = 1 << 16


def header_of(grid: Grid) -> dict:
    return {
        "format": MAGIC,
        "kind": grid.kind.value,
        "lengths": [float(v) for v in grid.domain.lengths],
        "resolution": list(grid.resolution),
        "components": 3,
        "dtype": "f64-le",
        "layout": "x3-fastest",
        "side": grid.domain.side,
        "x3_nodes": grid.shape[2],
    }


def encode(field: VelocityField) -> bytes:
    header = json.dumps(header_of(field.grid), separators=(",", ":")).encode("ascii")
    body = np.ascontiguousarray(field.data, dtype=_DTYPE).tobytes()
    return header + b"\n" + body


def _grid_from_header(header: dict) -> Grid:
    try:
        if header["format"] != MAGIC:
            raise StorageError(f"unsupported field format {header['format']!r}")
        domain = Domain(header["kind"], tuple(header["lengths"]), int(header.get("side", 1)))
        grid = Grid(domain, tuple(header["resolution"]))
    except StorageError:
        raise
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise StorageError(f"malformed OFX1 header: {exc}") from exc
    if header.get("components") != 3 or header.get("x3_nodes", grid.shape[2]) != grid.shape[2]:
        raise StorageError("OFX1 header shape does not match its grid")
    if header.get("dtype") != "f64-le" or header.get("layout") != "x3-fastest":
        raise StorageError("OFX1 payload must be little-endian float64 with x3 fastest")
    return grid


def decode(blob: bytes) -> VelocityField:
    cut = blob.find(b"\n", 0, _MAX_HEADER)
    if cut < 0:
        raise StorageError("missing OFX1 header line")
    try:
        header = json.loads(blob[:cut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StorageError(f"unreadable OFX1 header: {exc}") from exc
    grid = _grid_from_header(header)
    body = blob[cut + 1:]
    expected = 3 * int(np.prod(grid.shape)) * _DTYPE.itemsize
    if len(body) != expected:
        raise StorageError(f"OFX1 payload has {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype=_DTYPE).reshape(3, *grid.shape).astype(np.float64)
    return VelocityField(grid, data)


def write_field(path, field: VelocityField) -> str:
    """Write ``field`` atomically; returns the sha256 hex digest of the file."""
    path = Path(path)
    blob = encode(field)
    tmp = path.with_name(path.name + ".part")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return hashlib.sha256(blob).hexdigest()


def read_field(path) -> VelocityField:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    return decode(blob)
