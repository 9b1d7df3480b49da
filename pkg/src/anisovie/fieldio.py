"""Binary field files and CSV slice export.

File layout (little endian)::

    offset  size  content
    0       8     magic b"ANISOVIE"
    8       4     format version (1)
    12      4     n_side
    16      4     component count (1 scalar, 3 vector, 9 tensor)
    20      4     layout tag (1 = component-major, then x, y, z in C order)
    24      4     bytes per complex value (8 = complex64, 16 = complex128)
    28      4     reserved (0)
    32      8     h
    40      24    origin (3 x float64)
    64      ...   payload: (re, im) pairs
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import ComplexVectorField, ScalarField, UniformGrid

MAGIC = b"ANISOVIE"
VERSION = 1
LAYOUT_CXYZ = 1
_HEADER = struct.Struct("<8s6I d 3d")
assert _HEADER.size == 64

_DTYPES = {8: np.dtype("<c8"), 16: np.dtype("<c16")}


def write_field(path, data, grid: UniformGrid, precision: int = 16) -> None:
    """Write a scalar ``(n,n,n)``, vector ``(3,n,n,n)`` or tensor ``(3,3,n,n,n)`` array."""
    if isinstance(data, ComplexVectorField):
        data = data.components
    elif isinstance(data, ScalarField):
        data = data.values
    a = np.asarray(data)
    ncomp = int(np.prod(a.shape[:-3])) if a.ndim > 3 else 1
    if a.shape[-3:] != grid.shape or ncomp not in (1, 3, 9):
        raise ValueError(f"cannot store array of shape {a.shape} on a {grid.n_side}^3 grid")
    if precision not in _DTYPES:
        raise ValueError("precision must be 8 (complex64) or 16 (complex128)")
    header = _HEADER.pack(MAGIC, VERSION, grid.n_side, ncomp, LAYOUT_CXYZ, precision, 0,
                          grid.h, *grid.origin)
    payload = np.ascontiguousarray(a.reshape(ncomp, *grid.shape), dtype=_DTYPES[precision])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_field(path):
    """Return ``(array, grid)``; the array has a leading component axis unless scalar."""
    raw = Path(path).read_bytes()
    if len(raw) < 64:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, ncomp, layout, prec, _, h, ox, oy, oz = _HEADER.unpack(raw[:64])
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION or layout != LAYOUT_CXYZ or prec not in _DTYPES:
        raise ValueError(f"{path}: unsupported version/layout/precision {version}/{layout}/{prec}")
    grid = UniformGrid(n, origin=(ox, oy, oz))
    if abs(h - grid.h) > 1e-15:
        raise ValueError(f"{path}: header spacing {h} inconsistent with n_side {n}")
    a = np.frombuffer(raw, dtype=_DTYPES[prec], offset=64)
    if a.size != ncomp * n ** 3:
        raise ValueError(f"{path}: payload has {a.size} values, expected {ncomp * n ** 3}")
    a = a.reshape((ncomp,) + grid.shape).copy()
    if ncomp == 1:
        a = a[0]
    elif ncomp == 9:
        a = a.reshape((3, 3) + grid.shape)
    return a, grid


def write_slice_csv(path, values: np.ndarray, grid: UniformGrid, axis: int, index: int) -> int:
    """Write the plane ``index`` normal to ``axis`` as ``x,y,z,re,im`` rows; returns row count."""
    if not 0 <= index < grid.n_side:
        raise ValueError(f"slice index {index} outside 0..{grid.n_side - 1}")
    plane = np.take(np.asarray(values), index, axis=axis)
    coords = list(grid.axes())
    fixed = coords.pop(axis)[index]
    U, V = np.meshgrid(coords[0], coords[1], indexing="ij")
    F = np.full(U.shape, fixed)
    cols = [U, V]
    cols.insert(axis, F)
    rows = np.column_stack([c.ravel() for c in cols] + [plane.real.ravel(), plane.imag.ravel()])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,z,re,im\n")
        np.savetxt(fh, rows, fmt="%.15e", delimiter=",")
    return len(rows)
