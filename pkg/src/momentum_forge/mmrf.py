"""MMRF binary field files.

Layout (all little-endian):

    magic   4 bytes  b"MMRF"
    version u16      1
    dim     u8       number of axes d (2 or 3)
    ncomp   u8       1 for scalar fields, d for vector fields / maps
    dtype   u8       0 = f32, 1 = f64
    size    u32 * d  voxels per axis
    spacing f32 * d  physical units per voxel
    data    ncomp planar blocks, each axis-0 fastest

Round-trips are bit-exact for matching dtypes.
"""

from __future__ import annotations

import struct

import numpy as np

from .fields import DeformationMap, GridSpec, ScalarField, VectorField

MAGIC = b"MMRF"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class MMRFError(ValueError):
    """Raised for malformed or unsupported MMRF files."""


def _write(path, grid: GridSpec, comps: np.ndarray) -> None:
    code = _DTYPE_CODES.get(np.dtype(comps.dtype))
    if code is None:
        raise MMRFError(f"unsupported dtype {comps.dtype}")
    d = grid.dim
    header = MAGIC + struct.pack("<HBBB", VERSION, d, comps.shape[0], code)
    header += struct.pack(f"<{d}I", *grid.size)
    header += struct.pack(f"<{d}f", *grid.spacing)
    dt = _DTYPES[code]
    with open(path, "wb") as fh:
        fh.write(header)
        for c in comps:
            fh.write(np.ascontiguousarray(c, dtype=dt).ravel(order="F").tobytes())


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise MMRFError(f"{path}: bad magic {raw[:4]!r}")
    version, d, ncomp, code = struct.unpack_from("<HBBB", raw, 4)
    if version != VERSION:
        raise MMRFError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise MMRFError(f"{path}: unknown dtype code {code}")
    off = 4 + 5
    size = struct.unpack_from(f"<{d}I", raw, off)
    off += 4 * d
    spacing = struct.unpack_from(f"<{d}f", raw, off)
    off += 4 * d
    grid = GridSpec(size, spacing)
    dt = _DTYPES[code]
    n = grid.num_voxels
    expected = off + ncomp * n * dt.itemsize
    if len(raw) != expected:
        raise MMRFError(f"{path}: truncated data ({len(raw)} != {expected} bytes)")
    comps = np.empty((ncomp,) + grid.size, dtype=dt.base)
    for i in range(ncomp):
        flat = np.frombuffer(raw, dtype=dt, count=n, offset=off + i * n * dt.itemsize)
        comps[i] = flat.reshape(grid.size, order="F")
    return grid, comps


def write_scalar(path, f: ScalarField) -> None:
    _write(path, f.grid, f.data[None])


def write_vector(path, v: VectorField) -> None:
    _write(path, v.grid, v.data)


def write_map(path, m: DeformationMap) -> None:
    _write(path, m.grid, m.positions)


def read_field(path):
    """Read any MMRF file; returns a ScalarField or VectorField."""
    grid, comps = _read(path)
    if comps.shape[0] == 1:
        return ScalarField(grid, comps[0])
    if comps.shape[0] == grid.dim:
        return VectorField(grid, comps)
    raise MMRFError(f"{path}: component count {comps.shape[0]} not 1 or dim")


def read_scalar(path) -> ScalarField:
    f = read_field(path)
    if not isinstance(f, ScalarField):
        raise MMRFError(f"{path}: expected a scalar field")
    return f


def read_vector(path) -> VectorField:
    f = read_field(path)
    if not isinstance(f, VectorField):
        raise MMRFError(f"{path}: expected a vector field")
    return f


def read_map(path) -> DeformationMap:
    v = read_vector(path)
    return DeformationMap(v.grid, v.data)
