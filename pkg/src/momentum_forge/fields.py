"""Scalar/vector fields and deformation maps on regular periodic grids.

Everything downstream (smoothing kernel, geodesic integrator, optimizer,
prediction pipeline) operates on the types defined here.  Conventions:

* grids are periodic along every axis; stencils and interpolation wrap,
* maps store absolute positions in voxel coordinates (identity map at
  voxel x holds x exactly),
* derivative stencils are central differences scaled by 1/(2*spacing),
* two precision modes: float64 ("oracle") and float32 ("fast").
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

DTYPE_ORACLE = np.float64
DTYPE_FAST = np.float32


@dataclass(frozen=True)
class GridSpec:
    """Regular grid geometry: voxel counts and physical spacing per axis."""

    size: tuple[int, ...]
    spacing: tuple[float, ...] = ()

    def __post_init__(self):
        size = tuple(int(n) for n in self.size)
        object.__setattr__(self, "size", size)
        if len(size) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got {len(size)} axes")
        if any(n < 4 for n in size):
            raise ValueError(f"all grid sizes must be >= 4, got {size}")
        spacing = self.spacing or (1.0,) * len(size)
        spacing = tuple(float(h) for h in spacing)
        object.__setattr__(self, "spacing", spacing)
        if len(spacing) != len(size):
            raise ValueError("spacing and size must have matching length")
        if any(h <= 0 for h in spacing):
            raise ValueError(f"all spacings must be positive, got {spacing}")

    @property
    def dim(self) -> int:
        return len(self.size)

    @property
    def num_voxels(self) -> int:
        return int(np.prod(self.size))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))


@dataclass
class ScalarField:
    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != self.grid.size:
            raise ValueError(
                f"data shape {self.data.shape} does not match grid {self.grid.size}"
            )

    @classmethod
    def zeros(cls, grid: GridSpec, dtype=DTYPE_ORACLE) -> "ScalarField":
        return cls(grid, np.zeros(grid.size, dtype=dtype))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.data.copy())


@dataclass
class VectorField:
    """d scalar components on one grid, stored planar as data[i] = component i."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        expected = (self.grid.dim,) + self.grid.size
        if self.data.shape != expected:
            raise ValueError(
                f"data shape {self.data.shape} does not match {expected}"
            )

    @classmethod
    def zeros(cls, grid: GridSpec, dtype=DTYPE_ORACLE) -> "VectorField":
        return cls(grid, np.zeros((grid.dim,) + grid.size, dtype=dtype))

    @classmethod
    def from_components(cls, comps: list[ScalarField]) -> "VectorField":
        grid = comps[0].grid
        if any(c.grid != grid for c in comps):
            raise ValueError("components must share one grid")
        return cls(grid, np.stack([c.data for c in comps]))

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.data[i])

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.data.copy())


def identity_positions(grid: GridSpec, dtype=DTYPE_ORACLE) -> np.ndarray:
    """Positions of the identity map, in voxel coordinates, shape (d, *size)."""
    return np.indices(grid.size, dtype=dtype)


@dataclass
class DeformationMap:
    """A map stored as absolute positions in voxel coordinates, shape (d, *size)."""

    grid: GridSpec
    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions)
        expected = (self.grid.dim,) + self.grid.size
        if self.positions.shape != expected:
            raise ValueError(
                f"positions shape {self.positions.shape} does not match {expected}"
            )

    @classmethod
    def identity(cls, grid: GridSpec, dtype=DTYPE_ORACLE) -> "DeformationMap":
        return cls(grid, identity_positions(grid, dtype))

    @classmethod
    def from_displacement(cls, grid: GridSpec, disp: np.ndarray) -> "DeformationMap":
        return cls(grid, identity_positions(grid, np.asarray(disp).dtype) + disp)

    def displacement(self) -> np.ndarray:
        return self.positions - identity_positions(self.grid, self.positions.dtype)

    def copy(self) -> "DeformationMap":
        return DeformationMap(self.grid, self.positions.copy())


def _require_same_grid(a, b):
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


def interp_values(data: np.ndarray, pos: np.ndarray, with_grad: bool = False):
    """Multilinear interpolation of `data` at voxel-coordinate positions.

    `pos` has shape (d, ...); the result has the trailing shape.  Positions
    wrap periodically per axis.  With `with_grad`, also returns the exact
    derivative of the interpolant w.r.t. the query position, shape (d, ...).
    """
    d = data.ndim
    size = data.shape
    i0 = np.floor(pos)
    frac = pos - i0
    base = [i0[a].astype(np.intp) % size[a] for a in range(d)]

    val = np.zeros(pos.shape[1:], dtype=np.result_type(data.dtype, pos.dtype))
    grad = np.zeros(pos.shape, dtype=val.dtype) if with_grad else None
    for corner in product((0, 1), repeat=d):
        idx = tuple(
            (base[a] + 1) % size[a] if corner[a] else base[a] for a in range(d)
        )
        w = np.ones_like(val)
        for a in range(d):
            w = w * (frac[a] if corner[a] else 1.0 - frac[a])
        v = data[idx]
        val += w * v
        if with_grad:
            for a in range(d):
                gw = np.ones_like(val)
                for b in range(d):
                    if b == a:
                        gw = gw * (1.0 if corner[b] else -1.0)
                    else:
                        gw = gw * (frac[b] if corner[b] else 1.0 - frac[b])
                grad[a] += gw * v
    if with_grad:
        return val, grad
    return val


def interpolate(f: ScalarField, p) -> float:
    """Interpolate a scalar field at one voxel-coordinate position."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (f.grid.dim,):
        raise ValueError(f"position must have {f.grid.dim} coordinates")
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite query position")
    return float(interp_values(f.data, p.reshape(f.grid.dim, 1))[0])


def warp_image(S: ScalarField, phi_inv: DeformationMap) -> ScalarField:
    """Pull-back warp: output(x) = S interpolated at phi_inv(x)."""
    _require_same_grid(S, phi_inv)
    vals = interp_values(S.data, phi_inv.positions)
    return ScalarField(S.grid, vals.astype(S.data.dtype, copy=False))


def central_diff(arr: np.ndarray, axis: int, spacing: float = 1.0) -> np.ndarray:
    """Periodic central difference along one axis, scaled by 1/(2*spacing)."""
    return (np.roll(arr, -1, axis) - np.roll(arr, 1, axis)) / (2.0 * spacing)


def gradient(f: ScalarField) -> VectorField:
    """Central-difference gradient with periodic wrap."""
    g = f.grid
    comps = [central_diff(f.data, a, g.spacing[a]) for a in range(g.dim)]
    return VectorField(g, np.stack(comps))


def jacobian(v: VectorField) -> np.ndarray:
    """Per-voxel Jacobian, shape (d, d, *size); J[i, j] = d(comp i)/d(axis j)."""
    g = v.grid
    return np.stack(
        [
            np.stack([central_diff(v.data[i], j, g.spacing[j]) for j in range(g.dim)])
            for i in range(g.dim)
        ]
    )


def jacobian_determinant(phi_inv: DeformationMap) -> ScalarField:
    """det of the map Jacobian (displacement Jacobian plus identity).

    The displacement part is differentiated w.r.t. the voxel index (unit
    step), so the identity map gives exactly 1 for any spacing.
    """
    g = phi_inv.grid
    u = phi_inv.displacement()
    d = g.dim
    J = np.empty(g.size + (d, d), dtype=u.dtype)
    for i in range(d):
        for j in range(d):
            J[..., i, j] = central_diff(u[i], j, 1.0) + (1.0 if i == j else 0.0)
    return ScalarField(g, np.linalg.det(J))


def inner(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    """Quadrature-weighted inner product over all components and voxels."""
    return float(np.sum(a * b) * grid.cell_volume)
