"""Spectral smoothing kernel K and differential operator L with v = K m, m = L v.

The operator is the classical fluid regularizer built from the discrete
periodic Laplacian.  Writing Lam(k) for the symbol of -Laplacian,

    symbol(k) = a * Lam(k)^2 + b * Lam(k) + c,
    Lam(k)    = sum_axis (4 / h^2) * sin^2(pi k / N),

which is real, >= c > 0, and symmetric under frequency negation, so K and L
are positive definite, self-adjoint, and exact inverses on the grid.  The
finite-difference symbol (rather than the continuum (2 pi k / (N h))^2) is
used so that L agrees exactly with the 2nd-order stencil of the Laplacian.
Note the sign: with Lam >= 0 the b-term adds positive diffusion penalty,
i.e. effectively a*Lap^2 - b*Lap + c, the positive-definite reading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import GridSpec, VectorField


@dataclass(frozen=True)
class KernelParams:
    a: float = 0.01
    b: float = 0.01
    c: float = 0.001

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if self.a < 0 or self.b < 0:
            raise ValueError(f"a and b must be >= 0, got a={self.a}, b={self.b}")
        if self.a + self.b <= 0:
            raise ValueError("a + b must be > 0 (no smoothing otherwise)")


def neg_laplacian_symbol(grid: GridSpec) -> np.ndarray:
    """Symbol of -Laplacian (2nd-order periodic stencil), shape grid.size."""
    lam = np.zeros(grid.size)
    for a, (n, h) in enumerate(zip(grid.size, grid.spacing)):
        k = np.arange(n)
        lam_1d = (4.0 / h**2) * np.sin(np.pi * k / n) ** 2
        shape = [1] * grid.dim
        shape[a] = n
        lam = lam + lam_1d.reshape(shape)
    return lam


@dataclass(frozen=True, eq=False)
class FluidKernel:
    params: KernelParams
    grid: GridSpec
    symbol: np.ndarray

    @property
    def symbol_rfft(self) -> np.ndarray:
        """Symbol restricted to the rfftn half-spectrum (last axis truncated)."""
        n_last = self.grid.size[-1]
        return self.symbol[..., : n_last // 2 + 1]


def build_kernel(params: KernelParams, grid: GridSpec) -> FluidKernel:
    lam = neg_laplacian_symbol(grid)
    symbol = params.a * lam**2 + params.b * lam + params.c
    return FluidKernel(params, grid, symbol)


def apply_symbol(kern: FluidKernel, data: np.ndarray, inverse: bool) -> np.ndarray:
    """Apply the symbol (or its reciprocal) to each component of (d, *size) data."""
    sym = kern.symbol_rfft
    size = kern.grid.size
    out = np.empty_like(data)
    for i in range(data.shape[0]):
        spec = np.fft.rfftn(data[i])
        spec = spec / sym if inverse else spec * sym
        out[i] = np.fft.irfftn(spec, s=size).astype(data.dtype, copy=False)
    return out


def _spectral_apply(kern: FluidKernel, v: VectorField, inverse: bool) -> VectorField:
    if v.grid != kern.grid:
        raise ValueError(f"grid mismatch: field {v.grid} vs kernel {kern.grid}")
    return VectorField(v.grid, apply_symbol(kern, v.data, inverse))


def apply_K(kern: FluidKernel, m: VectorField) -> VectorField:
    """Smooth a momentum into a velocity: v = K m (divide by the symbol)."""
    return _spectral_apply(kern, m, inverse=True)


def apply_L(kern: FluidKernel, v: VectorField) -> VectorField:
    """Sharpen a velocity into a momentum: m = L v (multiply by the symbol)."""
    return _spectral_apply(kern, v, inverse=False)
