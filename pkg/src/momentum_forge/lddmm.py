"""Optimization-based registration: shooting energy, its exact gradient, descent.

The energy of an initial momentum m0 for a moving/target pair (S, T) is

    E(m0) = <m0, K m0> + (1/sigma^2) ||S o phi_inv(1) - T||^2

with both terms discretized as quadrature-weighted voxel sums.  The gradient
is the gradient of that *discretized* objective: the forward integrator
records its per-step states and the gradient reverse-accumulates through the
recorded RK4/Euler stages, including the multilinear interpolation weights
of the final warp.  This makes the gradient exactly testable against finite
differences of energy().
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    DeformationMap,
    GridSpec,
    ScalarField,
    VectorField,
    central_diff,
    identity_positions,
    interp_values,
)
from .kernel import FluidKernel, KernelParams, apply_symbol, build_kernel
from .shooting import ShootingConfig, _system_rhs, integrate


@dataclass(frozen=True)
class EnergyParams:
    sigma: float = 0.2
    kernel: KernelParams = KernelParams()
    shooting: ShootingConfig = ShootingConfig()

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        # keep a single source of truth for the kernel
        if self.shooting.kernel != self.kernel:
            object.__setattr__(
                self, "shooting", dataclasses.replace(self.shooting, kernel=self.kernel)
            )


@dataclass
class OptimResult:
    m0: VectorField
    energy_trace: list  # (iteration, E, reg_term, image_term)
    converged: bool


def _check_pair(m0, S, T):
    if S.grid != T.grid or S.grid != m0.grid:
        raise ValueError("moving, target and momentum must share one grid")


def _energy_terms(m0: np.ndarray, u1: np.ndarray, S: np.ndarray, T: np.ndarray,
                  kern: FluidKernel, sigma: float):
    grid = kern.grid
    w = grid.cell_volume
    v0 = apply_symbol(kern, m0, inverse=True)
    reg = float(np.sum(m0 * v0) * w)
    pos = identity_positions(grid, u1.dtype) + u1
    warped = interp_values(S, pos)
    image = float(np.sum((warped - T) ** 2) * w / sigma**2)
    return reg, image, pos, warped


def energy(m0: VectorField, S: ScalarField, T: ScalarField, p: EnergyParams):
    """Evaluate (E, reg_term, image_term) of the shooting energy."""
    _check_pair(m0, S, T)
    kern = build_kernel(p.kernel, m0.grid)
    cfg = p.shooting
    _, u1, _, _ = integrate(m0.data, kern, cfg.num_steps, cfg.integrator)
    reg, image, _, _ = _energy_terms(m0.data, u1, S.data, T.data, kern, p.sigma)
    return reg + image, reg, image


def _system_rhs_vjp(m: np.ndarray, u: np.ndarray, bm: np.ndarray, bu: np.ndarray,
                    kern: FluidKernel):
    """Exact adjoint of _system_rhs at (m, u) applied to cotangents (bm, bu)."""
    grid = kern.grid
    h = grid.spacing
    d = m.shape[0]
    v = apply_symbol(kern, m, inverse=True)
    D = central_diff

    dv = [[D(v[j], a, h[a]) for a in range(d)] for j in range(d)]
    div_v = sum(dv[j][j] for j in range(d))

    bar_m = np.zeros_like(m)
    bar_u = np.zeros_like(u)
    bar_v = np.zeros_like(v)
    s = sum(m[i] * bm[i] for i in range(d))
    for i in range(d):
        bar_m[i] -= div_v * bm[i]
        for j in range(d):
            bar_m[j] -= dv[j][i] * bm[i]
            bar_m[i] += D(v[j] * bm[i], j, h[j])
            bar_u[i] += D(v[j] * bu[i], j, h[j])
    for j in range(d):
        bar_v[j] += D(s, j, h[j]) - bu[j] / h[j]
        for i in range(d):
            bar_v[j] += D(bm[i] * m[j], i, h[i])
            bar_v[j] -= D(m[i], j, h[j]) * bm[i]
            bar_v[j] -= D(u[i], j, h[j]) * bu[i]
    bar_m += apply_symbol(kern, bar_v, inverse=True)  # K is self-adjoint
    return bar_m, bar_u


def _reverse_sweep(states, bar_m, bar_u, kern: FluidKernel, num_steps: int,
                   integrator: str):
    """Pull cotangents at t=1 back to t=0 through the recorded steps."""
    dt = 1.0 / num_steps
    for m0_, u0_ in reversed(states):
        if integrator == "euler":
            gm, gu = _system_rhs_vjp(m0_, u0_, dt * bar_m, dt * bar_u, kern)
            bar_m = bar_m + gm
            bar_u = bar_u + gu
            continue
        km1, ku1 = _system_rhs(m0_, u0_, kern)
        a2 = (m0_ + 0.5 * dt * km1, u0_ + 0.5 * dt * ku1)
        km2, ku2 = _system_rhs(*a2, kern)
        a3 = (m0_ + 0.5 * dt * km2, u0_ + 0.5 * dt * ku2)
        km3, ku3 = _system_rhs(*a3, kern)
        a4 = (m0_ + dt * km3, u0_ + dt * ku3)

        bk4 = ((dt / 6.0) * bar_m, (dt / 6.0) * bar_u)
        bk3 = [(dt / 3.0) * bar_m, (dt / 3.0) * bar_u]
        bk2 = [(dt / 3.0) * bar_m, (dt / 3.0) * bar_u]
        bk1 = [(dt / 6.0) * bar_m, (dt / 6.0) * bar_u]

        b4 = _system_rhs_vjp(*a4, *bk4, kern)
        bk3[0] += dt * b4[0]
        bk3[1] += dt * b4[1]
        b3 = _system_rhs_vjp(*a3, *bk3, kern)
        bk2[0] += 0.5 * dt * b3[0]
        bk2[1] += 0.5 * dt * b3[1]
        b2 = _system_rhs_vjp(*a2, *bk2, kern)
        bk1[0] += 0.5 * dt * b2[0]
        bk1[1] += 0.5 * dt * b2[1]
        b1 = _system_rhs_vjp(m0_, u0_, *bk1, kern)
        bar_m = bar_m + b1[0] + b2[0] + b3[0] + b4[0]
        bar_u = bar_u + b1[1] + b2[1] + b3[1] + b4[1]
    return bar_m, bar_u


def energy_and_gradient(m0: VectorField, S: ScalarField, T: ScalarField,
                        p: EnergyParams):
    """Energy terms plus the exact gradient of the discretized energy."""
    _check_pair(m0, S, T)
    grid = m0.grid
    kern = build_kernel(p.kernel, grid)
    cfg = p.shooting
    _, u1, states, _ = integrate(
        m0.data, kern, cfg.num_steps, cfg.integrator, record_states=True
    )
    reg, image, pos, warped = _energy_terms(
        m0.data, u1, S.data, T.data, kern, p.sigma
    )
    w = grid.cell_volume
    _, ggrid = interp_values(S.data, pos, with_grad=True)
    bar_u = (2.0 * w / p.sigma**2) * (warped - T.data) * ggrid
    bar_m = np.zeros_like(m0.data)
    bar_m, _ = _reverse_sweep(states, bar_m, bar_u, kern, cfg.num_steps,
                              cfg.integrator)
    bar_m += 2.0 * w * apply_symbol(kern, m0.data, inverse=True)
    return reg + image, reg, image, VectorField(grid, bar_m)


def energy_gradient(m0: VectorField, S: ScalarField, T: ScalarField,
                    p: EnergyParams) -> VectorField:
    return energy_and_gradient(m0, S, T, p)[3]


def optimize(S: ScalarField, T: ScalarField, p: EnergyParams,
             max_iters: int = 200, step0: float | None = None,
             precondition: str = "kernel", rel_tol: float = 1e-6,
             image_target: float | None = None) -> OptimResult:
    """Descend the shooting energy from m0 = 0 with backtracking line search.

    The step direction is the exact discrete gradient, optionally smoothed by
    K (`precondition="kernel"`, the default) which rescales the search
    direction without changing the objective; accepted iterations always
    decrease E.  Stops on max_iters, relative energy change < rel_tol, or
    (optionally) the image term dropping below image_target.
    """
    if S.grid != T.grid:
        raise ValueError("moving and target must share one grid")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if precondition not in ("none", "kernel"):
        raise ValueError(f"unknown precondition {precondition!r}")

    grid = S.grid
    kern = build_kernel(p.kernel, grid)
    m = VectorField.zeros(grid)
    E, reg, image = energy(m, S, T, p)
    trace = [(0, E, reg, image)]
    step = step0
    converged = False
    for it in range(1, max_iters + 1):
        _, _, _, g = energy_and_gradient(m, S, T, p)
        direction = (
            apply_symbol(kern, g.data, inverse=True)
            if precondition == "kernel" else g.data
        )
        dmax = float(np.max(np.abs(direction)))
        if dmax == 0.0:
            converged = True
            break
        if step is None:
            step = 0.5 / dmax
        else:
            step *= 2.0
        accepted = False
        while step >= 1e-12:
            m_try = VectorField(grid, m.data - step * direction)
            E_try, reg_try, img_try = energy(m_try, S, T, p)
            if E_try < E:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise RuntimeError("no descent possible")
        rel_change = (E - E_try) / max(E, np.finfo(float).tiny)
        m, E, reg, image = m_try, E_try, reg_try, img_try
        trace.append((it, E, reg, image))
        if rel_change < rel_tol:
            converged = True
            break
        if image_target is not None and image <= image_target:
            converged = True
            break
    return OptimResult(m0=m, energy_trace=trace, converged=converged)
