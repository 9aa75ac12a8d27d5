"""Forward integration of the geodesic shooting system on t in [0, 1].

State: momentum m and the inverse map phi_inv, evolved jointly by

    dm/dt     = -[(Dv)^T m + (Dm) v + m div v],      v = K m,
    dphi/dt   = -(D phi_inv) v,                      phi_inv(0) = id,

with the momentum treated as a vector-valued density (hence the div term).
The map is stored as voxel-coordinate positions; internally we evolve its
displacement part, which is periodic and safe to differentiate with wrapped
central stencils, while the identity part is handled analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    DeformationMap,
    ScalarField,
    VectorField,
    central_diff,
    identity_positions,
    warp_image,
)
from .kernel import FluidKernel, KernelParams, apply_symbol, build_kernel


class DivergenceError(RuntimeError):
    """Raised when a field stops being finite during integration."""


@dataclass(frozen=True)
class ShootingConfig:
    num_steps: int = 20
    integrator: str = "rk4"
    kernel: KernelParams = KernelParams()

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")


@dataclass
class GeodesicState:
    t: float
    m: VectorField
    phi_inv: DeformationMap
    hamiltonians: np.ndarray | None = None


def _epdiff_rhs(m: np.ndarray, v: np.ndarray, spacing) -> np.ndarray:
    """-[(Dv)^T m + (Dm) v + m div v] on raw (d, *size) arrays."""
    d = m.shape[0]
    dv = [[central_diff(v[j], a, spacing[a]) for a in range(d)] for j in range(d)]
    div_v = sum(dv[j][j] for j in range(d))
    out = np.empty_like(m)
    for i in range(d):
        acc = m[i] * div_v
        for j in range(d):
            acc += dv[j][i] * m[j]  # ((Dv)^T m)_i = sum_j d_i(v_j) m_j
            acc += central_diff(m[i], j, spacing[j]) * v[j]
        out[i] = -acc
    return out


def _advect_rhs(u: np.ndarray, v: np.ndarray, spacing) -> np.ndarray:
    """Displacement form of -(D phi_inv) v: -(sum_j d_j(u_i) v_j + v_i / h_i)."""
    d = u.shape[0]
    out = np.empty_like(u)
    for i in range(d):
        acc = v[i] / spacing[i]
        for j in range(d):
            acc += central_diff(u[i], j, spacing[j]) * v[j]
        out[i] = -acc
    return out


def _system_rhs(m: np.ndarray, u: np.ndarray, kern: FluidKernel):
    v = apply_symbol(kern, m, inverse=True)
    spacing = kern.grid.spacing
    return _epdiff_rhs(m, v, spacing), _advect_rhs(u, v, spacing)


def epdiff_rhs(m: VectorField, kern: FluidKernel) -> VectorField:
    """Momentum evolution right-hand side -ad*_v m with v = K m."""
    if m.grid != kern.grid:
        raise ValueError("grid mismatch between momentum and kernel")
    v = apply_symbol(kern, m.data, inverse=True)
    out = _epdiff_rhs(m.data, v, kern.grid.spacing)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("integration diverged")
    return VectorField(m.grid, out)


def advect_map_rhs(phi_inv: DeformationMap, v: VectorField) -> VectorField:
    """Right-hand side -(D phi_inv) v of the inverse-map advection equation."""
    if phi_inv.grid != v.grid:
        raise ValueError("grid mismatch between map and velocity")
    out = _advect_rhs(phi_inv.displacement(), v.data, v.grid.spacing)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("integration diverged")
    return VectorField(v.grid, out)


def _rk4_step(m, u, dt, kern):
    km1, ku1 = _system_rhs(m, u, kern)
    km2, ku2 = _system_rhs(m + 0.5 * dt * km1, u + 0.5 * dt * ku1, kern)
    km3, ku3 = _system_rhs(m + 0.5 * dt * km2, u + 0.5 * dt * ku2, kern)
    km4, ku4 = _system_rhs(m + dt * km3, u + dt * ku3, kern)
    m_next = m + (dt / 6.0) * (km1 + 2.0 * km2 + 2.0 * km3 + km4)
    u_next = u + (dt / 6.0) * (ku1 + 2.0 * ku2 + 2.0 * ku3 + ku4)
    return m_next, u_next


def _euler_step(m, u, dt, kern):
    km, ku = _system_rhs(m, u, kern)
    return m + dt * km, u + dt * ku


def _hamiltonian(m: np.ndarray, kern: FluidKernel) -> float:
    v = apply_symbol(kern, m, inverse=True)
    return float(np.sum(m * v) * kern.grid.cell_volume)


def integrate(m0: np.ndarray, kern: FluidKernel, num_steps: int, integrator: str,
              record_states: bool = False, record_hamiltonian: bool = False):
    """Integrate (m, displacement) from t=0 to t=1 on raw arrays.

    Returns (m1, u1, states, hams); `states` holds the pre-step (m_n, u_n)
    copies needed for reverse accumulation when `record_states` is set.
    """
    dt = 1.0 / num_steps
    step = _rk4_step if integrator == "rk4" else _euler_step
    m = m0.copy()
    u = np.zeros_like(m0)
    states = []
    hams = [_hamiltonian(m, kern)] if record_hamiltonian else None
    for _ in range(num_steps):
        if record_states:
            states.append((m, u))
        m, u = step(m, u, dt, kern)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(u))):
            raise DivergenceError("integration diverged")
        if record_hamiltonian:
            hams.append(_hamiltonian(m, kern))
    hams = np.asarray(hams) if record_hamiltonian else None
    return m, u, states, hams


def shoot(m0: VectorField, cfg: ShootingConfig,
          record_hamiltonian: bool = True) -> GeodesicState:
    """Shoot an initial momentum to t=1, returning momentum and inverse map."""
    if not np.all(np.isfinite(m0.data)):
        raise ValueError("initial momentum must be finite")
    kern = build_kernel(cfg.kernel, m0.grid)
    m1, u1, _, hams = integrate(
        m0.data, kern, cfg.num_steps, cfg.integrator,
        record_hamiltonian=record_hamiltonian,
    )
    phi = DeformationMap(m0.grid, identity_positions(m0.grid, u1.dtype) + u1)
    return GeodesicState(t=1.0, m=VectorField(m0.grid, m1), phi_inv=phi,
                         hamiltonians=hams)


def shoot_and_warp(S: ScalarField, m0: VectorField, cfg: ShootingConfig):
    """Shoot m0 and pull the moving image back through the resulting map."""
    if S.grid != m0.grid:
        raise ValueError("grid mismatch between image and momentum")
    state = shoot(m0, cfg)
    return warp_image(S, state.phi_inv), state.phi_inv
