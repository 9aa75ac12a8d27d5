"""Synthetic training pairs: edge-supported momenta, shooting, modality remap.

Each pair starts from a base image of smooth random blobs.  A band-limited
scalar amplitude field lambda turns the image gradient into an initial
momentum m0 = lambda * grad(S) (so m0 vanishes in homogeneous regions),
rescaled until the shot deformation's maximum displacement lands in a target
voxel range.  The warped image is then pushed through a second-modality
appearance pipeline: a monotone increasing piecewise-linear intensity remap,
a smooth multiplicative bias field, and additive Gaussian noise.  Pairs come
with exact ground truth (m0, phi_inv), which is what makes them usable as
training labels without running the optimizer.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .fields import (
    DeformationMap,
    GridSpec,
    ScalarField,
    VectorField,
    gradient,
    jacobian_determinant,
    warp_image,
)
from .kernel import apply_symbol, build_kernel
from .shooting import ShootingConfig, shoot


@dataclass(frozen=True)
class SynthConfig:
    num_blobs: tuple[int, int] = (3, 8)
    blob_intensity: tuple[float, float] = (0.35, 1.0)
    edge_width: float = 2.5          # voxels over which a blob falls to 0
    lambda_cutoff: float = 5.0       # band limit of the amplitude field, cycles/domain
    max_disp: tuple[float, float] = (2.0, 6.0)
    bias_amplitude: float = 0.2
    noise_std: float = 0.002         # fraction of the [0, 1] range
    remap_knots: int = 6
    shooting: ShootingConfig = ShootingConfig()
    max_retries: int = 10


@dataclass
class SynthPair:
    moving_a: ScalarField
    target_b: ScalarField
    m0_true: VectorField
    phi_inv_true: DeformationMap
    seed: int


def _periodic_delta(grid: GridSpec, center: np.ndarray) -> np.ndarray:
    """Wrapped offsets from `center` at every voxel, shape (d, *size)."""
    idx = np.indices(grid.size, dtype=np.float64)
    out = np.empty_like(idx)
    for a, n in enumerate(grid.size):
        out[a] = (idx[a] - center[a] + n / 2.0) % n - n / 2.0
    return out


def make_base_image(grid: GridSpec, rng: np.random.Generator,
                    cfg: SynthConfig = SynthConfig()) -> ScalarField:
    """Random smooth blobs with distinct intensities on zero background."""
    d = grid.dim
    img = np.zeros(grid.size)
    n_blobs = int(rng.integers(cfg.num_blobs[0], cfg.num_blobs[1] + 1))
    min_extent = min(grid.size)
    for _ in range(n_blobs):
        center = rng.uniform(0, 1, d) * np.array(grid.size)
        radii = rng.uniform(0.10, 0.22, d) * min_extent
        intensity = rng.uniform(*cfg.blob_intensity)
        delta = _periodic_delta(grid, center)
        if d == 2:
            ang = rng.uniform(0, np.pi)
            rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        else:
            q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            rot = q
        local = np.einsum("ij,j...->i...", rot, delta)
        r = np.sqrt(sum((local[a] / radii[a]) ** 2 for a in range(d)))
        # plateau of 1 inside, cosine falloff over an edge band, exact 0 outside
        edge = cfg.edge_width / np.mean(radii)
        t = np.clip((r - 1.0 + edge) / edge, 0.0, 1.0)
        profile = np.where(t >= 1.0, 0.0, np.cos(0.5 * np.pi * t) ** 2)
        img = np.maximum(img, intensity * profile)
    return ScalarField(grid, img)


def band_limited_noise(grid: GridSpec, rng: np.random.Generator,
                       cutoff: float) -> np.ndarray:
    """Smooth noise, normalized to max |.| = 1, with a Gaussian band limit."""
    noise = rng.standard_normal(grid.size)
    spec = np.fft.rfftn(noise)
    k2 = np.zeros(spec.shape)
    for a, n in enumerate(grid.size):
        freq = np.fft.fftfreq(n) * n if a < grid.dim - 1 else np.fft.rfftfreq(n) * n
        shape = [1] * grid.dim
        shape[a] = len(freq)
        k2 = k2 + (freq.reshape(shape)) ** 2
    spec *= np.exp(-k2 / (2.0 * cutoff**2))
    field = np.fft.irfftn(spec, s=grid.size)
    peak = np.max(np.abs(field))
    return field / peak if peak > 0 else field


def _monotone_remap(img: np.ndarray, rng: np.random.Generator, knots: int) -> np.ndarray:
    """Random increasing piecewise-linear lookup anchored at (0,0) and (1,1)."""
    x = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, knots - 2)), [1.0]])
    inc = rng.uniform(0.15, 1.0, knots - 1)
    y = np.concatenate([[0.0], np.cumsum(inc)])
    y /= y[-1]
    return np.interp(img, x, y)


def make_modality_b(warped: ScalarField, rng: np.random.Generator,
                    cfg: SynthConfig = SynthConfig()) -> ScalarField:
    """Second-modality appearance: remap, smooth bias, noise; clipped to [0, 1]."""
    grid = warped.grid
    out = _monotone_remap(warped.data, rng, cfg.remap_knots)
    bias = band_limited_noise(grid, rng, cutoff=2.0)
    out = out * (1.0 + cfg.bias_amplitude * bias)
    out = out + rng.normal(0.0, cfg.noise_std, grid.size)
    return ScalarField(grid, np.clip(out, 0.0, 1.0))


def _scaled_momentum(S: ScalarField, lam: np.ndarray, scale: float) -> VectorField:
    g = gradient(S)
    return VectorField(S.grid, scale * lam * g.data)


def synth_pair(base_shapes_seed: int, deform_seed: int, modality_seed: int,
               grid: GridSpec, cfg: SynthConfig = SynthConfig()) -> SynthPair:
    """Generate one fully-labelled synthetic multimodal pair.

    Resamples the amplitude field (at most cfg.max_retries times) whenever
    the shot map fails the positivity check det DJ > 0 or the displacement
    range cannot be met.
    """
    S = make_base_image(grid, np.random.default_rng(base_shapes_seed), cfg)
    kern = build_kernel(cfg.shooting.kernel, grid)
    rng_d = np.random.default_rng(deform_seed)
    lo, hi = cfg.max_disp

    for _ in range(cfg.max_retries + 1):
        if hi <= 0:
            m0 = VectorField.zeros(grid)
            state = shoot(m0, cfg.shooting)
            break
        lam = band_limited_noise(grid, rng_d, cfg.lambda_cutoff)
        target_disp = rng_d.uniform(lo + 0.3 * (hi - lo), hi - 0.3 * (hi - lo))
        m0 = _scaled_momentum(S, lam, 1.0)
        v0 = apply_symbol(kern, m0.data, inverse=True)
        v0mag = np.max(np.sqrt(np.sum(v0**2, axis=0)))
        if v0mag == 0:
            continue
        m0 = VectorField(grid, m0.data * (target_disp / v0mag))
        ok = False
        for _ in range(4):
            state = shoot(m0, cfg.shooting)
            disp = state.phi_inv.displacement()
            maxdisp = float(np.max(np.sqrt(np.sum(disp**2, axis=0))))
            if maxdisp == 0:
                break
            if lo <= maxdisp <= hi:
                ok = True
                break
            m0 = VectorField(grid, m0.data * (target_disp / maxdisp))
        if not ok:
            continue
        if np.min(jacobian_determinant(state.phi_inv).data) > 0:
            break
    else:
        raise RuntimeError(
            f"synthesis failed after {cfg.max_retries} retries (seed {deform_seed})"
        )

    warped = warp_image(S, state.phi_inv)
    target_b = make_modality_b(warped, np.random.default_rng(modality_seed), cfg)
    return SynthPair(
        moving_a=S,
        target_b=target_b,
        m0_true=m0,
        phi_inv_true=state.phi_inv,
        seed=deform_seed,
    )


def make_pair(grid: GridSpec, seed: int, cfg: SynthConfig = SynthConfig()) -> SynthPair:
    """Derive the three sub-seeds of synth_pair from one pair seed."""
    ss = np.random.SeedSequence(seed)
    s_base, s_def, s_mod = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    pair = synth_pair(s_base, s_def, s_mod, grid, cfg)
    pair.seed = seed
    return pair


# --- dataset manifests ----------------------------------------------------

MANIFEST_FIELDS = ["pair_id", "moving_a", "target_b", "m0", "phi_inv", "seed"]


@dataclass
class ManifestRecord:
    pair_id: str
    moving_a: str
    target_b: str
    m0: str
    phi_inv: str
    seed: int


def write_manifest(path, records: list[ManifestRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            w.writerow([r.pair_id, r.moving_a, r.target_b, r.m0, r.phi_inv, r.seed])


def read_manifest(path) -> list[ManifestRecord]:
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise ValueError(
                f"{path}: manifest header {reader.fieldnames} != {MANIFEST_FIELDS}"
            )
        for row in reader:
            records.append(
                ManifestRecord(
                    pair_id=row["pair_id"],
                    moving_a=os.path.join(base, row["moving_a"]),
                    target_b=os.path.join(base, row["target_b"]),
                    m0=os.path.join(base, row["m0"]),
                    phi_inv=os.path.join(base, row["phi_inv"]),
                    seed=int(row["seed"]),
                )
            )
    return records
