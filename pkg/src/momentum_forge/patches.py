"""Sliding-window patch planning, background pruning, and overlap-mean stitching."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .fields import GridSpec, ScalarField, VectorField

DEFAULT_PATCH_SIZE = 15
DEFAULT_STRIDE = 14
DEFAULT_BACKGROUND_THRESHOLD = 0.01


def _per_axis(value, dim: int) -> tuple[int, ...]:
    if np.isscalar(value):
        return (int(value),) * dim
    value = tuple(int(v) for v in value)
    if len(value) != dim:
        raise ValueError(f"expected {dim} per-axis values, got {value}")
    return value


def axis_starts(size: int, patch: int, stride: int) -> list[int]:
    """Start offsets along one axis: regular strides plus a clamped final one."""
    if patch > size:
        raise ValueError(f"patch size {patch} exceeds axis size {size}")
    if not 1 <= stride <= patch:
        raise ValueError(f"stride must be in [1, patch_size], got {stride}")
    starts = list(range(0, size - patch + 1, stride))
    if starts[-1] != size - patch:
        starts.append(size - patch)
    return starts


@dataclass
class PatchGrid:
    grid: GridSpec
    patch_size: tuple[int, ...]
    stride: tuple[int, ...]
    positions: list[tuple[int, ...]]


def plan_patches(grid: GridSpec, patch_size=DEFAULT_PATCH_SIZE,
                 stride=DEFAULT_STRIDE) -> PatchGrid:
    """Plan full-coverage sliding-window positions over the grid."""
    psize = _per_axis(patch_size, grid.dim)
    pstride = _per_axis(stride, grid.dim)
    per_axis = [axis_starts(n, p, s) for n, p, s in zip(grid.size, psize, pstride)]
    return PatchGrid(grid, psize, pstride, list(product(*per_axis)))


@dataclass
class PatchJob:
    index: int
    start: tuple[int, ...]
    moving_patch: np.ndarray
    target_patch: np.ndarray
    pruned: bool = False


def extract_patch(data: np.ndarray, start, patch_size) -> np.ndarray:
    sl = tuple(slice(s, s + p) for s, p in zip(start, patch_size))
    return data[sl]


def prune(job: PatchJob, background_threshold: float = DEFAULT_BACKGROUND_THRESHOLD) -> bool:
    """A patch is pruned iff both images are background everywhere in it."""
    return bool(
        np.max(job.moving_patch) <= background_threshold
        and np.max(job.target_patch) <= background_threshold
    )


def make_jobs(moving: ScalarField, target: ScalarField, plan: PatchGrid,
              background_threshold: float = DEFAULT_BACKGROUND_THRESHOLD) -> list[PatchJob]:
    """Extract moving/target patches at every planned position and flag pruning."""
    if moving.grid != target.grid:
        raise ValueError("moving and target must share one grid")
    jobs = []
    for i, start in enumerate(plan.positions):
        job = PatchJob(
            index=i,
            start=start,
            moving_patch=extract_patch(moving.data, start, plan.patch_size),
            target_patch=extract_patch(target.data, start, plan.patch_size),
        )
        job.pruned = prune(job, background_threshold)
        jobs.append(job)
    return jobs


class StitchAccumulator:
    """Per-voxel sum and multiplicity for overlap-averaged patch deposition."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.sum = np.zeros((grid.dim,) + grid.size)
        self.count = np.zeros(grid.size)

    def deposit(self, start, patch: np.ndarray) -> None:
        psize = patch.shape[1:]
        if len(start) != self.grid.dim or patch.shape[0] != self.grid.dim:
            raise ValueError("patch must have one component per grid axis")
        for s, p, n in zip(start, psize, self.grid.size):
            if s < 0 or s + p > n:
                raise ValueError(f"patch at {start} with size {psize} out of bounds")
        sl = tuple(slice(s, s + p) for s, p in zip(start, psize))
        self.sum[(slice(None),) + sl] += patch
        self.count[sl] += 1.0

    def finalize(self) -> VectorField:
        safe = np.maximum(self.count, 1.0)
        return VectorField(self.grid, self.sum / safe)


def stitch(patches, grid: GridSpec) -> VectorField:
    """Average momentum patches into a full field; uncovered voxels stay 0."""
    acc = StitchAccumulator(grid)
    for start, patch in patches:
        acc.deposit(start, np.asarray(patch))
    return acc.finalize()
