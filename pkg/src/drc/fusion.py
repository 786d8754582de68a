"""Depth-fusion pseudo-ground-truth and a mask space-carving oracle.

Fusion walks every pixel ray of every depth view: cells the ray exits
before the observed hit depth get an empty count, the cell containing the
hit point an occupied count; background (escape-depth) rays count their
whole trace as empty.  Soft occupancy is occupied/(occupied+empty); cells
no ray touched are invalid.  Unlike the ray loss this treats each ray as
an independent unary vote per cell, which is what makes it brittle under
depth noise.

Noisy hit points are clamped into the ray's traversed interval (a noisy
depth just past the far side still votes for the last cell); rays whose
pixel reads the escape sentinel count as escapes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import BinaryGrid, GridGeometry, OccupancyGrid
from .renderer import Observation
from .cameras import image_grid_rays
from .traversal import trace_batch


@dataclass(frozen=True, eq=False)
class FusionGrid:
    """Per-cell (empty, occupied) ray counts."""

    geometry: GridGeometry
    empty_count: np.ndarray
    occupied_count: np.ndarray

    def soft_occupancy(self) -> tuple[np.ndarray, np.ndarray]:
        """(soft occupancy, validity); soft = occ/(occ+empty) where any
        count exists, 0 elsewhere (marked invalid)."""
        total = self.empty_count + self.occupied_count
        valid = total > 0
        soft = np.zeros(self.geometry.shape)
        soft[valid] = self.occupied_count[valid] / total[valid]
        return soft, valid


def accumulate_depth_counts(observations: list[Observation], geometry: GridGeometry) -> FusionGrid:
    for obs in observations:
        if obs.kind != "depth":
            raise ValueError(f"depth fusion needs depth observations, got {obs.kind!r}")
    empty = np.zeros(geometry.ncells, dtype=np.int64)
    occupied = np.zeros(geometry.ncells, dtype=np.int64)
    for obs in observations:
        origins, dirs = image_grid_rays(obs.camera)
        packed = trace_batch(geometry, origins.reshape(-1, 3), dirs.reshape(-1, 3))
        valid = packed.valid
        cells = np.maximum(packed.cells, 0)
        d_r = obs.depth.reshape(-1)
        fg = obs.foreground().reshape(-1)

        # index of the cell containing the (clamped) hit point
        passed = np.sum((packed.t_exit < d_r[:, None]) & valid, axis=1)
        hit_idx = np.minimum(passed, np.maximum(packed.n - 1, 0))
        hit_rays = fg & (packed.n > 0)
        rows = np.nonzero(hit_rays)[0]
        np.add.at(occupied, cells[rows, hit_idx[rows]], 1)

        cols = np.arange(packed.max_len)
        empty_mask = valid & np.where(hit_rays[:, None], cols < hit_idx[:, None], ~fg[:, None])
        np.add.at(empty, cells[empty_mask], 1)
    return FusionGrid(geometry, empty.reshape(geometry.shape), occupied.reshape(geometry.shape))


def fuse_depth(observations: list[Observation], geometry: GridGeometry):
    """(soft occupancy field, validity mask) from per-voxel ray counts."""
    return accumulate_depth_counts(observations, geometry).soft_occupancy()


def fused_to_occupancy_grid(soft: np.ndarray, valid: np.ndarray,
                            geometry: GridGeometry) -> OccupancyGrid:
    """Fused field in the emptiness convention: x = 1 - soft.

    Invalid cells (no ray information) are scored as empty (x = 1) so the
    field can be compared against a full ground truth.
    """
    return OccupancyGrid(geometry, np.where(valid, 1.0 - soft, 1.0))


def carve_masks(observations: list[Observation], geometry: GridGeometry) -> BinaryGrid:
    """Visual hull: a cell stays occupied unless a background ray crosses it."""
    for obs in observations:
        if obs.kind != "mask":
            raise ValueError(f"mask carving needs mask observations, got {obs.kind!r}")
    carved = np.zeros(geometry.ncells, dtype=bool)
    for obs in observations:
        origins, dirs = image_grid_rays(obs.camera)
        background = obs.mask.reshape(-1) == 0
        if not background.any():
            continue
        packed = trace_batch(geometry, origins.reshape(-1, 3)[background],
                             dirs.reshape(-1, 3)[background])
        carved[packed.cells[packed.valid]] = True
    return BinaryGrid(geometry, ~carved.reshape(geometry.shape))
