"""Learnable texture field and its differentiable bilinear renderer.

``render`` is linear in the texels: each pixel is a fixed bilinear blend
of four texels chosen by the pose. The blend weights form a sparse
``(H*W, G*G)`` matrix, so ``render_backward`` is just its transpose.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp

from .toyworld import CANVAS, VIEW_SIZE, Pose, View, sample_coords


@dataclass
class TextureField:
    grid: np.ndarray  # (G, G, 3)

    @property
    def G(self) -> int:
        return self.grid.shape[0]

    def copy(self) -> TextureField:
        return TextureField(self.grid.copy())

    def project(self) -> None:
        np.clip(self.grid, -1.0, 1.0, out=self.grid)


def bilinear_taps(pose: Pose, G: int, size: int = VIEW_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Flat texel indices ``(P, 4)`` and weights ``(P, 4)`` for every pixel.

    Sample positions are clamped to the grid so border texels repeat.
    """
    X, Y = sample_coords(pose, size, G)
    X = np.clip(X.ravel(), 0.0, G - 1.0)
    Y = np.clip(Y.ravel(), 0.0, G - 1.0)
    x0 = np.floor(X).astype(np.int64)
    y0 = np.floor(Y).astype(np.int64)
    fx, fy = X - x0, Y - y0
    x1 = np.minimum(x0 + 1, G - 1)
    y1 = np.minimum(y0 + 1, G - 1)
    idx = np.stack([y0 * G + x0, y0 * G + x1, y1 * G + x0, y1 * G + x1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return idx, w


@lru_cache(maxsize=512)
def _operator(pose: Pose, G: int, size: int) -> sp.csr_matrix:
    idx, w = bilinear_taps(pose, G, size)
    rows = np.repeat(np.arange(size * size), 4)
    return sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(size * size, G * G))


def render(field: TextureField | np.ndarray, pose: Pose, size: int = VIEW_SIZE) -> np.ndarray:
    grid = field.grid if isinstance(field, TextureField) else np.asarray(field)
    G = grid.shape[0]
    M = _operator(pose, G, size)
    return (M @ grid.reshape(G * G, -1)).reshape(size, size, -1)


def render_backward(field: TextureField | np.ndarray, pose: Pose, dL_dimage: np.ndarray) -> np.ndarray:
    """Gradient of a loss with respect to the texels, given its image gradient."""
    grid = field.grid if isinstance(field, TextureField) else np.asarray(field)
    G = grid.shape[0]
    size = dL_dimage.shape[0]
    if dL_dimage.shape != (size, size, grid.shape[2]):
        raise ValueError(f"image gradient shape {dL_dimage.shape} does not match a "
                         f"square {grid.shape[2]}-channel view")
    M = _operator(pose, G, size)
    return (M.T @ dL_dimage.reshape(size * size, -1)).reshape(grid.shape)


def coverage(pose: Pose, G: int = CANVAS, size: int = VIEW_SIZE) -> np.ndarray:
    """Total bilinear weight each texel receives from one view, ``(G, G)``."""
    return np.asarray(_operator(pose, G, size).sum(axis=0)).reshape(G, G)


def init_field(G: int = CANVAS, init: Literal["gray", "from_reference"] = "gray",
               reference: View | None = None) -> TextureField:
    if G < VIEW_SIZE:
        raise ValueError(f"field size {G} is smaller than the {VIEW_SIZE}px view")
    grid = np.zeros((G, G, 3))
    if init == "gray":
        return TextureField(grid)
    if init != "from_reference":
        raise ValueError(f"unknown init {init!r}")
    if reference is None:
        raise ValueError("from_reference init needs a reference view")
    size = reference.image.shape[0]
    M = _operator(reference.pose, G, size)
    num = (M.T @ reference.image.reshape(size * size, 3).astype(np.float64)).reshape(G, G, 3)
    den = np.asarray(M.sum(axis=0)).reshape(G, G)
    hit = den > 1e-12
    grid[hit] = num[hit] / den[hit, None]
    return TextureField(grid)


def overlap_mask(poses: Sequence[Pose], G: int = CANVAS, min_views: int = 2) -> np.ndarray:
    """Texels seen (with non-trivial weight) by at least ``min_views`` poses."""
    hits = sum((coverage(p, G) > 0.25).astype(int) for p in poses)
    return hits >= min_views


def mean_gradient_magnitude(grid: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Texture sharpness proxy: mean finite-difference gradient norm."""
    gx = np.zeros(grid.shape[:2])
    gy = np.zeros(grid.shape[:2])
    gx[:, :-1] = np.sum((grid[:, 1:] - grid[:, :-1]) ** 2, axis=-1)
    gy[:-1, :] = np.sum((grid[1:, :] - grid[:-1, :]) ** 2, axis=-1)
    mag = np.sqrt(gx + gy)
    if mask is None:
        return float(mag.mean())
    return float(mag[mask].mean())
