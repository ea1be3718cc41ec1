"""Procedural toy scenes, pose-warped views with exact depth, and a
degradation operator standing in for low-quality synthesized novel views.

World coordinates live on a ``CANVAS x CANVAS`` grid; texel ``(r, c)``
sits at world point ``(X=c, Y=r)``. A view samples a rotated, shifted
``H x W`` lattice centred on the canvas.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

CANVAS = 48
VIEW_SIZE = 32
ROTATION_PER_AZIMUTH = 0.25
MAX_SHIFT = 8.0
TEXTURE_KINDS = ("stripe", "checker")
NUM_CLASSES = 3 * len(TEXTURE_KINDS)


@dataclass(frozen=True)
class Pose:
    """Single-parameter camera: in-plane rotation plus horizontal shift."""

    azimuth: float = 0.0
    shift: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.azimuth) and math.isfinite(self.shift)):
            raise ValueError(f"pose must be finite, got {self}")

    @classmethod
    def from_azimuth(cls, azimuth: float) -> Pose:
        # wrap into [-pi, pi]
        az = math.atan2(math.sin(azimuth), math.cos(azimuth))
        return cls(azimuth=az, shift=MAX_SHIFT * az / math.pi)

    @property
    def rotation(self) -> float:
        return ROTATION_PER_AZIMUTH * self.azimuth


def sample_coords(pose: Pose, size: int = VIEW_SIZE, grid: int = CANVAS) -> tuple[np.ndarray, np.ndarray]:
    """World ``(X, Y)`` sampled by every pixel of a ``size x size`` view."""
    centre = (size - 1) / 2
    v, u = np.meshgrid(np.arange(size) - centre, np.arange(size) - centre, indexing="ij")
    c, s = math.cos(pose.rotation), math.sin(pose.rotation)
    mid = (grid - 1) / 2
    X = mid + c * u - s * v + pose.shift
    Y = mid + s * u + c * v
    return X, Y


@dataclass(frozen=True)
class Shape:
    kind: str  # "disk" or "rect"
    centre: tuple[float, float]
    size: tuple[float, float]  # (radius, radius) for disks, half extents for rects
    color: tuple[float, float, float]
    depth: float  # normalised depth of the shape's nearest point
    texture_freq: float
    texture_angle: float
    texture_phase: tuple[float, float]


@dataclass(frozen=True)
class Scene:
    seed: int
    shapes: tuple[Shape, ...]  # far to near
    background: tuple[float, float, float]
    texture_kind: str

    @property
    def class_id(self) -> int:
        return (len(self.shapes) - 1) * len(TEXTURE_KINDS) + TEXTURE_KINDS.index(self.texture_kind)


@dataclass
class View:
    image: np.ndarray  # (H, W, 3) in [-1, 1]
    depth: np.ndarray  # (H, W) in [-1, 1], nearest = +1, background = -1
    pose: Pose = field(default_factory=Pose)


_DEPTH_LEVELS = {1: (1.0,), 2: (0.3, 1.0), 3: (-0.1, 0.45, 1.0)}
_DOME = 0.3
_TEXTURE_AMP = 0.35


def generate_scene(seed: int) -> Scene:
    rng = np.random.default_rng([seed, 0x5CE])
    n = int(rng.integers(1, 4))
    texture_kind = TEXTURE_KINDS[int(rng.integers(0, len(TEXTURE_KINDS)))]
    background = tuple(float(v) for v in rng.uniform(-0.8, -0.2, 3))
    shapes = []
    for depth in _DEPTH_LEVELS[n]:
        kind = "disk" if rng.random() < 0.5 else "rect"
        if kind == "disk":
            r = float(rng.uniform(5.0, 10.0))
            size = (r, r)
        else:
            size = (float(rng.uniform(4.0, 10.0)), float(rng.uniform(4.0, 10.0)))
        lo = (size[0] + 1.0, size[1] + 1.0)
        hi = (CANVAS - 2.0 - size[0], CANVAS - 2.0 - size[1])
        cx = float(np.clip(rng.uniform(12.0, 36.0), lo[0], hi[0]))
        cy = float(np.clip(rng.uniform(12.0, 36.0), lo[1], hi[1]))
        shapes.append(Shape(
            kind=kind,
            centre=(cx, cy),
            size=size,
            color=tuple(float(v) for v in rng.uniform(-0.55, 0.55, 3)),
            depth=depth,
            texture_freq=float(1.0 / rng.uniform(4.0, 7.0)),
            texture_angle=float(rng.uniform(0.0, math.pi)),
            texture_phase=tuple(float(v) for v in rng.uniform(0.0, 2 * math.pi, 2)),
        ))
    return Scene(seed=seed, shapes=tuple(shapes), background=background, texture_kind=texture_kind)


def _shape_mask_depth(shape: Shape, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dx, dy = X - shape.centre[0], Y - shape.centre[1]
    if shape.kind == "disk":
        rr = (dx**2 + dy**2) / shape.size[0] ** 2
        mask = rr <= 1.0
        depth = shape.depth - _DOME * (1.0 - np.sqrt(np.clip(1.0 - rr, 0.0, 1.0)))
    else:
        mask = (np.abs(dx) <= shape.size[0]) & (np.abs(dy) <= shape.size[1])
        depth = np.full(X.shape, shape.depth)
    return mask, depth


def _texture(shape: Shape, kind: str, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    w = 2 * math.pi * shape.texture_freq
    p0, p1 = shape.texture_phase
    if kind == "stripe":
        a = shape.texture_angle
        return np.sin(w * (X * math.cos(a) + Y * math.sin(a)) + p0)
    return np.sin(w * X + p0) * np.sin(w * Y + p1)


def shade(scene: Scene, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Point-sample the scene's colour and depth at world coordinates."""
    image = np.empty(X.shape + (3,))
    image[:] = scene.background
    depth = np.full(X.shape, -1.0)
    for shape in scene.shapes:
        mask, d = _shape_mask_depth(shape, X, Y)
        tex = _texture(shape, scene.texture_kind, X, Y)
        col = np.asarray(shape.color) + _TEXTURE_AMP * tex[..., None]
        image[mask] = col[mask]
        depth[mask] = d[mask]
    return np.clip(image, -1.0, 1.0), np.clip(depth, -1.0, 1.0)


def render_view(scene: Scene, pose: Pose, size: int = VIEW_SIZE) -> View:
    X, Y = sample_coords(pose, size)
    image, depth = shade(scene, X, Y)
    return View(image.astype(np.float32), depth.astype(np.float32), pose)


def render_canvas(scene: Scene) -> np.ndarray:
    """The scene sampled at every texel centre of the canvas."""
    Y, X = np.meshgrid(np.arange(CANVAS, dtype=np.float64), np.arange(CANVAS, dtype=np.float64), indexing="ij")
    return shade(scene, X, Y)[0].astype(np.float32)


def degrade_view(view: View, severity: float, seed: int) -> View:
    """Blur, colour-shift and noise a view; depth is left untouched."""
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must lie in [0, 1], got {severity}")
    if severity == 0.0:
        return View(view.image.copy(), view.depth.copy(), view.pose)
    rng = np.random.default_rng([seed, 0xDE6])
    img = view.image.astype(np.float64)
    img = gaussian_filter(img, sigma=(2.5 * severity, 2.5 * severity, 0.0), mode="nearest")
    img = img + rng.uniform(-0.15, 0.15, 3) * severity
    img = img + rng.standard_normal(img.shape) * 0.05 * severity
    return View(np.clip(img, -1.0, 1.0).astype(np.float32), view.depth.copy(), view.pose)


def make_dataset(num_scenes: int, views_per_scene: int, seed: int) -> list[tuple[View, int]]:
    if num_scenes < 1 or views_per_scene < 1:
        raise ValueError("dataset needs positive scene and view counts")
    rng = np.random.default_rng([seed, 0xDA7A])
    scene_seeds = rng.integers(0, 2**31 - 1, num_scenes)
    data = []
    for s in scene_seeds:
        scene = generate_scene(int(s))
        for az in rng.uniform(-math.pi, math.pi, views_per_scene):
            data.append((render_view(scene, Pose.from_azimuth(float(az))), scene.class_id))
    return data


def dataset_digest(dataset: list[tuple[View, int]]) -> str:
    """SHA-256 over the little-endian float32 stream of every view.

    Per view: image, depth, then (azimuth, shift, class_id) as floats.
    """
    h = hashlib.sha256()
    for view, cls in dataset:
        h.update(np.ascontiguousarray(view.image, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(view.depth, dtype="<f4").tobytes())
        h.update(np.asarray([view.pose.azimuth, view.pose.shift, cls], dtype="<f4").tobytes())
    return h.hexdigest()


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Affine map of [-1, 1] onto 0..255."""
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def save_png(img: np.ndarray, path: str | Path) -> None:
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG")
