import math

import numpy as np
import pytest

from distill_lab.repfield import (TextureField, coverage, init_field, mean_gradient_magnitude,
                                  overlap_mask, render, render_backward)
from distill_lab.toyworld import Pose, generate_scene, render_view, sample_coords


def naive_render(grid, pose, size=32):
    """Scalar-loop bilinear sampler with clamp-to-edge."""
    G = grid.shape[0]
    X, Y = sample_coords(pose, size, G)
    out = np.zeros((size, size, grid.shape[2]))
    for i in range(size):
        for j in range(size):
            x = min(max(X[i, j], 0.0), G - 1.0)
            y = min(max(Y[i, j], 0.0), G - 1.0)
            x0, y0 = int(math.floor(x)), int(math.floor(y))
            x1, y1 = min(x0 + 1, G - 1), min(y0 + 1, G - 1)
            fx, fy = x - x0, y - y0
            out[i, j] = ((1 - fx) * (1 - fy) * grid[y0, x0] + fx * (1 - fy) * grid[y0, x1]
                         + (1 - fx) * fy * grid[y1, x0] + fx * fy * grid[y1, x1])
    return out


@pytest.fixture
def grid():
    return np.random.default_rng(0).uniform(-1, 1, (48, 48, 3))


def test_gray_init():
    f = init_field(48)
    assert f.grid.shape == (48, 48, 3) and not f.grid.any()
    with pytest.raises(ValueError):
        init_field(48, "from_reference")
    with pytest.raises(ValueError):
        init_field(16)


def test_from_reference_round_trip():
    ref = render_view(generate_scene(1), Pose())
    f = init_field(48, "from_reference", ref)
    assert np.mean((render(f, ref.pose) - ref.image) ** 2) < 1e-3
    assert np.array_equal(f.grid, init_field(48, "from_reference", ref).grid)
    assert not f.grid[:8].any()


def test_identity_pose_is_exact():
    g = np.random.default_rng(1).uniform(-1, 1, (32, 32, 3))
    assert np.array_equal(render(g, Pose()), g)


def test_integer_shift_is_window(grid):
    for k in (-3, 2, 5):
        img = render(grid, Pose(0.0, float(k)))
        assert np.array_equal(img, grid[8:40, 8 + k:40 + k])


@pytest.mark.parametrize("pose", [Pose.from_azimuth(1.1), Pose.from_azimuth(-2.9), Pose(0.3, -6.5)])
def test_matches_naive_sampler(grid, pose):
    np.testing.assert_allclose(render(grid, pose), naive_render(grid, pose), atol=1e-6)


def test_backward_zero(grid):
    pose = Pose.from_azimuth(0.7)
    assert not render_backward(grid, pose, np.zeros((32, 32, 3))).any()
    with pytest.raises(ValueError):
        render_backward(grid, pose, np.zeros((32, 32, 2)))


def test_backward_matches_finite_differences(grid):
    rng = np.random.default_rng(2)
    pose = Pose.from_azimuth(2.2)
    u = rng.standard_normal((32, 32, 3))
    g = render_backward(grid, pose, u)
    cov = coverage(pose) > 0
    cand = np.argwhere(cov)
    h = 1e-4
    for r, c in cand[rng.choice(len(cand), 100, replace=False)]:
        ch = int(rng.integers(3))
        gp, gm = grid.copy(), grid.copy()
        gp[r, c, ch] += h
        gm[r, c, ch] -= h
        fd = (np.sum(u * render(gp, pose)) - np.sum(u * render(gm, pose))) / (2 * h)
        assert abs(fd - g[r, c, ch]) <= 1e-4 * max(abs(fd), abs(g[r, c, ch]), 1e-3)


def test_adjoint_dot_product(grid):
    rng = np.random.default_rng(3)
    for pose in (Pose.from_azimuth(0.4), Pose.from_azimuth(-3.0)):
        for _ in range(20):
            e = np.zeros_like(grid)
            idx = tuple(rng.integers(0, s) for s in grid.shape)
            e[idx] = 1.0
            u = rng.standard_normal((32, 32, 3))
            lhs = np.sum(render(e, pose) * u)
            rhs = np.sum(e * render_backward(grid, pose, u))
            assert abs(lhs - rhs) <= 1e-5 * max(abs(lhs), 1e-12) or lhs == rhs == 0
        a = rng.standard_normal(grid.shape)
        u = rng.standard_normal((32, 32, 3))
        lhs, rhs = np.sum(render(a, pose) * u), np.sum(a * render_backward(grid, pose, u))
        assert lhs == pytest.approx(rhs, rel=1e-5)


def test_render_is_linear(grid):
    other = np.random.default_rng(4).uniform(-1, 1, grid.shape)
    pose = Pose.from_azimuth(1.9)
    np.testing.assert_allclose(render(2.0 * grid - 0.5 * other, pose),
                               2.0 * render(grid, pose) - 0.5 * render(other, pose), atol=1e-12)


def test_nearby_views_share_texels():
    a, b = Pose.from_azimuth(0.3), Pose.from_azimuth(0.6)
    assert overlap_mask([a, b]).sum() > 500
    # per-view targets that disagree on the overlap cannot both be met
    shared = overlap_mask([a, b])
    f = TextureField(np.zeros((48, 48, 3)))
    f.grid[shared] = 0.5
    assert not np.allclose(render(f, a), 0.0)


def test_sharpness_proxy():
    flat = np.zeros((10, 10, 3))
    assert mean_gradient_magnitude(flat) == 0.0
    ramp = np.tile(np.arange(10.0)[None, :, None], (10, 1, 3))
    mask = np.zeros((10, 10), bool)
    mask[:, :9] = True
    assert mean_gradient_magnitude(ramp, mask) == pytest.approx(math.sqrt(3))
