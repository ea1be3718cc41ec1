import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distill_lab import metrics
from distill_lab.toyworld import Pose, degrade_view, generate_scene, render_view


def naive_mse(a, b):
    total = 0.0
    flat_a, flat_b = a.ravel(), b.ravel()
    for x, y in zip(flat_a, flat_b):
        total += (float(x) - float(y)) ** 2
    return total / flat_a.size


def naive_ssim(a, b, data_range=2.0):
    """Direct per-window evaluation with explicit Gaussian weights."""
    g = metrics.gaussian_window()
    w2 = np.outer(g, g)
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    h, w, ch = a.shape
    scores = []
    for c in range(ch):
        vals = []
        for i in range(h - 10):
            for j in range(w - 10):
                pa, pb = a[i:i + 11, j:j + 11, c], b[i:i + 11, j:j + 11, c]
                mx, my = np.sum(w2 * pa), np.sum(w2 * pb)
                vx = np.sum(w2 * (pa - mx) ** 2)
                vy = np.sum(w2 * (pb - my) ** 2)
                cxy = np.sum(w2 * (pa - mx) * (pb - my))
                vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
        scores.append(np.mean(vals))
    return float(np.mean(scores))


@pytest.fixture(scope="module")
def pair():
    view = render_view(generate_scene(0), Pose())
    return view.image.astype(np.float64), degrade_view(view, 1.0, 0).image.astype(np.float64)


def test_mse_cases():
    x = np.random.default_rng(0).uniform(-1, 1, (8, 8, 3))
    assert metrics.mse(x, x) == 0.0
    assert metrics.mse(np.zeros((4, 4)), np.ones((4, 4))) == 1.0
    y = np.random.default_rng(1).uniform(-1, 1, (8, 8, 3))
    assert metrics.mse(x, y) == pytest.approx(naive_mse(x, y), abs=1e-7)
    with pytest.raises(ValueError):
        metrics.mse(x, y[:4])


def test_psnr_cases(pair):
    a, b = pair
    assert math.isinf(metrics.psnr(a, a))
    assert metrics.csv_psnr(metrics.psnr(a, a)) == 99.0
    assert metrics.psnr(np.zeros(4), np.full(4, 2.0)) == pytest.approx(0.0, abs=1e-12)
    expected = 10 * math.log10(4.0 / naive_mse(a, b))
    assert metrics.psnr(a, b) == pytest.approx(expected, abs=1e-6)


def test_ssim_cases(pair):
    a, b = pair
    assert metrics.ssim(a, a) == 1.0
    assert metrics.ssim(a, -a) < 1.0
    assert metrics.ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-5)
    with pytest.raises(ValueError):
        metrics.ssim(np.zeros((10, 10)), np.zeros((10, 10)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_metrics_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, (2, 16, 16, 3))
    assert metrics.mse(a, b) == metrics.mse(b, a)
    assert metrics.psnr(a, b) == metrics.psnr(b, a)
    assert metrics.ssim(a, b) == pytest.approx(metrics.ssim(b, a), abs=1e-12)


def test_degradation_is_monotone_in_quality():
    view = render_view(generate_scene(0), Pose())
    ps, ss = [], []
    for sev in (0.0, 0.25, 0.5, 0.75, 1.0):
        d = degrade_view(view, sev, 0).image
        ps.append(metrics.csv_psnr(metrics.psnr(d, view.image)))
        ss.append(metrics.ssim(d, view.image))
    assert all(x >= y for x, y in zip(ps, ps[1:]))
    assert all(x >= y for x, y in zip(ss, ss[1:]))
