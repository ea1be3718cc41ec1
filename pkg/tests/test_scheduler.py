import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distill_lab.scheduler import (GuidanceConfig, LatentState, NoiseSchedule, add_noise,
                                   cfg_combine, ddim_invert_step, ddim_ladder, ddim_step,
                                   make_schedule)


@settings(max_examples=40, deadline=None)
@given(T=st.integers(1, 300), kind=st.sampled_from(["cosine", "linear"]))
def test_schedule_invariants(T, kind):
    s = make_schedule(T, kind)
    assert len(s.alphas) == T + 1
    np.testing.assert_allclose(s.alphas**2 + s.sigmas**2, 1.0, atol=1e-6)
    assert s.alphas[0] == 1.0 and s.sigmas[0] == 0.0
    assert np.all(np.diff(s.alphas) < 0)
    assert np.all(np.diff(s.sigmas) > 0)


def test_schedule_rejects_zero_steps():
    with pytest.raises(ValueError):
        make_schedule(0)


def test_fifty_step_cosine():
    s = make_schedule(50, "cosine")
    assert s.T == 50 and s.kind == "cosine"
    assert np.all(np.diff(s.alphas) < 0)


def test_single_step_linear():
    s = make_schedule(1, "linear")
    assert s.alphas[1] < 1.0 and s.sigmas[1] > 0.0
    assert s.alphas[1] ** 2 + s.sigmas[1] ** 2 == pytest.approx(1.0, abs=1e-6)


def test_cosine_matches_closed_form():
    s = make_schedule(20, "cosine")
    expected = [max(math.cos(math.pi / 2 * 0.999 * t / 20), 1e-3) for t in range(21)]
    np.testing.assert_allclose(s.alphas, expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.sigmas, [math.sqrt(1 - a * a) for a in expected], atol=1e-12)


@pytest.fixture
def sched():
    return make_schedule(50)


def test_add_noise_endpoints(sched):
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((4, 4, 3)).astype(np.float32)
    e = rng.standard_normal((4, 4, 3)).astype(np.float32)
    assert np.array_equal(add_noise(LatentState(x0, 0), 0, e, sched).data, x0)
    out = add_noise(np.zeros_like(x0), 17, e, sched)
    np.testing.assert_array_equal(out.data, (sched.sigmas[17] * e).astype(np.float32))
    assert out.t == 17


def test_add_noise_direct_formula(sched):
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((32, 32, 3))
    e = rng.standard_normal((32, 32, 3))
    t = 25
    a = math.cos(math.pi / 2 * 0.999 * 0.5)
    expected = a * x0 + math.sqrt(1 - a * a) * e
    np.testing.assert_allclose(add_noise(x0, t, e, sched).data, expected, rtol=1e-12)


def test_add_noise_shape_mismatch(sched):
    with pytest.raises(ValueError):
        add_noise(np.zeros((2, 2, 3)), 1, np.zeros((2, 3, 3)), sched)


def test_ddim_step_zero_eps(sched):
    x = np.random.default_rng(2).standard_normal((5, 5, 3))
    out = ddim_step(LatentState(x, 10), np.zeros_like(x), 10, 9, sched)
    np.testing.assert_allclose(out.data, sched.alphas[9] / sched.alphas[10] * x, rtol=1e-14)
    assert out.t == 9


def test_ddim_step_same_noise_level_is_identity():
    a = np.array([1.0, 0.8, 0.8, 0.5])
    flat = NoiseSchedule(T=3, alphas=a, sigmas=np.sqrt(1 - a**2))
    x = np.random.default_rng(3).standard_normal((3, 3, 3))
    e = np.random.default_rng(4).standard_normal((3, 3, 3))
    np.testing.assert_allclose(ddim_step(LatentState(x, 2), e, 2, 1, flat).data, x, rtol=1e-14)


def test_ddim_step_rejects_non_decreasing(sched):
    x = np.zeros((2, 2, 3))
    with pytest.raises(ValueError):
        ddim_step(LatentState(x, 3), x, 3, 3, sched)
    with pytest.raises(ValueError):
        ddim_invert_step(LatentState(x, 3), x, 3, sched, t_prev=4)


def test_invert_step_zero_eps(sched):
    x = np.random.default_rng(5).standard_normal((5, 5, 3))
    out = ddim_invert_step(LatentState(x, 9), np.zeros_like(x), 10, sched)
    np.testing.assert_allclose(out.data, sched.alphas[10] / sched.alphas[9] * x, rtol=1e-14)
    assert out.t == 10


def test_single_step_round_trip(sched):
    rng = np.random.default_rng(6)
    for _ in range(50):
        t = int(rng.integers(1, 51))
        x = rng.standard_normal((32, 32, 3))
        e = rng.standard_normal((32, 32, 3))
        up = ddim_invert_step(LatentState(x, t - 1), e, t, sched)
        back = ddim_step(up, e, t, t - 1, sched)
        np.testing.assert_allclose(back.data, x, atol=1e-6, rtol=0)


def test_updates_keep_input_dtype(sched):
    x = np.ones((2, 2, 3), dtype=np.float32)
    assert ddim_step(LatentState(x, 5), x, 5, 4, sched).data.dtype == np.float32
    assert ddim_invert_step(LatentState(x, 4), x, 5, sched).data.dtype == np.float32
    assert add_noise(x, 5, x, sched).data.dtype == np.float32


def test_trajectory_round_trip(sched):
    rng = np.random.default_rng(7)
    table = rng.standard_normal((51, 32, 32, 3))  # eps depends on t only
    x0 = rng.standard_normal((32, 32, 3))
    state = LatentState(x0, 0)
    for t in range(1, 51):
        state = ddim_invert_step(state, table[t], t, sched)
    for t in range(50, 0, -1):
        state = ddim_step(state, table[t], t, t - 1, sched)
    assert np.linalg.norm(state.data - x0) / np.linalg.norm(x0) < 1e-5


def test_cfg_combine_cases():
    c = np.array([1.0, 2.0])
    u = np.array([0.5, -1.0])
    assert np.array_equal(cfg_combine(c, u, GuidanceConfig(0.0)), c)
    assert np.array_equal(cfg_combine(c, c, 7.5), c)
    np.testing.assert_allclose(cfg_combine(c, u, GuidanceConfig(7.5)), [4.75, 24.5])
    with pytest.raises(ValueError):
        cfg_combine(c, np.zeros(3), 1.0)


def test_guidance_config_validation():
    with pytest.raises(ValueError):
        GuidanceConfig(-1.0)
    with pytest.raises(ValueError):
        GuidanceConfig(float("nan"))


@settings(max_examples=30, deadline=None)
@given(s=st.floats(0, 30), k=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_cfg_is_affine(s, k, seed):
    rng = np.random.default_rng(seed)
    c1, c2, u = rng.standard_normal((3, 6))
    lhs = cfg_combine(c1 + k * c2, u, s)
    rhs = cfg_combine(c1, u, s) + k * (1 + s) * c2
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_ladder():
    s = make_schedule(50)
    assert ddim_ladder(s) == list(range(51))
    lad = ddim_ladder(s, 10)
    assert lad[0] == 0 and lad[-1] == 50 and len(lad) == 11
