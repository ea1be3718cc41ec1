import numpy as np
import pytest

from distill_lab.nncore import Condition
from distill_lab.rgnv import (MissingCacheError, RgnvConfig, Trajectory, ablation_no_injection, dump_trajectory,
                              enhance, invert, reconstruct, sample, sdedit_baseline, unconditional)
from distill_lab.scheduler import LatentState, make_schedule
from distill_lab.toyworld import Pose, degrade_view, generate_scene, render_view

SCHED = make_schedule(10)
CFG = RgnvConfig(T=10, l=6)


@pytest.fixture(scope="module")
def views():
    sc = generate_scene(3)
    ref = render_view(sc, Pose())
    coarse = degrade_view(render_view(sc, Pose.from_azimuth(0.8)), 0.7, 1)
    return sc, ref, coarse


def test_config_validation():
    for bad in (dict(l=60), dict(l=-1), dict(T=0), dict(s=-1.0), dict(s=float("nan")), dict(inject_from=40)):
        with pytest.raises(ValueError):
            RgnvConfig(**bad)


def test_zero_steps_returns_coarse(views, damped_params):
    sc, ref, coarse = views
    out = enhance(ref, coarse, damped_params, SCHED, RgnvConfig(T=10, l=0), sc.class_id)
    assert np.array_equal(out.image, coarse.image)


def test_trajectory_bookkeeping(views, damped_params):
    sc, ref, _ = views
    cond = Condition(ref.depth, sc.class_id)
    inv = invert(ref.image, cond, damped_params, SCHED, 6)
    assert inv.timesteps == list(range(7)) and sorted(inv.caches) == list(range(1, 7))
    back = sample(inv.final, cond, damped_params, SCHED)
    assert back.timesteps == list(range(6, -1, -1))
    assert back.final.data.dtype == np.float64
    with pytest.raises(ValueError):
        invert(ref.image, cond, damped_params, SCHED, 11)


def test_self_enhancement_equals_reconstruction(views, damped_params):
    sc, ref, _ = views
    out = enhance(ref, ref, damped_params, SCHED, CFG, sc.class_id)
    rec = reconstruct(ref.image, Condition(ref.depth, sc.class_id), damped_params, SCHED, CFG.l, CFG.s)
    assert np.array_equal(out.image, np.clip(rec, -1, 1))


def test_injection_matters(views, damped_params):
    sc, ref, coarse = views
    with_inj = enhance(ref, coarse, damped_params, SCHED, CFG, sc.class_id).image
    without = ablation_no_injection(ref, coarse, damped_params, SCHED, CFG, sc.class_id)
    assert not np.array_equal(with_inj, without)
    plain = reconstruct(coarse.image, Condition(coarse.depth, sc.class_id), damped_params, SCHED, CFG.l, CFG.s)
    assert np.array_equal(without, np.clip(plain, -1, 1))


def test_missing_cache(views, damped_params):
    sc, ref, _ = views
    cond = Condition(ref.depth, sc.class_id)
    state = LatentState(ref.image.astype(np.float64), 4)
    with pytest.raises(MissingCacheError):
        sample(state, cond, damped_params, SCHED, ref_traj=Trajectory([state]))


def test_unconditional_branch():
    c = Condition(np.full((4, 4), 0.5), 3)
    u = unconditional(c)
    assert u.class_id is None and np.array_equal(u.depth, c.depth)
    assert not unconditional(c, keep_depth=False).depth.any()


def test_sdedit(views, damped_params):
    sc, _, coarse = views
    cond = Condition(coarse.depth, sc.class_id)
    a = sdedit_baseline(coarse, cond, damped_params, SCHED, 0.5, 4)
    assert np.array_equal(a, sdedit_baseline(coarse, cond, damped_params, SCHED, 0.5, 4))
    assert not np.array_equal(a, sdedit_baseline(coarse, cond, damped_params, SCHED, 0.5, 5))
    with pytest.raises(ValueError):
        sdedit_baseline(coarse, cond, damped_params, SCHED, 0.0, 4)


def test_shape_mismatch(views, damped_params):
    sc, ref, coarse = views
    small = type(coarse)(coarse.image[:16, :16], coarse.depth[:16, :16], coarse.pose)
    with pytest.raises(ValueError):
        enhance(ref, small, damped_params, SCHED, CFG, sc.class_id)


def test_dump_trajectory(views, damped_params, tmp_path):
    sc, ref, coarse = views
    out = enhance(ref, coarse, damped_params, SCHED, CFG, sc.class_id)
    paths = dump_trajectory(out.target, "target", tmp_path)
    assert [p.name for p in paths] == [f"target_{t:04}.png" for t in range(6, -1, -1)]
