"""Acceptance criteria 1-10 against the committed fixtures.

Each test records a PASS/FAIL line, printed in the terminal summary.
"""
import pytest

from distill_lab import acceptance as A
from distill_lab._fixtures import CONFIG, threshold
from distill_lab.config import load_config
from distill_lab.experiment import load_weights


@pytest.fixture(scope="module")
def cfg():
    return load_config(CONFIG)


@pytest.fixture(scope="module")
def params(cfg):
    return load_weights(cfg)


@pytest.fixture(scope="module")
def runs(params, cfg):
    return A.distill_runs(params, cfg)


def record(log, result, budget=None):
    line = result.line()
    if budget is not None and result.seconds >= budget:
        line += f" [over the {budget:.0f}s budget]"
    log.append(line)
    assert result.passed, line
    if budget is not None:
        assert result.seconds < budget, line


def test_c1_scheduler_round_trip(acceptance_log):
    record(acceptance_log, A.check_roundtrip(), budget=5)


def test_c1_mutation_is_caught():
    assert not A.check_roundtrip(A.MUTATIONS["ddim_invert_sign"]).passed


def test_c2_gradient_oracles(acceptance_log):
    record(acceptance_log, A.check_gradients(probes=100), budget=60)


def test_c3_self_injection(acceptance_log, params, cfg):
    record(acceptance_log, A.check_self_injection(params, cfg))


def test_c4_depth_ordering(acceptance_log, params, cfg):
    record(acceptance_log, A.check_depth_ordering(params, cfg, scenes=20), budget=180)


def test_c5_rgnv_ablations(acceptance_log, params, cfg):
    res = A.check_rgnv_ablation(params, cfg)
    record(acceptance_log, res)
    assert all(m > 0 for m in res.values["margins"].values())


def test_c6_refine_ordering(acceptance_log, runs):
    record(acceptance_log, A.check_distill_ordering(runs), budget=600)
    assert runs.coarse_ref_psnr >= threshold("distill.coarse_ref_psnr_min")


def test_c7_image_loss_blur(acceptance_log, runs):
    record(acceptance_log, A.check_image_blur(runs))


def test_c8_detachment(acceptance_log, runs):
    record(acceptance_log, A.check_detachment(runs))


def test_c9_determinism(acceptance_log, cfg):
    record(acceptance_log, A.check_determinism(cfg))


def test_c10_alternation(acceptance_log, runs, cfg):
    assert cfg.distill.refine_iters == 200 and cfg.distill.rgsd.T == 20 and cfg.distill.rgsd.l == 12
    record(acceptance_log, A.check_alternation(runs.logs["rgsd"].rows, cfg.distill.rgsd.l, 200))
