"""The acceptance checks, shared by ``distill-lab verify`` and the test suite.

Each ``check_*`` function returns a :class:`CheckResult`. Orderings are
asserted as orderings; thresholds come from ``fixtures/thresholds.json``.
"""
from __future__ import annotations

import hashlib
import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import experiment, metrics, rgnv
from ._fixtures import threshold
from .config import ExperimentConfig
from .distill import RunLog, SdsConfig, Subject, novel_view_scores, rgsd_targets, rgsd_update, sds_update
from .nncore import Condition, DenoiserConfig, DenoiserParams, backward, forward, init_params
from .repfield import TextureField, mean_gradient_magnitude, overlap_mask, render, render_backward
from .scheduler import LatentState, ddim_invert_step, ddim_step, make_schedule
from .toyworld import Pose, generate_scene, render_view

CRITERIA = {
    1: "scheduler round trip",
    2: "gradient oracles",
    3: "self-injection identity",
    4: "depth-conditioning ordering",
    5: "RGNV ablation ordering",
    6: "refine ordering rgsd > sds > coarse",
    7: "image-loss blur",
    8: "detachment",
    9: "determinism",
    10: "alternation schedule",
}


@dataclass
class CheckResult:
    id: int
    passed: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return CRITERIA[self.id]

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.id:>2} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- 1 ----------------------------------------------------------------------

def _mutant_invert_step(x_prev, eps, t, sched, t_prev=None):
    """``ddim_invert_step`` with the sign of the noise term flipped."""
    return ddim_invert_step(x_prev, -eps, t, sched, t_prev)


MUTATIONS: dict[str, Callable] = {"ddim_invert_sign": _mutant_invert_step}


@_timed
def check_roundtrip(invert_step: Callable = ddim_invert_step, n: int = 50, T: int = 50,
                    seed: int = 0, tol: float = 1e-5) -> CheckResult:
    """Invert then sample with a predictor that depends on t only."""
    sched = make_schedule(T)
    rng = np.random.default_rng(seed)
    pattern = rng.standard_normal((32, 32, 3))

    def eps_of(t):
        return math.sin(0.37 * t + 0.5) * pattern

    worst = 0.0
    for _ in range(n):
        x0 = rng.standard_normal((32, 32, 3))
        x = LatentState(x0, 0)
        for t in range(1, T + 1):
            x = invert_step(x, eps_of(t), t, sched)
        for t in range(T, 0, -1):
            x = ddim_step(x, eps_of(t), t, t - 1, sched)
        worst = max(worst, float(np.linalg.norm(x.data - x0) / np.linalg.norm(x0)))
    return CheckResult(1, worst <= tol, f"max relative error {worst:.2e} (tol {tol:.0e})",
                       values={"max_rel_error": worst})


# -- 2 ----------------------------------------------------------------------

def _rel(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


@_timed
def check_gradients(probes: int = 100, seed: int = 0, tol: float = 1e-3) -> CheckResult:
    """Central differences against every analytic gradient in the package."""
    rng = np.random.default_rng([seed, 2])
    worst: dict[str, float] = {}

    # denoiser, float64
    p = init_params(DenoiserConfig(base_channels=8), seed, zero_output=False).astype(np.float64)
    x = rng.standard_normal((2, 32, 32, 3))
    t = np.array([0.25, 0.7])
    depth = rng.uniform(-1, 1, (2, 32, 32))
    conds = [Condition(depth[0], 2), Condition(depth[1], None)]
    u = rng.standard_normal(x.shape)
    _, _, tape = forward(x, t, conds, p, record=True)
    grads = backward(u, tape, p)
    names = sorted(p.arrays)
    w = 0.0
    for _ in range(probes):
        name = names[rng.integers(len(names))]
        shape = p[name].shape
        idx = (int(rng.choice([2, 6])), int(rng.integers(shape[1]))) if name == "class_emb" else \
            tuple(int(rng.integers(s)) for s in shape)
        orig = p.arrays[name][idx]
        vals = []
        for d in (1e-6, -1e-6):
            p.arrays[name][idx] = orig + d
            vals.append(float(np.sum(u * forward(x, t, conds, p)[0])))
        p.arrays[name][idx] = orig
        w = max(w, _rel((vals[0] - vals[1]) / 2e-6, float(grads[name][idx]), 1e-6))
    worst["denoiser"] = w

    grid = rng.uniform(-0.8, 0.8, (48, 48, 3))
    fld = TextureField(grid)

    def fd_field(loss, idx, h=1e-5):
        orig = fld.grid[idx]
        fld.grid[idx] = orig + h
        up = loss()
        fld.grid[idx] = orig - h
        dn = loss()
        fld.grid[idx] = orig
        return (up - dn) / (2 * h)

    def texels():
        for _ in range(probes):
            r, c = rng.integers(12, 36, 2)
            yield int(r), int(c), int(rng.integers(3))

    pose = Pose.from_azimuth(1.3)
    up_img = rng.standard_normal((32, 32, 3))
    g = render_backward(fld, pose, up_img)
    worst["render_backward"] = max(_rel(fd_field(lambda: float(np.sum(up_img * render(fld, pose))), i), g[i], 1e-8)
                                   for i in texels())

    damped = init_params(DenoiserConfig(base_channels=8), seed + 1, zero_output=False)
    damped.arrays["conv_out.w"] *= np.float32(0.05)
    sched = make_schedule(20)
    subj = Subject.from_scene(generate_scene(seed + 5))
    cond = subj.condition(pose)
    g, diag = sds_update(fld, pose, damped, sched, SdsConfig(), seed, cond)
    frozen = diag.weight * sched.alphas[diag.t] * (diag.eps_hat - diag.eps)
    worst["sds_update"] = max(_rel(fd_field(lambda: float(np.sum(frozen * render(fld, pose))), i), g[i], 1e-8)
                              for i in texels())

    from .distill import RgsdConfig
    rcfg = RgsdConfig(l=4)
    targets = rgsd_targets(fld, subj, pose, damped, sched, rcfg)
    w = 0.0
    for tau in (0, 1, 3):
        _, g = rgsd_update(fld, pose, targets, tau, sched)
        w = max(w, max(_rel(fd_field(lambda: rgsd_update(fld, pose, targets, tau, sched)[0], i), g[i], 1e-6)
                       for i in texels()))
    worst["rgsd_update"] = w
    ok = all(v <= tol for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return CheckResult(2, ok, f"worst relative error: {detail}", values=worst)


# -- 3 ----------------------------------------------------------------------

@_timed
def check_self_injection(params: DenoiserParams, cfg: ExperimentConfig) -> CheckResult:
    pair = experiment.build_pair(cfg)
    rc = replace(cfg.rgnv.config, l=30, inject_from=None)
    ref = pair.reference
    cond = Condition(ref.depth, pair.scene.class_id)
    x = np.stack([ref.image, pair.coarse.image])
    tt = np.array([0.3, 0.6])
    plain, cache = forward(x, tt, [cond, cond], params)
    injected, _ = forward(x, tt, [cond, cond], params, inject=cache)
    bit_exact = bool(np.array_equal(plain, injected))
    out = rgnv.enhance(ref, ref, params, experiment.schedule(cfg, rc.T), rc, pair.scene.class_id).image
    err = metrics.mse(out, ref.image)
    limit = threshold("rgnv.self_enhance_mse_max")
    return CheckResult(3, bit_exact and err < limit,
                       f"bit-identical={bit_exact}, enhance(r, r) mse {err:.2e} (limit {limit:.2e})",
                       values={"bit_exact": bit_exact, "mse": err})


# -- 4 ----------------------------------------------------------------------

@_timed
def check_depth_ordering(params: DenoiserParams, cfg: ExperimentConfig, scenes: int = 20,
                         first_seed: int = 1000, share: float = 0.9) -> CheckResult:
    rc = cfg.rgnv.config
    sched = experiment.schedule(cfg, rc.T)
    wins, with_d, without_d = 0, [], []
    for k in range(scenes):
        sc = generate_scene(first_seed + k)
        v = render_view(sc, Pose())
        cond = Condition(v.depth, sc.class_id)
        a = metrics.mse(rgnv.reconstruct(v.image, cond, params, sched, rc.l, rc.s), v.image)
        b = metrics.mse(rgnv.reconstruct(v.image, cond.without_depth(), params, sched, rc.l, rc.s), v.image)
        with_d.append(a)
        without_d.append(b)
        wins += a < b
    frac = wins / scenes
    return CheckResult(4, frac >= share,
                       f"depth wins {wins}/{scenes}; mean mse {np.mean(with_d):.3e} vs {np.mean(without_d):.3e}",
                       values={"wins": wins, "mse_depth": float(np.mean(with_d)),
                               "mse_no_depth": float(np.mean(without_d))})


# -- 5 ----------------------------------------------------------------------

@_timed
def check_rgnv_ablation(params: DenoiserParams, cfg: ExperimentConfig, seed: int = 0) -> CheckResult:
    pair = experiment.build_pair(cfg)
    out = experiment.run_enhance(params, cfg, pair, seed)
    ps = {k: metrics.psnr(v, pair.truth.image) for k, v in out.items()}
    margins = {k: ps["rgnv"] - ps[k] for k in ("no_depth", "no_injection", "sdedit")}
    ok = all(m > 0 for m in margins.values())
    detail = f"rgnv {ps['rgnv']:.2f} dB; margins " + ", ".join(f"{k} {m:+.3f}" for k, m in margins.items())
    return CheckResult(5, ok, detail, values={"psnr": ps, "margins": margins})


# -- 6, 7, 8, 10 share one set of distillation runs -------------------------

@dataclass
class DistillRuns:
    subject: Subject
    coarse: TextureField
    refined: dict[str, TextureField]
    logs: dict[str, RunLog]
    scores: dict[str, tuple[float, float]]
    coarse_ref_psnr: float
    grads_zero: bool
    params_unchanged: bool
    seconds: float


def _digest(params: DenoiserParams) -> str:
    h = hashlib.sha256()
    for k in sorted(params.arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params.arrays[k]).tobytes())
    return h.hexdigest()


def distill_runs(params: DenoiserParams, cfg: ExperimentConfig, seed: int = 0,
                 kinds: tuple[str, ...] = ("rgsd", "sds", "image")) -> DistillRuns:
    t0 = time.perf_counter()
    params.zero_grads()
    before = _digest(params)
    subj = experiment.subject(cfg)
    coarse = experiment.run_coarse(params, cfg, subj, seed)
    refined, logs = {}, {}
    for kind in kinds:
        logs[kind] = RunLog()
        refined[kind] = experiment.run_refine(params, cfg, subj, coarse, seed, kind, log=logs[kind])
    scores = {"coarse": novel_view_scores(coarse, subj)}
    scores.update({k: novel_view_scores(f, subj) for k, f in refined.items()})
    ref_psnr = metrics.psnr(render(coarse, subj.reference.pose), subj.reference.image)
    return DistillRuns(subj, coarse, refined, logs, scores, ref_psnr,
                       grads_zero=all(not g.any() for g in params.grads.values()),
                       params_unchanged=_digest(params) == before, seconds=time.perf_counter() - t0)


def check_distill_ordering(runs: DistillRuns) -> CheckResult:
    p = {k: v[0] for k, v in runs.scores.items()}
    ok = p["rgsd"] > p["sds"] > p["coarse"]
    return CheckResult(6, ok, f"novel PSNR rgsd {p['rgsd']:.2f} / sds {p['sds']:.2f} / coarse {p['coarse']:.2f}"
                       f" (coarse reference {metrics.csv_psnr(runs.coarse_ref_psnr):.1f} dB)",
                       runs.seconds, values={"psnr": p, "coarse_ref_psnr": runs.coarse_ref_psnr})


def sharpness_mask(runs: DistillRuns) -> np.ndarray:
    from .distill import eval_poses
    return overlap_mask(list(eval_poses()) + [runs.subject.reference.pose], runs.coarse.G)


def check_image_blur(runs: DistillRuns) -> CheckResult:
    mask = sharpness_mask(runs)
    a = mean_gradient_magnitude(runs.refined["rgsd"].grid, mask)
    b = mean_gradient_magnitude(runs.refined["image"].grid, mask)
    return CheckResult(7, a > b, f"overlap sharpness rgsd {a:.4f} vs image {b:.4f}",
                       values={"rgsd": a, "image": b})


def check_detachment(runs: DistillRuns) -> CheckResult:
    ok = runs.grads_zero and runs.params_unchanged
    return CheckResult(8, ok, f"denoiser grads all zero={runs.grads_zero}, weights unchanged={runs.params_unchanged}")


def check_alternation(rows: list[dict], l: int, iters: int = 200) -> CheckResult:
    fixed = sum(1 for r in rows if r["loss_kind"] == "rgsd_fixed" and r["tau_or_t"] == 0)
    rand = sum(1 for r in rows if r["loss_kind"] == "rgsd_random" and 1 <= r["tau_or_t"] <= l - 1)
    ok = len(rows) == iters and fixed == rand == iters // 2
    return CheckResult(10, ok, f"{len(rows)} rows: {fixed} tau=0 fixed-pose, {rand} random with tau in 1..{l - 1}",
                       values={"fixed": fixed, "random": rand})


# -- 9 ----------------------------------------------------------------------

def _tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.suffix in (".csv", ".png")}


@_timed
def check_determinism(cfg: ExperimentConfig, seed: int = 0) -> CheckResult:
    from . import cli
    small = replace(cfg, distill=replace(cfg.distill, coarse_iters=6, refine_iters=4, score_every=2,
                                         checkpoint_every=2))
    with tempfile.TemporaryDirectory() as tmp:
        digests = []
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            cli.generate(small, out, seed)
            digests.append(_tree_digest(out))
    same = digests[0] == digests[1] and len(digests[0]) > 0
    return CheckResult(9, same, f"{len(digests[0])} CSV/PNG files, digests identical={same}")


# -- everything -------------------------------------------------------------

def run_all(params: DenoiserParams, cfg: ExperimentConfig, mutation: str | None = None,
            echo: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    invert_step = MUTATIONS[mutation] if mutation else ddim_invert_step
    results: list[CheckResult] = []

    def emit(r: CheckResult) -> None:
        results.append(r)
        if echo is not None:
            echo(r)

    emit(check_roundtrip(invert_step))
    emit(check_gradients())
    emit(check_self_injection(params, cfg))
    emit(check_depth_ordering(params, cfg))
    emit(check_rgnv_ablation(params, cfg))
    runs = distill_runs(params, cfg)
    emit(check_distill_ordering(runs))
    emit(check_image_blur(runs))
    emit(check_detachment(runs))
    emit(check_determinism(cfg))
    emit(check_alternation(runs.logs["rgsd"].rows, cfg.distill.rgsd.l, cfg.distill.refine_iters))
    return sorted(results, key=lambda r: r.id)
