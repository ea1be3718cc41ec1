"""Score distillation, reference-guided state distillation and the
coarse/refine optimisation of a :class:`~distill_lab.repfield.TextureField`.

The denoiser is only ever evaluated here, never differentiated: every
gradient is pushed through :func:`~distill_lab.repfield.render_backward`.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

from . import metrics, rgnv
from .nncore import Condition, DenoiserParams
from .repfield import TextureField, init_field, render, render_backward
from .rgnv import RgnvConfig, Trajectory, guided_eps
from .scheduler import NoiseSchedule
from .toyworld import Pose, Scene, View, render_view

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "loss_kind", "tau_or_t", "pose_azimuth", "loss", "psnr_ref", "psnr_novel_mean")


class DistillationDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SdsConfig:
    s: float = 20.0
    t_range: tuple[float, float] = (0.2, 0.6)
    w_kind: Literal["constant", "sigma2"] = "constant"
    w_scale: float = 0.02
    lr: float = 0.5
    momentum: float = 0.9
    ref_weight: float = 1.0

    def __post_init__(self) -> None:
        lo, hi = self.t_range
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"t_range must satisfy 0 <= lo < hi <= 1, got {self.t_range}")
        if self.w_kind not in ("constant", "sigma2"):
            raise ValueError(f"unknown weighting {self.w_kind!r}")

    def weight(self, sigma: float) -> float:
        return self.w_scale * (sigma**2 if self.w_kind == "sigma2" else 1.0)


def _default_fixed_poses() -> tuple[Pose, Pose]:
    return (Pose.from_azimuth(math.pi / 2), Pose.from_azimuth(-math.pi / 2))


@dataclass(frozen=True)
class RgsdConfig:
    T: int = 20
    l: int = 12
    s: float = 7.5
    fixed_poses: tuple[Pose, ...] = field(default_factory=_default_fixed_poses)
    alternation: bool = True
    lr: float = 0.5
    momentum: float = 0.9
    ref_weight: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.l <= self.T:
            raise ValueError(f"need 0 < l <= T, got l={self.l}, T={self.T}")
        if len(self.fixed_poses) != 2:
            raise ValueError(f"exactly two fixed poses are required, got {len(self.fixed_poses)}")

    def rgnv(self) -> RgnvConfig:
        return RgnvConfig(T=self.T, l=self.l, s=self.s)


@dataclass
class Subject:
    """What distillation knows about an object: its reference view, class
    token and (fixed) geometry. Ground-truth views are used for scoring only."""

    scene: Scene
    reference: View
    class_id: int | None

    @classmethod
    def from_scene(cls, scene: Scene, reference_pose: Pose = Pose()) -> Subject:
        return cls(scene, render_view(scene, reference_pose), scene.class_id)

    def depth(self, pose: Pose) -> np.ndarray:
        return render_view(self.scene, pose).depth

    def condition(self, pose: Pose) -> Condition:
        return Condition(self.depth(pose), self.class_id)

    def ground_truth(self, pose: Pose) -> np.ndarray:
        return render_view(self.scene, pose).image


def eval_poses(n: int = 8) -> list[Pose]:
    """``n`` evenly spaced azimuths, offset by half a sector so none is the reference."""
    return [Pose.from_azimuth(-math.pi + (k + 0.5) * 2 * math.pi / n) for k in range(n)]


def novel_view_scores(field: TextureField, subject: Subject, poses: Sequence[Pose] | None = None):
    poses = eval_poses() if poses is None else poses
    ps, ss = [], []
    for p in poses:
        img, gt = render(field, p), subject.ground_truth(p)
        ps.append(metrics.psnr(img, gt))
        ss.append(metrics.ssim(img, gt))
    return float(np.mean(ps)), float(np.mean(ss))


def reference_psnr(field: TextureField, subject: Subject) -> float:
    return metrics.psnr(render(field, subject.reference.pose), subject.reference.image)


# -- per-step gradients -----------------------------------------------------

@dataclass
class SdsDiagnostics:
    t: int
    t_frac: float
    s: float
    t_range: tuple[float, float]
    weight: float
    eps: np.ndarray
    eps_hat: np.ndarray
    loss: float


def sds_update(field: TextureField, pose: Pose, params: DenoiserParams, sched: NoiseSchedule,
               cfg: SdsConfig, seed: int, cond: Condition,
               t: int | None = None, eps: np.ndarray | None = None) -> tuple[np.ndarray, SdsDiagnostics]:
    """One SDS gradient ``w(t) * alpha_t * J^T (eps_hat - eps)``.

    The ``alpha_t`` factor is ``d x_t / d x_0``. ``t`` and ``eps`` can be
    pinned for testing; otherwise they are drawn from ``seed``.
    """
    rng = np.random.default_rng([seed, 0x5D5])
    lo, hi = cfg.t_range
    if t is None:
        t = int(rng.integers(max(1, math.ceil(lo * sched.T)), max(1, math.floor(hi * sched.T)) + 1))
    x0 = render(field, pose)
    if eps is None:
        eps = rng.standard_normal(x0.shape)
    a, sg = sched.alphas[t], sched.sigmas[t]
    x_t = a * x0 + sg * eps
    eps_hat, _ = guided_eps(x_t, t, cond, params, sched, cfg.s)
    w = cfg.weight(sg)
    residual = eps_hat - eps
    grad = w * a * render_backward(field, pose, residual)
    diag = SdsDiagnostics(t=t, t_frac=sched.time(t), s=cfg.s, t_range=cfg.t_range, weight=w,
                          eps=eps, eps_hat=eps_hat, loss=float(np.mean(residual**2)))
    return grad, diag


def rgsd_targets(field: TextureField, subject: Subject, pose: Pose, params: DenoiserParams,
                 sched: NoiseSchedule, cfg: RgsdConfig, ref_traj: Trajectory | None = None,
                 cond: Condition | None = None) -> Trajectory:
    """Enhanced states ``x~_t`` and noises ``eps~_t`` for ``t = l, ..., 0``.

    The rendered view is inverted ``l`` steps and sampled back with the
    reference branch's attention injected. ``ref_traj`` (the reference
    branch's sampling pass) can be shared across calls. Everything returned
    is a plain array, detached from the field.
    """
    rcfg = cfg.rgnv()
    if ref_traj is None:
        ref_traj = reference_branch(subject, params, sched, cfg)
    cond = subject.condition(pose) if cond is None else cond
    x0 = render(field, pose)
    inv = rgnv.invert(x0, cond, params, sched, cfg.l, cfg.s, record=False)
    return rgnv.sample_with_injection(inv.final, cond, ref_traj, params, sched, rcfg)


def reference_branch(subject: Subject, params: DenoiserParams, sched: NoiseSchedule,
                     cfg: RgsdConfig) -> Trajectory:
    """Invert the reference ``l`` steps and sample it back, recording K/V."""
    cond = Condition(subject.reference.depth, subject.class_id)
    inv = rgnv.invert(subject.reference.image, cond, params, sched, cfg.l, cfg.s, record=False)
    return rgnv.sample(inv.final, cond, params, sched, cfg.s)


def rgsd_update(field: TextureField, pose: Pose, targets: Trajectory, tau: int,
                sched: NoiseSchedule) -> tuple[float, np.ndarray]:
    """Loss ``||alpha_tau x0 + sigma_tau eps~_tau - x~_tau||^2`` and its texel gradient."""
    try:
        target = targets.state_at(tau).data
    except KeyError:
        raise KeyError(f"targets have no state at tau={tau}") from None
    x0 = render(field, pose)
    a, sg = sched.alphas[tau], sched.sigmas[tau]
    if tau == 0:
        x_tau = x0
    else:
        if tau not in targets.eps:
            raise KeyError(f"targets have no predicted noise at tau={tau}")
        x_tau = a * x0 + sg * targets.eps[tau]
    diff = x_tau - target
    loss = float(np.sum(diff**2))
    return loss, 2.0 * a * render_backward(field, pose, diff)


def image_loss_update(field: TextureField, pose: Pose, enhanced_image: np.ndarray) -> tuple[float, np.ndarray]:
    diff = render(field, pose) - enhanced_image
    return float(np.sum(diff**2)), 2.0 * render_backward(field, pose, diff)


def reference_loss_update(field: TextureField, subject: Subject) -> tuple[float, np.ndarray]:
    return image_loss_update(field, subject.reference.pose, subject.reference.image)


# -- optimisation loops -----------------------------------------------------

class _Sgd:
    def __init__(self, field: TextureField, lr: float, momentum: float):
        self.field, self.lr, self.momentum = field, lr, momentum
        self.velocity = np.zeros_like(field.grid)

    def step(self, grad: np.ndarray, it: int) -> None:
        if not np.all(np.isfinite(grad)):
            raise DistillationDivergedError(f"non-finite field gradient at iteration {it}")
        self.velocity *= self.momentum
        self.velocity += grad
        self.field.grid -= self.lr * self.velocity
        self.field.project()


@dataclass
class RunLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, it: int, kind: str, tau_or_t: int, pose: Pose, loss: float,
            fld: TextureField, subject: Subject, score: bool = True) -> None:
        if not math.isfinite(loss):
            raise DistillationDivergedError(f"{kind} loss became non-finite at iteration {it}")
        psnr_ref = metrics.csv_psnr(reference_psnr(fld, subject)) if score else float("nan")
        psnr_nov = novel_view_scores(fld, subject)[0] if score else float("nan")
        self.rows.append(dict(iter=it, loss_kind=kind, tau_or_t=tau_or_t, pose_azimuth=pose.azimuth,
                              loss=loss, psnr_ref=psnr_ref, psnr_novel_mean=psnr_nov))

    def extend(self, other: RunLog) -> None:
        self.rows.extend(other.rows)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([r["iter"], r["loss_kind"], r["tau_or_t"], f"{r['pose_azimuth']:.6f}",
                            f"{r['loss']:.6g}", f"{r['psnr_ref']:.4f}", f"{r['psnr_novel_mean']:.4f}"])


def random_pose(rng: np.random.Generator) -> Pose:
    return Pose.from_azimuth(float(rng.uniform(-math.pi, math.pi)))


def coarse_stage(subject: Subject, params: DenoiserParams, sched: NoiseSchedule, cfg: SdsConfig,
                 iters: int, seed: int, field: TextureField | None = None,
                 log_rows: RunLog | None = None, score_every: int = 1,
                 on_iter: Callable[[int, TextureField], None] | None = None) -> TextureField:
    """Alternate reference-pose reconstruction steps with SDS at random poses.

    ``on_iter(it, field)`` is called after every update (for checkpoints).
    """
    fld = init_field() if field is None else field.copy()
    if iters == 0:
        return fld
    opt = _Sgd(fld, cfg.lr, cfg.momentum)
    rng = np.random.default_rng([seed, 0xC0A5])
    for it in range(iters):
        score = log_rows is not None and (it % score_every == 0 or it == iters - 1)
        if it % 2 == 0:
            loss, grad = reference_loss_update(fld, subject)
            grad = cfg.ref_weight * grad
            pose, tag, kind = subject.reference.pose, 0, "ref"
        else:
            pose = random_pose(rng)
            grad, diag = sds_update(fld, pose, params, sched, cfg, int(rng.integers(2**31)),
                                    subject.condition(pose))
            loss, tag, kind = diag.loss, diag.t, "sds"
        opt.step(grad, it)
        if log_rows is not None:
            log_rows.add(it, f"coarse_{kind}", tag, pose, loss, fld, subject, score)
        if on_iter is not None:
            on_iter(it, fld)
    return fld


RefineLoss = Literal["rgsd", "sds", "image"]


def refine_stage(field: TextureField, subject: Subject, params: DenoiserParams, sched: NoiseSchedule,
                 cfg: RgsdConfig, iters: int, seed: int, loss_kind: RefineLoss = "rgsd",
                 sds_cfg: SdsConfig | None = None, log_rows: RunLog | None = None,
                 score_every: int = 1,
                 on_iter: Callable[[int, TextureField], None] | None = None) -> TextureField:
    """Texture refinement with the chosen loss plus reference reconstruction.

    ``rgsd``: even iterations fit the precomputed ``x~_0`` of a fixed pose
    (``tau = 0``); odd iterations render a random pose, build fresh targets
    and fit ``x~_tau`` with ``tau`` uniform on ``{1, ..., l-1}``.
    ``sds``: SDS at a random pose every iteration.
    ``image``: L2 to a fresh enhanced image at a random pose every iteration.
    """
    if loss_kind not in ("rgsd", "sds", "image"):
        raise ValueError(f"unknown refine loss {loss_kind!r}")
    fld = field.copy()
    if iters == 0:
        return fld
    if sched.T != cfg.T:
        raise ValueError(f"schedule has T={sched.T} but the config asks for T={cfg.T}")
    opt = _Sgd(fld, cfg.lr, cfg.momentum)
    rng = np.random.default_rng([seed, 0x4EF1])
    sds_cfg = SdsConfig(s=cfg.s) if sds_cfg is None else sds_cfg
    ref_traj = reference_branch(subject, params, sched, cfg) if loss_kind != "sds" else None
    fixed_targets = []
    if loss_kind == "rgsd":
        for pose in cfg.fixed_poses:
            fixed_targets.append(rgsd_targets(fld, subject, pose, params, sched, cfg, ref_traj))
    for it in range(iters):
        score = log_rows is not None and (it % score_every == 0 or it == iters - 1)
        if loss_kind == "rgsd" and (it % 2 == 0 or not cfg.alternation):
            k = (it // 2) % 2
            pose, tau = cfg.fixed_poses[k], 0
            loss, grad = rgsd_update(fld, pose, fixed_targets[k], 0, sched)
            kind = "rgsd_fixed"
        elif loss_kind == "rgsd":
            pose = random_pose(rng)
            tau = int(rng.integers(1, cfg.l)) if cfg.l > 1 else 0
            targets = rgsd_targets(fld, subject, pose, params, sched, cfg, ref_traj)
            loss, grad = rgsd_update(fld, pose, targets, tau, sched)
            kind = "rgsd_random"
        elif loss_kind == "sds":
            pose = random_pose(rng)
            grad, diag = sds_update(fld, pose, params, sched, sds_cfg, int(rng.integers(2**31)),
                                    subject.condition(pose))
            loss, tau, kind = diag.loss, diag.t, "sds"
        else:
            pose = random_pose(rng)
            enhanced = np.clip(rgsd_targets(fld, subject, pose, params, sched, cfg, ref_traj).final.data, -1, 1)
            loss, grad = image_loss_update(fld, pose, enhanced)
            tau, kind = 0, "image"
        if cfg.ref_weight:
            grad = grad + cfg.ref_weight * reference_loss_update(fld, subject)[1]
        opt.step(grad, it)
        if log_rows is not None:
            log_rows.add(it, kind, tau, pose, loss, fld, subject, score)
        if on_iter is not None:
            on_iter(it, fld)
    return fld
