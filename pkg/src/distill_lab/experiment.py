"""Experiment legs shared by the command line and the acceptance checks."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import _fixtures, distill, rgnv
from .config import ConfigError, ExperimentConfig
from .nncore import Condition, DenoiserParams, init_params, load_params, train
from .repfield import TextureField, init_field
from .scheduler import NoiseSchedule, make_schedule
from .toyworld import Pose, Scene, View, degrade_view, generate_scene, make_dataset, render_view


class MissingArtifactError(FileNotFoundError):
    pass


def schedule(cfg: ExperimentConfig, T: int) -> NoiseSchedule:
    return make_schedule(T, cfg.scheduler.kind)


def worker_count(default: int = 4) -> int:
    raw = os.environ.get("DISTILL_LAB_THREADS")
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"DISTILL_LAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def load_weights(cfg: ExperimentConfig) -> DenoiserParams:
    path = cfg.weights_path() or _fixtures.WEIGHTS
    if not path.exists():
        raise MissingArtifactError(f"denoiser weights not found: {path}")
    return load_params(path)


def run_train(cfg: ExperimentConfig, on_epoch: Callable[[int, float], None] | None = None):
    tc = cfg.train
    data = make_dataset(cfg.toyworld.train_scenes, cfg.toyworld.views_per_scene, cfg.toyworld.data_seed)
    params = init_params(cfg.nncore, tc.seed)
    return train(data, cfg.nncore, schedule(cfg, 1000), tc.epochs, tc.lr, tc.seed, momentum=tc.momentum,
                 batch_size=tc.batch_size, grad_clip=tc.grad_clip, params=params, on_epoch=on_epoch)


@dataclass
class Pair:
    scene: Scene
    reference: View
    truth: View
    coarse: View


def build_pair(cfg: ExperimentConfig, scene_seed: int | None = None, severity: float | None = None) -> Pair:
    tw = cfg.toyworld
    scene = generate_scene(tw.scene_seed if scene_seed is None else scene_seed)
    ref = render_view(scene, Pose.from_azimuth(tw.reference_azimuth))
    truth = render_view(scene, Pose.from_azimuth(tw.target_azimuth))
    coarse = degrade_view(truth, tw.severity if severity is None else severity, tw.degrade_seed)
    return Pair(scene, ref, truth, coarse)


ENHANCE_VARIANTS = ("reference", "coarse", "sdedit", "no_depth", "no_injection", "rgnv")


def run_enhance(params: DenoiserParams, cfg: ExperimentConfig, pair: Pair, seed: int,
                parallel: bool = False) -> dict[str, np.ndarray]:
    """Every variant's estimate of the target view, keyed by variant name."""
    rc = cfg.rgnv.config
    sched = schedule(cfg, rc.T)
    cls = pair.scene.class_id
    legs = {
        "sdedit": lambda: rgnv.sdedit_baseline(pair.coarse, Condition(pair.coarse.depth, cls), params, sched,
                                               cfg.rgnv.sdedit_strength, seed, rc.s),
        "no_depth": lambda: rgnv.ablation_no_depth(pair.reference, pair.coarse, params, sched, rc, cls),
        "no_injection": lambda: rgnv.ablation_no_injection(pair.reference, pair.coarse, params, sched, rc, cls),
        "rgnv": lambda: rgnv.enhance(pair.reference, pair.coarse, params, sched, rc, cls).image,
    }
    if parallel:
        with ThreadPoolExecutor(max_workers=min(worker_count(), len(legs))) as pool:
            futures = {k: pool.submit(f) for k, f in legs.items()}
            done = {k: f.result() for k, f in futures.items()}
    else:
        done = {k: f() for k, f in legs.items()}
    out = {"reference": pair.reference.image, "coarse": pair.coarse.image}
    out.update(done)
    return {k: out[k] for k in ENHANCE_VARIANTS}


def subject(cfg: ExperimentConfig, scene_seed: int | None = None) -> distill.Subject:
    tw = cfg.toyworld
    scene = generate_scene(tw.scene_seed if scene_seed is None else scene_seed)
    return distill.Subject.from_scene(scene, Pose.from_azimuth(tw.reference_azimuth))


def initial_field(cfg: ExperimentConfig, subj: distill.Subject) -> TextureField:
    return init_field(cfg.repfield.grid, cfg.repfield.init, subj.reference)


def run_coarse(params, cfg: ExperimentConfig, subj: distill.Subject, seed: int,
               log: distill.RunLog | None = None, on_iter=None) -> TextureField:
    dc = cfg.distill
    return distill.coarse_stage(subj, params, schedule(cfg, dc.coarse_T), dc.sds, dc.coarse_iters, seed,
                                field=initial_field(cfg, subj), log_rows=log, score_every=dc.score_every,
                                on_iter=on_iter)


def run_refine(params, cfg: ExperimentConfig, subj: distill.Subject, coarse: TextureField, seed: int,
               loss_kind: str | None = None, log: distill.RunLog | None = None, on_iter=None) -> TextureField:
    dc = cfg.distill
    kind = dc.loss_kind if loss_kind is None else loss_kind
    return distill.refine_stage(coarse, subj, params, schedule(cfg, dc.rgsd.T), dc.rgsd, dc.refine_iters,
                                seed + 1, kind, sds_cfg=_refine_sds(cfg), log_rows=log,
                                score_every=dc.score_every, on_iter=on_iter)


def _refine_sds(cfg: ExperimentConfig) -> distill.SdsConfig:
    # the refine-stage SDS baseline uses the refine guidance scale
    return replace(cfg.distill.sds, s=cfg.distill.rgsd.s)


def fixture_config_path() -> Path:
    return _fixtures.CONFIG
