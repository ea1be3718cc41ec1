"""Reference-guided novel view enhancement.

Both the reference image and a coarse novel view are DDIM-inverted under
their own depth maps. The reference branch is then sampled back while its
attention keys/values are recorded, and the coarse branch is sampled with
those keys/values injected at every matching step, which carries the
reference's colours and texture into the novel view.

Latent trajectories are float64 (see :mod:`distill_lab.scheduler`); the
denoiser itself runs in its parameter dtype.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .nncore import AttentionCache, Condition, DenoiserParams, forward
from .scheduler import (STATE_DTYPE, LatentState, NoiseSchedule, add_noise, cfg_combine,
                        ddim_invert_step, ddim_step)
from .toyworld import View, save_png


class MissingCacheError(KeyError):
    pass


@dataclass(frozen=True)
class RgnvConfig:
    T: int = 50
    l: int = 30
    s: float = 7.5
    record_trajectory: bool = True
    # step at or below which injection is active; None means from l down
    inject_from: int | None = None
    # invert all T steps and sample T-l plain steps before injecting
    full_inversion: bool = False

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not 0 <= self.l <= self.T:
            raise ValueError(f"need 0 <= l <= T, got l={self.l}, T={self.T}")
        if self.inject_from is not None and not 0 <= self.inject_from <= self.l:
            raise ValueError(f"inject_from must lie in [0, l], got {self.inject_from}")
        if not math.isfinite(self.s) or self.s < 0:
            raise ValueError(f"guidance scale must be finite and >= 0, got {self.s}")


@dataclass
class Trajectory:
    """States in visiting order, plus per-step caches and predicted noise.

    ``caches[t]`` holds the attention K/V (cond and uncond rows) evaluated at
    step ``t``; ``eps[t]`` the guided noise prediction made at step ``t``.
    """

    states: list[LatentState] = field(default_factory=list)
    caches: dict[int, AttentionCache] = field(default_factory=dict)
    eps: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def final(self) -> LatentState:
        return self.states[-1]

    @property
    def timesteps(self) -> list[int]:
        return [s.t for s in self.states]

    def state_at(self, t: int) -> LatentState:
        for s in self.states:
            if s.t == t:
                return s
        raise KeyError(f"trajectory has no state at step {t}")


UNCOND_KEEPS_DEPTH = True


def unconditional(cond: Condition, keep_depth: bool | None = None) -> Condition:
    """The guidance baseline for ``cond``: null class, with or without its depth."""
    keep = UNCOND_KEEPS_DEPTH if keep_depth is None else keep_depth
    return Condition(cond.depth if keep else np.zeros_like(cond.depth), None)


def guided_eps(x: np.ndarray, t: int, cond: Condition, params: DenoiserParams,
               sched: NoiseSchedule, s: float, inject: AttentionCache | None = None,
               keep_depth: bool | None = None) -> tuple[np.ndarray, AttentionCache]:
    """CFG-combined noise at step ``t``; conditional and null rows share one batch."""
    batch = np.stack([x, x])
    eps, cache = forward(batch, sched.time(t), [cond, unconditional(cond, keep_depth)], params, inject=inject)
    eps = eps.astype(STATE_DTYPE)
    cache.t = sched.time(t)
    return cfg_combine(eps[0], eps[1], s), cache


def invert(image: np.ndarray, cond: Condition, params: DenoiserParams, sched: NoiseSchedule,
           steps: int, s: float = 7.5, record: bool = True) -> Trajectory:
    """Run ``steps`` DDIM inversion steps from the clean image."""
    if not 0 <= steps <= sched.T:
        raise ValueError(f"cannot invert {steps} steps on a {sched.T}-step schedule")
    state = LatentState(np.asarray(image, dtype=STATE_DTYPE), 0)
    traj = Trajectory([state])
    for t in range(1, steps + 1):
        eps, cache = guided_eps(state.data, t, cond, params, sched, s)
        state = ddim_invert_step(state, eps, t, sched)
        traj.states.append(state)
        if record:
            traj.caches[t] = cache
            traj.eps[t] = eps
    if not record:
        traj.states = [traj.states[0], state]
    return traj


def sample(noisy: LatentState, cond: Condition, params: DenoiserParams, sched: NoiseSchedule,
           s: float = 7.5, ref_traj: Trajectory | None = None, inject_from: int | None = None,
           stop: int = 0) -> Trajectory:
    """DDIM sampling from ``noisy.t`` down to ``stop``.

    With ``ref_traj`` the reference keys/values recorded at step ``t`` replace
    this branch's own at every step ``t <= inject_from`` (default: all steps).
    """
    if stop > noisy.t:
        raise ValueError(f"stop step {stop} lies above the start step {noisy.t}")
    inject_from = noisy.t if inject_from is None else inject_from
    state = LatentState(np.asarray(noisy.data, dtype=STATE_DTYPE), noisy.t)
    traj = Trajectory([state])
    for t in range(noisy.t, stop, -1):
        inject = None
        if ref_traj is not None and t <= inject_from:
            try:
                inject = ref_traj.caches[t]
            except KeyError:
                raise MissingCacheError(f"reference trajectory has no attention cache at step {t}") from None
        eps, cache = guided_eps(state.data, t, cond, params, sched, s, inject=inject)
        traj.caches[t] = cache
        traj.eps[t] = eps
        state = ddim_step(state, eps, t, t - 1, sched)
        traj.states.append(state)
    return traj


def sample_with_injection(noisy: LatentState, cond: Condition, ref_traj: Trajectory,
                          params: DenoiserParams, sched: NoiseSchedule, cfg: RgnvConfig,
                          stop: int = 0) -> Trajectory:
    if noisy.t != cfg.l and not cfg.full_inversion:
        raise ValueError(f"injected sampling starts at l={cfg.l}, got a state at step {noisy.t}")
    inject_from = cfg.l if cfg.inject_from is None else cfg.inject_from
    return sample(noisy, cond, params, sched, cfg.s, ref_traj=ref_traj,
                  inject_from=inject_from, stop=stop)


@dataclass
class Enhancement:
    image: np.ndarray
    reference: Trajectory
    target: Trajectory
    reference_inversion: Trajectory
    target_inversion: Trajectory


def _branch(image: np.ndarray, cond: Condition, params, sched, cfg: RgnvConfig):
    if cfg.full_inversion:
        inv = invert(image, cond, params, sched, sched.T, cfg.s)
        pre = sample(inv.final, cond, params, sched, cfg.s, stop=cfg.l)
        return inv, pre.final, pre
    inv = invert(image, cond, params, sched, cfg.l, cfg.s)
    return inv, inv.final, None


def _join(pre: Trajectory | None, post: Trajectory) -> Trajectory:
    if pre is None:
        return post
    return Trajectory(pre.states + post.states[1:], {**pre.caches, **post.caches}, {**pre.eps, **post.eps})


def enhance(reference: View, coarse: View, params: DenoiserParams, sched: NoiseSchedule,
            cfg: RgnvConfig, class_id: int | None = None, *, use_depth: bool = True,
            use_injection: bool = True) -> Enhancement:
    """Enhance ``coarse`` with detail from ``reference``.

    Both branches use the same class token. ``use_depth=False`` and
    ``use_injection=False`` give the two ablations.
    """
    if reference.image.shape != coarse.image.shape:
        raise ValueError(f"reference {reference.image.shape} and coarse {coarse.image.shape} differ in shape")
    if sched.T != cfg.T:
        raise ValueError(f"schedule has T={sched.T} but the config asks for T={cfg.T}")
    cond_r = Condition(reference.depth, class_id)
    cond_c = Condition(coarse.depth, class_id)
    if not use_depth:
        cond_r, cond_c = cond_r.without_depth(), cond_c.without_depth()
    if cfg.l == 0 and not cfg.full_inversion:
        img = np.asarray(coarse.image, dtype=STATE_DTYPE)
        empty = Trajectory([LatentState(img, 0)])
        return Enhancement(img.copy(), empty, empty, empty, empty)

    ref_inv, ref_start, ref_pre = _branch(reference.image, cond_r, params, sched, cfg)
    tgt_inv, tgt_start, tgt_pre = _branch(coarse.image, cond_c, params, sched, cfg)
    ref_samp = sample(ref_start, cond_r, params, sched, cfg.s)
    if use_injection:
        tgt_samp = sample_with_injection(tgt_start, cond_c, ref_samp, params, sched, cfg)
    else:
        tgt_samp = sample(tgt_start, cond_c, params, sched, cfg.s)
    image = np.clip(tgt_samp.final.data, -1.0, 1.0)
    return Enhancement(image, _join(ref_pre, ref_samp), _join(tgt_pre, tgt_samp), ref_inv, tgt_inv)


def reconstruct(image: np.ndarray, cond: Condition, params: DenoiserParams, sched: NoiseSchedule,
                steps: int, s: float) -> np.ndarray:
    """Invert ``steps`` steps and sample straight back, no injection."""
    inv = invert(image, cond, params, sched, steps, s, record=False)
    return sample(inv.final, cond, params, sched, s).final.data


def sdedit_baseline(coarse: View, cond: Condition, params: DenoiserParams, sched: NoiseSchedule,
                    strength: float, seed: int, s: float = 7.5) -> np.ndarray:
    """Noise the coarse view to step ``ceil(strength * T)`` and sample it back."""
    if not 0.0 < strength <= 1.0:
        raise ValueError(f"strength must lie in (0, 1], got {strength}")
    k = max(1, math.ceil(strength * sched.T))
    rng = np.random.default_rng([seed, 0x5DED])
    x0 = np.asarray(coarse.image, dtype=STATE_DTYPE)
    noisy = add_noise(x0, k, rng.standard_normal(x0.shape), sched)
    out = sample(noisy, cond, params, sched, s).final.data
    return np.clip(out, -1.0, 1.0)


def ablation_no_depth(reference: View, coarse: View, params, sched, cfg: RgnvConfig,
                      class_id: int | None = None) -> np.ndarray:
    return enhance(reference, coarse, params, sched, cfg, class_id, use_depth=False).image


def ablation_no_injection(reference: View, coarse: View, params, sched, cfg: RgnvConfig,
                          class_id: int | None = None) -> np.ndarray:
    return enhance(reference, coarse, params, sched, cfg, class_id, use_injection=False).image


def dump_trajectory(traj: Trajectory, branch: str, out_dir: str | Path) -> list[Path]:
    """Write one PNG per recorded state as ``{branch}_{t:04}.png``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for state in traj.states:
        path = out / f"{branch}_{state.t:04}.png"
        save_png(state.data, path)
        paths.append(path)
    return paths


def with_l(cfg: RgnvConfig, l: int) -> RgnvConfig:
    return replace(cfg, l=l, inject_from=None)
