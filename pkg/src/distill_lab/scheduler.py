"""Noise schedules and deterministic DDIM primitives.

Timesteps are integer indices ``t in {0, ..., T}`` with ``t = 0`` clean
data. The continuous time fed to the denoiser is ``t / T``.

Every update returns the dtype of its input tensor. Trajectories should be
carried in float64: near ``t = T`` the signal coefficient is ~1.6e-3 and a
float32 state cannot hold the clean image to 1e-5 relative accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

ScheduleKind = Literal["cosine", "linear"]

STATE_DTYPE = np.float64
_COSINE_SQUASH = 0.999
_ALPHA_FLOOR = 1e-3
_LINEAR_BETA = (1e-4, 0.02, 1000)


def cosine_alpha(u: np.ndarray | float) -> np.ndarray:
    """Signal coefficient of the cosine schedule at continuous time ``u``."""
    u = np.asarray(u, dtype=np.float64)
    return np.maximum(np.cos(0.5 * math.pi * _COSINE_SQUASH * u), _ALPHA_FLOOR)


def linear_alpha(u: np.ndarray | float) -> np.ndarray:
    """Signal coefficient of the continuous-time DDPM linear-beta schedule."""
    u = np.asarray(u, dtype=np.float64)
    b0, b1, n = _LINEAR_BETA
    log_abar = -n * (b0 * u + 0.5 * (b1 - b0) * u**2)
    return np.maximum(np.sqrt(np.exp(log_abar)), _ALPHA_FLOOR)


_ALPHA_FNS = {"cosine": cosine_alpha, "linear": linear_alpha}


@dataclass(frozen=True)
class NoiseSchedule:
    """The (alpha_t, sigma_t) ladder for ``T`` discrete steps.

    ``alphas`` and ``sigmas`` have length ``T + 1`` and are indexed by the
    timestep directly, so ``alphas[0] == 1`` and ``sigmas[0] == 0``.
    Coefficients are kept in float64; tensors built from them are float32.
    """

    T: int
    alphas: np.ndarray
    sigmas: np.ndarray
    kind: str = "cosine"

    def time(self, t: int) -> float:
        """Continuous time in [0, 1] handed to the denoiser."""
        return t / self.T

    def alpha_at(self, u: np.ndarray | float) -> np.ndarray:
        """Signal coefficient on the schedule's continuous curve."""
        return _ALPHA_FNS[self.kind](u)

    def check_t(self, t: int) -> None:
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")


def make_schedule(T: int, kind: ScheduleKind = "cosine") -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"schedule needs T >= 1, got {T}")
    try:
        fn = _ALPHA_FNS[kind]
    except KeyError:
        raise ValueError(f"unknown schedule kind {kind!r}") from None
    u = np.arange(T + 1, dtype=np.float64) / T
    alphas = fn(u)
    alphas[0] = 1.0
    sigmas = np.sqrt(np.clip(1.0 - alphas**2, 0.0, None))
    sigmas[0] = 0.0
    alphas.setflags(write=False)
    sigmas.setflags(write=False)
    return NoiseSchedule(T=T, alphas=alphas, sigmas=sigmas, kind=kind)


@dataclass(frozen=True)
class LatentState:
    """An image-shaped tensor paired with its timestep index."""

    data: np.ndarray
    t: int

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass(frozen=True)
class GuidanceConfig:
    s: float = 7.5

    def __post_init__(self) -> None:
        if not math.isfinite(self.s) or self.s < 0:
            raise ValueError(f"guidance scale must be finite and >= 0, got {self.s}")


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def add_noise(x0: LatentState | np.ndarray, t: int, eps: np.ndarray,
              sched: NoiseSchedule) -> LatentState:
    """Forward process sample ``alpha_t * x0 + sigma_t * eps``."""
    data = x0.data if isinstance(x0, LatentState) else np.asarray(x0)
    _same_shape(data, eps, "add_noise")
    sched.check_t(t)
    a, s = sched.alphas[t], sched.sigmas[t]
    return LatentState((a * data + s * eps).astype(data.dtype, copy=False), t)


def ddim_step(x_t: LatentState, eps_pred: np.ndarray, t: int, t_prev: int,
              sched: NoiseSchedule) -> LatentState:
    """Deterministic DDIM update from step ``t`` down to ``t_prev``."""
    if t_prev >= t:
        raise ValueError(f"ddim_step needs t_prev < t, got t={t}, t_prev={t_prev}")
    sched.check_t(t)
    sched.check_t(t_prev)
    _same_shape(x_t.data, eps_pred, "ddim_step")
    a, s = sched.alphas[t], sched.sigmas[t]
    a_prev, s_prev = sched.alphas[t_prev], sched.sigmas[t_prev]
    out = (a_prev / a) * (x_t.data - s * eps_pred) + s_prev * eps_pred
    return LatentState(out.astype(x_t.data.dtype, copy=False), t_prev)


def ddim_invert_step(x_prev: LatentState, eps_pred: np.ndarray, t: int,
                     sched: NoiseSchedule, t_prev: int | None = None) -> LatentState:
    """Deterministic DDIM inversion from ``t_prev`` (default ``t - 1``) up to ``t``."""
    t_prev = t - 1 if t_prev is None else t_prev
    if t_prev >= t:
        raise ValueError(f"ddim_invert_step needs t_prev < t, got t={t}, t_prev={t_prev}")
    sched.check_t(t)
    sched.check_t(t_prev)
    _same_shape(x_prev.data, eps_pred, "ddim_invert_step")
    a, s = sched.alphas[t], sched.sigmas[t]
    a_prev, s_prev = sched.alphas[t_prev], sched.sigmas[t_prev]
    out = (a / a_prev) * (x_prev.data - s_prev * eps_pred) + s * eps_pred
    return LatentState(out.astype(x_prev.data.dtype, copy=False), t)


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray,
                cfg: GuidanceConfig | float) -> np.ndarray:
    """Classifier-free guidance: ``(1 + s) * eps_cond - s * eps_uncond``."""
    _same_shape(eps_cond, eps_uncond, "cfg_combine")
    s = cfg.s if isinstance(cfg, GuidanceConfig) else GuidanceConfig(float(cfg)).s
    if s == 0:
        return eps_cond
    return (1.0 + s) * eps_cond - s * eps_uncond


def ddim_ladder(sched: NoiseSchedule, steps: int | None = None) -> list[int]:
    """Uniformly subsampled timesteps ``0 = t_0 < ... < t_k = T``."""
    steps = sched.T if steps is None else steps
    if not 1 <= steps <= sched.T:
        raise ValueError(f"ladder needs 1 <= steps <= {sched.T}, got {steps}")
    return sorted({int(round(v)) for v in np.linspace(0, sched.T, steps + 1)})
