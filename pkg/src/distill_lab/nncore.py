"""Depth-conditioned noise predictor with hand-written backpropagation.

Architecture (channel-last, ``C = base_channels``)::

    [x_t | depth] -conv-> h1 (H, C)
    h1 -conv/2 + emb-> h2 (H/2, 2C) -conv/2 + emb-> h3 (H/4, 2C)
    h3 -self-attention (residual)-> h4
    up(h4) | h2 -conv + emb-> h5 ; up(h5) | h1 -conv-> h6 -conv-> eps

``emb`` is a projected sinusoidal time feature plus a class embedding row;
the last row of the class table is the null token. All activations are
SiLU. The output convolution starts at zero so an untrained model predicts
zero noise.

The attention block exposes its keys and values as an :class:`AttentionCache`
and accepts a cache to use in place of its own keys and values, which is
all attention injection needs.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .scheduler import NoiseSchedule

log = logging.getLogger(__name__)

_TIME_FEATURES = 32


class WeightsFormatError(ValueError):
    """A weights file is not a valid DLW1 document."""


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 32
    base_channels: int = 16
    attn_heads: int = 2
    attn_resolution: int = 8
    cond_drop_prob: float = 0.1
    depth_drop_prob: float = 0.1
    class_drop_prob: float = 0.1
    num_classes: int = 6

    def __post_init__(self) -> None:
        if self.image_size % 4:
            raise ValueError(f"image_size must be divisible by 4, got {self.image_size}")
        if self.image_size % self.attn_resolution:
            raise ValueError("attn_resolution must divide image_size")
        if self.attn_resolution != self.image_size // 4:
            raise ValueError("attention runs after two stride-2 blocks, so "
                             f"attn_resolution must be image_size // 4 = {self.image_size // 4}")
        if min(self.base_channels, self.attn_heads, self.num_classes) < 1:
            raise ValueError("channel, head and class counts must be positive")
        if (2 * self.base_channels) % self.attn_heads:
            raise ValueError("attention width 2*base_channels must be divisible by attn_heads")
        for p in (self.cond_drop_prob, self.depth_drop_prob, self.class_drop_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"drop probabilities must lie in [0, 1], got {p}")

    @property
    def null_class(self) -> int:
        return self.num_classes


@dataclass
class Condition:
    """Depth map in [-1, 1] plus a class token (``None`` means the null token)."""

    depth: np.ndarray
    class_id: int | None = None

    def __post_init__(self) -> None:
        self.depth = np.clip(np.asarray(self.depth), -1.0, 1.0)

    @classmethod
    def null(cls, size: int) -> Condition:
        return cls(np.zeros((size, size)), None)

    def without_depth(self) -> Condition:
        return Condition(np.zeros_like(self.depth), self.class_id)


@dataclass
class AttentionCache:
    """Keys and values of the attention block, each ``(N, heads, tokens, head_dim)``."""

    k: np.ndarray
    v: np.ndarray
    t: float | None = None

    def __getitem__(self, idx) -> AttentionCache:
        return AttentionCache(self.k[idx], self.v[idx], self.t)


@dataclass
class DenoiserParams:
    config: DenoiserConfig
    arrays: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def dtype(self) -> np.dtype:
        return self.arrays["conv_in.w"].dtype

    def astype(self, dtype) -> DenoiserParams:
        return DenoiserParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self) -> DenoiserParams:
        return self.astype(self.dtype)

    def zero_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def equal(self, other: DenoiserParams) -> bool:
        return (self.arrays.keys() == other.arrays.keys()
                and all(np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()))


def param_shapes(cfg: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    c, d = cfg.base_channels, 2 * cfg.base_channels
    return {
        "conv_in.w": (3, 3, 4, c), "conv_in.b": (c,),
        "down1.w": (3, 3, c, d), "down1.b": (d,),
        "down2.w": (3, 3, d, d), "down2.b": (d,),
        "temb.w": (_TIME_FEATURES, d), "temb.b": (d,),
        "class_emb": (cfg.num_classes + 1, d),
        "attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
        "up1.w": (3, 3, 2 * d, d), "up1.b": (d,),
        "up2.w": (3, 3, d + c, c), "up2.b": (c,),
        "conv_out.w": (3, 3, c, 3), "conv_out.b": (3,),
    }


def init_params(cfg: DenoiserConfig, seed: int, zero_output: bool = True) -> DenoiserParams:
    """LeCun-uniform weights, zero biases; the output conv is zero unless asked otherwise."""
    rng = np.random.default_rng([seed, 0x1417])
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in = int(np.prod(shape[:-1]))
        if name == "class_emb":
            fan_in = shape[1]
        bound = math.sqrt(3.0 / fan_in)
        arrays[name] = rng.uniform(-bound, bound, shape).astype(np.float32)
    if zero_output:
        arrays["conv_out.w"][:] = 0.0
    return DenoiserParams(cfg, arrays)


# -- layers -----------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid(x)


def silu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    s = _sigmoid(x)
    return dy * s * (1.0 + x * (1.0 - s))


def _im2col(x: np.ndarray, stride: int) -> np.ndarray:
    n = x.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    # (N, Ho, Wo, Cin, 3, 3) -> (N*Ho*Wo, 3*3*Cin), matching w.reshape(9*Cin, Cout)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1), (ho, wo)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """3x3 convolution with zero padding 1; returns output and the column buffer."""
    cols, (ho, wo) = _im2col(x, stride)
    out = cols @ w.reshape(-1, w.shape[-1]) + b
    return out.reshape(x.shape[0], ho, wo, -1), cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, x_shape: tuple[int, ...],
                    w: np.ndarray, stride: int = 1, need_dx: bool = True):
    n, ho, wo, cout = dout.shape
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    cin = x_shape[3]
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(n, ho, wo, 3, 3, cin)
    dxp = np.zeros((n, x_shape[1] + 2, x_shape[2] + 2, cin), dtype=dout.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += dcols[:, :, :, ki, kj]
    return dxp[:, 1:-1, 1:-1], dw, db


def upsample2(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dy: np.ndarray) -> np.ndarray:
    n, h, w, c = dy.shape
    return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def time_features(t: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Sinusoidal features of continuous time ``t in [0, 1]``."""
    half = _TIME_FEATURES // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    arg = 1000.0 * np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1).astype(dtype)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, l, d = x.shape
    return x.reshape(n, l, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    n, h, l, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, l, h * hd)


# -- forward / backward -----------------------------------------------------

@dataclass
class Tape:
    """Activations recorded by a forward pass, consumed by :func:`backward`."""

    values: dict[str, object]
    injected: bool


def _prepare_batch(x, t, cond, size: int, dtype):
    x = np.asarray(x.data if hasattr(x, "data") else x, dtype=dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    n = x.shape[0]
    if x.shape[1:] != (size, size, 3):
        raise ValueError(f"expected (N, {size}, {size}, 3) input, got {x.shape}")
    conds = [cond] * n if isinstance(cond, Condition) else list(cond)
    if len(conds) != n:
        raise ValueError(f"got {len(conds)} conditions for a batch of {n}")
    depth = np.stack([np.asarray(c.depth, dtype=dtype) for c in conds])
    if depth.shape != (n, size, size):
        raise ValueError(f"depth maps must be ({size}, {size}), got {depth.shape[1:]}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    return x, t, conds, depth, single


def forward(x, t, cond: Condition | Sequence[Condition], params: DenoiserParams,
            inject: AttentionCache | None = None, record: bool = False):
    """Predict noise for ``x`` at continuous time ``t``.

    ``x`` is ``(H, W, 3)`` or a batch ``(N, H, W, 3)``; ``cond`` is one
    condition or one per batch item. Returns ``(eps, cache)`` and, with
    ``record=True``, also the :class:`Tape` needed by :func:`backward`.
    When ``inject`` is given its keys and values replace the block's own;
    queries always come from ``x``.
    """
    cfg = params.config
    p = params.arrays
    dtype = params.dtype
    x, t, conds, depth, single = _prepare_batch(x, t, cond, cfg.image_size, dtype)
    n = x.shape[0]
    ids = np.array([cfg.null_class if c.class_id is None else int(c.class_id) for c in conds])
    if ids.min() < 0 or ids.max() > cfg.null_class:
        raise ValueError(f"class ids must lie in [0, {cfg.num_classes}] or be None")

    x_in = np.concatenate([x, depth[..., None]], axis=-1)
    a1, cols1 = conv2d(x_in, p["conv_in.w"], p["conv_in.b"])
    h1 = silu(a1)

    tf = time_features(t, dtype)
    ae = tf @ p["temb.w"] + p["temb.b"]
    emb = silu(ae) + p["class_emb"][ids]
    e4 = emb[:, None, None, :]

    a2, cols2 = conv2d(h1, p["down1.w"], p["down1.b"], stride=2)
    a2 = a2 + e4
    h2 = silu(a2)
    a3, cols3 = conv2d(h2, p["down2.w"], p["down2.b"], stride=2)
    a3 = a3 + e4
    h3 = silu(a3)

    r = h3.shape[1]
    heads = cfg.attn_heads
    tok = h3.reshape(n, r * r, -1)
    q = _split_heads(tok @ p["attn.wq"], heads)
    k_own = _split_heads(tok @ p["attn.wk"], heads)
    v_own = _split_heads(tok @ p["attn.wv"], heads)
    cache = AttentionCache(k_own, v_own)
    if inject is not None:
        if inject.k.shape != k_own.shape or inject.v.shape != v_own.shape:
            raise ValueError(f"injected K/V shape {inject.k.shape} does not match {k_own.shape}")
        k, v = inject.k.astype(dtype, copy=False), inject.v.astype(dtype, copy=False)
    else:
        k, v = k_own, v_own
    scale = 1.0 / math.sqrt(q.shape[-1])
    s = (q @ k.transpose(0, 1, 3, 2)) * dtype.type(scale)
    s = s - s.max(axis=-1, keepdims=True)
    att = np.exp(s)
    att = att / att.sum(axis=-1, keepdims=True)
    o = _merge_heads(att @ v)
    h4 = tok + o @ p["attn.wo"]
    h4 = h4.reshape(h3.shape)

    u1 = np.concatenate([upsample2(h4), h2], axis=-1)
    a5, cols5 = conv2d(u1, p["up1.w"], p["up1.b"])
    a5 = a5 + e4
    h5 = silu(a5)
    u2 = np.concatenate([upsample2(h5), h1], axis=-1)
    a6, cols6 = conv2d(u2, p["up2.w"], p["up2.b"])
    h6 = silu(a6)
    out, cols7 = conv2d(h6, p["conv_out.w"], p["conv_out.b"])

    eps = out[0] if single else out
    if single:
        cache = cache[0:1]
    if not record:
        return eps, cache
    tape = Tape(dict(
        single=single, n=n, ids=ids, x_in=x_in.shape, cols1=cols1, a1=a1, h1=h1,
        tf=tf, ae=ae, cols2=cols2, a2=a2, h2=h2, cols3=cols3, a3=a3, h3=h3,
        tok=tok, q=q, k=k, v=v, att=att, o=o, scale=scale,
        u1=u1.shape, cols5=cols5, a5=a5, u2=u2.shape, cols6=cols6, a6=a6, h6=h6, cols7=cols7,
    ), injected=inject is not None)
    return eps, cache, tape


def backward(loss_grad: np.ndarray, tape: Tape | None, params: DenoiserParams) -> dict[str, np.ndarray]:
    """Exact parameter gradients of ``sum(loss_grad * eps)`` for a recorded forward."""
    if tape is None or not isinstance(tape, Tape):
        raise ValueError("backward needs the tape from forward(..., record=True)")
    a = tape.values
    p = params.arrays
    cfg = params.config
    dtype = params.dtype
    g = np.asarray(loss_grad, dtype=dtype)
    if a["single"]:
        g = g[None]
    grads: dict[str, np.ndarray] = {}

    dh6, grads["conv_out.w"], grads["conv_out.b"] = conv2d_backward(g, a["cols7"], a["h6"].shape, p["conv_out.w"])
    da6 = silu_backward(a["a6"], dh6)
    du2, grads["up2.w"], grads["up2.b"] = conv2d_backward(da6, a["cols6"], a["u2"], p["up2.w"])
    d = p["down1.w"].shape[-1]
    dh5 = upsample2_backward(du2[..., :d])
    dh1 = du2[..., d:].copy()
    da5 = silu_backward(a["a5"], dh5)
    demb = da5.sum(axis=(1, 2))
    du1, grads["up1.w"], grads["up1.b"] = conv2d_backward(da5, a["cols5"], a["u1"], p["up1.w"])
    dh4 = upsample2_backward(du1[..., :d])
    dh2 = du1[..., d:].copy()

    n = a["n"]
    heads = cfg.attn_heads
    dh4 = dh4.reshape(n, -1, d)
    tok = a["tok"]
    grads["attn.wo"] = np.einsum("nld,nle->de", a["o"], dh4)
    do = _split_heads(dh4 @ p["attn.wo"].T, heads)
    datt = do @ a["v"].transpose(0, 1, 3, 2)
    dv = a["att"].transpose(0, 1, 3, 2) @ do
    ds = a["att"] * (datt - np.sum(datt * a["att"], axis=-1, keepdims=True))
    ds = ds * dtype.type(a["scale"])
    dq = ds @ a["k"]
    dk = ds.transpose(0, 1, 3, 2) @ a["q"]
    dq_m = _merge_heads(dq)
    grads["attn.wq"] = np.einsum("nld,nle->de", tok, dq_m)
    dtok = dh4 + dq_m @ p["attn.wq"].T
    if tape.injected:
        # injected K/V are constants of this forward
        grads["attn.wk"] = np.zeros_like(p["attn.wk"])
        grads["attn.wv"] = np.zeros_like(p["attn.wv"])
    else:
        dk_m, dv_m = _merge_heads(dk), _merge_heads(dv)
        grads["attn.wk"] = np.einsum("nld,nle->de", tok, dk_m)
        grads["attn.wv"] = np.einsum("nld,nle->de", tok, dv_m)
        dtok = dtok + dk_m @ p["attn.wk"].T + dv_m @ p["attn.wv"].T
    dh3 = dtok.reshape(a["h3"].shape)

    da3 = silu_backward(a["a3"], dh3)
    demb = demb + da3.sum(axis=(1, 2))
    dh2_b, grads["down2.w"], grads["down2.b"] = conv2d_backward(da3, a["cols3"], a["h2"].shape, p["down2.w"], stride=2)
    dh2 = dh2 + dh2_b
    da2 = silu_backward(a["a2"], dh2)
    demb = demb + da2.sum(axis=(1, 2))
    dh1_b, grads["down1.w"], grads["down1.b"] = conv2d_backward(da2, a["cols2"], a["h1"].shape, p["down1.w"], stride=2)
    dh1 = dh1 + dh1_b
    da1 = silu_backward(a["a1"], dh1)
    _, grads["conv_in.w"], grads["conv_in.b"] = conv2d_backward(da1, a["cols1"], a["x_in"], p["conv_in.w"], need_dx=False)

    dcls = np.zeros_like(p["class_emb"])
    np.add.at(dcls, a["ids"], demb)
    grads["class_emb"] = dcls
    dae = silu_backward(a["ae"], demb)
    grads["temb.w"] = a["tf"].T @ dae
    grads["temb.b"] = dae.sum(axis=0)
    return grads


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 0.02
    momentum: float = 0.9
    batch_size: int = 16
    grad_clip: float = 1.0
    seed: int = 0


def train(dataset: Sequence[tuple], cfg: DenoiserConfig, sched: NoiseSchedule,
          epochs: int, lr: float, seed: int, *, momentum: float = 0.9, batch_size: int = 16,
          grad_clip: float = 1.0, params: DenoiserParams | None = None,
          on_epoch: Callable[[int, float], None] | None = None) -> tuple[DenoiserParams, list[float]]:
    """Fit the noise-prediction objective with SGD + momentum.

    ``dataset`` holds ``(View, class_id)`` pairs. Time is drawn uniformly
    from (0, 1] on the schedule's continuous curve, so the model serves any
    DDIM ladder of the same kind. Conditioning is dropped (null class and
    zero depth) with ``cfg.cond_drop_prob``; independently, depth alone and
    the class alone are dropped with ``cfg.depth_drop_prob`` and
    ``cfg.class_drop_prob``, so class-only and depth-only prediction are
    learned too. Returns the parameters and the mean loss of every epoch.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng([seed, 0x7EA1])
    params = init_params(cfg, seed) if params is None else params.copy()
    images = np.stack([v.image for v, _ in dataset]).astype(np.float32)
    depths = np.stack([v.depth for v, _ in dataset]).astype(np.float32)
    classes = np.array([c for _, c in dataset])
    velocity = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    losses = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(dataset))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            nb = len(idx)
            u = 1.0 - rng.random(nb)
            alpha = sched.alpha_at(u)
            sigma = np.sqrt(1.0 - alpha**2)
            eps = rng.standard_normal((nb,) + images.shape[1:]).astype(np.float32)
            x_t = (alpha[:, None, None, None] * images[idx] + sigma[:, None, None, None] * eps).astype(np.float32)
            drop = rng.random(nb) < cfg.cond_drop_prob
            drop_depth = drop | (rng.random(nb) < cfg.depth_drop_prob)
            drop_class = drop | (rng.random(nb) < cfg.class_drop_prob)
            conds = [Condition(np.zeros_like(depths[i]) if dd else depths[i], None if dc else int(classes[i]))
                     for i, dc, dd in zip(idx, drop_class, drop_depth)]
            pred, _, tape = forward(x_t, u, conds, params, record=True)
            diff = pred - eps
            loss = float(np.mean(diff.astype(np.float64) ** 2))
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"training loss became non-finite in epoch {epoch}")
            grads = backward(2.0 * diff / diff.size, tape, params)
            norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
            clip = grad_clip / norm if grad_clip and norm > grad_clip else 1.0
            for name, g in grads.items():
                vel = velocity[name]
                vel *= momentum
                vel += g * clip
                params.arrays[name] -= np.float32(lr) * vel
            total += loss * nb
            count += nb
        epoch_loss = total / count
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(f"training loss became non-finite in epoch {epoch}")
        losses.append(epoch_loss)
        log.debug("epoch %d loss %.5f", epoch, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    return params, losses


# -- DLW1 weights files -----------------------------------------------------

_MAGIC = b"DLW1"
_VERSION = 1
_META = "meta.config"


def save_params(params: DenoiserParams, path: str | Path) -> None:
    cfg = params.config
    meta = np.array([cfg.image_size, cfg.base_channels, cfg.attn_heads, cfg.attn_resolution,
                     cfg.num_classes, cfg.cond_drop_prob, cfg.depth_drop_prob, cfg.class_drop_prob],
                    dtype=np.float32)
    arrays = {_META: meta, **params.arrays}
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightsFormatError(f"weights file truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def load_params(path: str | Path) -> DenoiserParams:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != _MAGIC:
        raise WeightsFormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    version, count = struct.unpack("<II", r.take(8, "header"))
    if version != _VERSION:
        raise WeightsFormatError(f"unsupported weights version {version}")
    arrays: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", r.take(2, f"name length of array {i}"))
        name = r.take(nlen, f"name of array {i}").decode("utf-8")
        (ndim,) = struct.unpack("<B", r.take(1, f"array '{name}'"))
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"array '{name}'"))
        size = int(np.prod(dims)) if ndim else 1
        data = r.take(4 * size, f"array '{name}'")
        arrays[name] = np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(r.buf):
        raise WeightsFormatError(f"{len(r.buf) - r.pos} trailing bytes after the last array")
    if _META not in arrays:
        raise WeightsFormatError(f"weights file has no '{_META}' array")
    m = arrays.pop(_META)
    cfg = DenoiserConfig(image_size=int(m[0]), base_channels=int(m[1]), attn_heads=int(m[2]),
                         attn_resolution=int(m[3]), num_classes=int(m[4]),
                         cond_drop_prob=round(float(m[5]), 6), depth_drop_prob=round(float(m[6]), 6),
                         class_drop_prob=round(float(m[7]), 6))
    expected = param_shapes(cfg)
    if set(arrays) != set(expected):
        raise WeightsFormatError(f"array names {sorted(arrays)} do not match the architecture")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise WeightsFormatError(f"array '{name}' has shape {arrays[name].shape}, expected {shape}")
    return DenoiserParams(cfg, {name: arrays[name] for name in expected})
