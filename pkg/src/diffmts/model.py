"""Temporal decomposition-reconstruction UNet noise predictor.

Layout (default config, L = window length)::

    x_t (C, L) -> conv k7 -> 32 x L
    encoder  level 0: 32 -> 32,  skip @ L,    down k4/s2 -> L/2
             level 1: 32 -> 64,  skip @ L/2,  down k4/s2 -> L/4
             level 2: 64 -> 64,  skip @ L/4,  conv k3 (no resampling)
    bottleneck: avg/max pool split -> k1 fuse -> k1 QKV attention over time (+ residual)
    decoder  level 2: cat(64, 64) -> 64, upsample x2 + conv -> 64 @ L/2
             level 1: cat(64, 64) -> 64, upsample x2 + conv -> 32 @ L
             level 0: cat(32, 32) -> 32, conv -> 32
    head: conv k1 -> C

Timestep and condition embeddings enter the first conv block of every level
as a per-channel bias.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ShapeError, ValidationError

OMEGA_KEY = "omega_logit"
OMEGA_INIT = -2.2


@dataclass
class ModelConfig:
    in_channels: int = 14
    length: int = 48
    base_filters: int = 32
    channel_multipliers: tuple = (1, 2, 2)
    time_embed_dim: int = 128
    cond_embed_dim: int = 128
    attn_dim: int = 128
    mask_alpha: float = 0.1
    groups: int = 8
    noisy_kernel: int = 7
    pool_kernel: int = 3
    use_decomposition: bool = True
    use_attention: bool = True
    post_decoder_decomposition: bool = False

    def __post_init__(self):
        self.channel_multipliers = tuple(int(m) for m in self.channel_multipliers)
        self.validate()

    @property
    def levels(self) -> int:
        return len(self.channel_multipliers)

    @property
    def channels(self) -> list[int]:
        return [self.base_filters * m for m in self.channel_multipliers]

    def validate(self):
        dims = [self.in_channels, self.length, self.base_filters, self.time_embed_dim, self.cond_embed_dim, self.attn_dim]
        if min(dims) < 1 or not self.channel_multipliers or min(self.channel_multipliers) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.length % (2 ** (self.levels - 1)):
            raise ConfigError(f"length {self.length} not divisible by 2^{self.levels - 1}")
        if not 0.0 <= self.mask_alpha <= 1.0:
            raise ConfigError(f"mask_alpha must lie in [0, 1], got {self.mask_alpha}")
        if self.time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even (half sin, half cos)")

    def group_count(self, c: int) -> int:
        return self.groups if c >= self.groups and c % self.groups == 0 else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_multipliers"] = list(self.channel_multipliers)
        return d


def sinusoidal_encoding(t, dim: int) -> np.ndarray:
    """(N, dim) encoding: sines in the first half, cosines in the second."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


# parameters --------------------------------------------------------------------

def _shapes(cfg: ModelConfig) -> dict[str, tuple]:
    s: dict[str, tuple] = {}
    ch = cfg.channels
    emb_in = cfg.time_embed_dim + cfg.cond_embed_dim

    def conv(name, cout, cin, k):
        s[f"{name}.weight"] = (cout, cin, k)
        s[f"{name}.bias"] = (cout,)

    def fc(name, cout, cin):
        s[f"{name}.weight"] = (cout, cin)
        s[f"{name}.bias"] = (cout,)

    def block(name, cout, cin, emb):
        conv(f"{name}.conv", cout, cin, 3)
        if emb:
            fc(f"{name}.emb", cout, emb_in)
        s[f"{name}.norm.gamma"] = (cout,)
        s[f"{name}.norm.beta"] = (cout,)

    conv("embed.noisy", ch[0], cfg.in_channels, cfg.noisy_kernel)
    fc("embed.time.fc1", cfg.time_embed_dim, cfg.time_embed_dim)
    fc("embed.time.fc2", cfg.time_embed_dim, cfg.time_embed_dim)
    fc("embed.cond.fc1", cfg.cond_embed_dim, 1)
    fc("embed.cond.fc2", cfg.cond_embed_dim, cfg.cond_embed_dim)

    prev = ch[0]
    for i, c in enumerate(ch):
        block(f"enc.{i}.block1", c, prev, True)
        block(f"enc.{i}.block2", c, c, False)
        if prev != c:
            conv(f"enc.{i}.res", c, prev, 1)
        conv(f"enc.{i}.down", c, c, 4 if i < cfg.levels - 1 else 3)
        prev = c

    mid = ch[-1]
    if cfg.use_decomposition:
        conv("mid.decomp", mid, 2 * mid, 1)
    if cfg.use_attention:
        conv("mid.qkv", 3 * cfg.attn_dim, mid, 1)
        conv("mid.proj", mid, cfg.attn_dim, 1)

    h = mid
    for i in reversed(range(cfg.levels)):
        c = ch[i]
        block(f"dec.{i}.block1", c, h + c, True)
        block(f"dec.{i}.block2", c, c, False)
        conv(f"dec.{i}.res", c, h + c, 1)
        nxt = ch[i - 1] if i > 0 else ch[0]
        conv(f"dec.{i}.up", nxt, c, 3)
        h = nxt

    if cfg.post_decoder_decomposition:
        conv("post.decomp", h, 2 * h, 1)
    conv("head", cfg.in_channels, h, 1)
    s[OMEGA_KEY] = ()
    return s


def init_params(cfg: ModelConfig, seed: int | np.random.Generator = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """Fan-in uniform weights, unit/zero norm affines, zero output head."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in _shapes(cfg).items():
        if name == OMEGA_KEY:
            arr = np.array(OMEGA_INIT)
        elif name.endswith("norm.gamma"):
            arr = np.ones(shape)
        elif name.endswith("norm.beta") or name.startswith("head."):
            arr = np.zeros(shape)
        else:
            wshape = _shapes(cfg)[name.rsplit(".", 1)[0] + ".weight"]
            fan_in = int(np.prod(wshape[1:]))
            bound = 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = arr.astype(dtype)
    return params


def param_count(cfg: ModelConfig) -> int:
    return int(sum(np.prod(s, dtype=int) for s in _shapes(cfg).values()))


# forward pieces ---------------------------------------------------------------

def _conv(P, name, x, stride=1, padding="same"):
    return nc.conv1d(x, P[f"{name}.weight"], P[f"{name}.bias"], stride=stride, padding=padding)


def _fc(P, name, x):
    return nc.linear(x, P[f"{name}.weight"], P[f"{name}.bias"])


def _dtype(P):
    return P["head.weight"].dtype


def embed_noisy(P, x_t, cfg: ModelConfig) -> nc.Tensor:
    x_t = nc.as_tensor(x_t)
    if x_t.shape[-2] != cfg.in_channels:
        raise ShapeError(f"expected {cfg.in_channels} input channels, got {x_t.shape[-2]}")
    return _conv(P, "embed.noisy", x_t)


def embed_timestep(P, t) -> nc.Tensor:
    dim = P["embed.time.fc1.weight"].shape[1]
    pos = nc.Tensor(sinusoidal_encoding(t, dim).astype(_dtype(P)))
    return _fc(P, "embed.time.fc2", nc.gelu(_fc(P, "embed.time.fc1", pos)))


def embed_condition(P, x_c, mask_alpha: float = 0.0, rng: np.random.Generator | None = None) -> nc.Tensor:
    """FC embedding of scalar conditions; ``mask_alpha`` of the entries per item become N(0, 1)."""
    xc = np.asarray(x_c, dtype=np.float64).reshape(-1)
    if np.any(~np.isfinite(xc)) or np.any(xc < 0) or np.any(xc > 1):
        raise ValidationError(f"condition values must lie in [0, 1], got {xc.min()}..{xc.max()}")
    if not 0.0 <= mask_alpha <= 1.0:
        raise ValidationError(f"mask_alpha must lie in [0, 1], got {mask_alpha}")
    dt = _dtype(P)
    h = _fc(P, "embed.cond.fc2", nc.gelu(_fc(P, "embed.cond.fc1", nc.Tensor(xc[:, None].astype(dt)))))
    n, dim = h.shape
    k = int(round(mask_alpha * dim))
    if k == 0:
        return h
    if rng is None:
        raise ValidationError("condition masking needs a random generator")
    keep = np.ones((n, dim), dtype=dt)
    for i in range(n):
        keep[i, rng.permutation(dim)[:k]] = 0.0
    noise = rng.standard_normal((n, dim)).astype(dt)
    return h * keep + nc.Tensor(noise * (1.0 - keep))


def _block(P, name, h, emb, cfg):
    y = _conv(P, f"{name}.conv", h)
    if emb is not None:
        bias = _fc(P, f"{name}.emb", emb)
        y = y + nc.reshape(bias, bias.shape + (1,))
    y = nc.group_norm(y, cfg.group_count(y.shape[1]), P[f"{name}.norm.gamma"], P[f"{name}.norm.beta"])
    return nc.silu(y)


def encoder_forward(P, h, emb, level: int, cfg: ModelConfig):
    """Two conv blocks plus residual; returns (downsampled features, skip)."""
    if not 0 <= level < cfg.levels:
        raise ConfigError(f"encoder level {level} outside [0, {cfg.levels})")
    pre = f"enc.{level}"
    y = _block(P, f"{pre}.block1", h, emb, cfg)
    y = _block(P, f"{pre}.block2", y, None, cfg)
    res = _conv(P, f"{pre}.res", h) if f"{pre}.res.weight" in P else h
    skip = y + res
    if level < cfg.levels - 1:
        if skip.shape[-1] % 2:
            raise ShapeError(f"cannot halve odd length {skip.shape[-1]} at level {level}")
        return _conv(P, f"{pre}.down", skip, stride=2), skip
    return _conv(P, f"{pre}.down", skip), skip


def decompose(P, X, kernel: int = 3, name: str = "mid.decomp"):
    """Returns (trend, peak, fused) for bottleneck features ``X``."""
    trend = nc.pool1d(X, "avg", kernel)
    peak = nc.pool1d(X, "max", kernel)
    fused = _conv(P, name, nc.concat([trend, peak], axis=-2))
    return trend, peak, fused


def attention_weights(P, F):
    qkv = _conv(P, "mid.qkv", F)
    d = qkv.shape[-2] // 3
    q, k, v = qkv[:, :d], qkv[:, d : 2 * d], qkv[:, 2 * d :]
    scores = nc.matmul(nc.swapaxes(q, 1, 2), k) * (1.0 / math.sqrt(d))
    return nc.softmax(scores, axis=-1), v


def attention_block(P, F):
    """Attention over time with k=1 projections, without the residual."""
    a, v = attention_weights(P, F)
    out = nc.swapaxes(nc.matmul(a, nc.swapaxes(v, 1, 2)), 1, 2)
    return _conv(P, "mid.proj", out)


def reconstruct_attention(P, F):
    F = nc.as_tensor(F)
    squeeze = F.ndim == 2
    if squeeze:
        F = nc.reshape(F, (1,) + F.shape)
    out = F + attention_block(P, F)
    return nc.reshape(out, out.shape[1:]) if squeeze else out


def decoder_forward(P, h, skip, emb, level: int, cfg: ModelConfig):
    if h.shape[-1] != skip.shape[-1]:
        raise ShapeError(f"decoder level {level}: features length {h.shape[-1]} vs skip {skip.shape[-1]}")
    pre = f"dec.{level}"
    cat = nc.concat([h, skip], axis=-2)
    y = _block(P, f"{pre}.block1", cat, emb, cfg)
    y = _block(P, f"{pre}.block2", y, None, cfg)
    y = y + _conv(P, f"{pre}.res", cat)
    if level > 0:
        y = nc.upsample_nearest(y, 2)
    return _conv(P, f"{pre}.up", y)


def bottleneck(P, X, cfg: ModelConfig):
    F = decompose(P, X, cfg.pool_kernel)[2] if cfg.use_decomposition else X
    return reconstruct_attention(P, F) if cfg.use_attention else F


def forward(P, x_t, t, x_c, cfg: ModelConfig, train: bool = False, rng=None) -> nc.Tensor:
    """Predicted noise for a batch. ``P`` maps names to tensors or arrays."""
    P = {k: nc.as_tensor(v) for k, v in P.items()}
    dt = _dtype(P)
    if not isinstance(x_t, nc.Tensor) or x_t.dtype != dt:
        x_t = nc.Tensor(np.asarray(x_t.data if isinstance(x_t, nc.Tensor) else x_t, dtype=dt))
    squeeze = x_t.ndim == 2
    if squeeze:
        x_t = nc.reshape(x_t, (1,) + x_t.shape)
    B, C, L = x_t.shape
    if L % (2 ** (cfg.levels - 1)):
        raise ShapeError(f"length {L} not divisible by {2 ** (cfg.levels - 1)}")
    t = np.broadcast_to(np.asarray(t), (B,))
    x_c = np.broadcast_to(np.asarray(x_c, dtype=np.float64), (B,))

    h = embed_noisy(P, x_t, cfg)
    c_emb = embed_condition(P, x_c, cfg.mask_alpha if train else 0.0, rng)
    emb = nc.silu(nc.concat([embed_timestep(P, t), c_emb], axis=1))

    skips = []
    for level in range(cfg.levels):
        h, skip = encoder_forward(P, h, emb, level, cfg)
        skips.append(skip)
    h = bottleneck(P, h, cfg)
    for level in reversed(range(cfg.levels)):
        h = decoder_forward(P, h, skips[level], emb, level, cfg)
    if cfg.post_decoder_decomposition:
        h = decompose(P, h, cfg.pool_kernel, "post.decomp")[2]
    out = _conv(P, "head", h)
    return nc.reshape(out, out.shape[1:]) if squeeze else out


def denoise_forward(params, x_t, t, x_c, cfg: ModelConfig, mode: str = "eval", rng=None) -> np.ndarray:
    """Untaped forward pass returning a plain array."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    with nc.no_grad():
        return forward(params, x_t, t, x_c, cfg, train=mode == "train", rng=rng).data
