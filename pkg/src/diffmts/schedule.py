"""Noise schedules, the closed-form forward process and posterior coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

BETA_MAX = 0.999
DEFAULT_OFFSET = 0.008


@dataclass(frozen=True)
class ScheduleTable:
    """Per-step tables indexed by the diffusion step ``t``.

    All arrays have length ``T + 1``; index 0 holds the no-noise state
    (``beta = 0``, ``alpha = alpha_bar = 1``).
    """

    kind: str
    T: int
    s: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    def params(self) -> dict:
        return {"kind": self.kind, "T": self.T, "s": self.s}


def cosine_alpha_bar(T: int, s: float = DEFAULT_OFFSET) -> np.ndarray:
    """Unclipped ``f(t) / f(0)`` for t = 0..T."""
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + s) / (1.0 + s) * (math.pi / 2)) ** 2
    return f / f[0]


def make_schedule(kind: str = "cosine", T: int = 1000, s: float = DEFAULT_OFFSET) -> ScheduleTable:
    """Build a schedule table.

    ``kind`` is one of ``cosine`` (alpha_bar from the squared-cosine curve with
    offset ``s``), ``linear`` (linearly spaced betas) or ``reciprocal``
    (``beta_t = 1 / (T - t + 1)``, which makes alpha_bar fall linearly in t).
    Betas are clipped to ``BETA_MAX`` and alpha_bar is their running product.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ConfigError(f"schedule needs T >= 1, got {T!r}")
    T = int(T)
    if kind == "linear":
        # DDPM endpoints 1e-4..0.02 at T=1000, rescaled so other T keep the same total noise
        beta = np.linspace(1e-4, 0.02, T) * (1000.0 / T)
    elif kind == "reciprocal":
        t = np.arange(1, T + 1, dtype=np.float64)
        beta = 1.0 / (T - t + 1.0)
    elif kind == "cosine":
        if not s > 0:
            raise ConfigError(f"cosine offset s must be positive, got {s}")
        ab = cosine_alpha_bar(T, s)
        beta = 1.0 - ab[1:] / ab[:-1]
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    beta = np.minimum(beta, BETA_MAX)
    beta = np.concatenate([[0.0], beta])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    post = np.zeros(T + 1)
    post[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    for arr in (beta, alpha, alpha_bar, post):
        arr.setflags(write=False)
    return ScheduleTable(kind, T, float(s), beta, alpha, alpha_bar, post)


def _check_step(table: ScheduleTable, t, low: int = 1):
    t_arr = np.asarray(t)
    if t_arr.dtype.kind not in "iu" or np.any(t_arr < low) or np.any(t_arr > table.T):
        raise IndexError(f"diffusion step {t} outside [{low}, {table.T}]")
    return t_arr


def q_sample(x0, t, eps, table: ScheduleTable) -> np.ndarray:
    """Noisy sample ``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``.

    ``t`` may be a scalar or one step per leading-axis item; ``t = 0`` returns ``x0``.
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} differs from signal shape {x0.shape}")
    t_arr = _check_step(table, t, low=0)
    ab = table.alpha_bar[t_arr]
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    out = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return out.astype(x0.dtype, copy=False) if x0.dtype.kind == "f" else out


def posterior_coeffs(table: ScheduleTable, t: int) -> tuple[float, float, float]:
    """(1/sqrt(alpha_t), beta_t/sqrt(1 - ab_t), posterior variance) at step t."""
    _check_step(table, t)
    return (
        1.0 / math.sqrt(table.alpha[t]),
        table.beta[t] / math.sqrt(1.0 - table.alpha_bar[t]),
        float(table.posterior_var[t]),
    )
