"""Noise-estimation loss, kernel MMD and their weighted combination."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ShapeError, ValidationError


@dataclass(frozen=True)
class KernelSpec:
    """Mixture of RBF kernels ``mean_s exp(-d^2 / (2 (s h)^2))``.

    ``bandwidth`` is either ``"median"`` (h = median pairwise distance of the
    pooled sample, recomputed per call and held constant for gradients) or a
    positive number used as h directly.
    """

    scales: tuple = (0.5, 1.0, 2.0)
    bandwidth: object = "median"

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not self.scales or min(self.scales) <= 0:
            raise ConfigError(f"kernel scales must be positive, got {self.scales}")
        if self.bandwidth != "median" and not (isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0):
            raise ConfigError(f"bandwidth must be 'median' or a positive number, got {self.bandwidth!r}")


@dataclass(frozen=True)
class LossBreakdown:
    l_noise: float
    l_mmd: float
    l_total: float
    omega: float

    def to_dict(self) -> dict:
        return asdict(self)


def noise_mse(eps, eps_hat) -> nc.Tensor:
    eps, eps_hat = nc.as_tensor(eps), nc.as_tensor(eps_hat)
    if eps.shape != eps_hat.shape:
        raise ShapeError(f"noise shapes differ: {eps.shape} vs {eps_hat.shape}")
    return nc.mean(nc.square(eps_hat - eps))


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    z = np.concatenate([x, y], axis=0).astype(np.float64)
    sq = np.sum(z * z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)
    iu = np.triu_indices(len(z), k=1)
    if iu[0].size == 0:
        return 1.0
    h = float(np.median(np.sqrt(d2[iu])))
    return h if h > 0 and np.isfinite(h) else 1.0


def _flat(x) -> nc.Tensor:
    x = nc.as_tensor(x)
    if x.ndim == 0 or x.shape[0] == 0:
        raise ValidationError("MMD sample sets must be non-empty")
    return nc.reshape(x, (x.shape[0], -1))


def _kernel_mean(a: nc.Tensor, b: nc.Tensor, inv_two_sigma2: list[float]) -> nc.Tensor:
    diff = nc.reshape(a, (a.shape[0], 1, a.shape[1])) - nc.reshape(b, (1, b.shape[0], b.shape[1]))
    d2 = nc.tsum(nc.square(diff), axis=2)
    k = None
    for c in inv_two_sigma2:
        term = nc.exp(d2 * (-c))
        k = term if k is None else k + term
    return nc.mean(k) * (1.0 / len(inv_two_sigma2))


def mmd(n, m, kernel: KernelSpec = KernelSpec()) -> nc.Tensor:
    """Biased (V-statistic) squared MMD between sample sets ``n`` and ``m``."""
    n, m = _flat(n), _flat(m)
    if n.shape[1] != m.shape[1]:
        raise ShapeError(f"sample dimensions differ: {n.shape[1]} vs {m.shape[1]}")
    h = median_bandwidth(n.data, m.data) if kernel.bandwidth == "median" else float(kernel.bandwidth)
    coefs = [1.0 / (2.0 * (s * h) ** 2) for s in kernel.scales]
    knn = _kernel_mean(n, n, coefs)
    kmn = _kernel_mean(m, n, coefs)
    kmm = _kernel_mean(m, m, coefs)
    return knn - kmn * 2.0 + kmm


def ada_mmd_loss(eps, eps_hat, omega_logit, kernel: KernelSpec = KernelSpec(), fixed_omega: float | None = None, use_mmd: bool = True):
    """``(1 - w) * mse + w * mmd`` with ``w = sigmoid(omega_logit)``.

    ``fixed_omega`` pins w to a constant (no gradient to the logit); with
    ``use_mmd=False`` the MMD term is skipped and the loss is the plain MSE.
    Returns the loss tensor and a float breakdown.
    """
    l_noise = noise_mse(eps, eps_hat)
    if not use_mmd:
        val = float(l_noise.data)
        return l_noise, LossBreakdown(val, 0.0, val, 0.0)
    l_mmd = mmd(eps, eps_hat, kernel)
    if fixed_omega is not None:
        if not 0.0 <= fixed_omega <= 1.0:
            raise ConfigError(f"fixed omega must lie in [0, 1], got {fixed_omega}")
        omega = nc.Tensor(np.asarray(fixed_omega, dtype=l_noise.dtype))
    else:
        logit = nc.as_tensor(omega_logit)
        if not np.all(np.isfinite(logit.data)):
            raise ValidationError("omega logit must be finite")
        omega = nc.sigmoid(logit)
    total = l_noise * (1.0 - omega) + l_mmd * omega
    return total, LossBreakdown(float(l_noise.data), float(l_mmd.data), float(total.data), float(omega.data))
