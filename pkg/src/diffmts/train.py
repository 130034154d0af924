"""Conditional diffusion training loop."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import numcore as nc
from .checkpoint import Checkpoint, save_checkpoint
from .data import WindowSet, normalize
from .errors import ConfigError, TrainingError, ValidationError
from .losses import KernelSpec, ada_mmd_loss
from .model import OMEGA_INIT, OMEGA_KEY, ModelConfig, forward, init_params
from .schedule import make_schedule, q_sample

HISTORY_COLUMNS = ("epoch", "l_noise", "l_mmd", "l_total", "omega")
# settings that do not affect the trained weights; kept out of checkpoints so
# reruns into another directory produce identical bytes
_RUNTIME_ONLY = ("checkpoint_path", "checkpoint_every", "log_every")


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


@dataclass
class TrainConfig:
    epochs: int = 70
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    T: int = 1000
    schedule: str = "cosine"
    schedule_s: float = 0.008
    mask_alpha: float = 0.1
    omega_mode: str = "learnable"
    fixed_omega: float = field(default_factory=lambda: _sigmoid(OMEGA_INIT))
    use_mmd: bool = True
    kernel_scales: tuple = (0.5, 1.0, 2.0)
    grad_clip: float = 1.0
    log_every: int = 1
    checkpoint_path: str | None = None
    checkpoint_every: int = 1
    max_steps: int | None = None
    dtype: str = "float32"

    def __post_init__(self):
        self.kernel_scales = tuple(float(s) for s in self.kernel_scales)
        self.validate()

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"epochs and batch_size must be >= 1, got {self.epochs}, {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.omega_mode not in ("learnable", "fixed"):
            raise ConfigError(f"omega_mode must be 'learnable' or 'fixed', got {self.omega_mode!r}")
        if not 0.0 <= self.fixed_omega <= 1.0:
            raise ConfigError(f"fixed_omega must lie in [0, 1], got {self.fixed_omega}")
        if not 0.0 <= self.mask_alpha <= 1.0:
            raise ConfigError(f"mask_alpha must lie in [0, 1], got {self.mask_alpha}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1 when set")
        KernelSpec(self.kernel_scales)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    steps: int


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_ss, train_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(train_ss)


def prepare(dataset: WindowSet, model_cfg: ModelConfig) -> WindowSet:
    if len(dataset) == 0:
        raise ValidationError("training set is empty")
    C, L = dataset.shape
    if (C, L) != (model_cfg.in_channels, model_cfg.length):
        raise ValidationError(f"windows are {C}x{L}, model expects {model_cfg.in_channels}x{model_cfg.length}")
    return dataset if dataset.stats is not None else normalize(dataset)


def init_checkpoint(dataset: WindowSet, model_cfg: ModelConfig, config: TrainConfig) -> Checkpoint:
    model_cfg = dataclasses.replace(model_cfg, mask_alpha=config.mask_alpha)
    ds = prepare(dataset, model_cfg)
    init_rng, train_rng = _streams(config.seed)
    params = init_params(model_cfg, init_rng, dtype=np.dtype(config.dtype))
    table = make_schedule(config.schedule, config.T, config.schedule_s)
    return Checkpoint(
        model_config=model_cfg,
        schedule=table.params(),
        params=params,
        rng_state=train_rng.bit_generator.state,
        stats=ds.stats,
        train_config=_stored_config(config),
    )


def draw_timesteps(rng: np.random.Generator, T: int, size: int) -> np.ndarray:
    """Independent uniform draws from {1, ..., T}."""
    return rng.integers(1, T + 1, size=size)


def train_step(params, x0, cond, table, cfg: ModelConfig, config: TrainConfig, rng: np.random.Generator):
    """Loss, breakdown and gradients for one batch; noise and t drawn per item."""
    B = x0.shape[0]
    dt = np.dtype(config.dtype)
    t = draw_timesteps(rng, table.T, B)
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(x0, t, eps, table).astype(dt)
    P = {k: nc.parameter(v, k) for k, v in params.items()}
    eps_hat = forward(P, x_t, t, cond, cfg, train=True, rng=rng)
    fixed = config.fixed_omega if config.omega_mode == "fixed" else None
    loss, br = ada_mmd_loss(
        eps.astype(dt), eps_hat, P[OMEGA_KEY], KernelSpec(config.kernel_scales), fixed, config.use_mmd
    )
    return loss, br, nc.backward(loss, P)


def _stored_config(config: TrainConfig) -> dict:
    return {k: v for k, v in config.to_dict().items() if k not in _RUNTIME_ONLY}


def train(
    dataset: WindowSet,
    model_cfg: ModelConfig,
    config: TrainConfig,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run the training loop and return the final checkpoint.

    Each epoch visits a fresh permutation of the windows in batches; every
    batch item gets its own timestep and noise draw. Windows are min-max
    normalized with their own statistics unless already normalized, and
    clamped to [-1, 1] at the diffusion input. ``resume`` continues from a
    saved checkpoint (parameters, Adam moments, RNG state, epoch counter).
    """
    if resume is not None:
        # the stored config describes the run being continued, e.g. a larger epoch budget
        ckpt = dataclasses.replace(resume, train_config=_stored_config(config))
    else:
        ckpt = init_checkpoint(dataset, model_cfg, config)
    cfg = ckpt.model_config
    if resume is not None and dataset.stats is None and resume.stats is not None:
        dataset = normalize(dataset, resume.stats)
    ds = prepare(dataset, cfg)
    table = make_schedule(ckpt.schedule["kind"], ckpt.schedule["T"], ckpt.schedule["s"])
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state

    X = np.clip(ds.windows, -1.0, 1.0)
    cond = ds.conditions
    N = len(ds)
    params, adam = dict(ckpt.params), ckpt.adam
    history = list(ckpt.history)
    steps = adam.step

    for epoch in range(ckpt.epoch + 1, config.epochs + 1):
        perm = rng.permutation(N)
        sums = np.zeros(3)
        n_batches = 0
        for b, start in enumerate(range(0, N, config.batch_size)):
            if config.max_steps is not None and steps >= config.max_steps:
                break
            idx = perm[start : start + config.batch_size]
            loss, br, grads = train_step(params, X[idx], cond[idx], table, cfg, config, rng)
            if not all(math.isfinite(v) for v in (br.l_noise, br.l_mmd, br.l_total)):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b}: "
                    f"l_noise={br.l_noise}, l_mmd={br.l_mmd}, l_total={br.l_total}, omega={br.omega}"
                )
            grads, _ = nc.clip_grad_norm(grads, config.grad_clip)
            params, adam = nc.adam_step(params, grads, adam, lr=config.lr)
            sums += (br.l_noise, br.l_mmd, br.l_total)
            n_batches += 1
            steps += 1
        if n_batches == 0:
            break
        means = sums / n_batches
        omega = _sigmoid(float(params[OMEGA_KEY])) if config.omega_mode == "learnable" else config.fixed_omega
        if not config.use_mmd:
            omega = 0.0
        row = {"epoch": epoch, "l_noise": means[0], "l_mmd": means[1], "l_total": means[2], "omega": omega}
        history.append({k: float(v) if k != "epoch" else int(v) for k, v in row.items()})
        ckpt = dataclasses.replace(
            ckpt, params=params, adam=adam, epoch=epoch, rng_state=rng.bit_generator.state, history=list(history)
        )
        if config.checkpoint_path and (epoch % config.checkpoint_every == 0 or epoch == config.epochs):
            save_checkpoint(ckpt, config.checkpoint_path)
        if on_epoch is not None and epoch % max(config.log_every, 1) == 0:
            on_epoch(history[-1])

    ckpt = dataclasses.replace(ckpt, params=params, adam=adam, history=list(history))
    return TrainResult(ckpt, history, steps)


def write_history(history: list, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in HISTORY_COLUMNS})


def read_history(path) -> list:
    with open(Path(path), newline="") as fh:
        return [
            {k: int(v) if k == "epoch" else float(v) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]
