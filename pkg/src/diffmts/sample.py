"""Conditional ancestral sampling."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import WindowSet, denormalize
from .errors import FormatError, ValidationError
from .model import denoise_forward
from .schedule import ScheduleTable, make_schedule, posterior_coeffs

SAMPLE_COLUMNS = ("sample_id", "channel", "t_index", "value", "condition")


@dataclass
class SampleRequest:
    count: int
    conditions: list
    seed: int = 0
    guidance_off: bool = False

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError(f"count must be >= 1, got {self.count}")
        c = np.asarray(self.conditions, dtype=np.float64).reshape(-1)
        if c.size == 1 and self.count > 1:
            c = np.repeat(c, self.count)
        if c.size != self.count:
            raise ValidationError(f"{self.count} samples requested but {c.size} conditions given")
        if not np.all(np.isfinite(c)) or np.any(c < 0) or np.any(c > 1):
            bad = c[~((c >= 0) & (c <= 1))]
            raise ValidationError(f"conditions must lie in [0, 1], got {bad.tolist()}")
        self.conditions = [float(v) for v in c]


@dataclass
class SampleResult:
    windows: np.ndarray  # de-normalized (N, C, L)
    normalized: np.ndarray
    conditions: np.ndarray
    forward_calls: int

    def as_windowset(self, channel_names: tuple = ()) -> WindowSet:
        return WindowSet(self.windows, self.conditions, channel_names=channel_names)


def reverse_step(x_t, t: int, eps_hat, table: ScheduleTable, noise=None) -> np.ndarray:
    """x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * noise.

    sigma_t is the square root of the posterior variance, which is zero at t = 1.
    """
    cx, ce, var = posterior_coeffs(table, t)
    mean = cx * (np.asarray(x_t) - ce * np.asarray(eps_hat))
    if noise is None or var == 0.0:
        return mean
    return mean + math.sqrt(var) * np.asarray(noise)


def table_for(ckpt: Checkpoint) -> ScheduleTable:
    s = ckpt.schedule
    return make_schedule(s["kind"], int(s["T"]), float(s["s"]))


def sample(ckpt: Checkpoint, request: SampleRequest, batch_size: int = 64, denoise=denoise_forward) -> SampleResult:
    """Draw ``request.count`` windows from noise by T reverse steps.

    Sample ``i`` uses its own generator seeded by ``(seed, i)`` for both the
    initial noise and the per-step noise, so results do not depend on how
    samples are grouped into batches. ``denoise`` is swappable for testing.
    """
    cfg = ckpt.model_config
    table = table_for(ckpt)
    shape = (cfg.in_channels, cfg.length)
    conds = np.asarray(request.conditions)
    if request.guidance_off:
        cfg = dataclasses.replace(cfg, mask_alpha=1.0)
    mode = "train" if request.guidance_off else "eval"
    dt = next(iter(ckpt.params.values())).dtype

    out = np.empty((request.count,) + shape)
    calls = 0
    for start in range(0, request.count, batch_size):
        ids = range(start, min(start + batch_size, request.count))
        rngs = [np.random.default_rng([request.seed, i]) for i in ids]
        mask_rng = np.random.default_rng([request.seed, start, 1]) if request.guidance_off else None
        x = np.stack([r.standard_normal(shape) for r in rngs])
        c = conds[list(ids)]
        batch_calls = 0
        for t in range(table.T, 0, -1):
            steps = np.full(len(rngs), t)
            eps_hat = denoise(ckpt.params, x.astype(dt), steps, c, cfg, mode, mask_rng)
            batch_calls += 1
            noise = np.stack([r.standard_normal(shape) for r in rngs]) if t > 1 else None
            x = reverse_step(x, t, eps_hat.astype(np.float64), table, noise)
        calls = max(calls, batch_calls)
        out[start : start + len(rngs)] = x
    raw = denormalize(out, ckpt.stats) if ckpt.stats is not None else out.copy()
    return SampleResult(raw, out, conds, calls)


def write_samples(result: SampleResult, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_COLUMNS)
        for i, (win, c) in enumerate(zip(result.windows, result.conditions)):
            for ch in range(win.shape[0]):
                for t, v in enumerate(win[ch]):
                    w.writerow([i, ch, t, repr(float(v)), repr(float(c))])


def read_samples(path) -> WindowSet:
    """Load a sample CSV back into a WindowSet (values as written)."""
    try:
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != SAMPLE_COLUMNS:
                raise FormatError(f"{path}: expected header {','.join(SAMPLE_COLUMNS)}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 5:
                    raise FormatError(f"{path}:{lineno}: expected 5 columns, found {len(row)}")
                try:
                    rows.append((int(row[0]), int(row[1]), int(row[2]), float(row[3]), float(row[4])))
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no samples")
    arr = np.array(rows)
    ids, chans, ts = (arr[:, k].astype(int) for k in range(3))
    N, C, L = ids.max() + 1, chans.max() + 1, ts.max() + 1
    if len(rows) != N * C * L:
        raise FormatError(f"{path}: {len(rows)} rows do not fill {N}x{C}x{L}")
    win = np.full((N, C, L), np.nan)
    win[ids, chans, ts] = arr[:, 3]
    cond = np.zeros(N)
    cond[ids] = arr[:, 4]
    if np.isnan(win).any():
        raise FormatError(f"{path}: duplicate or missing (sample, channel, t) entries")
    return WindowSet(win, cond)


def write_manifest(path, request: SampleRequest, ckpt_hash: str, ckpt: Checkpoint, extra: dict | None = None) -> None:
    doc = {
        "seed": request.seed,
        "count": request.count,
        "conditions": request.conditions,
        "guidance_off": request.guidance_off,
        "checkpoint_sha256": ckpt_hash,
        "schedule": ckpt.schedule,
        "shape": [ckpt.model_config.in_channels, ckpt.model_config.length],
    }
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
