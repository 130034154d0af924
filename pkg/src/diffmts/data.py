"""Turbofan-style trajectory ingestion, windowing and normalization.

Text contract (one row per cycle, whitespace or comma separated)::

    unit cycle setting1 setting2 setting3 s1 ... s21

Sensors 1, 5, 6, 10, 16, 18 and 19 are flat in the standard turbofan corpus
and are dropped, leaving 14 channels.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError, ValidationError

N_SENSORS = 21
N_SETTINGS = 3
DROPPED_SENSORS = (1, 5, 6, 10, 16, 18, 19)
RUL_CAP = 125.0
SUPPORTED_LENGTHS = (24, 48, 96)

_SPLIT = re.compile(r"[,\s]+")


@dataclass
class TrajectorySet:
    """Run-to-failure trajectories; ``readings[i]`` is (cycles, channels)."""

    units: list
    readings: list
    channel_names: tuple

    def __post_init__(self):
        self.units = [int(u) for u in self.units]
        self.readings = [np.asarray(r, dtype=np.float64) for r in self.readings]
        self.channel_names = tuple(self.channel_names)
        if len(self.units) != len(self.readings):
            raise ValidationError("one readings array per unit required")
        if len(set(self.units)) != len(self.units):
            raise ValidationError("unit ids must be unique")
        for u, r in zip(self.units, self.readings):
            if r.ndim != 2 or r.shape[1] != len(self.channel_names) or r.shape[0] == 0:
                raise ValidationError(f"unit {u}: readings shape {r.shape} does not match {len(self.channel_names)} channels")
            if not np.all(np.isfinite(r)):
                raise ValidationError(f"unit {u}: non-finite reading")

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    @property
    def lengths(self) -> dict:
        return {u: r.shape[0] for u, r in zip(self.units, self.readings)}


@dataclass(frozen=True)
class NormStats:
    """Per-channel min and max used for the [-1, 1] transform."""

    lo: np.ndarray
    hi: np.ndarray

    def to_dict(self) -> dict:
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["lo"], dtype=np.float64), np.asarray(d["hi"], dtype=np.float64))


@dataclass
class WindowSet:
    """Fixed-length windows ``(N, C, L)`` with one condition per window.

    ``stats`` is set once the windows are normalized. ``unit_ids`` and
    ``end_cycles`` record where each window came from (-1 when synthetic).
    """

    windows: np.ndarray
    conditions: np.ndarray
    stats: NormStats | None = None
    unit_ids: np.ndarray | None = None
    end_cycles: np.ndarray | None = None
    channel_names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        if self.windows.ndim != 3:
            raise ValidationError(f"windows must be (N, C, L), got shape {self.windows.shape}")
        n = self.windows.shape[0]
        self.conditions = np.asarray(self.conditions, dtype=np.float64).reshape(-1)
        if self.conditions.shape[0] != n:
            raise ValidationError(f"{n} windows but {self.conditions.shape[0]} conditions")
        if n and (np.any(self.conditions < 0) or np.any(self.conditions > 1)):
            raise ValidationError("conditions must lie in [0, 1]")
        self.unit_ids = np.full(n, -1) if self.unit_ids is None else np.asarray(self.unit_ids, dtype=np.int64)
        self.end_cycles = np.full(n, -1) if self.end_cycles is None else np.asarray(self.end_cycles, dtype=np.int64)
        if not self.channel_names:
            self.channel_names = tuple(f"c{i + 1}" for i in range(self.windows.shape[1]))

    def __len__(self):
        return self.windows.shape[0]

    @property
    def shape(self) -> tuple:
        return self.windows.shape[1:]

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(self.windows[idx], self.conditions[idx], self.stats, self.unit_ids[idx], self.end_cycles[idx], self.channel_names)


def _parse_rows(path: Path) -> list[tuple[int, list[float]]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        cells = _SPLIT.split(line)
        try:
            rows.append((lineno, [float(c) for c in cells]))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
    return rows


def load_cmapss(path, n_sensors: int = N_SENSORS, drop=DROPPED_SENSORS) -> TrajectorySet:
    """Parse a trajectory file, dropping the listed (1-based) sensors.

    ``n_sensors`` and ``drop`` default to the turbofan layout; synthetic
    files with other channel counts pass their own layout (see the JSON
    sidecar written by :func:`write_cmapss`).
    """
    rows = _parse_rows(path)
    if not rows:
        raise FormatError(f"{path}: file contains no rows")
    width = 2 + N_SETTINGS + n_sensors
    keep = [i for i in range(1, n_sensors + 1) if i not in set(drop)]
    cols = [2 + N_SETTINGS + i - 1 for i in keep]

    units, readings, current, expected = [], [], None, 1
    for lineno, vals in rows:
        if len(vals) != width:
            raise FormatError(f"{path}:{lineno}: expected {width} columns, found {len(vals)}")
        if not all(np.isfinite(vals)):
            raise ParseError(f"{path}:{lineno}: non-finite value")
        unit, cycle = vals[0], vals[1]
        if unit != int(unit) or cycle != int(cycle):
            raise FormatError(f"{path}:{lineno}: unit and cycle must be integers")
        unit, cycle = int(unit), int(cycle)
        if unit != current:
            if unit in units:
                raise FormatError(f"{path}:{lineno}: rows of unit {unit} are not contiguous")
            units.append(unit)
            readings.append([])
            current, expected = unit, 1
        if cycle != expected:
            raise FormatError(f"{path}:{lineno}: unit {unit} expected cycle {expected}, found {cycle}")
        expected += 1
        readings[-1].append([vals[c] for c in cols])
    return TrajectorySet(units, [np.array(r) for r in readings], tuple(f"s{i}" for i in keep))


def write_cmapss(trajs: TrajectorySet, path, sidecar: dict | None = None) -> Path:
    """Write trajectories in the text contract; returns the sidecar path.

    Fourteen-channel sets fill the retained sensor slots and write zeros into
    the dropped ones so the file reloads with the default layout. Other
    channel counts use ``n_sensors = channels`` with nothing dropped.
    """
    path = Path(path)
    C = trajs.n_channels
    if C == N_SENSORS - len(DROPPED_SENSORS):
        n_sensors, drop = N_SENSORS, list(DROPPED_SENSORS)
    else:
        n_sensors, drop = C, []
    slots = [i - 1 for i in range(1, n_sensors + 1) if i not in drop]
    lines = []
    for u, r in zip(trajs.units, trajs.readings):
        full = np.zeros((r.shape[0], n_sensors))
        full[:, slots] = r
        for k, row in enumerate(full, start=1):
            cells = [str(u), str(k), "0", "0", "100"] + [repr(float(v)) for v in row]
            lines.append(" ".join(cells))
    path.write_text("\n".join(lines) + "\n")
    meta = {"n_sensors": n_sensors, "dropped": drop, "channels": C, "units": len(trajs.units)}
    meta.update(sidecar or {})
    side = path.with_suffix(path.suffix + ".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return side


def load_dataset(path) -> TrajectorySet:
    """Load a trajectory file using its JSON sidecar layout when present."""
    path = Path(path)
    side = path.with_suffix(path.suffix + ".json")
    if side.exists():
        try:
            meta = json.loads(side.read_text())
            return load_cmapss(path, int(meta["n_sensors"]), tuple(meta["dropped"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"{side}: malformed sidecar ({exc})") from exc
    return load_cmapss(path)


def compute_condition(n_cycles: int, cap: float = RUL_CAP) -> np.ndarray:
    """Health indicator for cycles 1..n: min(n - cycle, cap) / cap."""
    if n_cycles < 1:
        raise ValidationError("trajectory must be non-empty")
    if cap <= 0:
        raise ValidationError(f"cap must be positive, got {cap}")
    remaining = n_cycles - np.arange(1, n_cycles + 1, dtype=np.float64)
    return np.minimum(remaining, cap) / cap


def window(trajs: TrajectorySet, length: int, stride: int = 1, cap: float = RUL_CAP) -> WindowSet:
    """Sliding windows ending at cycles L, L + stride, ... of each unit.

    The window condition is the health indicator at its final cycle; units
    shorter than ``length`` contribute nothing.
    """
    if length < 1 or stride < 1:
        raise ValidationError(f"length and stride must be >= 1, got {length}, {stride}")
    wins, conds, uids, ends = [], [], [], []
    for u, r in zip(trajs.units, trajs.readings):
        n = r.shape[0]
        if n < length:
            continue
        hi = compute_condition(n, cap)
        for end in range(length, n + 1, stride):
            wins.append(r[end - length : end].T)
            conds.append(hi[end - 1])
            uids.append(u)
            ends.append(end)
    if not wins:
        raise ValidationError(f"no unit has at least {length} cycles")
    return WindowSet(np.stack(wins), np.array(conds), None, np.array(uids), np.array(ends), trajs.channel_names)


def fit_stats(windows: np.ndarray) -> NormStats:
    w = np.asarray(windows, dtype=np.float64)
    if w.size == 0:
        raise ValidationError("cannot fit normalization on an empty set")
    return NormStats(w.min(axis=(0, 2)), w.max(axis=(0, 2)))


def apply_stats(x: np.ndarray, stats: NormStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    span = stats.hi - stats.lo
    safe = np.where(span > 0, span, 1.0)
    out = 2.0 * (x - stats.lo[:, None]) / safe[:, None] - 1.0
    return np.where((span > 0)[:, None], out, 0.0)


def normalize(ws: WindowSet, stats: NormStats | None = None) -> WindowSet:
    """Per-channel min-max map to [-1, 1].

    Statistics default to those of ``ws`` itself; pass training statistics
    when normalizing held-out data (values may then leave [-1, 1]).
    Constant channels map to 0.
    """
    if ws.stats is not None:
        raise ValidationError("window set is already normalized")
    stats = fit_stats(ws.windows) if stats is None else stats
    if stats.lo.shape[0] != ws.windows.shape[1]:
        raise ValidationError(f"stats cover {stats.lo.shape[0]} channels, windows have {ws.windows.shape[1]}")
    return WindowSet(apply_stats(ws.windows, stats), ws.conditions, stats, ws.unit_ids, ws.end_cycles, ws.channel_names)


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Inverse of :func:`apply_stats`; constant channels return their value."""
    x = np.asarray(x, dtype=np.float64)
    span = (stats.hi - stats.lo)[:, None]
    return (x + 1.0) * 0.5 * span + stats.lo[:, None]


def raw_windows(ws: WindowSet) -> np.ndarray:
    return ws.windows if ws.stats is None else denormalize(ws.windows, ws.stats)


@dataclass(frozen=True)
class SynthConfig:
    units: int = 50
    channels: int = 14
    max_cycles: int = 200
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("units", "channels", "max_cycles"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")


def channel_names(channels: int) -> tuple:
    if channels == N_SENSORS - len(DROPPED_SENSORS):
        return tuple(f"s{i}" for i in range(1, N_SENSORS + 1) if i not in DROPPED_SENSORS)
    return tuple(f"c{i + 1}" for i in range(channels))


def synth_components(config: SynthConfig = SynthConfig()) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per-unit ``(trend, wave, noise)`` arrays, each (life, channels).

    The trend is ``base + scale * (cycle / life) ** p`` (monotone per channel),
    the wave a unit-specific sinusoid. Lifetimes are uniform on
    ``[max_cycles // 2, max_cycles]``.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    C = cfg.channels
    base = rng.normal(0.0, 1.0, C)
    scale = rng.uniform(0.5, 2.0, C) * rng.choice([-1.0, 1.0], C)
    power = rng.uniform(1.5, 3.0, C)
    lives = rng.integers(max(1, cfg.max_cycles // 2), cfg.max_cycles + 1, cfg.units)
    parts = []
    for life in lives:
        frac = np.arange(1, life + 1) / life
        amp = rng.uniform(0.02, 0.08, C) * np.abs(scale)
        freq = rng.uniform(1.0, 4.0)
        phase = rng.uniform(0, 2 * np.pi, C)
        offset = rng.normal(0.0, 0.05, C)
        trend = base + offset + scale * frac[:, None] ** power
        wave = amp * np.sin(2 * np.pi * freq * frac[:, None] + phase)
        parts.append((trend, wave, rng.normal(0.0, cfg.noise_std, (life, C))))
    return parts


def synth_degradation(config: SynthConfig = SynthConfig()) -> TrajectorySet:
    """Seeded run-to-failure trajectories: trend + sinusoid + Gaussian noise."""
    readings = [trend + wave + noise for trend, wave, noise in synth_components(config)]
    return TrajectorySet(list(range(1, config.units + 1)), readings, channel_names(config.channels))


def mean_coded_windows(n: int, channels: int, length: int, seed: int = 0, noise_std: float = 0.05) -> WindowSet:
    """Windows whose per-channel mean equals the window condition.

    Each window is ``c + a * sin(2 pi k t / L + phase)`` (whole periods, so the
    sinusoid averages to zero) plus zero-mean noise re-centred per channel.
    Conditions are spread evenly over [0, 1] and shuffled.
    """
    rng = np.random.default_rng(seed)
    conds = rng.permutation(np.linspace(0.0, 1.0, n))
    t = np.arange(length) / length
    k = rng.integers(1, 3, (n, channels, 1))
    amp = rng.uniform(0.1, 0.3, (n, channels, 1))
    phase = rng.uniform(0, 2 * np.pi, (n, channels, 1))
    wave = amp * np.sin(2 * np.pi * k * t + phase)
    noise = rng.normal(0.0, noise_std, (n, channels, length))
    noise -= noise.mean(axis=2, keepdims=True)
    wave -= wave.mean(axis=2, keepdims=True)
    return WindowSet(conds[:, None, None] + wave + noise, conds)
