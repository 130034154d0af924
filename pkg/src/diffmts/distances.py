"""Alignment distances between multichannel sequences.

Sequences are ``(C, L)`` arrays (channels first, like model windows); the
local cost between time indices is the Euclidean norm over channels.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import ShapeError, ValidationError


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] == 0:
        raise ShapeError(f"sequence must be (channels, length) with length >= 1, got {x.shape}")
    return x.T


def pairwise_cost(x, y) -> np.ndarray:
    """Euclidean distance between every time step of ``x`` and of ``y``."""
    a, b = _points(x), _points(y)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"channel counts differ: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def dtw(x, y) -> float:
    """Accumulated cost of the best monotone alignment (match/insert/delete steps)."""
    d = pairwise_cost(x, y)
    n, m = d.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        prev, cur = acc[i - 1], acc[i]
        row = d[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = row[j - 1] + best
    return float(acc[n, m])


def frechet(x, y) -> float:
    """Discrete Fréchet distance: min over couplings of the longest link."""
    d = pairwise_cost(x, y)
    n, m = d.shape
    ca = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                best = 0.0
            elif i == 0:
                best = ca[0, j - 1]
            elif j == 0:
                best = ca[i - 1, 0]
            else:
                best = min(ca[i - 1, j], ca[i, j - 1], ca[i - 1, j - 1])
            ca[i, j] = max(best, d[i, j])
    return float(ca[n - 1, m - 1])


def condition_pairs(real_conditions, synth_conditions) -> list[tuple[int, int]]:
    """Greedy condition-matched pairing of synthetic to real windows.

    Each synthetic window (in order) takes the unused real window whose
    condition is nearest, ties going to the earlier real window. Once all
    real windows are used the pool is refilled.
    """
    rc = np.asarray(real_conditions, dtype=np.float64)
    sc = np.asarray(synth_conditions, dtype=np.float64)
    if rc.size == 0 or sc.size == 0:
        raise ValidationError("distance report needs non-empty real and synthetic sets")
    free = np.ones(rc.size, dtype=bool)
    pairs = []
    for s, c in enumerate(sc):
        if not free.any():
            free[:] = True
        gap = np.where(free, np.abs(rc - c), np.inf)
        r = int(np.argmin(gap))
        free[r] = False
        pairs.append((r, s))
    return pairs


def _pair_distances(args):
    x, y = args
    return dtw(x, y), frechet(x, y)


def distance_report(real, real_conditions, synth, synth_conditions, jobs: int = 1) -> tuple[float, float]:
    """Mean DTW and mean Fréchet distance over condition-matched pairs."""
    real, synth = np.asarray(real), np.asarray(synth)
    pairs = condition_pairs(real_conditions, synth_conditions)
    if real.shape[1:-1] != synth.shape[1:-1]:
        raise ShapeError(f"real windows {real.shape[1:]} and synthetic windows {synth.shape[1:]} differ in channels")
    work = [(real[r], synth[s]) for r, s in pairs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_pair_distances, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        out = [_pair_distances(w) for w in work]
    arr = np.array(out)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def nearest_dtw(samples, references) -> np.ndarray:
    """For each sample, the DTW distance to its nearest reference window."""
    return np.array([min(dtw(s, r) for r in references) for s in samples])
