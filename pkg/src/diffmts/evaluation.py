"""Evaluation protocol: discriminative and predictive scores, distances, PCA."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import recurrent as rnn
from .data import WindowSet
from .distances import distance_report
from .errors import ValidationError

SPLIT = (0.7, 0.1, 0.2)
MIN_PER_CLASS = 10


@dataclass
class ScoreResult:
    score: float
    split: dict
    best_epoch: int


def _windows(x) -> np.ndarray:
    w = x.windows if isinstance(x, WindowSet) else np.asarray(x, dtype=np.float64)
    if w.ndim != 3:
        raise ValidationError(f"expected windows shaped (N, C, L), got {w.shape}")
    return w


def _conditions(x, name: str) -> np.ndarray:
    c = x.conditions if isinstance(x, WindowSet) else None
    if c is None or len(c) == 0:
        raise ValidationError(f"{name} set has no condition labels")
    return np.asarray(c, dtype=np.float64)


def _scale(train: np.ndarray, *others: np.ndarray) -> list[np.ndarray]:
    """Min-max to [0, 1] per channel using the training split; returns (N, L, C) views."""
    lo = train.min(axis=(0, 2), keepdims=True)
    span = train.max(axis=(0, 2), keepdims=True) - lo
    span = np.where(span > 0, span, 1.0)
    return [np.swapaxes((a - lo) / span, 1, 2) for a in (train,) + others]


def split_sizes(n: int) -> dict:
    n_train = int(np.floor(SPLIT[0] * n))
    n_val = int(np.floor(SPLIT[1] * n))
    return {"train": n_train, "val": n_val, "test": n - n_train - n_val}


def discriminative_score(real, synth, seed: int = 0, config: rnn.LSTMConfig | None = None) -> ScoreResult:
    """Test accuracy of a real (1) vs synthetic (0) LSTM classifier.

    The pooled set is shuffled and split 70/10/20; the epoch with the lowest
    validation loss is kept. 0.5 means indistinguishable.
    """
    cfg = config or rnn.LSTMConfig()
    r, s = _windows(real), _windows(synth)
    if r.shape[1:] != s.shape[1:]:
        raise ValidationError(f"real windows {r.shape[1:]} and synthetic windows {s.shape[1:]} differ")
    if len(r) < MIN_PER_CLASS or len(s) < MIN_PER_CLASS:
        raise ValidationError(f"need at least {MIN_PER_CLASS} windows per class, got {len(r)} real and {len(s)} synthetic")
    X = np.concatenate([r, s])
    y = np.concatenate([np.ones(len(r)), np.zeros(len(s))])
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(X))
    sizes = split_sizes(len(X))
    a, b = sizes["train"], sizes["train"] + sizes["val"]
    tr, va, te = perm[:a], perm[a:b], perm[b:]
    xtr, xva, xte = _scale(X[tr], X[va], X[te])
    params, best = rnn.fit(xtr, y[tr], xva, y[va], "classify", cfg, rng)
    prob = rnn.predict(params, xte, cfg)
    acc = float(np.mean((prob >= 0.5) == (y[te] == 1)))
    return ScoreResult(acc, sizes, best)


def rmse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def predictive_score(synth_train, real_test, seed: int = 0, config: rnn.LSTMConfig | None = None) -> ScoreResult:
    """Train-on-synthetic, test-on-real RMSE of an LSTM condition regressor.

    10% of the synthetic windows are held out for epoch selection.
    """
    cfg = config or rnn.LSTMConfig()
    s, r = _windows(synth_train), _windows(real_test)
    ys, yr = _conditions(synth_train, "synthetic"), _conditions(real_test, "real")
    if s.shape[1:] != r.shape[1:]:
        raise ValidationError(f"synthetic windows {s.shape[1:]} and real windows {r.shape[1:]} differ")
    if len(s) < MIN_PER_CLASS:
        raise ValidationError(f"need at least {MIN_PER_CLASS} synthetic windows, got {len(s)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(s))
    n_val = max(1, int(np.floor(SPLIT[1] * len(s))))
    va, tr = perm[:n_val], perm[n_val:]
    xtr, xva, xte = _scale(s[tr], s[va], r)
    params, best = rnn.fit(xtr, ys[tr], xva, ys[va], "regress", cfg, rng)
    pred = rnn.predict(params, xte, cfg)
    return ScoreResult(rmse(pred, yr), {"train": len(tr), "val": len(va), "test": len(r)}, best)


@dataclass
class Projection:
    coords: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    explained_variance_ratio: np.ndarray

    def inverse(self, coords=None) -> np.ndarray:
        c = self.coords if coords is None else coords
        return c @ self.components + self.mean


def pca_project(data, k: int = 2) -> Projection:
    """Top-``k`` principal components of flattened samples.

    Eigen-decomposition of the covariance, components sorted by decreasing
    variance, each component's largest-magnitude loading made positive.
    """
    X = np.asarray(data.windows if isinstance(data, WindowSet) else data, dtype=np.float64)
    X = X.reshape(X.shape[0], -1)
    n, d = X.shape
    if k < 1 or k > d:
        raise ValidationError(f"k={k} must lie in [1, {d}] (data dimension)")
    if n < k:
        raise ValidationError(f"need at least k={k} samples, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    comps = vecs[:, :k].T.copy()
    flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    comps *= np.where(flip == 0, 1.0, flip)[:, None]
    total = vals.sum()
    ratio = vals[:k] / total if total > 0 else np.zeros(k)
    return Projection(Xc @ comps.T, comps, mean, ratio)


@dataclass
class EvalReport:
    discriminative_score: float
    predictive_score: float
    dtw_mean: float
    frechet_mean: float
    per_seed: list = field(default_factory=list)
    split_sizes: dict = field(default_factory=dict)
    n_real: int = 0
    n_synth: int = 0
    explained_variance: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


_NUM = {"type": "number"}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "EvalReport",
    "type": "object",
    "additionalProperties": False,
    "required": [
        "discriminative_score",
        "predictive_score",
        "dtw_mean",
        "frechet_mean",
        "per_seed",
        "split_sizes",
        "n_real",
        "n_synth",
        "explained_variance",
    ],
    "properties": {
        "discriminative_score": {"type": "number", "minimum": 0, "maximum": 1},
        "predictive_score": {"type": "number", "minimum": 0},
        "dtw_mean": {"type": "number", "minimum": 0},
        "frechet_mean": {"type": "number", "minimum": 0},
        "per_seed": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "discriminative", "predictive"],
                "properties": {"seed": {"type": "integer"}, "discriminative": _NUM, "predictive": _NUM},
            },
        },
        "split_sizes": {
            "type": "object",
            "required": ["train", "val", "test"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("train", "val", "test")},
        },
        "n_real": {"type": "integer", "minimum": 0},
        "n_synth": {"type": "integer", "minimum": 0},
        "explained_variance": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
    },
}


def evaluate(real: WindowSet, synth: WindowSet, seeds=(0, 1, 2, 3, 4), config: rnn.LSTMConfig | None = None, jobs: int = 1):
    """Full report; scored metrics are averaged over ``seeds``.

    Returns the report and the joint PCA projection (real rows first).
    """
    r, s = _windows(real), _windows(synth)
    if r.shape[1:] != s.shape[1:]:
        raise ValidationError(f"real windows {r.shape[1:]} and synthetic windows {s.shape[1:]} differ")
    if not seeds:
        raise ValidationError("seed list is empty")
    per_seed, split = [], {}
    for seed in seeds:
        d = discriminative_score(real, synth, seed, config)
        p = predictive_score(synth, real, seed, config)
        per_seed.append({"seed": int(seed), "discriminative": d.score, "predictive": p.score})
        split = d.split
    dtw_mean, fr_mean = distance_report(r, real.conditions, s, synth.conditions, jobs=jobs)
    proj = pca_project(np.concatenate([r, s]), 2)
    report = EvalReport(
        discriminative_score=float(np.mean([x["discriminative"] for x in per_seed])),
        predictive_score=float(np.mean([x["predictive"] for x in per_seed])),
        dtw_mean=dtw_mean,
        frechet_mean=fr_mean,
        per_seed=per_seed,
        split_sizes=split,
        n_real=len(r),
        n_synth=len(s),
        explained_variance=[float(v) for v in proj.explained_variance_ratio],
    )
    return report, proj


def write_projection(proj: Projection, n_real: int, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "source", "pc1", "pc2"])
        for i, row in enumerate(proj.coords):
            src, sid = ("real", i) if i < n_real else ("synth", i - n_real)
            w.writerow([sid, src, repr(float(row[0])), repr(float(row[1]) if len(row) > 1 else 0.0)])
