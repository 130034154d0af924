"""Shared tiny fixtures for training and sampling tests."""

import numpy as np

from diffmts.data import WindowSet
from diffmts.model import ModelConfig


def tiny_model(**kw):
    base = dict(in_channels=3, length=8, base_filters=4, time_embed_dim=8, cond_embed_dim=8, attn_dim=4, groups=2)
    base.update(kw)
    return ModelConfig(**base)


def sinusoid_windows(n=16, channels=3, length=24, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    freq = rng.integers(1, 4, (n, channels, 1))
    phase = rng.uniform(0, 2 * np.pi, (n, channels, 1))
    return WindowSet(np.sin(2 * np.pi * freq * t + phase), np.linspace(0, 1, n))
