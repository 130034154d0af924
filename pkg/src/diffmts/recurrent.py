"""Two-layer LSTM evaluators (classifier and regressor) on numcore.

Each LSTM layer is a single tape node whose backward pass runs
backpropagation through time in numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ShapeError


def _sig(x):
    return nc._sigmoid(x)


def lstm_layer(x, weight, bias) -> nc.Tensor:
    """Run an LSTM over ``x`` (B, L, I) from zero state; returns all hidden states (B, L, H).

    ``weight`` is (4H, I + H) acting on ``[x_t, h_{t-1}]``; gate order i, f, g, o.
    """
    x, weight, bias = nc.as_tensor(x), nc.as_tensor(weight), nc.as_tensor(bias)
    B, L, I = x.shape
    H = weight.shape[0] // 4
    if weight.shape != (4 * H, I + H) or bias.shape != (4 * H,):
        raise ShapeError(f"LSTM weight {weight.shape} / bias {bias.shape} do not fit input size {I}")
    W, b, X = weight.data, bias.data, x.data
    dt = np.result_type(X, W)
    h = np.zeros((B, H), dt)
    c = np.zeros((B, H), dt)
    hs, cs, gates, inputs = [], [c], [], []
    for t in range(L):
        xh = np.concatenate([X[:, t], h], axis=1)
        z = xh @ W.T + b
        i, f, o = _sig(z[:, :H]), _sig(z[:, H : 2 * H]), _sig(z[:, 3 * H :])
        g = np.tanh(z[:, 2 * H : 3 * H])
        c = f * c + i * g
        h = o * np.tanh(c)
        inputs.append(xh)
        gates.append((i, f, g, o))
        cs.append(c)
        hs.append(h)
    out = np.stack(hs, axis=1)

    def back(gout):
        dW = np.zeros_like(W)
        db = np.zeros_like(b)
        dX = np.zeros_like(X)
        dh_next = np.zeros((B, H), dt)
        dc_next = np.zeros((B, H), dt)
        for t in reversed(range(L)):
            i, f, g, o = gates[t]
            tc = np.tanh(cs[t + 1])
            dh = gout[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di, dg, df = dc * g, dc * i, dc * cs[t]
            dc_next = dc * f
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
            dW += dz.T @ inputs[t]
            db += dz.sum(axis=0)
            dxh = dz @ W
            dX[:, t] = dxh[:, :I]
            dh_next = dxh[:, I:]
        return dX, dW, db

    return nc._node(out, (x, weight, bias), back, "lstm")


@dataclass
class LSTMConfig:
    hidden: int = 32
    layers: int = 2
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3


def init_lstm(n_in: int, cfg: LSTMConfig, rng: np.random.Generator, dtype=np.float64) -> dict:
    params = {}
    H = cfg.hidden
    size = n_in
    for layer in range(cfg.layers):
        bound = 1.0 / np.sqrt(H)
        params[f"lstm{layer}.weight"] = rng.uniform(-bound, bound, (4 * H, size + H)).astype(dtype)
        bias = np.zeros(4 * H, dtype)
        bias[H : 2 * H] = 1.0
        params[f"lstm{layer}.bias"] = bias
        size = H
    params["head.weight"] = rng.uniform(-1 / np.sqrt(H), 1 / np.sqrt(H), (1, H)).astype(dtype)
    params["head.bias"] = np.zeros(1, dtype)
    return params


def lstm_forward(P, x, cfg: LSTMConfig) -> nc.Tensor:
    """Scalar output per sequence from the last hidden state; ``x`` is (B, L, I)."""
    h = nc.as_tensor(x)
    for layer in range(cfg.layers):
        h = lstm_layer(h, P[f"lstm{layer}.weight"], P[f"lstm{layer}.bias"])
    last = nc.index(h, (slice(None), -1))
    return nc.reshape(nc.linear(last, P["head.weight"], P["head.bias"]), (-1,))


def fit(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    task: str,
    cfg: LSTMConfig,
    rng: np.random.Generator,
):
    """Train for ``cfg.epochs`` and keep the parameters with the best validation loss.

    ``task`` is ``"classify"`` (logit output, BCE) or ``"regress"`` (sigmoid
    output, MSE). Inputs are (N, L, I). Returns (params, best_epoch).
    """
    params = init_lstm(x_train.shape[2], cfg, rng)
    state = nc.AdamState()

    def loss_fn(P, x, y):
        out = lstm_forward(P, x, cfg)
        if task == "classify":
            return nc.bce_with_logits(out, y)
        return nc.mean(nc.square(nc.sigmoid(out) - y))

    best, best_epoch, best_params = np.inf, 0, params
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(x_train))
        for s in range(0, len(perm), cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            P = {k: nc.parameter(v, k) for k, v in params.items()}
            grads = nc.backward(loss_fn(P, x_train[idx], y_train[idx]), P)
            grads, _ = nc.clip_grad_norm(grads, 1.0)
            params, state = nc.adam_step(params, grads, state, lr=cfg.lr)
        with nc.no_grad():
            val = loss_fn(params, x_val, y_val).item() if len(x_val) else -epoch
        if val < best:
            best, best_epoch, best_params = val, epoch, params
    return best_params, best_epoch


def predict(params, x, cfg: LSTMConfig) -> np.ndarray:
    with nc.no_grad():
        out = lstm_forward(params, x, cfg).data
    return nc._sigmoid(out)
