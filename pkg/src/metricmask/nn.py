"""Network building blocks on top of the autodiff tape.

Uniform fan-in initialization, dense layers, a bidirectional LSTM built
from tape ops (so backpropagation through time falls out of the tape), and
a bias-corrected Adam optimizer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AutodiffError, Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-limit, limit, size=shape)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def init_lstm_direction(rng: np.random.Generator, input_dim: int, hidden: int) -> dict[str, np.ndarray]:
    # gate order along the 4H axis: input, forget, cell, output
    return {
        "W": uniform_init(rng, (input_dim, 4 * hidden), input_dim),
        "U": uniform_init(rng, (hidden, 4 * hidden), hidden),
        "b": np.zeros(4 * hidden),
    }


def lstm_direction(seq: Tensor, params: dict[str, Tensor], reverse: bool = False) -> list[Tensor]:
    """Run one LSTM direction over seq[T,F]; returns per-step [1,H] outputs
    in sequence order."""
    T = seq.shape[0]
    hidden = params["U"].shape[0]
    h = Tensor(np.zeros((1, hidden)))
    c = Tensor(np.zeros((1, hidden)))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    outputs: list[Tensor | None] = [None] * T
    # input projections for all steps in one matmul; only the recurrence
    # stays sequential
    zx = ad.matmul(seq, params["W"])
    for t in steps:
        zx_t = ad.slice_(zx, (slice(t, t + 1), slice(None)))
        z = ad.add(ad.add(zx_t, ad.matmul(h, params["U"])), params["b"])
        i = ad.sigmoid(ad.slice_(z, (slice(None), slice(0, hidden))))
        f = ad.sigmoid(ad.slice_(z, (slice(None), slice(hidden, 2 * hidden))))
        g = ad.tanh(ad.slice_(z, (slice(None), slice(2 * hidden, 3 * hidden))))
        o = ad.sigmoid(ad.slice_(z, (slice(None), slice(3 * hidden, 4 * hidden))))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        if not np.isfinite(np.sum(c.data)):
            raise AutodiffError("recurrence diverged: non-finite cell state")
        h = ad.mul(o, ad.tanh(c))
        outputs[t] = h
    return outputs  # type: ignore[return-value]


def bilstm_forward(seq: Tensor, fwd: dict[str, Tensor], bwd: dict[str, Tensor]) -> Tensor:
    """Bidirectional LSTM over seq[T,F] -> [T, 2H], per-step concatenation."""
    if seq.shape[0] < 1:
        raise AutodiffError("bilstm needs at least one frame")
    out_f = lstm_direction(seq, fwd, reverse=False)
    out_b = lstm_direction(seq, bwd, reverse=True)
    rows = [ad.concat([f, b], axis=1) for f, b in zip(out_f, out_b)]
    return ad.concat(rows, axis=0)


@dataclass
class AdamConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, config: AdamConfig | None = None):
        self.config = config or AdamConfig()
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; a missing grad counts as zero."""
    cfg = state.config
    state.step_count += 1
    bc1 = 1.0 - cfg.beta1**state.step_count
    bc2 = 1.0 - cfg.beta2**state.step_count
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros(p.shape)
        if g.shape != p.shape:
            raise AutodiffError(f"adam: grad shape {g.shape} != param shape {p.shape} for '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
