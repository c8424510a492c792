"""First-order optimizers over ``{name: ndarray}`` parameter stores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ShapeMismatch


def _check(params, grads):
    for k, g in grads.items():
        if k not in params:
            raise ShapeMismatch(f"gradient for unknown parameter {k!r}")
        if np.shape(params[k]) != np.shape(g):
            raise ShapeMismatch(f"{k}: parameter {np.shape(params[k])} vs gradient {np.shape(g)}")


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    _check(params, grads)
    return {k: (v - lr * grads[k] if k in grads else v) for k, v in params.items()}


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> dict:
    """One Adam update (Kingma & Ba) with bias correction.  Mutates ``state``."""
    _check(params, grads)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    out = dict(params)
    for k, g in grads.items():
        m = state.m.get(k, 0.0) * b1 + (1 - b1) * g
        v = state.v.get(k, 0.0) * b2 + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        out[k] = params[k] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
