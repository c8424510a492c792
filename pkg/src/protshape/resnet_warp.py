"""Residual-network reparameterizer (ResNet-TW).

Each residual block predicts the derivative ``f_l`` of a velocity field on a
uniform grid of ``[0, 1]``.  The ELU output is scaled by ``L`` so that
``f_l >= -1/dL`` with ``dL = 1/L``; integrating gives ``F_l`` with slopes of
at least ``-1/dL``, and the update ``gamma_l = gamma_{l-1} + dL * F_l(gamma_{l-1})``
is therefore nondecreasing whatever the weights are.  A final affine
rescale pins ``gamma(1) = 1`` (``gamma(0) = 0`` holds throughout because
``F_l(0) = 0``).

The network is fitted per curve pair by gradient descent on
``||q1 - sqrt(gamma') O (q2 o gamma)||^2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .curve import Rotation, Srvf, Warp, apply_rotation, apply_warp, inner, l2_cost
from .nn.optim import AdamState, adam_step, glorot_uniform
from .registration import DpGrid, optimal_rotation, register

N_FEATURES = 7


@dataclass
class ResNetTW:
    L: int
    C: int
    T: int
    kernel: int = 5
    params: dict = field(default_factory=dict)

    @property
    def dL(self) -> float:
        return 1.0 / self.L

    def to_tensors(self) -> dict:
        out = {f"config.{k}": np.array(float(getattr(self, k))) for k in ("L", "C", "T", "kernel")}
        out["config.kind"] = np.array(2.0)
        out.update({f"param.{k}": v for k, v in self.params.items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: dict) -> "ResNetTW":
        if int(tensors.get("config.kind", -1)) != 2:
            raise ValueError("checkpoint does not hold a ResNet warper")
        cfg = {k: int(tensors[f"config.{k}"]) for k in ("L", "C", "T", "kernel")}
        params = {k[6:]: v.copy() for k, v in tensors.items() if k.startswith("param.")}
        return cls(params=params, **cfg)


@dataclass
class FitReport:
    final_cost: float
    cost_history: list
    warp: Warp
    theta: float
    rotation: Rotation
    initial_cost: float
    best_epoch: int
    comparison: dict | None = None

    def to_json(self) -> dict:
        return {
            "final_cost": self.final_cost,
            "initial_cost": self.initial_cost,
            "theta": self.theta,
            "best_epoch": self.best_epoch,
            "cost_history": list(map(float, self.cost_history)),
            "warp": self.warp.values.tolist(),
            "rotation": self.rotation.matrix.tolist(),
            "comparison": self.comparison,
        }


def build_resnet(L: int = 8, C: int = 32, T: int = 100, seed: int = 0, kernel: int = 5) -> ResNetTW:
    if min(L, C, T, kernel) < 1:
        raise ValueError("L, C, T and kernel must all be positive")
    rng = np.random.default_rng(seed)
    p = {
        "embed.K": glorot_uniform(rng, (kernel, N_FEATURES, C), kernel * N_FEATURES, kernel * C),
        "embed.b": np.zeros(C),
    }
    for l in range(L):
        p[f"block{l}.K"] = glorot_uniform(rng, (kernel, C, C), kernel * C, kernel * C)
        p[f"block{l}.b"] = np.zeros(C)
        # zero heads: f = elu(0) = 0, so the untrained network is the identity warp
        p[f"block{l}.head.W"] = np.zeros((C, 1))
        p[f"block{l}.head.b"] = np.zeros(1)
    return ResNetTW(L=L, C=C, T=T, kernel=kernel, params=p)


def randomize_heads(model: ResNetTW, rng: np.random.Generator, scale: float = 1.0) -> ResNetTW:
    """Copy of ``model`` with random head weights (for property checks)."""
    p = dict(model.params)
    for l in range(model.L):
        p[f"block{l}.head.W"] = rng.normal(0.0, scale, (model.C, 1))
        p[f"block{l}.head.b"] = rng.normal(0.0, scale, 1)
    return ResNetTW(model.L, model.C, model.T, model.kernel, p)


def _warp_q2(tape, q2c, gamma, O, T):
    """Tape expression for ``O (q2 o gamma) sqrt(gamma')`` at segment midpoints."""
    right = nn.take_rows(gamma, 1, None)
    left = nn.take_rows(gamma, 0, -1)
    mid = nn.scale(right + left, 0.5)
    # nonnegative in exact arithmetic; relu only absorbs rounding on flat stretches
    slope = nn.relu(nn.scale(right - left, float(T)))
    sampled = nn.interp(q2c, mid, 0.5 / T, 1.0 - 0.5 / T)
    warped = sampled * nn.reshape(nn.sqrt(slope), (T, 1))
    return nn.dense(warped, tape.const(O.T)), mid


def warp_graph(tape, model: ResNetTW, q1: np.ndarray, q2: np.ndarray, O: np.ndarray, f_override=None):
    """Build the forward pass on ``tape``; returns the warp tensor (T+1,)."""
    T, L = model.T, model.L
    if q1.shape != (T, 3) or q2.shape != (T, 3):
        raise ValueError(f"inputs must be ({T}, 3) SRVF grids, got {q1.shape} and {q2.shape}")
    P = tape.params_from(model.params)
    q1c, q2c = tape.const(q1), tape.const(q2)
    gamma = tape.const(np.linspace(0.0, 1.0, T + 1))
    zero = tape.const(np.zeros(1))
    for l in range(L):
        if f_override is not None and l in f_override:
            f = tape.const(np.asarray(f_override[l], dtype=float))
        else:
            q2w, mid = _warp_q2(tape, q2c, gamma, O, T)
            feats = nn.concat([q1c, q2w, nn.reshape(mid, (T, 1))], axis=1)
            e = nn.conv1d(feats, P["embed.K"], P["embed.b"])
            h = nn.relu(nn.conv1d(e, P[f"block{l}.K"], P[f"block{l}.b"]))
            r = nn.reshape(nn.dense(h, P[f"block{l}.head.W"], P[f"block{l}.head.b"]), (T,))
            f = nn.scale(nn.elu(r), float(L))
        # F on the x-grid j/T: left-Riemann cumulative integral of f, F(0) = 0
        F_nodes = nn.concat([zero, nn.scale(nn.cumsum(f), 1.0 / T)], axis=0)
        F_at = nn.interp(F_nodes, gamma, 0.0, 1.0)
        gamma = gamma + nn.scale(F_at, model.dL)
    end = nn.take_rows(gamma, T, T + 1)
    return gamma / end


def warp_values(model: ResNetTW, q1: Srvf, q2: Srvf, rotation: Rotation | None = None, f_override=None) -> np.ndarray:
    """Raw network warp (no rounding cleanup)."""
    O = np.eye(3) if rotation is None else rotation.matrix
    tape = nn.Tape()
    return warp_graph(tape, model, q1.values, q2.values, O, f_override).value


def _as_warp(g: np.ndarray) -> Warp:
    # only removes floating-point rounding; the construction is already monotone
    g = np.clip(np.maximum.accumulate(g), 0.0, 1.0)
    g[0], g[-1] = 0.0, 1.0
    return Warp(g)


def forward_warp(model: ResNetTW, q1: Srvf, q2: Srvf, rotation: Rotation | None = None, f_override=None) -> Warp:
    return _as_warp(warp_values(model, q1, q2, rotation, f_override))


def pair_cost_graph(tape, model, q1: np.ndarray, q2: np.ndarray, O: np.ndarray):
    gamma = warp_graph(tape, model, q1, q2, O)
    q2_star, _ = _warp_q2(tape, tape.const(q2), gamma, O, model.T)
    # l2_loss averages over the first axis, which is the 1/T quadrature weight
    return nn.l2_loss(tape.const(q1), q2_star), gamma


def pair_cost_and_grads(model: ResNetTW, q1: Srvf, q2: Srvf, rotation: Rotation):
    tape = nn.Tape()
    loss, gamma = pair_cost_graph(tape, model, q1.values, q2.values, rotation.matrix)
    return float(loss.value), nn.backward(tape, loss), gamma.value


def _theta(q1: Srvf, q2_star: Srvf) -> float:
    c = inner(q1, q2_star) / max(q2_star.norm(), 1e-300)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def fit_pair(
    model: ResNetTW,
    q1: Srvf,
    q2: Srvf,
    epochs: int = 500,
    lr: float = 1e-3,
    rotation_every: int = 10,
) -> FitReport:
    """Adam on the network weights; the rotation is re-solved by SVD every
    ``rotation_every`` epochs.  Returns the best warp seen.  ``model.params``
    is updated in place to the final weights.  A step that collapses the
    warp to a point ends the fit early."""
    T = model.T
    warp = forward_warp(model, q1, q2)
    O = optimal_rotation(q1, apply_warp(q2, warp))
    state = AdamState()
    params = dict(model.params)
    history = []
    best = (math.inf, warp, O, 0)
    for epoch in range(epochs + 1):
        if rotation_every and epoch and epoch % rotation_every == 0:
            O = optimal_rotation(q1, apply_warp(q2, _as_warp(gamma)))
        model.params = params
        try:
            cost, grads, gamma = pair_cost_and_grads(model, q1, q2, O)
        except nn.NonFinite:
            # the warp collapsed (gamma(1) -> 0); keep the best one seen so far
            break
        history.append(cost)
        if cost < best[0]:
            best = (cost, gamma, O, epoch)
        if epoch == epochs:
            break
        params = adam_step(params, grads, state, lr)
    model.params = params
    cost, gamma, O, best_epoch = best
    warp = _as_warp(gamma) if isinstance(gamma, np.ndarray) else gamma
    q2_star = apply_rotation(apply_warp(q2, warp), O)
    return FitReport(
        final_cost=l2_cost(q1, q2_star),
        cost_history=history,
        warp=warp,
        theta=_theta(q1, q2_star),
        rotation=O,
        initial_cost=history[0],
        best_epoch=best_epoch,
    )


DEFAULT_CONFIG = {"L": 8, "C": 32, "kernel": 5, "seed": 0, "epochs": 500, "lr": 1e-3, "rotation_every": 10}


def _fit_fresh(q1: Srvf, q2: Srvf, config: dict | None = None) -> FitReport:
    cfg = {**DEFAULT_CONFIG, **(config or {})}
    model = build_resnet(cfg["L"], cfg["C"], q1.grid_size, cfg["seed"], cfg["kernel"])
    return fit_pair(model, q1, q2, cfg["epochs"], cfg["lr"], cfg["rotation_every"])


def resnet_distance(q1: Srvf, q2: Srvf, config: dict | None = None, **kw) -> float:
    return _fit_fresh(q1, q2, {**(config or {}), **kw}).theta


def compare_with_dp(model_config: dict | None, q1: Srvf, q2: Srvf, grid: DpGrid | None = None) -> FitReport:
    report = _fit_fresh(q1, q2, model_config)
    dp = register(q1, q2, grid)
    report.comparison = {
        "dp_cost": dp.cost,
        "dp_theta": dp.theta,
        "dp_roughness": dp.warp.roughness(),
        "resnet_cost": report.final_cost,
        "resnet_theta": report.theta,
        "resnet_roughness": report.warp.roughness(),
        "dp_warp": dp.warp.values.tolist(),
    }
    return report
