"""Adam training loops for the generating-function net and the two vector-field
baselines, baseline rollouts, and the Euler global-error bound.

Training the generating function is plain regression: the loss evaluates the
network at the observed ``(q_i, p_{i+1})``, so no implicit solve is needed
until prediction time.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import TrainingPairs, TrajectoryDataset, finite_difference_targets
from .net import (NonFiniteError, ParamNet, derivative_match_loss, forward, input_grad,
                  load_net, output_match_loss, save_net)
from .systems import Trajectory

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 200
    epochs: int = 20
    lr0: float = 0.01
    lr_schedule: str = "step"  # "step" or "constant"
    lr_decay: float = 0.5
    lr_step_epochs: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or not self.lr0 > 0:
            raise ValueError(f"invalid training config {self}")
        if self.lr_schedule not in ("step", "constant"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr(self, epoch: int) -> float:
        if self.lr_schedule == "constant":
            return self.lr0
        return self.lr0 * self.lr_decay ** (epoch // self.lr_step_epochs)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, cfg: TrainConfig = TrainConfig()):
    """One bias-corrected Adam update. Returns new parameter and state objects."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter / gradient shape mismatch")
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


# --- checkpoints ------------------------------------------------------------------


def save_moments(state: AdamState, net: ParamNet, path, epoch: int) -> None:
    def layout(arrs):
        return {"weights": [a.tolist() for a in arrs[0::2]], "biases": [a.tolist() for a in arrs[1::2]]}

    doc = {"schema_version": 1, "layer_dims": list(net.layer_dims), "t": state.t, "epoch": epoch,
           "m": layout(state.m), "v": layout(state.v)}
    Path(path).write_text(json.dumps(doc))


def load_moments(path):
    doc = json.loads(Path(path).read_text())

    def unpack(part):
        out = []
        for w, b in zip(part["weights"], part["biases"]):
            out += [np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)]
        return out

    return AdamState(unpack(doc["m"]), unpack(doc["v"]), doc["t"]), doc["epoch"]


def _checkpoint(cfg: TrainConfig, net: ParamNet, state: AdamState, epoch: int) -> None:
    out = Path(cfg.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_net(net, out / "model.json")
    save_moments(state, net, out / "moments.json", epoch)


def _fit(net0: ParamNet, x: np.ndarray, target: np.ndarray, loss_fn, cfg: TrainConfig,
         resume: str | None = None):
    n = len(x)
    if n == 0:
        raise ValueError("no training data")
    params = [p.copy() for p in net0.params()]
    state = AdamState.zeros_like(params)
    start = 0
    if resume is not None:
        net0 = load_net(Path(resume) / "model.json")
        params = net0.params()
        state, start = load_moments(Path(resume) / "moments.json")
    rng = np.random.default_rng(cfg.seed)
    # replay the shuffles of completed epochs so a resumed run matches an uninterrupted one
    for _ in range(start):
        if cfg.shuffle:
            rng.permutation(n)
    net = net0.with_params(params)
    history = []
    for epoch in range(start, cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        lr = cfg.lr(epoch)
        total = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            try:
                loss, grads = loss_fn(net, x[idx], target[idx])
            except NonFiniteError as err:
                raise TrainingError(f"epoch {epoch} batch {b}: {err}") from err
            params, state = adam_step(params, grads, state, lr, cfg)
            if not all(np.isfinite(p).all() for p in params):
                raise TrainingError(f"epoch {epoch} batch {b}: non-finite parameters after update")
            net = net0.with_params(params)
            total += loss * len(idx)
        history.append(total / n)
        log.info("epoch %d lr %.3g loss %.6e", epoch, lr, history[-1])
        if cfg.checkpoint_every and cfg.checkpoint_dir and (epoch + 1) % cfg.checkpoint_every == 0:
            _checkpoint(cfg, net, state, epoch + 1)
    return net, history


def gfnn_inputs(pairs: TrainingPairs):
    """Network inputs ``[q_i, p_{i+1}]`` and targets ``[p_i - p_{i+1}, q_{i+1} - q_i]``."""
    return np.concatenate([pairs.q, pairs.p_next], axis=1), np.concatenate([pairs.dp, pairs.dq], axis=1)


def train_gfnn(pairs: TrainingPairs, net0: ParamNet, h: float, cfg: TrainConfig = TrainConfig(),
               resume: str | None = None):
    """Fit the generating-function net; returns ``(net, per-epoch mean loss)``."""
    if len(pairs) == 0:
        raise ValueError("no training pairs")
    if not h > 0:
        raise ValueError("h must be positive")
    if net0.n_out != 1 or net0.n_in != 2 * pairs.q.shape[1]:
        raise ValueError(f"net {net0.layer_dims} does not fit d = {pairs.q.shape[1]}")
    x, target = gfnn_inputs(pairs)
    return _fit(net0, x, target, lambda net, xb, tb: derivative_match_loss(net, xb, tb, scale=h),
                cfg, resume)


# --- baselines --------------------------------------------------------------------


def symplectic_mix(d: int) -> np.ndarray:
    """Matrix taking ``[dH/dp, dH/dq]`` to ``[-dH/dq, dH/dp]``."""
    I, Z = np.eye(d), np.zeros((d, d))
    return np.block([[Z, -I], [I, Z]])


@dataclass
class BaselineModel:
    """``vfnn``: one net ``R^2d -> R^2d`` for the field directly.
    ``hnn``: scalar net ``H(p, q)`` whose symplectic gradient is the field."""

    kind: str
    net: ParamNet
    predict_scheme: str = "euler"
    separable: bool = False

    def __post_init__(self):
        if self.kind not in ("vfnn", "hnn"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        n = self.net.n_in
        if n % 2:
            raise ValueError("baseline input dimension must be even")
        if self.kind == "vfnn" and self.net.n_out != n:
            raise ValueError(f"vfnn net must map R^{n} -> R^{n}")
        if self.kind == "hnn" and self.net.n_out != 1:
            raise ValueError("hnn net must be scalar")
        if self.predict_scheme not in ("euler", "rk4", "leapfrog"):
            raise ValueError(f"unknown scheme {self.predict_scheme!r}")
        if self.predict_scheme == "leapfrog" and not (self.kind == "hnn" and self.separable):
            raise ValueError("leapfrog prediction needs an hnn declared separable")

    @property
    def d(self) -> int:
        return self.net.n_in // 2

    def field(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "vfnn":
            return forward(self.net, x)
        return input_grad(self.net, x) @ symplectic_mix(self.d).T


def train_baseline(data, model0: BaselineModel, cfg: TrainConfig = TrainConfig(),
                   resume: str | None = None):
    """Fit a baseline to first-order finite-difference velocities.

    ``data`` is a :class:`TrajectoryDataset` or a ``(states, velocities)`` pair.
    Returns ``(model, history)``.
    """
    x, target = finite_difference_targets(data) if isinstance(data, TrajectoryDataset) else data
    if model0.kind == "vfnn":
        loss_fn = output_match_loss
    else:
        mix = symplectic_mix(model0.d)

        def loss_fn(net, xb, tb):
            return derivative_match_loss(net, xb, tb, mix=mix)

    net, history = _fit(model0.net, x, target, loss_fn, cfg, resume)
    return BaselineModel(model0.kind, net, model0.predict_scheme, model0.separable), history


def integrate_field(f, x0, h: float, n: int, scheme: str = "euler", wrap: float | None = None,
) -> Trajectory:
    """Fixed-step rollout of ``dx/dt = f(x)``; ``f`` maps ``(B, 2d) -> (B, 2d)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    x = x0[None] if single else x0.copy()
    d = x.shape[1] // 2
    states = np.empty((n + 1,) + x.shape)
    states[0] = x
    for i in range(n):
        if scheme == "euler":
            x = x + h * f(x)
        elif scheme == "rk4":
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        elif scheme == "leapfrog":
            x = x.copy()
            x[:, :d] += 0.5 * h * f(x)[:, :d]
            x[:, d:] += h * f(x)[:, d:]
            x[:, :d] += 0.5 * h * f(x)[:, :d]
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        if wrap is not None:
            x = np.mod(x, wrap)
        if not np.isfinite(x).all():
            raise TrainingError(f"non-finite state at step {i + 1}")
        states[i + 1] = x
    return Trajectory(h, states[:, 0] if single else states)


def baseline_rollout(model: BaselineModel, x0, h: float, n: int, scheme: str | None = None,
                     wrap: float | None = None) -> Trajectory:
    return integrate_field(model.field, x0, h, n, scheme or model.predict_scheme, wrap)


def euler_error_bound(L: float, delta: float, h: float, T: float) -> float:
    """Global error bound ``(exp(LT) - 1)/L * (delta + L h / 2)`` for Euler prediction
    with an L-Lipschitz field learned to accuracy ``delta``."""
    if not L > 0 or delta < 0 or not h > 0 or T < 0:
        raise ValueError("need L > 0, delta >= 0, h > 0, T >= 0")
    return float(np.expm1(L * T) / L * (delta + 0.5 * L * h))
