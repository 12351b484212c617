"""Small feedforward networks with hand-written first and second order derivatives.

A network maps a batch ``x`` of shape ``(B, n_in)`` to ``(B, n_out)``. Hidden
layers share one activation, the output layer is affine. For scalar networks
(``n_out == 1``) we also provide the input gradient and the parameter gradient
of any linear functional of the input gradient, which is what derivative
matching losses need.

Parameters are exposed as a flat list ``[W0, b0, W1, b1, ...]``; gradients use
the same layout so the optimizer can stay layout agnostic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

SCHEMA_VERSION = 1


class NonFiniteError(FloatingPointError):
    """A forward or backward quantity became NaN/inf."""


def _tanh(z):
    t = np.tanh(z)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


def _sigmoid(z):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    d1 = s * (1.0 - s)
    return s, d1, d1 * (1.0 - 2.0 * s)


def _softplus(z):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.logaddexp(0.0, z), s, s * (1.0 - s)


# each returns (f, f', f'') evaluated at z
ACTIVATIONS = {"tanh": _tanh, "sigmoid": _sigmoid, "softplus": _softplus}


@dataclass
class ParamNet:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_dims = tuple(int(n) for n in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"bad layer_dims {self.layer_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError(f"expected {n_layers} weight/bias pairs")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[k + 1], self.layer_dims[k])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(
                    f"layer {k}: weight {w.shape} / bias {b.shape}, expected {shape} / ({shape[0]},)"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k}: non-finite parameters")

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "ParamNet":
        return ParamNet(self.layer_dims, list(params[0::2]), list(params[1::2]),
                        self.activation, dict(self.meta))

    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def init_net(layer_dims: Sequence[int], seed: int, activation: str = "tanh") -> ParamNet:
    """Xavier-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return ParamNet(tuple(layer_dims), weights, biases, activation)


def zero_net(layer_dims: Sequence[int], activation: str = "tanh") -> ParamNet:
    dims = tuple(layer_dims)
    return ParamNet(dims, [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
                    [np.zeros(o) for o in dims[1:]], activation)


def _as_batch(net: ParamNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.n_in:
        raise ValueError(f"input shape {x.shape} does not match network input dim {net.n_in}")
    return x


class _Cache(NamedTuple):
    acts: list  # a_0 .. a_{L-1}, inputs to each affine layer
    d1: list  # sigma'(z_k) for hidden layers
    d2: list  # sigma''(z_k) for hidden layers
    out: np.ndarray


def _forward(net: ParamNet, x: np.ndarray, check: bool = False) -> _Cache:
    act = ACTIVATIONS[net.activation]
    acts, d1s, d2s = [x], [], []
    a = x
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        if check and not np.isfinite(z).all():
            raise NonFiniteError(f"non-finite pre-activation in layer {k}")
        if k == last:
            return _Cache(acts, d1s, d2s, z)
        a, d1, d2 = act(z)
        acts.append(a)
        d1s.append(d1)
        d2s.append(d2)
    raise AssertionError("unreachable")


def _input_grad_from_cache(net: ParamNet, cache: _Cache) -> np.ndarray:
    B = cache.out.shape[0]
    delta = np.ones((B, 1))
    for k in range(net.n_layers - 1, -1, -1):
        u = delta @ net.weights[k]
        if k == 0:
            return u
        delta = u * cache.d1[k - 1]
    raise AssertionError("unreachable")


def forward(net: ParamNet, x) -> np.ndarray:
    """Network output, shape ``(B, n_out)``."""
    return _forward(net, _as_batch(net, x)).out


def input_grad(net: ParamNet, x) -> np.ndarray:
    """Gradient of a scalar network with respect to its input, shape ``(B, n_in)``."""
    if net.n_out != 1:
        raise ValueError("input_grad requires a scalar-output network")
    x = _as_batch(net, x)
    return _input_grad_from_cache(net, _forward(net, x))


def output_param_grad(net: ParamNet, x, dout) -> list[np.ndarray]:
    """Parameter gradient of ``sum(dout * forward(net, x))``."""
    x = _as_batch(net, x)
    cache = _forward(net, x)
    delta = np.asarray(dout, dtype=np.float64).reshape(cache.out.shape)
    grads = [None] * (2 * net.n_layers)
    for k in range(net.n_layers - 1, -1, -1):
        grads[2 * k] = delta.T @ cache.acts[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k]) * cache.d1[k - 1]
    return grads


def _grad_of_input_grad(net: ParamNet, cache: _Cache, v: np.ndarray) -> list[np.ndarray]:
    """Parameter gradient of ``sum_b v_b . grad_x S(x_b)``.

    Forward-mode tangent along ``v`` gives the directional derivative; the
    reverse sweep below differentiates that tangent computation.
    """
    L = net.n_layers
    # tangent pass: zdot_k = adot_k W_k^T, adot_{k+1} = sigma'(z_k) * zdot_k
    adots = [v]
    zdots = []
    for k in range(L - 1):
        zd = adots[k] @ net.weights[k].T
        zdots.append(zd)
        adots.append(cache.d1[k] * zd)

    B = v.shape[0]
    grads = [None] * (2 * L)
    zbar = np.zeros((B, 1))
    zdbar = np.ones((B, 1))
    for k in range(L - 1, -1, -1):
        w = net.weights[k]
        grads[2 * k] = zbar.T @ cache.acts[k] + zdbar.T @ adots[k]
        grads[2 * k + 1] = zbar.sum(axis=0)
        if k == 0:
            break
        abar = zbar @ w
        adbar = zdbar @ w
        zbar = abar * cache.d1[k - 1] + adbar * zdots[k - 1] * cache.d2[k - 1]
        zdbar = adbar * cache.d1[k - 1]
    return grads


def input_grad_param_grad(net: ParamNet, x, v) -> list[np.ndarray]:
    """Parameter gradient of ``sum_b v_b . input_grad(net, x)_b``."""
    if net.n_out != 1:
        raise ValueError("input_grad_param_grad requires a scalar-output network")
    x = _as_batch(net, x)
    v = np.asarray(v, dtype=np.float64).reshape(x.shape)
    return _grad_of_input_grad(net, _forward(net, x), v)


# --- generating-function specific views -------------------------------------


class InputGrad(NamedTuple):
    d1: np.ndarray  # derivative w.r.t. the q block
    d2: np.ndarray  # derivative w.r.t. the P block


def _qp_input(net: ParamNet, q, P) -> np.ndarray:
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if q.shape != P.shape or 2 * q.shape[1] != net.n_in:
        raise ValueError(
            f"q {q.shape} and P {P.shape} must share shape (B, d) with 2d = {net.n_in}"
        )
    return np.concatenate([q, P], axis=1)


def net_forward(net: ParamNet, q, P):
    """S(q, P). Scalar for single points, ``(B,)`` for batches."""
    out = forward(net, _qp_input(net, q, P))[:, 0]
    return float(out[0]) if np.ndim(q) == 1 else out


def net_input_grad(net: ParamNet, q, P) -> InputGrad:
    g = input_grad(net, _qp_input(net, q, P))
    d = g.shape[1] // 2
    if np.ndim(q) == 1:
        return InputGrad(g[0, :d], g[0, d:])
    return InputGrad(g[:, :d], g[:, d:])


def loss_param_grad(net: ParamNet, q, P, target_d1, target_d2, h: float):
    """Mean over the batch of ``|h d1S - t1|^2 + |h d2S - t2|^2`` and its parameter gradient.

    ``target_d1`` is ``p_i - p_{i+1}``, ``target_d2`` is ``q_{i+1} - q_i``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = _qp_input(net, q, P)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    target = np.concatenate([np.atleast_2d(target_d1), np.atleast_2d(target_d2)], axis=1)
    return derivative_match_loss(net, x, target, scale=h)


def derivative_match_loss(net: ParamNet, x: np.ndarray, target: np.ndarray,
                          scale: float = 1.0, mix: np.ndarray | None = None):
    """Loss ``mean_b |scale * (grad S(x_b)) @ mix^T - target_b|^2`` with parameter gradient.

    ``mix`` is an optional fixed linear map applied to the input gradient (the
    Hamiltonian baseline uses the symplectic matrix here).
    """
    cache = _forward(net, x, check=True)
    g = _input_grad_from_cache(net, cache)
    y = scale * g if mix is None else scale * (g @ mix.T)
    r = y - target
    B = x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.sum(r * r) / B)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss in input-gradient layer")
    dy = (2.0 / B) * r
    v = scale * dy if mix is None else scale * (dy @ mix)
    return loss, _grad_of_input_grad(net, cache, v)


def output_match_loss(net: ParamNet, x: np.ndarray, target: np.ndarray):
    """Loss ``mean_b |f(x_b) - target_b|^2`` with parameter gradient."""
    cache = _forward(net, x, check=True)
    r = cache.out - target
    B = x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.sum(r * r) / B)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite output in layer {net.n_layers - 1}")
    delta = (2.0 / B) * r
    grads = [None] * (2 * net.n_layers)
    for k in range(net.n_layers - 1, -1, -1):
        grads[2 * k] = delta.T @ cache.acts[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k]) * cache.d1[k - 1]
    return loss, grads


# --- model files --------------------------------------------------------------


def net_to_dict(net: ParamNet) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "d": net.n_in // 2,
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "meta": net.meta,
    }


def net_from_dict(doc: dict) -> ParamNet:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema_version {doc.get('schema_version')!r}")
    return ParamNet(tuple(doc["layer_dims"]), [np.array(w, dtype=np.float64) for w in doc["weights"]],
                    [np.array(b, dtype=np.float64) for b in doc["biases"]],
                    doc["activation"], dict(doc.get("meta", {})))


def save_net(net: ParamNet, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(net_to_dict(net)))


def load_net(path) -> ParamNet:
    return net_from_dict(json.loads(Path(path).read_text()))
