"""Ground-truth dynamics for the benchmark systems.

States are arrays whose last axis is ``[p_1..p_d, q_1..q_d]``. Every function
broadcasts over leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

# d per tag; harmonic and free_particle are test systems, not benchmarks
DOF = {"kepler2d": 2, "henon_heiles": 2, "pcr3bp": 2, "standard_map": 1,
       "harmonic": 1, "free_particle": 1}
SEPARABLE = {"kepler2d", "henon_heiles", "harmonic", "free_particle"}

SINGULAR_RADIUS = 1e-8


class DomainError(ValueError):
    """State outside the domain where a quantity is defined."""


@dataclass(frozen=True)
class SystemSpec:
    tag: str
    mu: float = 0.01
    K: float = 1.2
    dim: int | None = None  # overrides d for harmonic / free_particle

    def __post_init__(self):
        if self.tag not in DOF:
            raise ValueError(f"unknown system {self.tag!r}; expected one of {sorted(DOF)}")
        if self.tag == "pcr3bp" and not 0.0 < self.mu < 1.0:
            raise ValueError("pcr3bp requires mu in (0, 1)")
        if self.tag == "standard_map" and not self.K > 0.0:
            raise ValueError("standard_map requires K > 0")
        if self.dim is not None and self.tag not in ("harmonic", "free_particle"):
            raise ValueError(f"dim override not allowed for {self.tag}")

    @property
    def d(self) -> int:
        return self.dim if self.dim is not None else DOF[self.tag]

    @property
    def separable(self) -> bool:
        return self.tag in SEPARABLE

    @property
    def discrete(self) -> bool:
        return self.tag == "standard_map"

    def params(self) -> dict:
        if self.tag == "pcr3bp":
            return {"mu": self.mu}
        if self.tag == "standard_map":
            return {"K": self.K}
        if self.dim is not None:
            return {"dim": self.dim}
        return {}


@dataclass
class Trajectory:
    """Uniformly spaced states; ``states`` has shape ``(n+1, [B,] 2d)``."""

    h: float
    states: np.ndarray
    t0: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(len(self.states))

    @property
    def d(self) -> int:
        return self.states.shape[-1] // 2

    @property
    def p(self) -> np.ndarray:
        return self.states[..., : self.d]

    @property
    def q(self) -> np.ndarray:
        return self.states[..., self.d:]

    def __len__(self):
        return len(self.states)


def split(x):
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1] // 2
    return x[..., :d], x[..., d:]


def join(p, q):
    return np.concatenate([p, q], axis=-1)


def _check_dim(sys: SystemSpec, x):
    if np.shape(x)[-1] != 2 * sys.d:
        raise ValueError(f"{sys.tag} expects states of length {2 * sys.d}, got {np.shape(x)[-1]}")


def _kepler_r(q):
    r = np.linalg.norm(q, axis=-1)
    if np.any(r < SINGULAR_RADIUS):
        raise DomainError("kepler2d: |q| below singularity guard")
    return r


def _pcr3bp_r(q, mu):
    r1 = np.hypot(q[..., 0] + mu, q[..., 1])
    r2 = np.hypot(q[..., 0] + mu - 1.0, q[..., 1])
    if np.any(r1 < SINGULAR_RADIUS) or np.any(r2 < SINGULAR_RADIUS):
        raise DomainError("pcr3bp: collision with a primary")
    return r1, r2


def potential(sys: SystemSpec, q):
    """V(q) for separable systems, H = |p|^2/2 + V(q)."""
    q = np.asarray(q, dtype=np.float64)
    if sys.tag == "kepler2d":
        return -1.0 / _kepler_r(q)
    if sys.tag == "henon_heiles":
        q1, q2 = q[..., 0], q[..., 1]
        return 0.5 * (q1 * q1 + q2 * q2) + q1 * q1 * q2 + q2 ** 3 / 3.0
    if sys.tag == "harmonic":
        return 0.5 * np.sum(q * q, axis=-1)
    if sys.tag == "free_particle":
        return np.zeros(q.shape[:-1])
    raise ValueError(f"{sys.tag} is not separable")


def potential_grad(sys: SystemSpec, q):
    q = np.asarray(q, dtype=np.float64)
    if sys.tag == "kepler2d":
        r = _kepler_r(q)
        return q / (r ** 3)[..., None]
    if sys.tag == "henon_heiles":
        q1, q2 = q[..., 0], q[..., 1]
        return np.stack([q1 + 2.0 * q1 * q2, q2 + q1 * q1 + q2 * q2], axis=-1)
    if sys.tag == "harmonic":
        return q.copy()
    if sys.tag == "free_particle":
        return np.zeros_like(q)
    raise ValueError(f"{sys.tag} is not separable")


def hamiltonian(sys: SystemSpec, x):
    _check_dim(sys, x)
    p, q = split(x)
    if sys.separable:
        return 0.5 * np.sum(p * p, axis=-1) + potential(sys, q)
    if sys.tag == "pcr3bp":
        mu = sys.mu
        r1, r2 = _pcr3bp_r(q, mu)
        p1, p2, q1, q2 = p[..., 0], p[..., 1], q[..., 0], q[..., 1]
        return 0.5 * (p1 * p1 + p2 * p2) + p1 * q2 - p2 * q1 - (1.0 - mu) / r1 - mu / r2
    raise ValueError("standard_map has no smooth Hamiltonian")


def vector_field(sys: SystemSpec, x):
    """Hamiltonian vector field ``[dp/dt, dq/dt] = [-dH/dq, dH/dp]``."""
    if sys.discrete:
        raise NotImplementedError("standard_map is discrete-time; no vector field")
    _check_dim(sys, x)
    p, q = split(x)
    if sys.separable:
        return join(-potential_grad(sys, q), p)
    mu = sys.mu
    r1, r2 = _pcr3bp_r(q, mu)
    p1, p2, q1, q2 = p[..., 0], p[..., 1], q[..., 0], q[..., 1]
    c1, c2 = (1.0 - mu) / r1 ** 3, mu / r2 ** 3
    dHdq1 = -p2 + c1 * (q1 + mu) + c2 * (q1 + mu - 1.0)
    dHdq2 = p1 + (c1 + c2) * q2
    return np.stack([-dHdq1, -dHdq2, p1 + q2, p2 - q1], axis=-1)


# --- standard map -------------------------------------------------------------


def standard_map_step(p, theta, K):
    p1 = p + K * np.sin(theta)
    return p1, theta + p1


def standard_map_inverse(p1, theta1, K):
    theta = theta1 - p1
    return p1 - K * np.sin(theta), theta


def wrap_angle(x):
    return np.mod(x, TWO_PI)


def standard_map_orbit(x0, K, n_steps, wrap=False) -> np.ndarray:
    """Iterate the standard map on ``[p, theta]`` states; returns ``(n+1, [B,] 2)``."""
    x = np.array(x0, dtype=np.float64)
    out = np.empty((n_steps + 1,) + x.shape)
    out[0] = wrap_angle(x) if wrap else x
    p, th = out[0][..., 0], out[0][..., 1]
    for i in range(n_steps):
        p, th = standard_map_step(p, th, K)
        if wrap:
            p, th = wrap_angle(p), wrap_angle(th)
        out[i + 1, ..., 0] = p
        out[i + 1, ..., 1] = th
    return out


# --- reference integrators ------------------------------------------------------

_CBRT2 = 2.0 ** (1.0 / 3.0)
_Y1 = 1.0 / (2.0 - _CBRT2)
_Y0 = -_CBRT2 / (2.0 - _CBRT2)
# kick-drift composition of three leapfrog substeps (w1, w0, w1)
YOSHIDA_KICKS = (0.5 * _Y1, 0.5 * (_Y1 + _Y0), 0.5 * (_Y0 + _Y1), 0.5 * _Y1)
YOSHIDA_DRIFTS = (_Y1, _Y0, _Y1)


def _n_steps(total: float, step: float, what: str) -> int:
    n = int(round(total / step))
    if n < 0 or abs(n * step - total) > 1e-9 * max(1.0, abs(total)):
        raise ValueError(f"{what}: {total} is not an integer multiple of {step}")
    return n


def reference_integrate(sys: SystemSpec, x0, tau: float, T: float, scheme: str = "yoshida4",
                        record_every: int = 1) -> Trajectory:
    """Integrate from ``x0`` with fine step ``tau`` up to ``T``, keeping every
    ``record_every``-th state (stroboscopic sampling at step ``record_every * tau``)."""
    if sys.discrete:
        raise NotImplementedError("standard_map is discrete-time; iterate it directly")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if scheme in ("yoshida4", "leapfrog") and not sys.separable:
        raise ValueError(f"{scheme} requires a separable Hamiltonian; {sys.tag} is not")
    if scheme not in ("yoshida4", "leapfrog", "rk4"):
        raise ValueError(f"unknown scheme {scheme!r}")
    n = _n_steps(T, tau, "T")
    if n % record_every:
        raise ValueError("number of fine steps must be a multiple of record_every")
    x = np.array(x0, dtype=np.float64)
    _check_dim(sys, x)
    d = sys.d
    out = np.empty((n // record_every + 1,) + x.shape)
    out[0] = x

    if scheme == "rk4":
        def f(y):
            return vector_field(sys, y)

        for i in range(1, n + 1):
            k1 = f(x)
            k2 = f(x + 0.5 * tau * k1)
            k3 = f(x + 0.5 * tau * k2)
            k4 = f(x + tau * k3)
            x = x + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if i % record_every == 0:
                out[i // record_every] = x
    else:
        kicks, drifts = ((0.5, 0.5), (1.0,)) if scheme == "leapfrog" else (YOSHIDA_KICKS, YOSHIDA_DRIFTS)
        p, q = x[..., :d].copy(), x[..., d:].copy()
        force = potential_grad(sys, q)
        for i in range(1, n + 1):
            for j, dr in enumerate(drifts):
                p -= (kicks[j] * tau) * force
                q += (dr * tau) * p
                force = potential_grad(sys, q)
            p -= (kicks[-1] * tau) * force
            if i % record_every == 0:
                out[i // record_every, ..., :d] = p
                out[i // record_every, ..., d:] = q
    return Trajectory(h=tau * record_every, states=out)


# --- Kepler orbital elements ------------------------------------------------------


def orbital_elements(x):
    """Semi-major axis and eccentricity of a bound Kepler state (GM = 1)."""
    x = np.asarray(x, dtype=np.float64)
    p, q = split(x)
    H = 0.5 * np.sum(p * p, axis=-1) - 1.0 / _kepler_r(q)
    if np.any(H >= 0):
        raise DomainError("orbital_elements: unbound orbit (H >= 0)")
    L = q[..., 0] * p[..., 1] - q[..., 1] * p[..., 0]
    a = -0.5 / H
    e = np.sqrt(np.maximum(0.0, 1.0 + 2.0 * H * L * L))
    return a, e


def kepler_state(a, e, anomaly, periapsis):
    """Cartesian ``[p, q]`` for a counter-clockwise orbit; broadcasts over inputs."""
    a, e, nu, om = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (a, e, anomaly, periapsis)))
    slr = a * (1.0 - e * e)  # semi-latus rectum
    r = slr / (1.0 + e * np.cos(nu))
    v = 1.0 / np.sqrt(slr)
    qx, qy = r * np.cos(nu), r * np.sin(nu)
    px, py = -v * np.sin(nu), v * (e + np.cos(nu))
    c, s = np.cos(om), np.sin(om)
    return np.stack([c * px - s * py, s * px + c * py, c * qx - s * qy, s * qx + c * qy], axis=-1)
