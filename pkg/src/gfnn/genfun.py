"""Exactly symplectic one-step maps defined by a modified type-2 generating function.

With ``F(q, P) = q.P + h S(q, P)`` the step ``(p0, q0) -> (p1, q1)`` solves

    p0 = p1 + h dS/dq(q0, p1)
    q1 = q0 + h dS/dP(q0, p1)

The first relation is implicit in ``p1``; we solve it by fixed-point sweeps and
fall back to damped Newton when the sweeps stall.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import ParamNet, input_grad
from .systems import Trajectory


class SolverError(RuntimeError):
    def __init__(self, msg, residual=np.nan, step=None, partial=None):
        super().__init__(msg)
        self.residual = residual
        self.step = step
        self.partial = partial


@dataclass(frozen=True)
class AnalyticGF:
    """Closed-form modified generating functions, used as oracles.

    ``harmonic_rotation`` is exact for the rotation flow of ``H = (|p|^2 + |q|^2)/2``;
    ``standard_map`` is exact for the Chirikov map with ``h = 1``.
    """

    tag: str
    d: int = 1
    K: float = 1.2

    def __post_init__(self):
        if self.tag not in ("zero", "free_particle", "harmonic_rotation", "standard_map"):
            raise ValueError(f"unknown analytic generating function {self.tag!r}")

    def value(self, q, P, h):
        q, P = np.atleast_2d(q), np.atleast_2d(P)
        if self.tag == "zero":
            return np.zeros(len(q))
        if self.tag == "free_particle":
            return 0.5 * np.sum(P * P, axis=1)
        if self.tag == "standard_map":
            return 0.5 * np.sum(P * P, axis=1) + self.K * np.sum(np.cos(q), axis=1)
        _check_rotation_step(h)
        sec, tan = 1.0 / np.cos(h), np.tan(h)
        return (np.sum(q * P, axis=1) * (sec - 1.0) + 0.5 * tan * np.sum(q * q + P * P, axis=1)) / h

    def grad(self, q, P, h):
        if self.tag == "zero":
            return np.zeros_like(q), np.zeros_like(P)
        if self.tag == "free_particle":
            return np.zeros_like(q), P.copy()
        if self.tag == "standard_map":
            return -self.K * np.sin(q), P.copy()
        _check_rotation_step(h)
        sec, tan = 1.0 / np.cos(h), np.tan(h)
        return (P * (sec - 1.0) + q * tan) / h, (q * (sec - 1.0) + P * tan) / h


def _check_rotation_step(h):
    if not abs(h) < np.pi / 2:
        raise ValueError("harmonic_rotation requires |h| < pi/2")


@dataclass(frozen=True)
class SolverConfig:
    abs_tol: float = 1e-12
    max_iter: int = 100
    newton_fallback: bool = True
    fd_step: float = 1e-6

    def __post_init__(self):
        if not self.abs_tol > 0 or self.max_iter < 1 or not self.fd_step > 0:
            raise ValueError(f"invalid solver config {self}")


@dataclass(frozen=True)
class GenFunMap:
    source: ParamNet | AnalyticGF
    h: float
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if isinstance(self.source, ParamNet):
            if self.source.n_out != 1 or self.source.n_in % 2:
                raise ValueError(f"generating-function net must map R^2d -> R, got {self.source.layer_dims}")
        elif isinstance(self.source, AnalyticGF):
            if self.source.tag == "harmonic_rotation":
                _check_rotation_step(self.h)
        else:
            raise TypeError(f"unsupported source {type(self.source).__name__}")

    @property
    def d(self) -> int:
        if isinstance(self.source, ParamNet):
            return self.source.n_in // 2
        return self.source.d

    def grad(self, q, P):
        """(dS/dq, dS/dP) for batches ``q, P`` of shape ``(B, d)``."""
        if isinstance(self.source, ParamNet):
            g = input_grad(self.source, np.concatenate([q, P], axis=1))
            return g[:, : self.d], g[:, self.d:]
        return self.source.grad(q, P, self.h)


def _residual(gmap, p0, q0, pt):
    g1, g2 = gmap.grad(q0, pt)
    return p0 - pt - gmap.h * g1, g2


def _newton(gmap, p0, q0, pt, cfg, iters):
    """Damped Newton on ``R(P) = p0 - P - h dS/dq(q0, P)`` row by row in lockstep."""
    B, d = pt.shape
    r, g2 = _residual(gmap, p0, q0, pt)
    res = np.abs(r).max(axis=1)
    active = res > cfg.abs_tol
    eps = cfg.fd_step
    for _ in range(cfg.max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        iters[idx] += 1
        pa, qa, p0a = pt[idx], q0[idx], p0[idx]
        n = len(idx)
        # central-difference Jacobian of the residual, all columns in one batch
        disp = np.concatenate([pa + eps * e for e in np.eye(d)] + [pa - eps * e for e in np.eye(d)])
        rd, _ = _residual(gmap, np.tile(p0a, (2 * d, 1)), np.tile(qa, (2 * d, 1)), disp)
        rp, rm = rd[: d * n].reshape(d, n, d), rd[d * n:].reshape(d, n, d)
        jac = ((rp - rm) / (2 * eps)).transpose(1, 2, 0)  # (n, d_out, d_in)
        try:
            delta = -np.linalg.solve(jac, r[idx][..., None])[..., 0]
        except np.linalg.LinAlgError:
            delta = r[idx]
        lam = np.ones(n)
        new = pa + delta
        r_new, g2_new = _residual(gmap, p0a, qa, new)
        res_new = np.abs(r_new).max(axis=1)
        for _ in range(30):
            worse = res_new >= res[idx]
            if not worse.any():
                break
            lam[worse] *= 0.5
            new[worse] = pa[worse] + lam[worse, None] * delta[worse]
            rw, gw = _residual(gmap, p0a[worse], qa[worse], new[worse])
            r_new[worse], g2_new[worse] = rw, gw
            res_new[worse] = np.abs(rw).max(axis=1)
        pt[idx], r[idx], g2[idx], res[idx] = new, r_new, g2_new, res_new
        active = res > cfg.abs_tol
    return pt, g2, res


def gf_solve(gmap: GenFunMap, x):
    """One step for a batch ``x`` of shape ``(B, 2d)``; returns ``(x1, iterations, residual)``."""
    cfg = gmap.solver
    d = gmap.d
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("non-finite state")
    p0, q0 = x[:, :d], x[:, d:]
    B = len(x)
    pt = p0.copy()
    g2 = np.empty_like(q0)
    res = np.full(B, np.inf)
    iters = np.zeros(B, dtype=np.int64)
    active = np.arange(B)
    prev = np.full(B, np.inf)
    stalled = np.zeros(B, dtype=bool)
    for _ in range(cfg.max_iter):
        if len(active) == 0:
            break
        r, g = _residual(gmap, p0[active], q0[active], pt[active])
        ra = np.abs(r).max(axis=1)
        res[active], g2[active] = ra, g
        done = ra <= cfg.abs_tol
        stall = ~done & (ra > 0.5 * prev[active])
        if cfg.newton_fallback:
            stalled[active[stall]] = True
        else:
            stall[:] = False
        keep = ~done & ~stall
        upd = active[keep]
        pt[upd] = pt[upd] + r[keep]
        iters[upd] += 1
        prev[active] = ra
        active = upd
    if len(active):
        # sweep budget exhausted; these rows get Newton too if enabled
        stalled[active] = cfg.newton_fallback
    if stalled.any():
        idx = np.flatnonzero(stalled)
        sub_iters = iters[idx].copy()
        p_new, g2_new, res_new = _newton(gmap, p0[idx], q0[idx], pt[idx].copy(), cfg, sub_iters)
        pt[idx], g2[idx], res[idx], iters[idx] = p_new, g2_new, res_new, sub_iters
    bad = ~(res <= cfg.abs_tol)
    if bad.any():
        worst = float(np.max(np.nan_to_num(res[bad], nan=np.inf)))
        raise SolverError(f"implicit step did not converge for {int(bad.sum())} state(s); "
                          f"last residual {worst:.3e}", residual=worst)
    x1 = np.concatenate([pt, q0 + gmap.h * g2], axis=1)
    return x1, iters, res


def gf_step(gmap: GenFunMap, x):
    """Advance ``x`` (shape ``(2d,)`` or ``(B, 2d)``) by one step."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return gf_solve(gmap, x[None])[0][0]
    return gf_solve(gmap, x)[0]


def gf_rollout(gmap: GenFunMap, x0, n_steps: int, wrap: float | None = None) -> Trajectory:
    """Iterate ``gf_step``. ``wrap`` reduces both coordinates modulo that period
    after every step (maps on the torus).

    Per-step solver iteration counts are stored in ``info["iterations"]``. On
    solver failure the raised :class:`SolverError` carries the partial trajectory.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    x = x0[None] if single else x0
    states = np.empty((n_steps + 1,) + x.shape)
    iterations = np.zeros((n_steps,) + x.shape[:1], dtype=np.int64)
    states[0] = x
    for i in range(n_steps):
        try:
            x, it, _ = gf_solve(gmap, x)
        except SolverError as err:
            part = states[: i + 1]
            err.step = i
            err.partial = Trajectory(gmap.h, part[:, 0] if single else part)
            raise
        if wrap is not None:
            x = np.mod(x, wrap)
        states[i + 1] = x
        iterations[i] = it
    if single:
        states, iterations = states[:, 0], iterations[:, 0]
    return Trajectory(gmap.h, states, info={"iterations": iterations})


def map_jacobian(gmap: GenFunMap, x) -> np.ndarray:
    """Central-difference Jacobian of the one-step map in ``[p, q]`` ordering."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None] if single else x
    B, n = xb.shape
    eps = gmap.solver.fd_step
    eye = np.eye(n) * eps
    plus, minus = xb[:, None, :] + eye, xb[:, None, :] - eye
    # divide by the representable step, not 2 eps, so linear maps come out exact
    step = np.einsum("bii->bi", plus - minus)
    y = gf_solve(gmap, np.concatenate([plus, minus], axis=1).reshape(-1, n))[0].reshape(B, 2, n, n)
    jac = ((y[:, 0] - y[:, 1]) / step[:, :, None]).transpose(0, 2, 1)  # [b, out, in]
    return jac[0] if single else jac


def canonical_J(d: int) -> np.ndarray:
    I = np.eye(d)
    Z = np.zeros((d, d))
    return np.block([[Z, I], [-I, Z]])


def symplecticity_defect(gmap: GenFunMap, x):
    """Frobenius norm of ``M^T J M - J`` for the map Jacobian ``M`` at ``x``."""
    M = map_jacobian(gmap, x)
    J = canonical_J(gmap.d)
    D = np.swapaxes(M, -1, -2) @ J @ M - J
    return np.sqrt(np.sum(D * D, axis=(-2, -1)))
