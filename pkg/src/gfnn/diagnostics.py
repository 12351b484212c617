"""Prediction-quality diagnostics: error curves, growth-regime fits, drift of
conserved quantities, Poincare sections and histogram KL divergences."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import systems
from .systems import SystemSpec, Trajectory

TWO_PI = 2.0 * np.pi


@dataclass
class ErrorReport:
    times: np.ndarray
    q_err: np.ndarray
    p_err: np.ndarray
    power_slope: float | None = None
    exp_rate: float | None = None
    preferred: str | None = None
    fit_window: tuple[float, float] | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def total(self) -> np.ndarray:
        return np.hypot(self.q_err, self.p_err)


def trajectory_error(pred: Trajectory, truth: Trajectory) -> ErrorReport:
    """Per-time L2 errors in q and p. Batched trajectories are averaged over the batch."""
    if pred.states.shape != truth.states.shape:
        raise ValueError(f"trajectory shapes differ: {pred.states.shape} vs {truth.states.shape}")
    if not np.isclose(pred.h, truth.h, rtol=1e-12, atol=0.0):
        raise ValueError(f"step sizes differ: {pred.h} vs {truth.h}")
    q_err = np.linalg.norm(pred.q - truth.q, axis=-1)
    p_err = np.linalg.norm(pred.p - truth.p, axis=-1)
    if q_err.ndim > 1:
        q_err, p_err = q_err.mean(axis=1), p_err.mean(axis=1)
    return ErrorReport(truth.times, q_err, p_err)


@dataclass(frozen=True)
class GrowthFit:
    power_slope: float
    exp_rate: float
    preferred: str
    rss_power: float
    rss_exp: float
    window: tuple[float, float]


def fit_growth(times, err, window: tuple[float, float] | None = None, skip: int = 10) -> GrowthFit:
    """Least-squares fits of ``log err`` against ``log t`` (power law) and ``t``
    (exponential). The fit with the smaller residual sum of squares is preferred.

    Without an explicit window the first ``skip`` samples are dropped.
    """
    times = np.asarray(times, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    if window is None:
        window = (times[min(skip, len(times) - 1)], times[-1])
    sel = (times >= window[0]) & (times <= window[1])
    t, e = times[sel], err[sel]
    if len(t) < 10:
        raise ValueError(f"need at least 10 points in window {window}, have {len(t)}")
    if np.any(~(e > 0)) or np.any(t <= 0):
        raise ValueError("errors and times in the fit window must be positive")
    y = np.log(e)

    def line(x):
        A = np.stack([x, np.ones_like(x)], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        r = y - A @ coef
        return float(coef[0]), float(r @ r)

    slope, rss_p = line(np.log(t))
    rate, rss_e = line(t)
    preferred = "power" if rss_p < rss_e else "exponential"
    return GrowthFit(slope, rate, preferred, rss_p, rss_e, (float(window[0]), float(window[1])))


def fit_report(report: ErrorReport, window=None, component: str = "total") -> ErrorReport:
    """Attach growth fits to ``report``; returns it for chaining."""
    err = {"total": report.total, "q": report.q_err, "p": report.p_err}[component]
    fit = fit_growth(report.times, err, window)
    report.power_slope, report.exp_rate, report.preferred = fit.power_slope, fit.exp_rate, fit.preferred
    report.fit_window = fit.window
    report.residuals = {"power": fit.rss_power, "exponential": fit.rss_exp}
    return report


def conserved_drift(traj: Trajectory, sys: SystemSpec, strict: bool = True) -> dict:
    """``|H(x_n) - H(x_0)|`` and, for Kepler, ``|a_n - a_0|`` and ``|e_n - e_0|``.

    With ``strict=False`` states where the orbital elements are undefined
    (unbound orbits) get infinite element drift instead of raising.
    """
    x = traj.states
    H = systems.hamiltonian(sys, x)
    out = {"energy": np.abs(H - H[0])}
    if sys.tag == "kepler2d":
        if strict:
            a, e = systems.orbital_elements(x)
        else:
            p, q = systems.split(x)
            L = q[..., 0] * p[..., 1] - q[..., 1] * p[..., 0]
            bound = H < 0
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.where(bound, -0.5 / H, np.inf)
                e = np.where(bound, np.sqrt(np.maximum(0.0, 1.0 + 2.0 * H * L * L)), np.inf)
        with np.errstate(invalid="ignore"):
            out["a"] = np.abs(a - a[0])
            out["e"] = np.abs(e - e[0])
    return out


@dataclass
class SectionPoints:
    q2: np.ndarray
    p2: np.ndarray
    direction: int
    times: np.ndarray | None = None

    def __len__(self):
        return len(self.q2)


def _rk4_from(sys, x, s):
    f = lambda y: systems.vector_field(sys, y)
    k1 = f(x)
    k2 = f(x + 0.5 * s * k1)
    k3 = f(x + 0.5 * s * k2)
    k4 = f(x + s * k3)
    return x + (s / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def poincare_section(traj: Trajectory, plane_coord: int = 0, direction: int = 1,
                     refine: SystemSpec | None = None, tol: float = 1e-13) -> SectionPoints:
    """Crossings of ``q[plane_coord] = 0`` with ``p[plane_coord] * direction > 0``.

    Crossing points are linearly interpolated between stored states. Passing the
    system as ``refine`` instead bisects on a single RK4 sub-step from the
    preceding state (for fine reference trajectories).
    """
    if traj.d != 2:
        raise ValueError("Poincare sections need a d = 2 trajectory")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    x = traj.states
    d = 2
    other = 1 - plane_coord
    s = x[:, d + plane_coord]
    idx = np.flatnonzero((s[:-1] < 0) != (s[1:] < 0))
    lam = s[idx] / (s[idx] - s[idx + 1])
    pts = x[idx] + lam[:, None] * (x[idx + 1] - x[idx])
    if refine is not None and len(idx):
        for k, i in enumerate(idx):
            lo, hi = 0.0, traj.h
            s_lo = s[i]
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                y = _rk4_from(refine, x[i], mid)
                if (y[d + plane_coord] < 0) == (s_lo < 0):
                    lo = mid
                else:
                    hi = mid
                if hi - lo < tol:
                    break
            pts[k] = _rk4_from(refine, x[i], 0.5 * (lo + hi))
            lam[k] = 0.5 * (lo + hi) / traj.h
    keep = pts[:, plane_coord] * direction > 0
    times = traj.t0 + traj.h * (idx + lam)
    return SectionPoints(pts[keep, d + other], pts[keep, other], direction, times[keep])


def marginal_kl(samples_pred, samples_truth, n_bins: int = 100, value_range=(0.0, TWO_PI),
                alpha: float = 1.0) -> float:
    """``KL(pred || truth)`` between add-``alpha`` smoothed histograms on shared bins.

    Values outside ``value_range`` are counted in the edge bins.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    a = np.asarray(samples_pred, dtype=np.float64).ravel()
    b = np.asarray(samples_truth, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample set")
    lo, hi = value_range
    edges = np.linspace(lo, hi, n_bins + 1)

    def probs(v):
        k = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, n_bins - 1)
        c = np.bincount(k, minlength=n_bins) + alpha
        return c / c.sum()

    P, Q = probs(a), probs(b)
    return float(max(0.0, np.sum(P * np.log(P / Q))))


def wrapped_marginals(states) -> tuple[np.ndarray, np.ndarray]:
    """Both coordinates of ``[p, theta]`` states reduced modulo 2pi."""
    s = np.mod(np.asarray(states).reshape(-1, 2), TWO_PI)
    return s[:, 0], s[:, 1]


# --- CSV exports -------------------------------------------------------------------


def write_error_csv(report: ErrorReport, path, extra: dict | None = None) -> None:
    cols = {"t": report.times, "q_err": report.q_err, "p_err": report.p_err}
    cols.update(extra or {})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([f"{v:.17g}" for v in row])


def write_summary_csv(rows: list[dict], path) -> None:
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in r.items()})


def write_section_csv(sec: SectionPoints, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "q2", "p2"])
        for t, q, p in zip(sec.times, sec.q2, sec.p2):
            w.writerow([f"{t:.17g}", f"{q:.17g}", f"{p:.17g}"])
