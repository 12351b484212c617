"""Desk-scale experiments comparing the generating-function net with the Euler
vector-field baseline. Shared by the acceptance tests and ``scripts/``.

Each function trains both models from scratch with a fixed seed and returns a
plain dict of the measured quantities, so callers decide what counts as a pass.
"""
from __future__ import annotations

import logging
import time

import numpy as np

from . import dataset, diagnostics, genfun, net as nn, systems, training

log = logging.getLogger(__name__)


def _train_pair(ds, hidden, cfg, seed):
    """GFNN and euler-VFNN with identical hidden layers, data and optimizer settings."""
    n = 2 * ds.d
    t0 = time.perf_counter()
    gf, hist = training.train_gfnn(dataset.extract_pairs(ds), nn.init_net((n, *hidden, 1), seed), ds.h, cfg)
    t1 = time.perf_counter()
    vf, vhist = training.train_baseline(ds, training.BaselineModel("vfnn", nn.init_net((n, *hidden, n), seed)), cfg)
    t2 = time.perf_counter()
    log.info("trained gfnn %.1fs (loss %.3e), vfnn %.1fs (loss %.3e)", t1 - t0, hist[-1], t2 - t1, vhist[-1])
    return gf, vf, {"gfnn_loss": hist[-1], "vfnn_loss": vhist[-1], "train_seconds": t2 - t0}


# --- harmonic oscillator: error growth regimes ---------------------------------------------------


def harmonic_dichotomy(seed: int, n_pairs: int = 10_000, hidden=(64, 64), epochs: int = 20,
                       t_max: float = 200.0, window=(5.0, 200.0), x0=(0.0, 1.0)) -> dict:
    """Train on one-step pairs of the harmonic oscillator, roll out from ``x0`` and
    fit the growth of the phase-space error against the closed-form solution."""
    h = 0.1
    system = systems.SystemSpec("harmonic")
    ds = dataset.generate_dataset(system, dataset.SamplingScheme("uniform_box", low=-1.5, high=1.5), h, 2,
                                  n_pairs, seed)
    gf, vf, info = _train_pair(ds, hidden, training.TrainConfig(epochs=epochs, seed=seed), seed)
    n = int(round(t_max / h))
    t = h * np.arange(n + 1)
    p0, q0 = x0
    truth = systems.Trajectory(h, np.stack([p0 * np.cos(t) - q0 * np.sin(t), p0 * np.sin(t) + q0 * np.cos(t)], 1))
    out = dict(info, seed=seed)
    preds = {"gfnn": genfun.gf_rollout(genfun.GenFunMap(gf, h), np.array(x0), n),
             "vfnn": training.baseline_rollout(vf, np.array(x0), h, n)}
    for name, pred in preds.items():
        rep = diagnostics.trajectory_error(pred, truth)
        fit = diagnostics.fit_growth(rep.times, rep.total, window)
        out[name] = {"slope": fit.power_slope, "rate": fit.exp_rate, "preferred": fit.preferred,
                     "final_error": float(rep.total[-1]),
                     "final_radius": float(np.linalg.norm(pred.states[-1]))}
    out["error_ratio"] = out["vfnn"]["final_error"] / out["gfnn"]["final_error"]
    return out


# --- Kepler: drift of orbital elements -------------------------------------------------------------


def kepler_drift(seed: int, n_sequences: int = 20_000, hidden=(200, 100, 50, 20), epochs: int = 60,
                 lr_step_epochs: int = 10, n_ics: int = 100, t_max: float = 100.0, t_ref: float = 10.0) -> dict:
    """Roll both models out from ``n_ics`` fresh box initial conditions and compare
    the mean element drift at ``t_max`` with the one at ``t_ref``.

    For the GFNN the running maximum of the mean drift curve is used (no secular
    trend means the worst excursion is already reached early); for the baseline
    the point value, since a secular trend makes the end value the informative one.
    Escaped (unbound) baseline orbits count as infinite drift.
    """
    h = 0.1
    system = systems.SystemSpec("kepler2d")
    scheme = dataset.SamplingScheme("orbital_box")
    ds = dataset.generate_dataset(system, scheme, h, 2, n_sequences, seed)
    cfg = training.TrainConfig(epochs=epochs, lr_step_epochs=lr_step_epochs, seed=seed)
    gf, vf, info = _train_pair(ds, hidden, cfg, seed)
    x0 = dataset.sample_initial_conditions(system, scheme, n_ics, seed + 1000)
    n, i_ref = int(round(t_max / h)), int(round(t_ref / h))
    g = diagnostics.conserved_drift(genfun.gf_rollout(genfun.GenFunMap(gf, h), x0, n), system, strict=False)
    v = diagnostics.conserved_drift(training.baseline_rollout(vf, x0, h, n), system, strict=False)
    out = dict(info, seed=seed)
    for k in ("a", "e"):
        run_max = np.maximum.accumulate(g[k].mean(axis=1))
        out[f"gfnn_{k}_ref"], out[f"gfnn_{k}_max"] = float(run_max[i_ref]), float(run_max[-1])
        out[f"gfnn_{k}_ratio"] = float(run_max[-1] / run_max[i_ref])
        mean_v = v[k].mean(axis=1)
        out[f"vfnn_{k}_ref"], out[f"vfnn_{k}_end"] = float(mean_v[i_ref]), float(mean_v[-1])
        out[f"vfnn_{k}_ratio"] = float(mean_v[-1] / mean_v[i_ref])
    out["vfnn_escaped"] = int(np.count_nonzero(~np.isfinite(v["a"][-1])))
    return out


# --- standard map: long-run statistics --------------------------------------------------------------


def standard_map_kl(seed: int, K: float = 1.2, n_sequences: int = 100_000, hidden=(64, 64), epochs: int = 20,
                    n_steps: int = 100_000, x0=(0.1, 0.1), sigma: float = 0.5) -> dict:
    """Marginal KL divergences of long wrapped rollouts against the true map's orbit."""
    system = systems.SystemSpec("standard_map", K=K)
    scheme = dataset.SamplingScheme("gaussian_tube", ref_state=tuple(x0), sigma=sigma)
    ds = dataset.generate_dataset(system, scheme, 1.0, 2, n_sequences, seed)
    gf, vf, info = _train_pair(ds, hidden, training.TrainConfig(epochs=epochs, seed=seed), seed)
    x = np.array(x0, dtype=np.float64)
    truth = systems.standard_map_orbit(x, K, n_steps, wrap=True)
    two_pi = 2.0 * np.pi
    preds = {"gfnn": genfun.gf_rollout(genfun.GenFunMap(gf, 1.0), x, n_steps, wrap=two_pi).states,
             "vfnn": training.baseline_rollout(vf, x, 1.0, n_steps, wrap=two_pi).states}
    out = dict(info, seed=seed)
    for name, states in preds.items():
        pp, th = diagnostics.wrapped_marginals(states)
        out[name] = {"kl_p": diagnostics.marginal_kl(pp, truth[:, 0]),
                     "kl_theta": diagnostics.marginal_kl(th, truth[:, 1])}
    return out
