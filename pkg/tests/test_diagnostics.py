import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfnn.dataset import TrajectoryDataset, extract_pairs
from gfnn.diagnostics import (conserved_drift, fit_growth, fit_report, marginal_kl, poincare_section,
                              trajectory_error, wrapped_marginals, write_error_csv)
from gfnn.genfun import GenFunMap, gf_rollout
from gfnn.net import init_net
from gfnn.systems import SystemSpec, Trajectory, reference_integrate
from gfnn.training import TrainConfig, integrate_field, train_gfnn

HARMONIC = SystemSpec("harmonic")
KEPLER = SystemSpec("kepler2d")


def rotation_traj(x0, h, n, omega=1.0):
    t = h * np.arange(n + 1)
    c, s = np.cos(omega * t), np.sin(omega * t)
    p, q = x0
    return Trajectory(h, np.stack([c * p - s * q, s * p + c * q], axis=1))


# --- errors -------------------------------------------------------------------------------------


def test_error_of_identical_is_zero():
    tr = rotation_traj((0.0, 1.0), 0.1, 50)
    rep = trajectory_error(tr, tr)
    assert np.all(rep.q_err == 0) and np.all(rep.p_err == 0)


def test_constant_q_offset():
    tr = reference_integrate(KEPLER, [0, 1, 1, 0], 1e-2, 1.0)
    shifted = Trajectory(tr.h, tr.states + np.array([0, 0, 0.3, -0.4]))
    rep = trajectory_error(shifted, tr)
    np.testing.assert_allclose(rep.q_err, 0.5, atol=1e-14)
    assert np.all(rep.p_err == 0)


def test_phase_drift_oracle():
    eps, h = 1e-3, 0.1
    truth = rotation_traj((0.0, 1.0), h, 5000)
    pred = rotation_traj((0.0, 1.0), h, 5000, omega=1 + eps)
    rep = trajectory_error(pred, truth)
    envelope = np.abs(2 * np.sin(eps * truth.times / 2))
    # the full phase-space error is the chord length; q alone oscillates under it
    np.testing.assert_allclose(rep.total, envelope, atol=1e-12)
    assert np.all(rep.q_err <= envelope + 1e-12)
    assert rep.q_err.max() >= 0.99 * envelope.max()
    early = truth.times <= 10
    np.testing.assert_allclose(rep.total[early], eps * truth.times[early], rtol=1e-4, atol=1e-15)


def test_error_shape_checks():
    a = rotation_traj((0.0, 1.0), 0.1, 10)
    with pytest.raises(ValueError):
        trajectory_error(a, rotation_traj((0.0, 1.0), 0.1, 11))
    with pytest.raises(ValueError):
        trajectory_error(a, rotation_traj((0.0, 1.0), 0.2, 10))


@given(st.integers(0, 2 ** 31))
def test_error_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (Trajectory(0.1, rng.normal(size=(20, 4))) for _ in range(3))
    ab, bc, ac = trajectory_error(a, b), trajectory_error(b, c), trajectory_error(a, c)
    assert np.all(ac.q_err <= ab.q_err + bc.q_err + 1e-12)
    assert np.all(ac.p_err <= ab.p_err + bc.p_err + 1e-12)


def test_batched_error_is_batch_mean():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 15, 3, 2))
    rep = trajectory_error(Trajectory(0.1, a), Trajectory(0.1, b))
    np.testing.assert_allclose(rep.q_err, np.abs(a[..., 1] - b[..., 1]).mean(axis=1), atol=1e-15)


# --- growth fits -----------------------------------------------------------------------------------


def test_fit_linear():
    t = np.linspace(0.1, 200, 2000)
    fit = fit_growth(t, 0.01 * t)
    assert fit.power_slope == pytest.approx(1.0, abs=1e-6)
    assert fit.preferred == "power"


def test_fit_exponential():
    t = np.linspace(0.1, 40, 400)
    fit = fit_growth(t, 0.01 * np.exp(0.5 * t))
    assert fit.exp_rate == pytest.approx(0.5, abs=1e-6)
    assert fit.preferred == "exponential"


def test_fit_noisy_power():
    t = np.linspace(0.1, 200, 2000)
    err = 0.01 * t ** 1.1 * (1 + 0.01 * np.random.default_rng(0).normal(size=t.size))
    fit = fit_growth(t, err)
    assert 1.05 <= fit.power_slope <= 1.15


def test_fit_window_and_errors():
    t = np.linspace(0.0, 10, 101)
    err = np.r_[0.0, 0.01 * t[1:]]
    with pytest.raises(ValueError):
        fit_growth(t, err, window=(0.0, 10.0))
    fit = fit_growth(t, err)  # default window skips the exact-match start
    assert fit.window == (1.0, 10.0)
    with pytest.raises(ValueError):
        fit_growth(t, err, window=(1.0, 1.5))


def test_fit_report_attaches(tmp_path):
    truth = rotation_traj((0.0, 1.0), 0.1, 2000)
    rep = fit_report(trajectory_error(rotation_traj((0.0, 1.0), 0.1, 2000, 1.001), truth), window=(5, 100))
    assert rep.preferred == "power" and rep.power_slope == pytest.approx(1.0, abs=0.01)
    assert set(rep.residuals) == {"power", "exponential"}
    write_error_csv(rep, tmp_path / "e.csv")
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "t,q_err,p_err" and len(rows) == 2002


# --- conserved quantities --------------------------------------------------------------------------


def test_reference_drift_small():
    tr = reference_integrate(KEPLER, [0.0, 1.1, 1.0, 0.0], 1e-3, 20.0, record_every=100)
    drift = conserved_drift(tr, KEPLER)
    for k in ("energy", "a", "e"):
        assert drift[k].max() <= 1e-8


def test_constant_drift_zero():
    tr = Trajectory(0.1, np.tile([0.0, 1.1, 1.0, 0.0], (30, 1)))
    assert all(np.all(v == 0) for v in conserved_drift(tr, KEPLER).values())


def test_euler_energy_growth_closed_form():
    h, n = 0.1, 100
    tr = integrate_field(lambda x: np.stack([-x[:, 1], x[:, 0]], 1), np.array([0.0, 1.0]), h, n)
    drift = conserved_drift(tr, HARMONIC)["energy"]
    H0 = 0.5
    assert drift[-1] == pytest.approx(((1 + h * h) ** n - 1) * H0, rel=1e-10)
    assert drift[-1] / H0 == pytest.approx(1.7048, abs=1e-4)


def test_unbound_kepler_nonstrict():
    tr = Trajectory(0.1, np.array([[0.0, 1.0, 1.0, 0.0], [0.0, 1.6, 1.0, 0.0]]))
    drift = conserved_drift(tr, KEPLER, strict=False)
    assert drift["a"][0] == 0 and np.isinf(drift["a"][1])


def test_gfnn_energy_bounded_euler_monotone():
    h = 0.1
    x0 = np.random.default_rng(0).uniform(-1, 1, (1000, 2))
    c, s = np.cos(h), np.sin(h)
    x1 = np.stack([c * x0[:, 0] - s * x0[:, 1], s * x0[:, 0] + c * x0[:, 1]], 1)
    pairs = extract_pairs(TrajectoryDataset(HARMONIC, h, np.stack([x0, x1], 1), seed=0))
    net, _ = train_gfnn(pairs, init_net((2, 32, 32, 1), 0), h, TrainConfig(batch_size=20))
    start = np.array([0.0, 0.8])
    n = 10_000
    e_gf = conserved_drift(gf_rollout(GenFunMap(net, h), start, n), HARMONIC)["energy"]
    # bounded: no secular trend, the second half does not exceed the first
    half = n // 2
    assert e_gf[half:].max() <= 1.5 * e_gf[:half].max()
    assert e_gf.max() <= 0.05 * 0.32
    e_eu = conserved_drift(integrate_field(lambda x: np.stack([-x[:, 1], x[:, 0]], 1), start, h, n),
                           HARMONIC)["energy"]
    assert np.all(np.diff(e_eu[np.isfinite(e_eu)]) > 0)


# --- Poincare sections -------------------------------------------------------------------------------


def circle(h=0.01, T=2 * np.pi):
    t = np.arange(0, T + h / 2, h)
    # q1 = cos t, q2 = sin t, p = dq/dt
    return Trajectory(h, np.stack([-np.sin(t), np.cos(t), np.cos(t), np.sin(t)], 1))


def test_section_empty():
    tr = circle()
    tr = Trajectory(tr.h, tr.states + np.array([0, 0, 2.0, 0]))
    assert len(poincare_section(tr)) == 0


def test_section_circle_single_crossing():
    sec = poincare_section(circle())
    assert len(sec) == 1
    assert sec.times[0] == pytest.approx(1.5 * np.pi, abs=1e-4)
    # interpolated point: q1 is zero by construction, q2 = sin(3 pi / 2)
    assert sec.q2[0] == pytest.approx(-1.0, abs=1e-4)
    assert np.abs(np.cos(sec.times[0])) <= 1e-4


def test_section_direction_partition():
    tr = reference_integrate(SystemSpec("henon_heiles"), [0.3, 0.25, 0.0, 0.0], 0.01, 50.0)
    up, down = poincare_section(tr, direction=1), poincare_section(tr, direction=-1)
    s = tr.q[:, 0]
    n_sign_changes = np.count_nonzero((s[:-1] < 0) != (s[1:] < 0))
    assert len(up) + len(down) == n_sign_changes
    assert len(up) > 0 and len(down) > 0


def test_section_time_reversal():
    tr = reference_integrate(SystemSpec("henon_heiles"), [0.3, 0.25, 0.0, 0.0], 0.01, 50.0)
    rev = Trajectory(tr.h, np.concatenate([-tr.p[::-1], tr.q[::-1]], axis=1))
    a, b = poincare_section(tr, direction=1), poincare_section(rev, direction=-1)
    assert len(a) == len(b)
    np.testing.assert_allclose(np.sort(a.q2), np.sort(b.q2), atol=1e-12)


def test_section_refined_matches_interpolated():
    tr = reference_integrate(SystemSpec("henon_heiles"), [0.3, 0.25, 0.0, 0.0], 0.01, 20.0)
    lin = poincare_section(tr)
    ref = poincare_section(tr, refine=SystemSpec("henon_heiles"))
    assert len(lin) == len(ref)
    assert np.abs(lin.q2 - ref.q2).max() <= 1e-4


def test_section_needs_d2():
    with pytest.raises(ValueError):
        poincare_section(rotation_traj((0.0, 1.0), 0.1, 10))


# --- KL --------------------------------------------------------------------------------------------


def test_kl_identical_zero():
    x = np.random.default_rng(0).uniform(0, 2 * np.pi, 10_000)
    assert marginal_kl(x, x.copy()) <= 1e-12


def test_kl_uniform_vs_half():
    rng = np.random.default_rng(1)
    truth, pred = rng.uniform(0, 1, 100_000), rng.uniform(0, 0.5, 100_000)
    kl = marginal_kl(pred, truth, n_bins=10, value_range=(0, 1))
    assert kl == pytest.approx(np.log(2), abs=0.02)


def test_kl_disjoint_finite():
    n, bins = 10_000, 10
    kl = marginal_kl(np.full(n, 0.05), np.full(n, 0.95), n_bins=bins, value_range=(0, 1))
    assert np.isfinite(kl)
    # one bin each holds n + 1 of n + bins pseudo-counts, the rest hold 1
    assert kl == pytest.approx(n / (n + bins) * np.log(n + 1), rel=1e-12)


@given(st.integers(0, 2 ** 31))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(3, 1, 500), rng.normal(3.5, 2, 700)
    assert marginal_kl(a, b) >= 0
    assert marginal_kl(a, b, n_bins=7) >= 0


def test_kl_rejects():
    with pytest.raises(ValueError):
        marginal_kl([1.0], [1.0], n_bins=1)
    with pytest.raises(ValueError):
        marginal_kl([], [1.0])


def test_wrapped_marginals():
    p, th = wrapped_marginals(np.array([[7.0, -1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(p, [7.0 - 2 * np.pi, 1.0])
    np.testing.assert_allclose(th, [2 * np.pi - 1.0, 2.0])
