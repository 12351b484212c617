from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfnn.dataset import SamplingScheme, TrainingPairs, TrajectoryDataset, extract_pairs, generate_dataset
from gfnn.net import derivative_match_loss, init_net, input_grad, load_net
from gfnn.systems import SystemSpec
from gfnn.training import (AdamState, BaselineModel, TrainConfig, TrainingError, adam_step, baseline_rollout,
                           euler_error_bound, gfnn_inputs, integrate_field, train_baseline, train_gfnn)

HARMONIC = SystemSpec("harmonic")


def harmonic_field(x):
    return np.stack([-x[:, 1], x[:, 0]], axis=1)


def rotation_pairs(n, h, seed=0):
    x0 = np.random.default_rng(seed).uniform(-1, 1, (n, 2))
    c, s = np.cos(h), np.sin(h)
    x1 = np.stack([c * x0[:, 0] - s * x0[:, 1], s * x0[:, 0] + c * x0[:, 1]], 1)
    return extract_pairs(TrajectoryDataset(HARMONIC, h, np.stack([x0, x1], 1), seed=seed))


def full_loss(net, pairs, h):
    x, t = gfnn_inputs(pairs)
    return derivative_match_loss(net, x, t, scale=h)[0]


# --- config and Adam -----------------------------------------------------------------------


def test_config_validation_and_schedule():
    for bad in ({"batch_size": 0}, {"epochs": 0}, {"lr0": 0.0}, {"lr_schedule": "cosine"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.epochs, cfg.lr0, cfg.shuffle) == (200, 20, 0.01, True)
    assert [cfg.lr(e) for e in (0, 4, 5, 10)] == [0.01, 0.01, 0.005, 0.0025]
    assert TrainConfig(lr_schedule="constant").lr(19) == 0.01


def test_adam_zero_gradient():
    p = [np.array([1.0, -2.0]), np.array([[0.5]])]
    st0 = AdamState.zeros_like(p)
    new, st1 = adam_step(p, [np.zeros(2), np.zeros((1, 1))], st0, 0.01)
    for a, b in zip(new, p):
        np.testing.assert_array_equal(a, b)
    assert all(np.all(m == 0) for m in st1.m + st1.v)
    assert st1.t == 1


@given(st.floats(1e-2, 1e3), st.booleans())
def test_adam_first_step_is_sign(g, neg):
    g = -g if neg else g
    new, _ = adam_step([np.array([0.0])], [np.array([g])], AdamState.zeros_like([np.zeros(1)]), 0.01)
    # bias-corrected moments at t = 1 are g and g^2 exactly
    assert new[0][0] == pytest.approx(-0.01 * g / (abs(g) + 1e-8), rel=1e-14)
    assert new[0][0] == pytest.approx(-0.01 * np.sign(g), rel=1e-6)


def test_adam_constant_gradient_second_step():
    p, st0 = [np.array([0.0])], AdamState.zeros_like([np.zeros(1)])
    g = [np.array([0.7])]
    p1, st1 = adam_step(p, g, st0, 0.01)
    p2, _ = adam_step(p1, g, st1, 0.01)
    assert abs(p2[0][0] - p1[0][0]) <= 1.01 * abs(p1[0][0] - p[0][0])


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros_like([np.zeros(2)]), 0.01)


# --- GFNN training ----------------------------------------------------------------------------


def test_gfnn_fits_rotation_data():
    h = 0.1
    pairs = rotation_pairs(1000, h)
    net0 = init_net((2, 32, 32, 1), seed=0)
    net, hist = train_gfnn(pairs, net0, h, TrainConfig(batch_size=20))
    assert len(hist) == 20
    final = full_loss(net, pairs, h)
    assert final <= full_loss(net0, pairs, h)
    assert final <= 1e-6


def test_gfnn_memorizes_single_pair():
    h = 0.1
    seqs = np.tile([[[0.3, -0.5], [0.25, -0.48]]], (200, 1, 1))
    pairs = extract_pairs(TrajectoryDataset(HARMONIC, h, seqs, seed=0))
    net, _ = train_gfnn(pairs, init_net((2, 32, 32, 1), seed=0), h, TrainConfig(batch_size=20))
    assert full_loss(net, pairs, h) <= 1e-10


def test_gfnn_rejects_bad_input():
    pairs = rotation_pairs(10, 0.1)
    empty = TrainingPairs(pairs.q[:0], pairs.p_next[:0], pairs.dq[:0], pairs.dp[:0])
    with pytest.raises(ValueError):
        train_gfnn(empty, init_net((2, 4, 1), 0), 0.1)
    with pytest.raises(ValueError):
        train_gfnn(pairs, init_net((2, 4, 1), 0), 0.0)
    with pytest.raises(ValueError):
        train_gfnn(pairs, init_net((4, 4, 1), 0), 0.1)


def test_training_divergence_reports_epoch_and_batch():
    pairs = rotation_pairs(100, 0.1)
    pairs = replace(pairs, dq=pairs.dq * 1e300)
    with pytest.raises(TrainingError, match="epoch 0 batch 0"):
        train_gfnn(pairs, init_net((2, 8, 1), 0), 0.1, TrainConfig(lr0=1e300))


def test_training_deterministic():
    pairs = rotation_pairs(300, 0.1)
    cfg = TrainConfig(epochs=3, batch_size=50, seed=4)
    a, ha = train_gfnn(pairs, init_net((2, 8, 1), 1), 0.1, cfg)
    b, hb = train_gfnn(pairs, init_net((2, 8, 1), 1), 0.1, cfg)
    assert ha == hb
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.params(), b.params()))
    c, _ = train_gfnn(pairs, init_net((2, 8, 1), 1), 0.1, TrainConfig(epochs=3, batch_size=50, seed=5))
    assert any(x.tobytes() != y.tobytes() for x, y in zip(a.params(), c.params()))


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    pairs = rotation_pairs(300, 0.1)
    net0 = init_net((2, 8, 1), 2)
    full, hist = train_gfnn(pairs, net0, 0.1, TrainConfig(epochs=6, batch_size=50))
    ck = TrainConfig(epochs=6, batch_size=50, checkpoint_every=3, checkpoint_dir=str(tmp_path))
    # stop after 3 epochs, then resume from the checkpoint
    train_gfnn(pairs, net0, 0.1, TrainConfig(epochs=3, batch_size=50, checkpoint_every=3,
                                             checkpoint_dir=str(tmp_path)))
    assert load_net(tmp_path / "model.json").layer_dims == (2, 8, 1)
    resumed, hist2 = train_gfnn(pairs, net0, 0.1, ck, resume=str(tmp_path))
    assert hist2 == hist[3:]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(full.params(), resumed.params()))


# --- baselines -----------------------------------------------------------------------------------


def test_baseline_shape_checks():
    with pytest.raises(ValueError):
        BaselineModel("vfnn", init_net((2, 4, 1), 0))
    with pytest.raises(ValueError):
        BaselineModel("hnn", init_net((2, 4, 2), 0))
    with pytest.raises(ValueError):
        BaselineModel("sympnet", init_net((2, 4, 2), 0))
    with pytest.raises(ValueError):
        BaselineModel("hnn", init_net((2, 4, 1), 0), "leapfrog")
    BaselineModel("hnn", init_net((2, 4, 1), 0), "leapfrog", separable=True)


def test_vfnn_learns_free_particle_drift():
    fp = SystemSpec("free_particle")
    ds = generate_dataset(fp, SamplingScheme("uniform_box"), 0.1, 2, 2000, seed=0)
    cfg = TrainConfig(batch_size=10, epochs=60, lr_step_epochs=10)
    model, _ = train_baseline(ds, BaselineModel("vfnn", init_net((2, 32, 2), 0)), cfg)
    # every observed state lies in the data hull, including its extreme points
    x = ds.sequences.reshape(-1, 2)
    err = np.abs(model.field(x) - np.stack([np.zeros(len(x)), x[:, 0]], 1))
    assert err.max() <= 1e-2


def test_hnn_field_is_divergence_free():
    ds = generate_dataset(HARMONIC, SamplingScheme("uniform_box"), 0.1, 2, 500, seed=1)
    model, _ = train_baseline(ds, BaselineModel("hnn", init_net((2, 16, 16, 1), 0)), TrainConfig(epochs=3))
    x = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    eps = 1e-5
    div = np.zeros(len(x))
    for i in range(2):
        e = np.zeros(2)
        e[i] = eps
        div += (model.field(x + e)[:, i] - model.field(x - e)[:, i]) / (2 * eps)
    assert np.abs(div).max() <= 1e-6


def test_constant_dataset_gives_zero_field():
    seqs = np.tile([0.4, -0.3], (100, 3, 1))
    ds = TrajectoryDataset(HARMONIC, 0.1, seqs, seed=0)
    model, _ = train_baseline(ds, BaselineModel("vfnn", init_net((2, 16, 2), 0)), TrainConfig(batch_size=20))
    assert np.linalg.norm(model.field(seqs[0, :1]), axis=1).max() <= 1e-3


def test_baseline_accepts_explicit_arrays():
    x = np.random.default_rng(0).uniform(-1, 1, (200, 2))
    model, hist = train_baseline((x, harmonic_field(x)), BaselineModel("vfnn", init_net((2, 8, 2), 0)),
                                 TrainConfig(epochs=2))
    assert len(hist) == 2 and model.kind == "vfnn"


# --- rollouts ---------------------------------------------------------------------------------------


@pytest.mark.parametrize("scheme", ["euler", "rk4", "leapfrog"])
def test_zero_field_rollout_constant(scheme):
    tr = integrate_field(lambda x: np.zeros_like(x), np.array([0.2, -0.7]), 0.1, 50, scheme)
    assert np.all(tr.states == [0.2, -0.7])


def test_one_euler_step():
    tr = integrate_field(harmonic_field, np.array([0.0, 1.0]), 0.1, 1)
    np.testing.assert_allclose(tr.states[1], [-0.1, 1.0], atol=1e-15)


def test_rk4_vs_euler_radius():
    x0 = np.array([0.0, 1.0])
    r_rk4 = np.linalg.norm(integrate_field(harmonic_field, x0, 0.1, 1000, "rk4").states[-1])
    assert abs(r_rk4 - 1.0) <= 1e-5  # rk4 contracts by (1 - h^6/144) per step: 6.9e-6 total
    assert r_rk4 <= 1.0 + 1e-6  # and never grows
    r_eu = np.linalg.norm(integrate_field(harmonic_field, x0, 0.1, 1000, "euler").states[-1])
    assert r_eu > 1.5
    assert r_eu == pytest.approx(1.01 ** 500, rel=1e-10)  # sqrt(1 + h^2) per step, about 145


def test_baseline_rollout_uses_model_scheme():
    net = init_net((2, 8, 2), 0)
    m = BaselineModel("vfnn", net, "rk4")
    x0 = np.array([0.3, 0.1])
    a = baseline_rollout(m, x0, 0.1, 5)
    b = integrate_field(m.field, x0, 0.1, 5, "rk4")
    np.testing.assert_array_equal(a.states, b.states)


def test_rollout_nonfinite_reports_step():
    with pytest.raises(TrainingError, match="step 4"):
        integrate_field(lambda x: np.where(np.abs(x) > 1.5, np.inf, 0.0) + 1.0, np.array([0.0, 0.0]), 0.6, 10)


# --- Euler error bound ---------------------------------------------------------------------------------


def test_bound_examples():
    assert euler_error_bound(1.0, 0.1, 0.01, 0.0) == 0.0
    assert euler_error_bound(1.0, 0.0, 1e-300, 5.0) <= 1e-298
    assert euler_error_bound(1.0, 0.1, 0.01, 1.0) == pytest.approx((np.e - 1) * 0.105, rel=1e-14)
    assert euler_error_bound(1.0, 0.1, 0.01, 1.0) == pytest.approx(0.180420, abs=1e-6)
    with pytest.raises(ValueError):
        euler_error_bound(0.0, 0.1, 0.01, 1.0)


@pytest.mark.parametrize("delta", [0.0, 0.01, 0.1])
@pytest.mark.parametrize("h", [0.01, 0.1])
def test_bound_holds_for_perturbed_linear_field(delta, h):
    # x' = A x with A = [[0, 1], [-1, 0]] in (x1, x2) coordinates, perturbed by (delta, 0)
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    x0 = np.array([1.0, 0.0])
    n = int(round(10.0 / h))
    tr = integrate_field(lambda x: x @ A.T + [delta, 0.0], x0, h, n)
    t = tr.times
    exact = np.stack([np.cos(t), -np.sin(t)], 1)
    err = np.linalg.norm(tr.states - exact, axis=1)
    bound = np.array([euler_error_bound(1.0, delta, h, ti) for ti in t])
    assert np.all(err <= bound)
