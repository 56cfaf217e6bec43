from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from alphaorder.core import (
    critic_input_dim,
    evaluate_objective,
    pointer_input_dim,
    random_scenario,
    scenario_to_dict,
)
from alphaorder.exceptions import ConfigurationError
from alphaorder.geometry import GeometryConfig, build_geometry
from alphaorder.neural import (
    CriticDims,
    PolicyDims,
    critic_value,
    decode_order,
    grad_critic,
    init_critic,
    init_params,
)
from alphaorder.simulator import DemandConfig
from alphaorder.training import (
    AdamState,
    Dataset,
    TrainConfig,
    adam_step,
    clip_global_norm,
    fine_tune_from_search,
    load_dataset,
    load_pairs,
    lr_schedule,
    resume,
    sample_dataset,
    save_dataset,
    save_pairs,
    train,
    train_step,
    transfer_init,
)

TOY_POLICY = PolicyDims(embed_dim=8, hidden_dim=8)


def toy_critic_dims(geometry):
    return CriticDims(critic_input_dim(geometry), embed_dim=8, hidden_dim=8, fc1=12, fc2=6)


# --- learning-rate schedule ----------------------------------------------------


def test_lr_schedule_identities():
    cfg = TrainConfig(n_vehicles=4, lr0=0.001)
    assert lr_schedule(cfg, 1) == 0.001
    assert lr_schedule(cfg, 10_000) == 0.001
    assert lr_schedule(cfg, 10_999) == 0.001
    assert lr_schedule(cfg, 11_000) == pytest.approx(0.001 * 0.98, abs=1e-18)
    assert lr_schedule(cfg, 12_000) == pytest.approx(0.001 * 0.98**2, abs=1e-18)


# --- ADAM ------------------------------------------------------------------------


def test_adam_matches_hand_recurrence():
    params = {"a": np.array([1.0]), "b": np.array([-2.0])}
    grads = {"a": np.array([0.5]), "b": np.array([-1.0])}
    state = AdamState.zeros_like(params)
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8

    out = adam_step(params, grads, state, lr)
    # hand recurrence, t = 1
    for name in params:
        g = grads[name][0]
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        m_hat = m / (1 - b1)
        v_hat = v / (1 - b2)
        expected = params[name][0] - lr * m_hat / (math.sqrt(v_hat) + eps)
        assert out[name][0] == pytest.approx(expected, abs=1e-12)

    grads2 = {"a": np.array([-0.25]), "b": np.array([2.0])}
    out2 = adam_step(out, grads2, state, lr)
    for name in params:
        g1, g2 = grads[name][0], grads2[name][0]
        m = b1 * ((1 - b1) * g1) + (1 - b1) * g2
        v = b2 * ((1 - b2) * g1 * g1) + (1 - b2) * g2 * g2
        m_hat = m / (1 - b1**2)
        v_hat = v / (1 - b2**2)
        expected = out[name][0] - lr * m_hat / (math.sqrt(v_hat) + eps)
        assert out2[name][0] == pytest.approx(expected, abs=1e-12)


def test_clip_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}  # norm 5
    clipped = clip_global_norm(grads, 2.0)
    total = math.sqrt(sum(float(np.sum(g * g)) for g in clipped.values()))
    assert total == pytest.approx(2.0, abs=1e-12)
    untouched = clip_global_norm(grads, 10.0)
    assert untouched is grads


# --- train_step ------------------------------------------------------------------


def test_zero_advantage_means_zero_policy_update(geometry, rng):
    # single vehicle: every order has J = 0; critic with a zeroed head
    # predicts exactly 0, so the advantage vanishes and nothing moves
    theta, delta = init_params(TOY_POLICY, toy_critic_dims(geometry), rng)
    for k in ("fc3_w", "fc3_b"):
        delta[k] = np.zeros_like(delta[k])
    batch = [random_scenario(geometry, 1, rng) for _ in range(4)]
    cfg = TrainConfig(n_vehicles=1, batch_size=4, embed_dim=8, hidden_dim=8)
    ot, od = AdamState.zeros_like(theta), AdamState.zeros_like(delta)
    theta2, delta2, stats = train_step(
        theta, delta, batch, ot, od, cfg, np.random.default_rng(0), 1e-3
    )
    assert stats.mean_abs_advantage == 0.0
    for k in theta:
        np.testing.assert_array_equal(theta2[k], theta[k])
    for k in delta:
        np.testing.assert_array_equal(delta2[k], delta[k])


def test_train_step_golden_transcript(geometry):
    """One step on a frozen toy batch reproduces the recorded stats bit-exactly."""
    rng = np.random.default_rng(2024)
    batch = [random_scenario(geometry, 5, rng, rightofway_max=6.0) for _ in range(8)]
    theta, delta = init_params(
        PolicyDims(pointer_input_dim(), 8, 8),
        CriticDims(critic_input_dim(geometry), 8, 8, fc1=12, fc2=6),
        np.random.default_rng(7),
    )
    cfg = TrainConfig(n_vehicles=5, batch_size=8, embed_dim=8, hidden_dim=8, seed=7)
    ot, od = AdamState.zeros_like(theta), AdamState.zeros_like(delta)
    t2, d2, stats = train_step(theta, delta, batch, ot, od, cfg, np.random.default_rng(99), 1e-3)
    assert stats.mean_j == 4.273126212407855
    assert stats.mean_abs_advantage == 4.235910861111911
    assert stats.enforceable_frac == 1.0
    assert stats.mean_baseline == 0.14543201115304422
    assert float(sum(np.sum(v) for v in t2.values())) == -0.6451765392327697
    assert float(sum(np.sum(v) for v in d2.values())) == 7.280249924309636
    t3, _, stats2 = train_step(t2, d2, batch, ot, od, cfg, np.random.default_rng(100), 1e-3)
    assert stats2.mean_j == 380.11015709904217
    assert float(sum(np.sum(v) for v in t3.values())) == -0.6456303717312744


def test_critic_mse_decreases_on_frozen_batch(geometry, rng):
    delta = init_critic(toy_critic_dims(geometry), rng)
    batch = [(random_scenario(geometry, 4, rng), float(rng.uniform(0, 20))) for _ in range(8)]
    state = AdamState.zeros_like(delta)

    def mse():
        return sum((critic_value(delta, s) - t) ** 2 for s, t in batch) / len(batch)

    losses = [mse()]
    for _ in range(10):
        grads = {k: np.zeros_like(v) for k, v in delta.items()}
        for s, target in batch:
            g, _ = grad_critic(delta, s, target)
            for k in grads:
                grads[k] += g[k] / len(batch)
        delta = adam_step(delta, grads, state, 1e-4)
        losses.append(mse())
    assert all(b < a for a, b in zip(losses, losses[1:]))


# --- datasets ---------------------------------------------------------------------


def test_dataset_roundtrip(tmp_path, geometry, rng):
    instances = [random_scenario(geometry, 5, rng, rightofway_max=4.0) for _ in range(6)]
    ds = Dataset(geometry, instances, 5, provenance={"kind": "synthetic"})
    p = tmp_path / "data.jsonl"
    save_dataset(ds, str(p))
    ds2 = load_dataset(str(p))
    assert ds2.n_vehicles == 5
    assert ds2.provenance == {"kind": "synthetic"}
    assert len(ds2.instances) == 6
    for a, b in zip(ds.instances, ds2.instances):
        assert scenario_to_dict(a) == scenario_to_dict(b)


def test_sample_dataset_contract(geometry):
    ds = sample_dataset(geometry, None, 4, 10, seed=5)
    assert len(ds.instances) == 10
    assert all(s.n == 4 for s in ds.instances)
    assert ds.provenance["kind"] == "simulator"


def test_sample_dataset_deterministic(geometry):
    a = sample_dataset(geometry, None, 5, 8, seed=9)
    b = sample_dataset(geometry, None, 5, 8, seed=9)
    for x, y in zip(a.instances, b.instances):
        assert scenario_to_dict(x) == scenario_to_dict(y)


def test_sample_dataset_impossible_demand(geometry):
    demand = DemandConfig(arrival_rate=2.0)  # nearly empty roads
    with pytest.raises(ConfigurationError, match="arrival rate"):
        sample_dataset(geometry, demand, 12, 50, seed=1, max_duration_s=4000.0)


# --- the epoch loop ----------------------------------------------------------------


def tiny_dataset(geometry, n, count, seed=3):
    rng = np.random.default_rng(seed)
    return Dataset(
        geometry,
        [random_scenario(geometry, n, rng, rightofway_max=4.0) for _ in range(count)],
        n,
    )


def test_train_learns_on_tiny_problem(geometry):
    from alphaorder.core import is_enforceable

    ds = tiny_dataset(geometry, 4, 96)
    cfg = TrainConfig(
        n_vehicles=4, batch_size=16, epochs=10, seed=1, embed_dim=16, hidden_dim=16
    )
    result = train(ds, cfg)
    assert len(result.curve) <= 10
    first, last = result.curve[0], result.curve[-1]
    assert last["mean_J"] < first["mean_J"]
    greedy_ok = sum(
        is_enforceable(decode_order(result.theta, s).order, s) for s in ds.instances
    )
    assert greedy_ok / len(ds.instances) >= 0.95


def test_train_emits_curve_and_checkpoints(tmp_path, geometry):
    ds = tiny_dataset(geometry, 3, 32)
    cfg = TrainConfig(n_vehicles=3, batch_size=16, epochs=2, seed=2, embed_dim=8, hidden_dim=8)
    out = tmp_path / "run"
    result = train(ds, cfg, out_dir=str(out))
    assert (out / "curve.csv").exists()
    assert (out / "epoch_0000.ckpt").exists()
    assert (out / "final.ckpt").exists()
    lines = (out / "curve.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,mean_J,enforceable_frac,lr"
    assert len(lines) == 1 + len(result.curve)


def test_resume_reproduces_uninterrupted_run(tmp_path, geometry):
    ds = tiny_dataset(geometry, 3, 48)
    cfg = TrainConfig(n_vehicles=3, batch_size=16, epochs=3, seed=4, embed_dim=8, hidden_dim=8)
    full = train(ds, cfg)

    out = tmp_path / "part"
    train(ds, dataclasses.replace(cfg, epochs=1), out_dir=str(out))
    resumed = resume(ds, str(out / "epoch_0000.ckpt"), epochs=3)
    for k in full.theta:
        np.testing.assert_array_equal(full.theta[k], resumed.theta[k])
    for k in full.delta:
        np.testing.assert_array_equal(full.delta[k], resumed.delta[k])


# --- transfer ------------------------------------------------------------------------


def test_transfer_same_geometry_identity(geometry, rng):
    theta, delta = init_params(TOY_POLICY, toy_critic_dims(geometry), rng)
    t2, d2 = transfer_init(theta, delta, geometry)
    for k in theta:
        np.testing.assert_array_equal(t2[k], theta[k])
    for k in delta:
        np.testing.assert_array_equal(d2[k], delta[k])


def test_transfer_resizes_critic_embedding(geometry, rng):
    theta, delta = init_params(TOY_POLICY, toy_critic_dims(geometry), rng)
    wide = build_geometry(GeometryConfig(grid_rows=6, grid_cols=7))  # 42 subzones
    t2, d2 = transfer_init(theta, delta, wide, seed=3)
    assert d2["embed_w"].shape == (8, 27 + 42)
    for k in theta:
        np.testing.assert_array_equal(t2[k], theta[k])
    for k in delta:
        if k in ("embed_w", "embed_b"):
            continue
        np.testing.assert_array_equal(d2[k], delta[k])


def test_transfer_refuses_pointer_width_change(geometry, rng):
    theta, delta = init_params(TOY_POLICY, toy_critic_dims(geometry), rng)
    thirteen = build_geometry(GeometryConfig(lanes_per_approach=(4, 3, 3, 3)))
    with pytest.raises(ConfigurationError, match="12 entry lanes"):
        transfer_init(theta, delta, thirteen)


# --- fine-tuning -----------------------------------------------------------------------


def make_pairs(geometry, rng, count=8, n=4):
    from alphaorder.baselines import enumerate_optimal

    pairs = []
    for _ in range(count):
        s = random_scenario(geometry, n, rng)
        pairs.append((s, enumerate_optimal(s).best_order))
    return pairs


def test_fine_tune_loss_decreases(geometry, rng):
    theta, _ = init_params(TOY_POLICY, toy_critic_dims(geometry), rng)
    pairs = make_pairs(geometry, rng)
    _, losses = fine_tune_from_search(theta, pairs, steps=20, lr=1e-3)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_fine_tune_converges_to_near_zero_update(geometry, rng):
    from alphaorder.neural import grad_logprob

    theta, _ = init_params(TOY_POLICY, toy_critic_dims(geometry), rng)
    pairs = make_pairs(geometry, rng, count=1)
    theta, losses = fine_tune_from_search(theta, pairs, steps=400, lr=3e-3)
    assert losses[-1] < 0.05
    # the improved order now is the greedy decode and the cross-entropy
    # gradient (the update direction) has nearly vanished
    s, order = pairs[0]
    assert decode_order(theta, s).order == order
    grads, logp = grad_logprob(theta, s, order)
    assert math.exp(logp) > 0.95
    gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    assert gnorm < 0.5


def test_fine_tune_does_not_worsen_greedy(geometry, rng):
    theta, _ = init_params(TOY_POLICY, toy_critic_dims(geometry), rng)
    pairs = make_pairs(geometry, rng, count=8, n=4)

    def mean_greedy_j():
        total = 0.0
        for s, _ in pairs:
            from alphaorder.core import repair_order

            order = repair_order(decode_order(theta, s).order, s)
            total += evaluate_objective(order, s)
        return total / len(pairs)

    before = mean_greedy_j()
    theta, _ = fine_tune_from_search(theta, pairs, steps=120, lr=2e-3)
    after = mean_greedy_j()
    assert after <= before + 1e-9


def test_pairs_roundtrip(tmp_path, geometry, rng):
    pairs = make_pairs(geometry, rng, count=3)
    p = tmp_path / "pairs.jsonl"
    save_pairs(pairs, str(p))
    loaded = load_pairs(str(p))
    assert len(loaded) == 3
    for (s1, o1), (s2, o2) in zip(pairs, loaded):
        assert o1 == o2
        assert scenario_to_dict(s1) == scenario_to_dict(s2)
