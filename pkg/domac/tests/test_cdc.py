import numpy as np
import pytest

from domac import cdc
from domac.cdc import (
    CriticNet,
    TargetDistribution,
    bellman_target,
    critic_forward,
    greedy_joint_action,
    quantile_huber_loss,
    quantile_huber_values,
    quantile_levels,
    scalar_critic_loss,
)
from domac.diffcore import mlp_forward
from domac.errors import ConfigurationError, EnumerationCapError, ShapeError
from domac.selftest import quantile_huber_gradient_error, quantile_recovery_error, scalar_td_gradient_error


def constant_critic(rng, outputs, n_agents=2, obs_dim=3):
    """Critic whose output ignores its input."""
    outputs = np.asarray(outputs, dtype=np.float64)
    net = CriticNet.build(n_agents, obs_dim, len(outputs), (4,), rng)
    net.params[-2].values[...] = 0.0
    net.params[-1].values[...] = outputs
    return net


def test_quantile_levels():
    assert np.allclose(quantile_levels(5), [0.1, 0.3, 0.5, 0.7, 0.9])
    assert np.allclose(quantile_levels(3, "uniform"), [1 / 3, 2 / 3, 1.0])
    assert np.all(np.diff(quantile_levels(7)) > 0)
    with pytest.raises(ConfigurationError):
        quantile_levels(0)
    with pytest.raises(ConfigurationError):
        quantile_levels(5, "random")


def test_forward_shapes_and_determinism(rng):
    net = CriticNet.build(2, 3, 5, (8,), rng)
    obs = rng.normal(size=(4, 2, 3))
    acts = rng.integers(0, 5, size=(4, 2))
    a = critic_forward(net, obs, acts)
    b = critic_forward(net, obs, acts)
    assert a.values.shape == (4, 5)
    assert np.array_equal(a.values, b.values)
    single = critic_forward(net, obs[0], acts[0])
    assert np.allclose(single.values[0], a.values[0], atol=1e-15)


def test_forward_matches_mlp_composition(rng):
    net = CriticNet.build(2, 3, 5, (8,), rng)
    obs = rng.normal(size=(2, 2, 3))
    acts = np.array([[0, 4], [2, 2]])
    manual = np.concatenate([obs.reshape(2, -1), np.eye(5)[acts].reshape(2, -1)], axis=1)
    expected, _ = mlp_forward(net.spec, net.params, manual)
    assert np.max(np.abs(critic_forward(net, obs, acts).values - expected)) < 1e-15


def test_zero_final_layer_gives_zero_quantiles(rng):
    net = constant_critic(rng, np.zeros(5))
    assert np.all(critic_forward(net, rng.normal(size=(3, 2, 3)), np.zeros((3, 2), dtype=int)).values == 0.0)


def test_forward_rejects_mismatched_input(rng):
    net = CriticNet.build(2, 3, 5, (8,), rng)
    with pytest.raises(ShapeError):
        critic_forward(net, np.zeros((4, 2, 4)), np.zeros((4, 2), dtype=int))
    with pytest.raises(ShapeError):
        critic_forward(net, np.zeros((4, 2, 3)), np.zeros((4, 3), dtype=int))


def test_greedy_on_constant_output_picks_first_joint_action(rng):
    net = constant_critic(rng, [1.0, 2.0, 3.0])
    assert greedy_joint_action(net, rng.normal(size=(2, 3))).tolist() == [[0, 0]]


def test_greedy_finds_hand_crafted_best_action(rng):
    net = CriticNet.build(2, 3, 1, (1,), rng)
    for p in net.params:
        p.values[...] = 0.0
    w0 = net.params[0].values
    w0[2 * 3 + 3, 0] = 1.0          # agent 0 plays action 3
    w0[2 * 3 + 5 + 1, 0] = 1.0      # agent 1 plays action 1
    net.params[2].values[...] = 1.0
    obs = rng.normal(size=(2, 3))
    assert greedy_joint_action(net, obs).tolist() == [[3, 1]]
    net.params[3].values[...] = 42.0
    assert greedy_joint_action(net, obs).tolist() == [[3, 1]]


def test_greedy_is_shift_invariant(rng):
    net = CriticNet.build(2, 3, 5, (8,), rng)
    obs = rng.normal(size=(6, 2, 3))
    before = greedy_joint_action(net, obs)
    net.params[-1].values += 3.5
    assert np.array_equal(greedy_joint_action(net, obs), before)


def test_greedy_chunking_does_not_change_result(rng, monkeypatch):
    net = CriticNet.build(2, 3, 5, (8,), rng)
    obs = rng.normal(size=(7, 2, 3))
    whole = greedy_joint_action(net, obs)
    monkeypatch.setattr(cdc, "GREEDY_CHUNK_ROWS", 30)
    assert np.array_equal(greedy_joint_action(net, obs), whole)


def test_greedy_respects_enumeration_cap(rng):
    net = CriticNet.build(4, 2, 5, (4,), rng)
    with pytest.raises(EnumerationCapError):
        greedy_joint_action(net, np.zeros((4, 2)), cap=100)


def test_bellman_target_examples(rng):
    net = constant_critic(rng, [0.0, 1.0, 2.0, 3.0, 4.0])
    nxt = rng.normal(size=(3, 2, 3))
    target = bellman_target(net, [-0.01, 5.0, 1.0], [False, True, False], nxt, 0.95)
    assert np.allclose(target.values[0], [-0.01, 0.94, 1.89, 2.84, 3.79], atol=1e-12)
    assert target.values[1].tolist() == [5.0] * 5
    assert np.allclose(bellman_target(net, [1.0, 1.0, 1.0], [False] * 3, nxt, 0.0).values, 1.0)
    assert target.greedy_actions.shape == (3, 2)


def test_bellman_target_rejects_gamma(rng):
    net = constant_critic(rng, np.zeros(5))
    with pytest.raises(ConfigurationError):
        bellman_target(net, [0.0], [False], np.zeros((1, 2, 3)), 1.0)


def test_target_is_detached(rng):
    net = CriticNet.build(2, 3, 5, (8,), rng)
    target = bellman_target(net, [0.5, 0.1], [False, False], rng.normal(size=(2, 2, 3)), 0.9)
    stored = target.values.copy()
    for p in net.params:
        p.values += 0.1
    assert np.array_equal(target.values, stored)


def test_quantile_huber_hand_examples():
    loss, _ = quantile_huber_values([[0.0]], [[2.0]], 1.0, np.array([0.25]))
    assert loss == pytest.approx(0.375, abs=1e-15)
    up, _ = quantile_huber_values([[0.0]], [[0.5]], 1.0, np.array([0.5]))
    down, _ = quantile_huber_values([[0.0]], [[-0.5]], 1.0, np.array([0.5]))
    assert up == pytest.approx(0.0625) and down == pytest.approx(0.0625)
    zero, grad = quantile_huber_values([[1.5]], [[1.5]], 1.0, np.array([0.5]))
    assert zero == 0.0 and np.all(grad == 0.0)


def test_quantile_huber_is_non_negative(rng):
    levels = quantile_levels(5)
    for _ in range(50):
        loss, _ = quantile_huber_values(rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), 1.0, levels)
        assert loss >= 0.0


def test_quantile_huber_rejects_bad_arguments():
    levels = quantile_levels(3)
    with pytest.raises(ConfigurationError):
        quantile_huber_values(np.zeros((1, 3)), np.zeros((1, 3)), 0.0, levels)
    with pytest.raises(ShapeError):
        quantile_huber_values(np.zeros((1, 3)), np.zeros((1, 2)), 1.0, levels)


def test_quantile_huber_gradient_matches_finite_differences():
    errors = [quantile_huber_gradient_error(np.random.default_rng(seed)) for seed in range(100)]
    assert max(errors) < 1e-4


def test_quantile_loss_only_touches_predicted_network(rng):
    net = CriticNet.build(2, 3, 5, (8,), rng)
    obs = rng.normal(size=(2, 2, 3))
    acts = np.zeros((2, 2), dtype=int)
    target = TargetDistribution(values=rng.normal(size=(2, 5)), greedy_actions=acts)
    estimate = critic_forward(net, obs, acts)
    quantile_huber_loss(estimate, target, 1.0, net.levels, backward=False)
    assert all(np.all(p.grads == 0.0) for p in net.params)
    quantile_huber_loss(estimate, target, 1.0, net.levels)
    assert any(np.any(p.grads != 0.0) for p in net.params)


def test_scalar_critic_loss_examples(rng):
    obs = rng.normal(size=(1, 2, 3))
    acts = np.zeros((1, 2), dtype=int)
    zero = constant_critic(rng, [0.0])
    assert scalar_critic_loss(zero, obs, acts, [5.0], [True], obs, 0.95, backward=False) == pytest.approx(25.0)
    matched = constant_critic(rng, [2.0])
    assert scalar_critic_loss(matched, obs, acts, [2.0], [False], obs, 0.0, backward=False) == 0.0


def test_scalar_critic_loss_needs_single_output(rng):
    net = CriticNet.build(2, 3, 5, (8,), rng)
    obs = np.zeros((1, 2, 3))
    with pytest.raises(ConfigurationError):
        scalar_critic_loss(net, obs, np.zeros((1, 2), dtype=int), [0.0], [False], obs, 0.9)


def test_scalar_td_gradient_matches_finite_differences():
    errors = [scalar_td_gradient_error(np.random.default_rng(seed)) for seed in range(100)]
    assert max(errors) < 1e-4


def test_quantile_recovery_on_two_point_distribution():
    assert quantile_recovery_error(np.random.default_rng(0)) < 0.25
