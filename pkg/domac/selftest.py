"""In-process gradient checks and oracle comparisons behind ``domac selftest``.

Each check returns a CheckResult; the pytest suites call the same functions
so the command and the tests cannot drift apart.
"""
import logging
import time
from dataclasses import dataclass
from typing import List

import numpy as np

from domac.cdc import (
    CriticNet,
    TargetDistribution,
    critic_forward,
    quantile_huber_loss,
    scalar_critic_loss,
)
from domac.diffcore import AdamState, MLPSpec, adam_step, finite_diff_check, init_params, mlp_backward, mlp_forward
from domac.env import GridConfig, GridState, transition
from domac.oma import (
    ActorBatch,
    ConditionalPolicy,
    actor_loss,
    marginal_forward,
    marginal_policy_exact,
    marginal_policy_sampled,
)
from domac.oppmodel import OpponentModel, enumerate_joint, joint_action_table
from domac.seeding import make_stream

logger = logging.getLogger("domac.selftest")

GRAD_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-6
GRAD_DRAWS = 100


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float = 0.0


def _rng(index):
    return make_stream(0, "selftest", index)


def mlp_gradient_error(rng, activation="tanh") -> float:
    spec = MLPSpec(4, (6, 5), 1, activation)
    params = init_params(spec, rng, "net")
    x = rng.normal(size=(3, 4))

    def loss(backward):
        out, cache = mlp_forward(spec, params, x)
        if backward:
            mlp_backward(cache, np.ones_like(out))
        return float(out.sum())

    return finite_diff_check(loss, params)


def quantile_huber_gradient_error(rng, K=5, kappa=1.0) -> float:
    net = CriticNet.build(2, 3, K, (8,), rng)
    obs = rng.normal(size=(4, 2, 3))
    acts = rng.integers(0, 5, size=(4, 2))
    target = TargetDistribution(values=rng.normal(scale=2.0, size=(4, K)), greedy_actions=acts)

    def loss(backward):
        return quantile_huber_loss(critic_forward(net, obs, acts), target, kappa, net.levels, backward=backward)

    return finite_diff_check(loss, net.params)


def scalar_td_gradient_error(rng) -> float:
    net = CriticNet.build(2, 3, 1, (8,), rng)
    obs = rng.normal(size=(4, 2, 3))
    acts = rng.integers(0, 5, size=(4, 2))
    nxt = rng.normal(size=(4, 2, 3))
    reward = rng.normal(size=4)
    done = np.array([False, True, False, False])

    # gamma = 0 keeps the max over a' out of the target, so the loss is a plain function of phi
    def loss(backward):
        return scalar_critic_loss(net, obs, acts, reward, done, nxt, 0.0, backward=backward)

    return finite_diff_check(loss, net.params)


def _toy_actor(rng, n_opponents=1, om_dim=5, obs_dim=4, hidden=(6,)):
    models = [OpponentModel.build(obs_dim, n_opponents, k, om_dim, hidden, rng) for k in range(n_opponents)]
    policy = ConditionalPolicy.build(obs_dim, [om_dim] * n_opponents, hidden, rng)
    return policy, models


def actor_gradient_error(rng, n_opponents=2, N=3, alpha=0.05) -> float:
    policy, models = _toy_actor(rng, n_opponents=n_opponents)
    obs = rng.normal(size=(N, 4))
    table = joint_action_table([m.output_dim for m in models])
    pick = rng.choice(len(table), size=(N, 4))
    batch = ActorBatch(observations=obs, actions=rng.integers(0, 5, size=N), samples=table[pick])
    q = rng.normal(size=N)
    # the bracket is a constant of the surrogate, so freeze it at the current parameters
    rho, *_ = marginal_forward(policy, models, obs, batch.samples)
    log_rho = np.log(rho[np.arange(N), batch.actions])
    coef = q - alpha * log_rho - alpha
    blocks = list(policy.params) + [p for m in models for p in m.params]

    def loss(backward):
        r, *_ = marginal_forward(policy, models, obs, batch.samples)
        value = float(-(np.log(r[np.arange(N), batch.actions]) * coef).mean())
        if backward:
            actor_loss(policy, models, batch, q, alpha)
        return value

    return finite_diff_check(loss, blocks)


def score_function_oracle_error(rng, alpha=0.1) -> float:
    """Backprop gradient of the surrogate vs. sum_a grad rho(a) * [Q(a) - alpha ln rho(a) - alpha].

    One observation, one opponent, exact enumeration. Weighting transition a by
    rho(a) turns the sampled surrogate into the exact expectation over actions.
    """
    policy, models = _toy_actor(rng, n_opponents=1)
    obs = rng.normal(size=4)
    q = rng.normal(size=5)
    table = joint_action_table([models[0].output_dim])
    blocks = list(policy.params) + list(models[0].params)

    rho = marginal_policy_exact(policy, models, obs).distribution
    batch = ActorBatch(observations=np.repeat(obs[None], 5, axis=0), actions=np.arange(5),
                       samples=np.repeat(table[None], 5, axis=0))
    for p in blocks:
        p.zero_grad()
    actor_loss(policy, models, batch, q, alpha, weights=rho)
    backprop = np.concatenate([p.grads.reshape(-1) for p in blocks])
    for p in blocks:
        p.zero_grad()

    # d rho(a) / d params by central differences of the exact mixture
    h = 1e-6
    coef = q - alpha * np.log(rho) - alpha
    oracle = []
    for p in blocks:
        flat = p.values.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + h
            plus = marginal_policy_exact(policy, models, obs).distribution
            flat[j] = original - h
            minus = marginal_policy_exact(policy, models, obs).distribution
            flat[j] = original
            oracle.append(-float(((plus - minus) / (2 * h)) @ coef))
    oracle = np.array(oracle)
    return float(np.max(np.abs(backprop - oracle)))


def exhaustive_sampling_error(rng) -> float:
    policy, models = _toy_actor(rng, n_opponents=2)
    obs = rng.normal(size=4)
    exact = marginal_policy_exact(policy, models, obs).distribution
    hooked = marginal_policy_sampled(policy, models, obs, 25, rng,
                                     sampler=lambda ms, o, l, r: enumerate_joint(ms, o)).distribution
    return float(np.max(np.abs(exact - hooked)))


def train_quantile_critic(rng, K=5, kappa=1.0, scheme="midpoint", steps=20_000, batch=256):
    """Fit a constant-input critic to {0, 10} w.p. 1/2 each with gamma = 0."""
    net = CriticNet.build(1, 1, K, (16,), rng, scheme=scheme)
    opt = AdamState.for_params(net.params, 1e-2)
    obs = np.zeros((batch, 1, 1))
    acts = np.zeros((batch, 1), dtype=np.int64)
    for step in range(steps):
        if step == int(0.75 * steps):
            opt.lr = 1e-3
        draws = 10.0 * (rng.random(batch) < 0.5)
        target = TargetDistribution(values=np.repeat(draws[:, None], K, axis=1), greedy_actions=acts)
        quantile_huber_loss(critic_forward(net, obs, acts), target, kappa, net.levels)
        adam_step(net.params, opt)
    return critic_forward(net, obs[:1], acts[:1]).values[0], net.levels


def smoothed_quantile_targets(levels, kappa=1.0, low=0.0, high=10.0):
    """Minimisers of the kappa-smoothed quantile loss for {low, high} w.p. 1/2.

    Below the median the minimiser sits omega/(1-omega)*kappa above ``low``,
    above it (1-omega)/omega*kappa below ``high``; at omega = 1/2 anything in
    between is optimal and None is returned.
    """
    out = []
    for w in levels:
        if np.isclose(w, 0.5):
            out.append(None)
        elif w < 0.5:
            out.append(low + min(w / (1 - w) * kappa, (high - low) / 2))
        else:
            out.append(high - min((1 - w) / w * kappa, (high - low) / 2))
    return out


def quantile_recovery_error(rng) -> float:
    values, levels = train_quantile_critic(rng)
    worst = 0.0
    for v, t in zip(values, smoothed_quantile_targets(levels)):
        if t is None:
            worst = max(worst, max(0.0, -v, v - 10.0))
        else:
            worst = max(worst, abs(v - t))
    return worst


def worst_over_draws(check, rng, draws=GRAD_DRAWS) -> float:
    """Largest error of ``check`` over ``draws`` networks and batches drawn from ``rng``."""
    return max(check(rng) for _ in range(draws))


def reward_case_error(rng=None) -> float:
    config = GridConfig(grid_size=5, n_predators=2, n_preys=1)
    noop = [4, 4]

    def reward(pred, prey):
        state = GridState(np.array(pred), np.array([prey]), np.array([True]), 0)
        return transition(config, state, noop, [4])[1]

    got = [reward([[0, 0], [4, 4]], [2, 2]), reward([[1, 2], [4, 4]], [2, 2]), reward([[1, 2], [3, 2]], [2, 2])]
    return float(np.max(np.abs(np.array(got) - np.array([-0.01, -0.51, 4.99]))))


CHECKS: List[tuple] = [
    ("mlp_gradient_tanh", lambda r: mlp_gradient_error(r, "tanh"), GRAD_TOLERANCE),
    ("mlp_gradient_relu", lambda r: mlp_gradient_error(r, "relu"), GRAD_TOLERANCE),
    ("quantile_huber_gradient", lambda r: worst_over_draws(quantile_huber_gradient_error, r), GRAD_TOLERANCE),
    ("scalar_td_gradient", lambda r: worst_over_draws(scalar_td_gradient_error, r), GRAD_TOLERANCE),
    ("actor_gradient", lambda r: worst_over_draws(actor_gradient_error, r), GRAD_TOLERANCE),
    ("score_function_oracle", score_function_oracle_error, ORACLE_TOLERANCE),
    ("exhaustive_sampling", exhaustive_sampling_error, 1e-12),
    ("reward_cases", reward_case_error, 1e-12),
    ("quantile_recovery", quantile_recovery_error, 0.25),
]


def run_selftest(checks=None) -> List[CheckResult]:
    results = []
    for i, (name, fn, threshold) in enumerate(checks or CHECKS):
        started = time.monotonic()
        value = float(fn(_rng(i)))
        result = CheckResult(name=name, passed=bool(np.isfinite(value) and value < threshold),
                             value=value, threshold=threshold, seconds=time.monotonic() - started)
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"{'PASS' if result.passed else 'FAIL'} {name}: {value:.3g} "
                          f"(threshold {threshold:g}, {result.seconds:.1f}s)")
        results.append(result)
    return results
