"""Opponent-model-aided actor.

The conditional policy pi(a | a_hat, o) is mixed over predicted opponent
actions a_hat into the marginal policy

    rho(a | o) = sum_s w_s * pi(a | a_hat_s, o) / sum_s w_s,
    w_s = prod_k mu_k(a_hat_sk | o).

With every joint action enumerated the denominator is 1 and rho is the exact
mixture; with l sampled joint actions it is the self-normalised estimate.
Agents without opponent models use a single empty prediction, so rho = pi.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence

import numpy as np

from domac.diffcore import MLPSpec, ParamBlock, init_params, mlp_backward, mlp_forward, one_hot, softmax
from domac.env import N_ACTIONS
from domac.errors import NumericError, ShapeError
from domac.oppmodel import (
    DEFAULT_ENUMERATION_CAP,
    OpponentModel,
    enumerate_joint,
    one_hot_predictions,
    sample_joint,
    samples_to_array,
)

AggregationMode = Literal["exact", "sampled"]


@dataclass
class ConditionalPolicy:
    """Input layout: observation, then one one-hot slot block per opponent in opponent order."""
    spec: MLPSpec
    params: List[ParamBlock]
    obs_dim: int
    opponent_dims: tuple
    n_actions: int = N_ACTIONS

    @classmethod
    def build(cls, obs_dim, opponent_dims, hidden_dims, rng, n_actions=N_ACTIONS,
              hidden_activation="tanh", name="pi"):
        opponent_dims = tuple(int(d) for d in opponent_dims)
        spec = MLPSpec(obs_dim + sum(opponent_dims), tuple(hidden_dims), n_actions, hidden_activation)
        return cls(spec=spec, params=init_params(spec, rng, name), obs_dim=obs_dim,
                   opponent_dims=opponent_dims, n_actions=n_actions)

    def policy_input(self, observations, predicted_actions):
        obs = np.asarray(observations, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs[None, :]
        if obs.shape[1] != self.obs_dim:
            raise ShapeError(f"observation length {obs.shape[1]} != {self.obs_dim}", field="observation")
        slots = one_hot_predictions(np.asarray(predicted_actions).reshape(obs.shape[0], -1)
                                    if self.opponent_dims else np.zeros((obs.shape[0], 0), dtype=np.int64),
                                    self.opponent_dims)
        return np.concatenate([obs, slots], axis=1)

    def forward(self, observations, predicted_actions):
        logits, cache = mlp_forward(self.spec, self.params, self.policy_input(observations, predicted_actions))
        return softmax(logits), cache


@dataclass
class MarginalPolicyResult:
    distribution: np.ndarray     # [n_actions]
    conditionals: np.ndarray     # [S x n_actions]
    weights: np.ndarray          # [S], unnormalised w_s
    samples: np.ndarray          # [S x p]
    mode: AggregationMode


@dataclass
class ActorLossReport:
    loss: float
    entropy: float
    grad_norms: Dict[str, float] = field(default_factory=dict)


def _check_models(policy, models):
    dims = tuple(m.output_dim for m in models)
    if dims != policy.opponent_dims:
        raise ShapeError(f"policy expects opponent slots {policy.opponent_dims}, models give {dims}",
                         field="opponent_dims")


def mix(conditionals: np.ndarray, weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise NumericError("joint prediction weights sum to zero")
    return (w / total) @ conditionals


def _marginal(policy, observation, samples, mode):
    S = len(samples)
    actions = samples_to_array(samples, len(policy.opponent_dims))
    obs = np.repeat(np.asarray(observation, dtype=np.float64)[None, :], S, axis=0)
    conditionals, _ = policy.forward(obs, actions)
    weights = np.array([s.weight for s in samples])
    return MarginalPolicyResult(distribution=mix(conditionals, weights), conditionals=conditionals,
                                weights=weights, samples=actions, mode=mode)


def marginal_policy_exact(policy: ConditionalPolicy, models: Sequence[OpponentModel], observation,
                          cap: int = DEFAULT_ENUMERATION_CAP) -> MarginalPolicyResult:
    _check_models(policy, models)
    return _marginal(policy, observation, enumerate_joint(models, observation, cap), "exact")


def marginal_policy_sampled(policy: ConditionalPolicy, models: Sequence[OpponentModel], observation,
                            l: int, rng: np.random.Generator,
                            sampler: Optional[Callable] = None) -> MarginalPolicyResult:
    """Self-normalised estimate from ``l`` joint predictions.

    ``sampler(models, observation, l, rng)`` replaces ``sample_joint`` when given
    (e.g. enumeration, to get the exact mixture through this code path).
    """
    _check_models(policy, models)
    sampler = sampler or sample_joint
    return _marginal(policy, observation, sampler(models, observation, l, rng), "sampled")


def marginal_policy_given(policy: ConditionalPolicy, models: Sequence[OpponentModel], observation,
                          predicted_actions: np.ndarray) -> MarginalPolicyResult:
    """Marginal policy over externally supplied joint opponent actions, weighted by the models."""
    _check_models(policy, models)
    if not models:
        predicted_actions = np.zeros((1, 0), dtype=np.int64)
    else:
        predicted_actions = np.asarray(predicted_actions, dtype=np.int64).reshape(-1, len(models))
    obs = np.asarray(observation, dtype=np.float64)
    conditionals, _ = policy.forward(np.repeat(obs[None, :], len(predicted_actions), axis=0),
                                     predicted_actions)
    log_w = np.zeros(len(predicted_actions))
    for k, model in enumerate(models):
        mu, _ = model.forward(obs)
        log_w += np.log(mu[0, predicted_actions[:, k]])
    weights = np.exp(log_w)
    return MarginalPolicyResult(distribution=mix(conditionals, weights), conditionals=conditionals,
                                weights=weights, samples=predicted_actions, mode="sampled")


def sample_action(result: MarginalPolicyResult, rng: np.random.Generator):
    dist = result.distribution
    action = int(rng.choice(len(dist), p=dist / dist.sum()))
    return action, float(np.log(dist[action]))


def policy_entropy(result: MarginalPolicyResult) -> float:
    p = result.distribution
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return float(max(0.0, -terms.sum()))


@dataclass
class ActorBatch:
    """One agent's view of a trajectory batch.

    ``samples[n, s]`` is the s-th joint opponent prediction used at transition n;
    ``[N x 1 x 0]`` for agents without opponent models.
    """
    observations: np.ndarray     # [N x obs_dim]
    actions: np.ndarray          # [N]
    samples: np.ndarray          # [N x S x p]

    def __len__(self):
        return len(self.actions)


def marginal_forward(policy, models, observations, samples):
    """Batched rho over stored joint predictions. Returns everything backward needs."""
    N, S, p = samples.shape
    obs_rep = np.repeat(observations, S, axis=0)
    conditionals, policy_cache = policy.forward(obs_rep, samples.reshape(N * S, p))
    conditionals = conditionals.reshape(N, S, -1)

    log_w = np.zeros((N, S))
    model_outputs = []
    rows = np.arange(N)[:, None]
    for k, model in enumerate(models):
        mu, cache = model.forward(observations)
        model_outputs.append((mu, cache))
        log_w += np.log(mu[rows, samples[:, :, k]])
    # shift before exponentiating; the normalised weights are unchanged
    w = np.exp(log_w - log_w.max(axis=1, keepdims=True))
    nw = w / w.sum(axis=1, keepdims=True)
    rho = np.einsum('ns,nsa->na', nw, conditionals)
    return rho, conditionals, nw, policy_cache, model_outputs


def actor_loss(policy: ConditionalPolicy, models: Sequence[OpponentModel], batch: ActorBatch,
               critic_values: np.ndarray, alpha: float, update_models: bool = True,
               weights: Optional[np.ndarray] = None) -> ActorLossReport:
    """Entropy-regularised score-function surrogate, gradients accumulated into theta and psi.

    L = -sum_n c_n * ln rho(a_n | o_n) * [Q_n - alpha ln rho(a_n | o_n) - alpha]

    with the bracket held constant and c_n = 1/N unless ``weights`` is given.
    One backward pass through rho yields the policy and opponent-model
    gradients together.
    """
    _check_models(policy, models)
    N = len(batch)
    if N == 0:
        raise ShapeError("empty actor batch", field="batch")
    q = np.asarray(critic_values, dtype=np.float64).reshape(N)
    c = np.full(N, 1.0 / N) if weights is None else np.asarray(weights, dtype=np.float64).reshape(N)
    actions = np.asarray(batch.actions, dtype=np.int64)

    rho, conditionals, nw, policy_cache, model_outputs = marginal_forward(
        policy, models, np.asarray(batch.observations, dtype=np.float64), np.asarray(batch.samples))
    idx = np.arange(N)
    rho_a = rho[idx, actions]
    log_rho_a = np.log(rho_a)
    coef = q - alpha * log_rho_a - alpha
    loss = float(-(c * log_rho_a * coef).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(rho > 0, rho * np.log(rho), 0.0).sum(axis=1)
    if not np.isfinite(loss):
        raise NumericError("non-finite actor loss",
                           details={"min_rho": float(rho_a.min()), "max_abs_q": float(np.abs(q).max())})

    g = -c * coef                                     # dL / d ln rho(a_n)
    p_a = conditionals[idx, :, actions]               # [N x S] pi(a_n | a_hat_ns)
    ratio = p_a / rho_a[:, None]
    d_logits = (g[:, None] * nw * ratio)[..., None] * (one_hot(actions, policy.n_actions)[:, None, :] - conditionals)
    mlp_backward(policy_cache, d_logits.reshape(-1, policy.n_actions))

    if update_models:
        d_log_w = g[:, None] * nw * (ratio - 1.0)     # [N x S]
        for k, (mu, cache) in enumerate(model_outputs):
            d_model = -d_log_w.sum(axis=1)[:, None] * mu
            np.add.at(d_model, (np.repeat(idx, batch.samples.shape[1]), batch.samples[:, :, k].reshape(-1)),
                      d_log_w.reshape(-1))
            mlp_backward(cache, d_model)

    blocks = list(policy.params) + ([p for m in models for p in m.params] if update_models else [])
    return ActorLossReport(loss=loss, entropy=float(ent.mean()),
                           grad_norms={p.name: float(np.linalg.norm(p.grads)) for p in blocks})
