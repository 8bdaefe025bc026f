"""Centralized distributional critic.

G(o, a) maps the team's joint observation and one-hot joint action to K
return samples read as an equally weighted mixture of Diracs. Targets follow
the distributional Bellman operator with the greedy joint action at o', and
the critic regresses on them with the quantile Huber loss.
"""
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from domac.diffcore import ForwardCache, MLPSpec, init_params, mlp_backward, mlp_forward, one_hot
from domac.env import N_ACTIONS
from domac.errors import ConfigurationError, ShapeError
from domac.oppmodel import DEFAULT_ENUMERATION_CAP, joint_action_table

LevelScheme = Literal["midpoint", "uniform"]

# rows per forward pass when scoring every joint action at o'
GREEDY_CHUNK_ROWS = 65_536


def quantile_levels(K: int, scheme: LevelScheme = "midpoint") -> np.ndarray:
    """Midpoints (2j-1)/(2K), or the endpoint levels j/K."""
    if K < 1:
        raise ConfigurationError("quantile count K must be >= 1", field="quantiles")
    j = np.arange(1, K + 1, dtype=np.float64)
    if scheme == "midpoint":
        return (2 * j - 1) / (2 * K)
    if scheme == "uniform":
        return j / K
    raise ConfigurationError(f"unknown quantile level scheme {scheme!r}", field="quantile_levels")


@dataclass
class CriticNet:
    spec: MLPSpec
    params: list
    n_agents: int
    obs_dim: int
    K: int
    levels: np.ndarray
    n_actions: int = N_ACTIONS

    @classmethod
    def build(cls, n_agents, obs_dim, K, hidden_dims, rng, scheme="midpoint", n_actions=N_ACTIONS,
              hidden_activation="tanh", name="critic"):
        spec = MLPSpec(n_agents * (obs_dim + n_actions), tuple(hidden_dims), K, hidden_activation)
        return cls(spec=spec, params=init_params(spec, rng, name), n_agents=n_agents, obs_dim=obs_dim,
                   K=K, levels=quantile_levels(K, scheme), n_actions=n_actions)

    def critic_input(self, joint_obs, joint_actions):
        obs = np.asarray(joint_obs, dtype=np.float64)
        acts = np.asarray(joint_actions, dtype=np.int64)
        if obs.ndim == 2:
            obs, acts = obs[None], acts.reshape(1, -1)
        if obs.shape[1:] != (self.n_agents, self.obs_dim) or acts.shape != obs.shape[:2]:
            raise ShapeError(f"joint input must be [N x {self.n_agents} x {self.obs_dim}] with "
                             f"[N x {self.n_agents}] actions, got {obs.shape} and {acts.shape}",
                             field="joint_obs")
        n = obs.shape[0]
        return np.concatenate([obs.reshape(n, -1), one_hot(acts, self.n_actions).reshape(n, -1)], axis=1)


@dataclass
class QuantileEstimate:
    values: np.ndarray                      # [N x K]
    joint_obs: np.ndarray
    joint_actions: np.ndarray
    cache: Optional[ForwardCache] = None

    @property
    def mean(self):
        return self.values.mean(axis=1)


@dataclass
class TargetDistribution:
    values: np.ndarray                      # [N x K], detached copy
    greedy_actions: np.ndarray              # [N x n_agents]


def critic_forward(net: CriticNet, joint_obs, joint_actions) -> QuantileEstimate:
    values, cache = mlp_forward(net.spec, net.params, net.critic_input(joint_obs, joint_actions))
    return QuantileEstimate(values=values, joint_obs=np.asarray(joint_obs),
                            joint_actions=np.asarray(joint_actions), cache=cache)


def greedy_joint_action(net: CriticNet, joint_obs_next, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Joint action with the largest quantile mean at each o'; ties go to the lowest table index."""
    table = joint_action_table([net.n_actions] * net.n_agents, cap)
    obs = np.asarray(joint_obs_next, dtype=np.float64)
    if obs.ndim == 2:
        obs = obs[None]
    n_joint = len(table)
    per_chunk = max(1, GREEDY_CHUNK_ROWS // n_joint)
    best = np.empty(obs.shape[0], dtype=np.int64)
    for start in range(0, obs.shape[0], per_chunk):
        chunk = obs[start:start + per_chunk]
        rows = np.repeat(chunk, n_joint, axis=0)
        acts = np.tile(table, (len(chunk), 1))
        values, _ = mlp_forward(net.spec, net.params, net.critic_input(rows, acts))
        means = values.mean(axis=1).reshape(len(chunk), n_joint)
        best[start:start + len(chunk)] = np.argmax(means, axis=1)
    return table[best]


def _check_gamma(gamma):
    if not 0.0 <= gamma < 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1), got {gamma}", field="gamma")


def bellman_target(net: CriticNet, reward, done, joint_obs_next, gamma: float,
                   cap: int = DEFAULT_ENUMERATION_CAP) -> TargetDistribution:
    _check_gamma(gamma)
    obs = np.asarray(joint_obs_next, dtype=np.float64)
    if obs.ndim == 2:
        obs = obs[None]
    r = np.asarray(reward, dtype=np.float64).reshape(-1)
    d = np.asarray(done, dtype=bool).reshape(-1)
    a_star = greedy_joint_action(net, obs, cap)
    nxt, _ = mlp_forward(net.spec, net.params, net.critic_input(obs, a_star))
    values = r[:, None] + gamma * np.where(d[:, None], 0.0, nxt)
    return TargetDistribution(values=np.array(values, copy=True), greedy_actions=a_star)


def huber(u: np.ndarray, kappa: float) -> np.ndarray:
    a = np.abs(u)
    return np.where(a <= kappa, 0.5 * u * u, kappa * (a - 0.5 * kappa))


def quantile_huber_values(predicted: np.ndarray, target: np.ndarray, kappa: float, levels: np.ndarray):
    """Loss and its gradient w.r.t. ``predicted`` for [N x K] arrays, averaged over N."""
    if kappa <= 0:
        raise ConfigurationError("kappa must be positive", field="kappa")
    G = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    T = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if G.shape != T.shape or G.shape[1] != len(levels):
        raise ShapeError(f"predicted {G.shape}, target {T.shape} and {len(levels)} levels disagree",
                         field="quantiles")
    N, K = G.shape
    u = T[:, :, None] - G[:, None, :]                          # [N x j' x j]
    weight = np.abs(levels[None, None, :] - (u <= 0.0).astype(np.float64))
    loss = float((weight * huber(u, kappa)).sum() / (N * K * K))
    d_huber = np.where(np.abs(u) <= kappa, u, kappa * np.sign(u))
    grad = -(weight * d_huber).sum(axis=1) / (N * K * K)       # d/dG via u = T - G
    return loss, grad


def quantile_huber_loss(predicted: QuantileEstimate, target: TargetDistribution, kappa: float,
                        levels: np.ndarray, backward: bool = True) -> float:
    loss, grad = quantile_huber_values(predicted.values, target.values, kappa, levels)
    if backward:
        if predicted.cache is None:
            raise ShapeError("predicted estimate carries no forward cache", field="predicted")
        mlp_backward(predicted.cache, grad)
    return loss


def scalar_target(net: CriticNet, reward, done, joint_obs_next, gamma: float,
                  cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """r + gamma * (1 - done) * max_a' Q(o', a') for a K = 1 critic, detached."""
    if net.K != 1:
        raise ConfigurationError(f"scalar TD loss needs a K=1 critic, got K={net.K}", field="quantiles")
    return bellman_target(net, reward, done, joint_obs_next, gamma, cap).values[:, 0]


def scalar_critic_loss(net: CriticNet, joint_obs, joint_actions, reward, done, joint_obs_next,
                       gamma: float, backward: bool = True, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Mean squared TD error of the vanilla state-action critic."""
    y = scalar_target(net, reward, done, joint_obs_next, gamma, cap)
    q = critic_forward(net, joint_obs, joint_actions)
    residual = q.values[:, 0] - y
    loss = float(np.mean(residual ** 2))
    if backward:
        mlp_backward(q.cache, (2.0 * residual / len(residual))[:, None])
    return loss
