"""Controlled predator agents and the algorithm variants that shape them.

Every predator owns a conditional policy, one opponent model per prey (for
variants that model opponents) and its own centralized critic, each with a
separate Adam state.
"""
import enum
import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from domac.cdc import CriticNet
from domac.config import TrainConfig
from domac.diffcore import AdamState, ParamBlock
from domac.env import N_ACTIONS, GridConfig, PredatorPreyEnv
from domac.errors import ConfigurationError, ShapeError
from domac.oma import (
    ConditionalPolicy,
    MarginalPolicyResult,
    marginal_policy_exact,
    marginal_policy_given,
    marginal_policy_sampled,
    sample_action,
)
from domac.oppmodel import OpponentModel, joint_action_table
from domac.seeding import make_stream


class AlgorithmVariant(str, enum.Enum):
    DOMAC = "DOMAC"
    MAAC = "MAAC"
    OMAC = "OMAC"
    DMAC = "DMAC"
    UB = "UB"

    @property
    def uses_opponent_models(self):
        return self in (AlgorithmVariant.DOMAC, AlgorithmVariant.OMAC, AlgorithmVariant.UB)

    @property
    def uses_distributional_critic(self):
        return self in (AlgorithmVariant.DOMAC, AlgorithmVariant.DMAC, AlgorithmVariant.UB)

    @property
    def uses_true_opponent_actions(self):
        return self is AlgorithmVariant.UB


@dataclass
class PredatorAgent:
    index: int
    policy: ConditionalPolicy
    models: List[OpponentModel]
    critic: CriticNet
    policy_opt: AdamState
    model_opt: Optional[AdamState]
    critic_opt: AdamState
    train_models: bool = True
    rng: Optional[np.random.Generator] = field(default=None, repr=False)

    @property
    def model_params(self) -> List[ParamBlock]:
        return [p for m in self.models for p in m.params]

    def networks(self) -> Dict[str, List[ParamBlock]]:
        nets = {"policy": list(self.policy.params), "critic": list(self.critic.params)}
        if self.models:
            nets["models"] = self.model_params
        return nets

    def optimizers(self) -> Dict[str, AdamState]:
        opts = {"policy": self.policy_opt, "critic": self.critic_opt}
        if self.model_opt is not None:
            opts["models"] = self.model_opt
        return opts

    def parameter_counts(self) -> Dict[str, int]:
        return {name: sum(p.size for p in blocks) for name, blocks in self.networks().items()}

    def param_hashes(self) -> Dict[str, str]:
        return {name: hash_params(blocks) for name, blocks in self.networks().items()}


def hash_params(blocks) -> str:
    digest = hashlib.sha256()
    for p in blocks:
        digest.update(p.name.encode("utf-8"))
        digest.update(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
    return digest.hexdigest()[:16]


def build_agents(config: TrainConfig, grid: Optional[GridConfig] = None) -> List[PredatorAgent]:
    """Initialise every predator from the ``init`` stream of the master seed."""
    grid = grid or config.grid_config()
    variant = AlgorithmVariant(config.variant)
    algo, optim = config.algo, config.optim
    om_dim = config.ablation.om_dim
    if variant.uses_true_opponent_actions and om_dim != N_ACTIONS:
        raise ConfigurationError(f"UB needs om_dim = {N_ACTIONS}", field="ablation.om_dim")
    K = algo.quantiles if variant.uses_distributional_critic else 1

    agents = []
    for i in range(grid.n_predators):
        rng = make_stream(config.seed, "init", i)
        models = []
        if variant.uses_opponent_models:
            models = [OpponentModel.build(grid.obs_dim, grid.n_preys, k, om_dim, algo.hidden_dims, rng,
                                          hidden_activation=algo.hidden_activation, name=f"agent{i}.om")
                      for k in range(grid.n_preys)]
        policy = ConditionalPolicy.build(grid.obs_dim, [m.output_dim for m in models], algo.hidden_dims, rng,
                                         hidden_activation=algo.hidden_activation, name=f"agent{i}.pi")
        critic = CriticNet.build(grid.n_predators, grid.obs_dim, K, algo.hidden_dims, rng,
                                 scheme=algo.quantile_levels, hidden_activation=algo.hidden_activation,
                                 name=f"agent{i}.critic")
        hyper = dict(beta1=optim.beta1, beta2=optim.beta2, eps=optim.eps)
        agents.append(PredatorAgent(
            index=i,
            policy=policy,
            models=models,
            critic=critic,
            policy_opt=AdamState.for_params(policy.params, optim.lr_actor, **hyper),
            model_opt=(AdamState.for_params([p for m in models for p in m.params], optim.lr_actor, **hyper)
                       if models else None),
            critic_opt=AdamState.for_params(critic.params, optim.lr_critic, **hyper),
            train_models=config.ablation.om_frozen == "trained",
            rng=make_stream(config.seed, "act", i),
        ))
    return agents


@dataclass
class ActingRule:
    """How an agent turns opponent predictions into its marginal policy."""
    variant: AlgorithmVariant
    sample_size: Optional[int]          # None: enumerate every joint prediction
    cap: int

    def support_size(self, agent: PredatorAgent) -> int:
        if not agent.models:
            return 1
        if self.sample_size is not None:
            return self.sample_size
        return len(joint_action_table([m.output_dim for m in agent.models], self.cap))


def marginal_for(agent: PredatorAgent, observation, rule: ActingRule, rng: np.random.Generator,
                 env: Optional[PredatorPreyEnv] = None) -> MarginalPolicyResult:
    if rule.variant.uses_true_opponent_actions:
        if env is None:
            raise ShapeError("UB acting needs the environment for true opponent actions", field="env")
        true_actions = env.sample_true_opponent_actions(rule.support_size(agent), rng)
        return marginal_policy_given(agent.policy, agent.models, observation, true_actions)
    if agent.models and rule.sample_size is not None:
        return marginal_policy_sampled(agent.policy, agent.models, observation, rule.sample_size, rng)
    return marginal_policy_exact(agent.policy, agent.models, observation, rule.cap)


def act(agent: PredatorAgent, observation, rule: ActingRule, rng: np.random.Generator,
        env: Optional[PredatorPreyEnv] = None):
    """Sample a ~ rho(.|o). Returns (action, log_prob, marginal result)."""
    result = marginal_for(agent, observation, rule, rng, env)
    action, log_prob = sample_action(result, rng)
    return action, log_prob, result


def agents_state(agents: List[PredatorAgent]):
    """Flatten parameters and optimizer moments into named arrays plus optimizer scalars."""
    arrays, scalars = {}, {}
    for agent in agents:
        prefix = f"agent{agent.index}"
        for net, blocks in agent.networks().items():
            for p in blocks:
                arrays[f"{prefix}/{net}/{p.name}"] = p.values
        for net, opt in agent.optimizers().items():
            scalars[f"{prefix}/{net}"] = opt.hyperparameters()
            for name in sorted(opt.m):
                arrays[f"{prefix}/{net}.adam_m/{name}"] = opt.m[name]
                arrays[f"{prefix}/{net}.adam_v/{name}"] = opt.v[name]
    return arrays, scalars


def load_agents_state(agents: List[PredatorAgent], arrays, scalars):
    for agent in agents:
        prefix = f"agent{agent.index}"
        for net, blocks in agent.networks().items():
            for p in blocks:
                key = f"{prefix}/{net}/{p.name}"
                if key not in arrays:
                    raise ShapeError(f"checkpoint has no array {key}", field=key)
                if tuple(arrays[key].shape) != p.shape:
                    raise ShapeError(f"{key} has shape {arrays[key].shape}, network expects {p.shape}", field=key)
                p.values[...] = arrays[key]
                p.zero_grad()
        for net, opt in agent.optimizers().items():
            saved = scalars[f"{prefix}/{net}"]
            opt.lr, opt.beta1, opt.beta2, opt.eps = saved["lr"], saved["beta1"], saved["beta2"], saved["eps"]
            opt.t = int(saved["t"])
            for name in opt.m:
                opt.m[name][...] = arrays[f"{prefix}/{net}.adam_m/{name}"]
                opt.v[name][...] = arrays[f"{prefix}/{net}.adam_v/{name}"]
    return agents
