"""On-policy training loop.

Each iteration collects a window of experience with the current parameters,
then updates every predator: critic first, then the actor (policy and
opponent models in one backward pass) against the refreshed critic.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from domac import checkpoint as ckpt
from domac.agent import (
    ActingRule,
    AlgorithmVariant,
    PredatorAgent,
    act,
    agents_state,
    build_agents,
    load_agents_state,
)
from domac.audit import TrajectoryRecorder, close_run_logging, configure_run_logging, log_event
from domac.cdc import bellman_target, critic_forward, quantile_huber_loss, scalar_critic_loss
from domac.config import TrainConfig, load_config_dict, serialize_config
from domac.diffcore import adam_step
from domac.env import EnvPool, GridConfig, PredatorPreyEnv
from domac.errors import NumericError, ShapeError
from domac.metrics import OpponentDiagnostics, VisitRecord, collect_diagnostics, summarize
from domac.metrics_log import MetricsLog
from domac.oma import ActorBatch, actor_loss, policy_entropy
from domac.oppmodel import predicted_entropy
from domac.seeding import draw_seed, get_state, make_stream, set_state

logger = logging.getLogger("domac.trainer")


@dataclass
class TrajectoryBatch:
    """Predator-side transitions of one update window.

    Episodes are contiguous. No prey state is stored: the learning path
    only ever sees what the predators saw, did and were paid.
    """
    observations: np.ndarray             # [N x n x obs_dim]
    actions: np.ndarray                  # [N x n]
    rewards: np.ndarray                  # [N]
    next_observations: np.ndarray        # [N x n x obs_dim]
    dones: np.ndarray                    # [N]
    log_probs: np.ndarray                # [N x n], ln rho(a) at collection time
    episode_ids: np.ndarray              # [N]
    opponent_samples: Optional[np.ndarray] = None   # [N x n x S x p]; None without opponent models

    def __len__(self):
        return len(self.rewards)

    @property
    def n_episodes(self):
        return len(np.unique(self.episode_ids))

    def agent_view(self, i: int) -> ActorBatch:
        if self.opponent_samples is None:
            samples = np.zeros((len(self), 1, 0), dtype=np.int64)
        else:
            samples = self.opponent_samples[:, i]
        return ActorBatch(observations=self.observations[:, i], actions=self.actions[:, i], samples=samples)


def acting_rule(config: TrainConfig) -> ActingRule:
    return ActingRule(variant=AlgorithmVariant(config.variant), sample_size=config.sample_size,
                      cap=config.algo.enumeration_cap)


class Rollout:
    """Environment pool plus the seed streams and counters that drive it."""

    def __init__(self, pool: EnvPool, env_rngs):
        self.pool = pool
        self.env_rngs = env_rngs
        self.episodes_done = 0
        self.next_episode_id = 0
        self.episode_ids: List[Optional[int]] = [None] * len(pool)

    @classmethod
    def build(cls, config: TrainConfig, grid: GridConfig):
        n = config.rollout.n_envs
        return cls(EnvPool.build(grid, n, config.rollout.workers),
                   [make_stream(config.seed, "env", e) for e in range(n)])

    @property
    def envs(self):
        return self.pool.envs

    def start_episode(self, e: int):
        self.envs[e].reset(draw_seed(self.env_rngs[e]))
        self.episode_ids[e] = self.next_episode_id
        self.next_episode_id += 1

    def snapshot(self):
        return {
            "episodes_done": self.episodes_done,
            "next_episode_id": self.next_episode_id,
            "episode_ids": self.episode_ids,
            "env_rngs": [get_state(r) for r in self.env_rngs],
            "envs": [env.snapshot() for env in self.envs],
        }

    def restore(self, snapshot):
        self.episodes_done = int(snapshot["episodes_done"])
        self.next_episode_id = int(snapshot["next_episode_id"])
        self.episode_ids = list(snapshot["episode_ids"])
        for rng, state in zip(self.env_rngs, snapshot["env_rngs"]):
            set_state(rng, state)
        for env, snap in zip(self.envs, snapshot["envs"]):
            env.restore(snap)

    def close(self):
        self.pool.close()


class _Chunk:
    """Transitions of one environment, appended in time order."""

    def __init__(self):
        self.rows = []

    def add(self, **row):
        self.rows.append(row)


def _choose_actions(agents: List[PredatorAgent], observations, rule: ActingRule, env: PredatorPreyEnv):
    actions, log_probs, samples = [], [], []
    for agent in agents:
        a, log_prob, result = act(agent, observations[agent.index], rule, agent.rng, env)
        actions.append(a)
        log_probs.append(log_prob)
        samples.append(result.samples)
    return actions, log_probs, samples


def _step_envs(rollout: Rollout, agents, rule, indices, chunks):
    observations = {e: rollout.envs[e].observations() for e in indices}
    chosen = {e: _choose_actions(agents, observations[e], rule, rollout.envs[e]) for e in indices}
    results = rollout.pool.step_all(indices, [chosen[e][0] for e in indices], [None] * len(indices))
    for e, res in zip(indices, results):
        actions, log_probs, samples = chosen[e]
        chunks[e].add(obs=observations[e], actions=actions, reward=res.reward, next_obs=res.observations,
                      done=res.done, log_probs=log_probs, samples=samples, episode=rollout.episode_ids[e])
        if res.done:
            rollout.episodes_done += 1


def _to_batch(chunks, with_samples: bool) -> TrajectoryBatch:
    rows = [row for chunk in chunks for row in chunk.rows]
    if not rows:
        raise ShapeError("collected no transitions", field="batch")
    return TrajectoryBatch(
        observations=np.stack([r["obs"] for r in rows]),
        actions=np.array([r["actions"] for r in rows], dtype=np.int64),
        rewards=np.array([r["reward"] for r in rows], dtype=np.float64),
        next_observations=np.stack([r["next_obs"] for r in rows]),
        dones=np.array([r["done"] for r in rows], dtype=bool),
        log_probs=np.array([r["log_probs"] for r in rows], dtype=np.float64),
        episode_ids=np.array([r["episode"] for r in rows], dtype=np.int64),
        opponent_samples=np.array([r["samples"] for r in rows], dtype=np.int64) if with_samples else None,
    )


def collect(rollout: Rollout, agents: List[PredatorAgent], config: TrainConfig,
            episodes: Optional[int] = None) -> TrajectoryBatch:
    """One update window under the current parameters.

    ``episodes`` mode runs whole episodes, ``n_envs`` at a time; ``steps``
    mode advances every environment ``forward_steps`` ticks, resetting
    finished ones, and keeps unfinished episodes for the next window.
    """
    rule = acting_rule(config)
    n_envs = len(rollout.pool)
    with_samples = rule.variant.uses_opponent_models

    if config.rollout.update_mode == "steps":
        chunks = [_Chunk() for _ in range(n_envs)]
        for _ in range(config.rollout.forward_steps):
            for e in range(n_envs):
                if rollout.envs[e].done:
                    rollout.start_episode(e)
            _step_envs(rollout, agents, rule, list(range(n_envs)), chunks)
        return _to_batch(chunks, with_samples)

    remaining = config.rollout.episodes_per_update if episodes is None else episodes
    ordered = []
    while remaining > 0:
        active = list(range(min(n_envs, remaining)))
        remaining -= len(active)
        chunks = {e: _Chunk() for e in active}
        for e in active:
            rollout.start_episode(e)
        running = active
        while running:
            _step_envs(rollout, agents, rule, running, chunks)
            running = [e for e in running if not rollout.envs[e].done]
        ordered.extend(chunks[e] for e in active)
    return _to_batch(ordered, with_samples)


@dataclass
class AgentUpdate:
    critic_loss: float
    actor_loss: float
    entropy: float
    om_entropy: Optional[float] = None
    grad_norms: Dict[str, float] = field(default_factory=dict)


@dataclass
class UpdateReport:
    transitions: int
    episodes: int
    mean_reward: float
    agents: List[AgentUpdate] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def critic_step(agent: PredatorAgent, batch: TrajectoryBatch, config: TrainConfig) -> float:
    """One optimizer step on the agent's critic; returns the pre-step loss."""
    net, algo = agent.critic, config.algo
    if AlgorithmVariant(config.variant).uses_distributional_critic:
        target = bellman_target(net, batch.rewards, batch.dones, batch.next_observations, algo.gamma,
                                algo.enumeration_cap)
        predicted = critic_forward(net, batch.observations, batch.actions)
        loss = quantile_huber_loss(predicted, target, algo.kappa, net.levels)
    else:
        loss = scalar_critic_loss(net, batch.observations, batch.actions, batch.rewards, batch.dones,
                                  batch.next_observations, algo.gamma, cap=algo.enumeration_cap)
    if not np.isfinite(loss):
        raise NumericError("non-finite critic loss", details={"agent": agent.index})
    adam_step(net.params, agent.critic_opt)
    return loss


def update(agents: List[PredatorAgent], batch: TrajectoryBatch, config: TrainConfig) -> UpdateReport:
    if len(batch) == 0:
        raise ShapeError("cannot update on an empty batch", field="batch")
    report = UpdateReport(transitions=len(batch), episodes=batch.n_episodes,
                          mean_reward=float(batch.rewards.mean()))
    for agent in agents:
        critic_loss = critic_step(agent, batch, config)
        q_hat = critic_forward(agent.critic, batch.observations, batch.actions).mean
        view = batch.agent_view(agent.index)
        update_models = bool(agent.models) and agent.train_models
        actor = actor_loss(agent.policy, agent.models, view, q_hat, config.algo.alpha, update_models=update_models)
        adam_step(agent.policy.params, agent.policy_opt)
        if update_models:
            adam_step(agent.model_params, agent.model_opt)
        om_entropy = None
        if agent.models:
            om_entropy = float(np.mean([predicted_entropy(m.forward(view.observations)[0]).mean()
                                        for m in agent.models]))
        report.agents.append(AgentUpdate(critic_loss=critic_loss, actor_loss=actor.loss, entropy=actor.entropy,
                                         om_entropy=om_entropy, grad_norms=actor.grad_norms))
    return report


@dataclass
class EvaluationRecord:
    mean_return: float
    std_return: float
    returns: List[float]
    policy_entropy: Dict[int, float]
    diagnostics: Dict[int, Dict[int, OpponentDiagnostics]]

    def agent_diagnostics(self, i) -> Optional[OpponentDiagnostics]:
        if i not in self.diagnostics:
            return None
        return summarize(self.diagnostics[i])

    def to_dict(self):
        return {
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "returns": self.returns,
            "policy_entropy": {str(i): v for i, v in self.policy_entropy.items()},
            "diagnostics": {str(i): {str(k): d.to_dict() for k, d in per.items()}
                            for i, per in self.diagnostics.items()},
        }


def evaluate(agents: List[PredatorAgent], grid: GridConfig, n_episodes: int, seed: int, rule: ActingRule,
             recorder: Optional[TrajectoryRecorder] = None) -> EvaluationRecord:
    """Roll out ``n_episodes`` on fresh streams derived from ``seed``; parameters are read only."""
    env = PredatorPreyEnv(grid)
    seeds = make_stream(seed, "eval", 0)
    rngs = [make_stream(seed, "eval", 1, agent.index) for agent in agents]
    returns, visits = [], []
    entropies = {agent.index: [] for agent in agents}
    for episode in range(n_episodes):
        env.reset(draw_seed(seeds))
        total = 0.0
        while not env.done:
            observations = env.observations()
            state = env.state.copy()
            actions = []
            for agent, rng in zip(agents, rngs):
                a, _, result = act(agent, observations[agent.index], rule, rng, env)
                actions.append(a)
                entropies[agent.index].append(policy_entropy(result))
            res = env.step(actions)
            total += res.reward
            visits.append(VisitRecord(observations=observations, state=state, prey_actions=res.info.prey_actions))
            if recorder is not None:
                recorder.record(episode, res.state, actions, res.info.prey_actions, res.reward, res.done)
        returns.append(total)
    return EvaluationRecord(
        mean_return=float(np.mean(returns)),
        std_return=float(np.std(returns)),
        returns=[float(r) for r in returns],
        policy_entropy={i: float(np.mean(v)) for i, v in entropies.items()},
        diagnostics=collect_diagnostics(agents, visits, env),
    )


@dataclass
class RunResult:
    run_dir: str
    update_step: int
    episodes: int
    final_evaluation: Optional[EvaluationRecord]
    param_hashes: Dict[int, Dict[str, str]]


def _write_metrics(log: MetricsLog, config, record: EvaluationRecord, report: Optional[UpdateReport],
                   episodes: int, update_step: int):
    for i in sorted(record.policy_entropy):
        diag = record.agent_diagnostics(i)
        upd = report.agents[i] if report is not None else None
        log.write(
            episode=episodes,
            update_step=update_step,
            variant=config.variant,
            seed=config.seed,
            agent=i,
            eval_mean_return=record.mean_return,
            eval_std_return=record.std_return,
            critic_loss=upd.critic_loss if upd else None,
            actor_loss=upd.actor_loss if upd else None,
            policy_entropy=record.policy_entropy[i],
            om_kld=diag.mean_kld if diag else None,
            om_entropy=diag.mean_entropy if diag else None,
            om_accuracy=diag.accuracy if diag else None,
        )


def build_checkpoint(config: TrainConfig, agents, rollout: Rollout, update_step: int) -> ckpt.Checkpoint:
    arrays, scalars = agents_state(agents)
    snapshot = rollout.snapshot()
    return ckpt.Checkpoint(
        variant=config.variant,
        config=json.loads(json.dumps(config.to_dict())),
        counters={"update_step": update_step, "episodes": rollout.episodes_done,
                  "next_episode_id": snapshot["next_episode_id"]},
        rng_states={"agents": [get_state(a.rng) for a in agents], "envs": snapshot["env_rngs"]},
        optimizers=scalars,
        env_snapshots=[{"env": env, "episode_id": eid}
                       for env, eid in zip(snapshot["envs"], snapshot["episode_ids"])],
        arrays=arrays,
    )


def restore_checkpoint(checkpoint: ckpt.Checkpoint, agents, rollout: Optional[Rollout] = None) -> int:
    """Load parameters, optimizer and RNG state; returns the update step."""
    load_agents_state(agents, checkpoint.arrays, checkpoint.optimizers)
    for agent, state in zip(agents, checkpoint.rng_states["agents"]):
        set_state(agent.rng, state)
    if rollout is not None:
        rollout.restore({
            "episodes_done": checkpoint.counters["episodes"],
            "next_episode_id": checkpoint.counters["next_episode_id"],
            "episode_ids": [s["episode_id"] for s in checkpoint.env_snapshots],
            "env_rngs": checkpoint.rng_states["envs"],
            "envs": [s["env"] for s in checkpoint.env_snapshots],
        })
    return int(checkpoint.counters["update_step"])


def load_agents(checkpoint: ckpt.Checkpoint):
    """Rebuild config and agents from a self-describing checkpoint."""
    config = load_config_dict(checkpoint.config)
    agents = build_agents(config)
    restore_checkpoint(checkpoint, agents)
    return config, agents


def train(config: TrainConfig, out_dir, resume: bool = False) -> RunResult:
    grid = config.grid_config()
    agents = build_agents(config, grid)
    rollout = Rollout.build(config, grid)
    rule = acting_rule(config)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)

    update_step, resumed = 0, False
    if resume:
        path = ckpt.latest_checkpoint(ckpt_dir)
        if path is not None:
            update_step = restore_checkpoint(ckpt.load_checkpoint(path), agents, rollout)
            resumed = True
    if not resumed:
        with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as handle:
            handle.write(serialize_config(config))

    configure_run_logging(out_dir)
    metrics = MetricsLog(os.path.join(out_dir, "metrics.csv"), config.eval.record_wall_time,
                         resume_after=update_step if resumed else None)
    recorder = None
    if config.eval.dump_trajectories:
        recorder = TrajectoryRecorder(os.path.join(out_dir, "logs", "trajectories.jsonl"))
    log_event("train_start", {"run_dir": out_dir, "variant": config.variant, "seed": config.seed,
                              "resumed_at": update_step if resumed else None})

    record = None
    try:
        if not resumed:
            record = evaluate(agents, grid, config.eval.episodes, config.seed, rule, recorder)
            _write_metrics(metrics, config, record, None, 0, 0)
            log_event("evaluate", {"update_step": 0, "mean_return": record.mean_return})

        saved_at = update_step if resumed else None
        while rollout.episodes_done < config.episodes:
            window = None
            if config.rollout.update_mode == "episodes":
                window = min(config.rollout.episodes_per_update, config.episodes - rollout.episodes_done)
            batch = collect(rollout, agents, config, episodes=window)
            try:
                report = update(agents, batch, config)
            except NumericError as e:
                log_event("update", {"update_step": update_step + 1, "error": e.message, **e.details},
                          status="failure")
                raise
            update_step += 1
            log_event("update", {"update_step": update_step, "episodes": rollout.episodes_done,
                                 **{k: v for k, v in report.to_dict().items() if k != "agents"},
                                 "critic_loss": [a.critic_loss for a in report.agents],
                                 "actor_loss": [a.actor_loss for a in report.agents]})

            finished = rollout.episodes_done >= config.episodes
            if update_step % config.eval.every == 0 or finished:
                record = evaluate(agents, grid, config.eval.episodes, config.seed, rule, recorder)
                _write_metrics(metrics, config, record, report, rollout.episodes_done, update_step)
                log_event("evaluate", {"update_step": update_step, "mean_return": record.mean_return,
                                       "std_return": record.std_return})
            if update_step % config.eval.checkpoint_every == 0 or finished:
                path = ckpt.save_checkpoint(os.path.join(ckpt_dir, ckpt.checkpoint_name(update_step)),
                                            build_checkpoint(config, agents, rollout, update_step))
                saved_at = update_step
                log_event("checkpoint", {"path": path, "update_step": update_step})
        if saved_at != update_step:
            ckpt.save_checkpoint(os.path.join(ckpt_dir, ckpt.checkpoint_name(update_step)),
                                 build_checkpoint(config, agents, rollout, update_step))

        hashes = {a.index: a.param_hashes() for a in agents}
        summary = {
            "variant": config.variant,
            "seed": config.seed,
            "update_step": update_step,
            "episodes": rollout.episodes_done,
            "param_hashes": {str(i): h for i, h in hashes.items()},
            "parameter_counts": {str(a.index): a.parameter_counts() for a in agents},
            "final_evaluation": record.to_dict() if record is not None else None,
        }
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
        log_event("train_complete", {"update_step": update_step, "episodes": rollout.episodes_done})
        logger.info(f"Run finished after {rollout.episodes_done} episodes and {update_step} updates: {out_dir}")
        return RunResult(run_dir=out_dir, update_step=update_step, episodes=rollout.episodes_done,
                         final_evaluation=record, param_hashes=hashes)
    finally:
        rollout.close()
        if recorder is not None:
            recorder.close()
        close_run_logging()
