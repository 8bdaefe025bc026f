"""Partially observable predator-prey grid game.

Predators are the controlled team and share one reward. Preys follow a fixed
policy. Each tick every agent moves at once (moves off the grid have no
effect), then a living prey is caught by every predator in one of its four
cardinal neighbour cells. The team gets -0.01 per step, plus +5 for each prey
caught by two or more predators (that prey dies) and -0.5 for each prey
caught by exactly one predator (that prey survives). The episode ends when
every prey is dead or after max_steps steps.
"""
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from domac.errors import ConfigurationError, EnvironmentStateError, ShapeError


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    NOOP = 4


N_ACTIONS = len(Action)
MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1], [0, 0]], dtype=np.int64)

STEP_COST = -0.01
TEAM_CATCH_REWARD = 5.0
SOLO_CATCH_PENALTY = -0.5
SENTINEL = -1.0


@dataclass(frozen=True)
class GridConfig:
    grid_size: int
    n_predators: int
    n_preys: int
    view_size: int = 5
    max_steps: int = 100
    mask_opponent_obs: bool = False
    prey_policy: str = "uniform"

    def __post_init__(self):
        if self.grid_size < 2:
            raise ConfigurationError("grid_size must be >= 2", field="grid_size")
        if self.n_predators < 1 or self.n_preys < 1:
            raise ConfigurationError("need at least one predator and one prey", field="n_predators")
        if self.view_size < 1 or self.view_size % 2 == 0:
            raise ConfigurationError("view_size must be a positive odd integer", field="view_size")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1", field="max_steps")
        if self.prey_policy not in PREY_POLICIES:
            raise ConfigurationError(f"unknown prey policy {self.prey_policy!r}", field="prey_policy")

    @property
    def obs_dim(self):
        return 2 + self.n_predators + 2 * self.n_preys

    @property
    def n_agents(self):
        return self.n_predators + self.n_preys


@dataclass
class GridState:
    predator_pos: np.ndarray
    prey_pos: np.ndarray
    prey_alive: np.ndarray
    step_count: int = 0

    def copy(self):
        return GridState(self.predator_pos.copy(), self.prey_pos.copy(),
                         self.prey_alive.copy(), int(self.step_count))

    def to_dict(self):
        return {
            "predator_pos": self.predator_pos.tolist(),
            "prey_pos": self.prey_pos.tolist(),
            "prey_alive": [bool(a) for a in self.prey_alive],
            "step_count": int(self.step_count),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["predator_pos"], dtype=np.int64).reshape(-1, 2),
                   np.array(data["prey_pos"], dtype=np.int64).reshape(-1, 2),
                   np.array(data["prey_alive"], dtype=bool),
                   int(data["step_count"]))


@dataclass
class CatchInfo:
    catchers: List[int]          # catching predators per prey this step
    killed: List[int]            # prey indices that died this step
    prey_actions: List[int]


@dataclass
class StepResult:
    observations: np.ndarray     # [n_predators x obs_dim]
    reward: float
    done: bool
    info: CatchInfo
    state: GridState = None


# Prey policies return the ground-truth opponent distribution for one prey.

def uniform_prey_policy(state: GridState, prey_index: int) -> np.ndarray:
    return np.full(N_ACTIONS, 1.0 / N_ACTIONS)


def alternate_prey_policy(state: GridState, prey_index: int) -> np.ndarray:
    """Uniform on even steps, stays put on odd steps."""
    if state.step_count % 2 == 0:
        return uniform_prey_policy(state, prey_index)
    dist = np.zeros(N_ACTIONS)
    dist[Action.NOOP] = 1.0
    return dist


PREY_POLICIES: Dict[str, Callable[[GridState, int], np.ndarray]] = {
    "uniform": uniform_prey_policy,
    "alternate": alternate_prey_policy,
}


def prey_policy(state: GridState, prey_index: int, kind: str = "uniform") -> np.ndarray:
    if not 0 <= prey_index < len(state.prey_alive):
        raise ShapeError(f"no prey with index {prey_index}", field="prey_index")
    if not state.prey_alive[prey_index]:
        raise EnvironmentStateError(f"prey {prey_index} is dead and has no policy")
    return PREY_POLICIES[kind](state, prey_index)


def observe(state: GridState, predator_index: int, config: GridConfig) -> np.ndarray:
    """Local observation of one predator.

    Layout: own (row, col) / (grid_size - 1), one-hot predator index, then per
    prey the offset (prey - predator) / view_size if the prey is alive, inside
    the view window and not masked, else the sentinel (-1, -1).
    """
    if not 0 <= predator_index < config.n_predators:
        raise ShapeError(f"no predator with index {predator_index}", field="predator_index")
    obs = np.full(config.obs_dim, SENTINEL)
    pos = state.predator_pos[predator_index]
    obs[0:2] = pos / (config.grid_size - 1)
    obs[2:2 + config.n_predators] = 0.0
    obs[2 + predator_index] = 1.0

    half = (config.view_size - 1) // 2
    base = 2 + config.n_predators
    if config.mask_opponent_obs:
        return obs
    for k in range(config.n_preys):
        if not state.prey_alive[k]:
            continue
        offset = state.prey_pos[k] - pos
        if np.max(np.abs(offset)) <= half:
            obs[base + 2 * k: base + 2 * k + 2] = offset / config.view_size
    return obs


def observe_all(state: GridState, config: GridConfig) -> np.ndarray:
    return np.stack([observe(state, i, config) for i in range(config.n_predators)])


def count_catchers(predator_pos: np.ndarray, prey_pos: np.ndarray, prey_alive: np.ndarray) -> List[int]:
    catchers = []
    for k in range(len(prey_pos)):
        if not prey_alive[k]:
            catchers.append(0)
            continue
        manhattan = np.abs(predator_pos - prey_pos[k]).sum(axis=1)
        catchers.append(int(np.sum(manhattan == 1)))
    return catchers


def _move(positions, actions, grid_size):
    moved = positions + MOVES[np.asarray(actions, dtype=np.int64)]
    return np.clip(moved, 0, grid_size - 1)


def transition(config: GridConfig, state: GridState, predator_actions: Sequence[int],
               prey_actions: Sequence[int]) -> Tuple[GridState, float, bool, CatchInfo]:
    """Apply one simultaneous move and score it. Pure: ``state`` is not modified."""
    if len(predator_actions) != config.n_predators:
        raise ShapeError(f"expected {config.n_predators} predator actions, got {len(predator_actions)}",
                         field="predator_actions")
    if len(prey_actions) != config.n_preys:
        raise ShapeError(f"expected {config.n_preys} prey actions, got {len(prey_actions)}",
                         field="prey_actions")
    for a in list(predator_actions) + list(prey_actions):
        if not 0 <= int(a) < N_ACTIONS:
            raise ShapeError(f"invalid action id {a}", field="action")
    if is_terminal(config, state):
        raise EnvironmentStateError("step called on a finished episode")

    prey_actions = [int(a) if state.prey_alive[k] else int(Action.NOOP)
                    for k, a in enumerate(prey_actions)]
    nxt = state.copy()
    nxt.predator_pos = _move(state.predator_pos, predator_actions, config.grid_size)
    nxt.prey_pos = _move(state.prey_pos, prey_actions, config.grid_size)
    nxt.step_count = state.step_count + 1

    catchers = count_catchers(nxt.predator_pos, nxt.prey_pos, nxt.prey_alive)
    reward = STEP_COST
    killed = []
    for k, n in enumerate(catchers):
        if n >= 2:
            reward += TEAM_CATCH_REWARD
            nxt.prey_alive[k] = False
            killed.append(k)
        elif n == 1:
            reward += SOLO_CATCH_PENALTY
    done = is_terminal(config, nxt)
    return nxt, float(reward), done, CatchInfo(catchers=catchers, killed=killed, prey_actions=prey_actions)


def step(config: GridConfig, state: GridState, predator_actions: Sequence[int],
         rng: np.random.Generator, prey_policy_fn: Optional[Callable] = None) -> StepResult:
    """Sample prey moves from the prey policy, then apply ``transition``."""
    policy = prey_policy_fn or PREY_POLICIES[config.prey_policy]
    if is_terminal(config, state):
        raise EnvironmentStateError("step called on a finished episode")
    prey_actions = [int(rng.choice(N_ACTIONS, p=policy(state, k))) if state.prey_alive[k] else int(Action.NOOP)
                    for k in range(config.n_preys)]
    nxt, reward, done, info = transition(config, state, predator_actions, prey_actions)
    return StepResult(observations=observe_all(nxt, config), reward=reward, done=done, info=info, state=nxt)


def is_terminal(config: GridConfig, state: GridState) -> bool:
    return bool(not state.prey_alive.any() or state.step_count >= config.max_steps)


def reset(config: GridConfig, seed: int) -> Tuple[GridState, np.ndarray]:
    rng = np.random.default_rng(seed)
    state = _place(config, rng)
    return state, observe_all(state, config)


def _place(config, rng):
    cells = config.grid_size * config.grid_size
    if cells < config.n_agents:
        raise ConfigurationError(f"a {config.grid_size}x{config.grid_size} grid cannot hold "
                                 f"{config.n_agents} agents on distinct cells", field="grid_size")
    chosen = rng.choice(cells, size=config.n_agents, replace=False)
    coords = np.stack([chosen // config.grid_size, chosen % config.grid_size], axis=1).astype(np.int64)
    return GridState(predator_pos=coords[:config.n_predators].copy(),
                     prey_pos=coords[config.n_predators:].copy(),
                     prey_alive=np.ones(config.n_preys, dtype=bool),
                     step_count=0)


class PredatorPreyEnv:
    """Stateful wrapper holding the current GridState and the seeded prey stream."""

    def __init__(self, config: GridConfig, prey_policy_fn: Optional[Callable] = None):
        self.config = config
        self.prey_policy_fn = prey_policy_fn or PREY_POLICIES[config.prey_policy]
        self.state: Optional[GridState] = None
        self.rng: Optional[np.random.Generator] = None
        self.seed: Optional[int] = None

    def reset(self, seed: int):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.state = _place(self.config, self.rng)
        return self.state.copy(), observe_all(self.state, self.config)

    @property
    def done(self):
        return self.state is None or is_terminal(self.config, self.state)

    def observations(self):
        return observe_all(self.state, self.config)

    def prey_policy(self, state: GridState, prey_index: int) -> np.ndarray:
        if not state.prey_alive[prey_index]:
            raise EnvironmentStateError(f"prey {prey_index} is dead and has no policy")
        return self.prey_policy_fn(state, prey_index)

    def sample_prey_actions(self, rng: np.random.Generator, state: Optional[GridState] = None) -> List[int]:
        state = self.state if state is None else state
        actions = []
        for k in range(self.config.n_preys):
            if state.prey_alive[k]:
                actions.append(int(rng.choice(N_ACTIONS, p=self.prey_policy(state, k))))
            else:
                actions.append(int(Action.NOOP))
        return actions

    def sample_true_opponent_actions(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        """Joint prey actions drawn from the real prey policy, [n_samples x n_preys]."""
        out = np.full((n_samples, self.config.n_preys), int(Action.NOOP), dtype=np.int64)
        for k in range(self.config.n_preys):
            if self.state.prey_alive[k]:
                out[:, k] = rng.choice(N_ACTIONS, size=n_samples, p=self.prey_policy(self.state, k))
        return out

    def step(self, predator_actions: Sequence[int], prey_actions: Optional[Sequence[int]] = None) -> StepResult:
        if self.state is None:
            raise EnvironmentStateError("step called before reset")
        if prey_actions is None:
            if self.done:
                raise EnvironmentStateError("step called on a finished episode")
            prey_actions = self.sample_prey_actions(self.rng)
        nxt, reward, done, info = transition(self.config, self.state, predator_actions, prey_actions)
        self.state = nxt
        return StepResult(observations=observe_all(nxt, self.config), reward=reward, done=done,
                          info=info, state=nxt.copy())

    def snapshot(self):
        return {
            "seed": self.seed,
            "state": None if self.state is None else self.state.to_dict(),
            "rng": None if self.rng is None else self.rng.bit_generator.state,
        }

    def restore(self, snapshot):
        self.seed = snapshot["seed"]
        self.state = None if snapshot["state"] is None else GridState.from_dict(snapshot["state"])
        if snapshot["rng"] is None:
            self.rng = None
        else:
            self.rng = np.random.default_rng()
            self.rng.bit_generator.state = snapshot["rng"]


@dataclass
class EnvPool:
    """N independent environments; optionally stepped by a thread pool.

    Results always come back in environment order.
    """
    envs: List[PredatorPreyEnv]
    workers: int = 1
    _executor: Optional[ThreadPoolExecutor] = field(default=None, repr=False)

    @classmethod
    def build(cls, config: GridConfig, n_envs: int, workers: int = 1):
        return cls(envs=[PredatorPreyEnv(config) for _ in range(n_envs)], workers=workers)

    def __len__(self):
        return len(self.envs)

    def step_all(self, indices: Sequence[int], predator_actions: Sequence[Sequence[int]],
                 prey_actions: Sequence[Optional[Sequence[int]]]) -> List[StepResult]:
        jobs = list(zip(indices, predator_actions, prey_actions))
        if self.workers <= 1 or len(jobs) <= 1:
            return [self.envs[i].step(a, p) for i, a, p in jobs]
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.workers)
        futures = [self._executor.submit(self.envs[i].step, a, p) for i, a, p in jobs]
        return [f.result() for f in futures]

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
