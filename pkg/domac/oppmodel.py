"""Imaginary opponent models.

One network per (controlled agent, opponent) pair maps the agent's local
observation, with the opponent's one-hot id appended, to a distribution over
``output_dim`` opponent actions.
"""
import itertools
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from domac.diffcore import ForwardCache, MLPSpec, ParamBlock, init_params, mlp_forward, one_hot, softmax
from domac.errors import ConfigurationError, EnumerationCapError, ShapeError

DEFAULT_ENUMERATION_CAP = 10_000


@dataclass
class OpponentModel:
    spec: MLPSpec
    params: List[ParamBlock]
    obs_dim: int
    n_opponents: int
    opponent_id: int

    @classmethod
    def build(cls, obs_dim, n_opponents, opponent_id, output_dim, hidden_dims, rng,
              hidden_activation="tanh", name="om"):
        if output_dim < 2:
            raise ConfigurationError("opponent model output dimension must be >= 2", field="om_dim")
        spec = MLPSpec(obs_dim + n_opponents, tuple(hidden_dims), output_dim, hidden_activation)
        return cls(spec=spec, params=init_params(spec, rng, f"{name}{opponent_id}"),
                   obs_dim=obs_dim, n_opponents=n_opponents, opponent_id=opponent_id)

    @property
    def output_dim(self):
        return self.spec.output_dim

    def model_input(self, observations, opponent_id=None):
        obs = np.asarray(observations, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs[None, :]
        if obs.shape[1] != self.obs_dim:
            raise ShapeError(f"observation length {obs.shape[1]} != {self.obs_dim}", field="observation")
        opponent_id = self.opponent_id if opponent_id is None else opponent_id
        ids = np.zeros((obs.shape[0], self.n_opponents))
        ids[:, opponent_id] = 1.0
        return np.concatenate([obs, ids], axis=1)

    def forward(self, observations, opponent_id=None) -> Tuple[np.ndarray, ForwardCache]:
        logits, cache = mlp_forward(self.spec, self.params, self.model_input(observations, opponent_id))
        return softmax(logits), cache


@dataclass
class JointPredictionSample:
    actions: Tuple[int, ...]
    weight: float
    log_probs: Tuple[float, ...]


def predict(model: OpponentModel, observation, opponent_id=None) -> np.ndarray:
    probs, _ = model.forward(observation, opponent_id)
    return probs[0]


def _joint(actions, dists):
    probs = [float(d[a]) for a, d in zip(actions, dists)]
    weight = float(np.prod(probs)) if probs else 1.0
    with np.errstate(divide="ignore"):
        log_probs = tuple(float(np.log(p)) for p in probs)
    return JointPredictionSample(actions=tuple(int(a) for a in actions), weight=weight, log_probs=log_probs)


def sample_joint(models: Sequence[OpponentModel], observation, l: int,
                 rng: np.random.Generator) -> List[JointPredictionSample]:
    """``l`` independent joint predictions, each opponent drawn from its own model."""
    if l < 1:
        raise ConfigurationError("sample size l must be >= 1", field="sample_size")
    dists = [predict(m, observation) for m in models]
    draws = [rng.choice(len(d), size=l, p=d) for d in dists]
    return [_joint([int(column[s]) for column in draws], dists) for s in range(l)]


def joint_action_table(dims: Sequence[int], cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Every joint action as rows of a [prod(dims) x len(dims)] table, first opponent slowest."""
    total = int(np.prod(dims)) if len(dims) else 1
    if total > cap:
        raise EnumerationCapError(f"{total} joint actions exceed the enumeration cap {cap}; "
                                  f"use sample_joint instead",
                                  details={"dims": list(dims), "cap": cap})
    if not len(dims):
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(*[range(d) for d in dims])), dtype=np.int64)


def enumerate_joint(models: Sequence[OpponentModel], observation,
                    cap: int = DEFAULT_ENUMERATION_CAP) -> List[JointPredictionSample]:
    table = joint_action_table([m.output_dim for m in models], cap)
    dists = [predict(m, observation) for m in models]
    return [_joint(row, dists) for row in table]


def samples_to_array(samples: Sequence[JointPredictionSample], n_opponents: int) -> np.ndarray:
    return np.array([s.actions for s in samples], dtype=np.int64).reshape(len(samples), n_opponents)


def predicted_entropy(dists: np.ndarray) -> np.ndarray:
    p = np.asarray(dists)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def one_hot_predictions(samples: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """[..., p] opponent action indices -> [..., sum(dims)] concatenated one-hots."""
    samples = np.asarray(samples, dtype=np.int64)
    if samples.shape[-1] != len(dims):
        raise ShapeError(f"expected {len(dims)} predicted actions, got {samples.shape[-1]}", field="samples")
    if not len(dims):
        return np.zeros(samples.shape[:-1] + (0,))
    return np.concatenate([one_hot(samples[..., k], d) for k, d in enumerate(dims)], axis=-1)
