"""Opponent-model diagnostics against the known prey policy.

These functions are the only consumers of ground-truth prey distributions
outside the UB variant; the learning path never calls them.
"""
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from domac.env import N_ACTIONS, GridState, PredatorPreyEnv
from domac.errors import MetricError, ShapeError
from domac.oppmodel import predicted_entropy

PROB_FLOOR = 1e-12


def kld(true_dist, predicted) -> float:
    """KL(true || predicted), predicted floored at PROB_FLOOR inside the log."""
    p = np.asarray(true_dist, dtype=np.float64)
    q = np.asarray(predicted, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"distributions differ in shape: {p.shape} vs {q.shape}", field="predicted")
    q = np.maximum(q, PROB_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.maximum(p, PROB_FLOOR)) - np.log(q)), 0.0)
    return float(max(0.0, terms.sum()))


def prediction_accuracy(true_actions, predicted) -> Optional[float]:
    """Share of argmax predictions (lowest index on ties) that hit the realized action.

    None when the model's output space differs from the real action space.
    """
    predicted = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    true_actions = np.asarray(true_actions, dtype=np.int64).reshape(-1)
    if len(true_actions) == 0:
        raise MetricError("prediction accuracy over zero samples")
    if len(true_actions) != predicted.shape[0]:
        raise ShapeError(f"{len(true_actions)} actions but {predicted.shape[0]} predictions", field="predicted")
    if predicted.shape[1] != N_ACTIONS:
        return None
    return float(np.mean(np.argmax(predicted, axis=1) == true_actions))


@dataclass
class OpponentDiagnostics:
    mean_kld: Optional[float]
    mean_entropy: float
    accuracy: Optional[float]
    samples: int

    def to_dict(self):
        return asdict(self)


@dataclass
class VisitRecord:
    """One visited step, kept for metrics only: predator observations, the
    state they came from and the prey actions that state produced."""
    observations: np.ndarray
    state: GridState
    prey_actions: List[int]


def collect_diagnostics(agents, visits: Sequence[VisitRecord],
                        env: PredatorPreyEnv) -> Dict[int, Dict[int, OpponentDiagnostics]]:
    """Per (agent, opponent) averages over every visited step where the prey was alive."""
    out = {}
    for agent in agents:
        if not agent.models:
            continue
        per_opponent = {}
        for k, model in enumerate(agent.models):
            rows = [v for v in visits if v.state.prey_alive[k]]
            if not rows:
                per_opponent[k] = OpponentDiagnostics(None, 0.0, None, 0)
                continue
            obs = np.stack([v.observations[agent.index] for v in rows])
            probs, _ = model.forward(obs)
            realized = [v.prey_actions[k] for v in rows]
            kl = None
            if model.output_dim == N_ACTIONS:
                kl = float(np.mean([kld(env.prey_policy(v.state, k), q) for v, q in zip(rows, probs)]))
            per_opponent[k] = OpponentDiagnostics(
                mean_kld=kl,
                mean_entropy=float(np.mean(predicted_entropy(probs))),
                accuracy=prediction_accuracy(realized, probs),
                samples=len(rows),
            )
        out[agent.index] = per_opponent
    return out


def summarize(per_opponent: Dict[int, OpponentDiagnostics]) -> OpponentDiagnostics:
    """Sample-weighted mean over one agent's opponents."""
    items = [d for d in per_opponent.values() if d.samples > 0]
    total = sum(d.samples for d in items)
    if not total:
        return OpponentDiagnostics(None, 0.0, None, 0)

    def weighted(attr):
        vals = [(getattr(d, attr), d.samples) for d in items]
        if any(v is None for v, _ in vals):
            return None
        return float(sum(v * n for v, n in vals) / total)

    return OpponentDiagnostics(mean_kld=weighted("mean_kld"), mean_entropy=weighted("mean_entropy"),
                               accuracy=weighted("accuracy"), samples=total)
