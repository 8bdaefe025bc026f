import numpy as np
import pytest

from domac.agent import build_agents
from domac.env import PredatorPreyEnv
from domac.errors import MetricError, ShapeError
from domac.metrics import (
    PROB_FLOOR,
    OpponentDiagnostics,
    VisitRecord,
    collect_diagnostics,
    kld,
    prediction_accuracy,
    summarize,
)
from domac.metrics_log import METRICS_COLUMNS, MetricsLog, format_number, read_rows, truncate_after


def test_kld_examples():
    assert kld([0.2] * 5, [0.2] * 5) == 0.0
    assert kld([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.5 * np.log(0.5 / 0.75) + 0.5 * np.log(2.0), abs=1e-12)
    assert kld([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.14384, abs=1e-5)


def test_kld_against_uniform_truth(rng):
    for _ in range(10):
        q = rng.dirichlet(np.ones(5))
        assert kld(np.full(5, 0.2), q) == pytest.approx(-np.log(5) - 0.2 * np.log(q).sum(), abs=1e-12)


def test_kld_is_floored_and_finite():
    value = kld(np.full(5, 0.2), [1.0, 0.0, 0.0, 0.0, 0.0])
    assert np.isfinite(value)
    assert value == pytest.approx(np.log(0.2) - 0.8 * np.log(PROB_FLOOR), rel=1e-9)


def test_kld_shape_mismatch():
    with pytest.raises(ShapeError):
        kld([0.5, 0.5], [0.2] * 5)


def test_accuracy_examples():
    truth = np.random.default_rng(5).integers(0, 5, size=10_000)
    assert prediction_accuracy(truth, np.full((10_000, 5), 0.2)) == pytest.approx(0.2, abs=0.02)
    assert prediction_accuracy(truth, np.eye(5)[truth]) == 1.0


def test_accuracy_ties_go_to_lowest_index():
    assert prediction_accuracy([1], [[0.4, 0.4, 0.2, 0, 0]]) == 0.0
    assert prediction_accuracy([0], [[0.4, 0.4, 0.2, 0, 0]]) == 1.0


def test_accuracy_errors_and_not_applicable():
    with pytest.raises(MetricError):
        prediction_accuracy([], np.zeros((0, 5)))
    with pytest.raises(ShapeError):
        prediction_accuracy([0, 1], np.full((3, 5), 0.2))
    assert prediction_accuracy([0, 1], np.full((2, 3), 1 / 3)) is None


def visits_of(grid, seed, steps=20):
    env = PredatorPreyEnv(grid)
    _, obs = env.reset(seed)
    rng = np.random.default_rng(seed)
    visits = []
    while not env.done and len(visits) < steps:
        state = env.state.copy()
        prey_actions = env.sample_prey_actions(rng)
        visits.append(VisitRecord(observations=obs, state=state, prey_actions=prey_actions))
        obs = env.step(list(rng.integers(0, 5, size=grid.n_predators)), prey_actions).observations
    return env, visits


def test_uniform_models_against_uniform_prey(tiny_config):
    config = tiny_config()
    agents = build_agents(config)
    for agent in agents:
        for p in agent.model_params:
            p.values[...] = 0.0
    env, visits = visits_of(config.grid_config(), 0)
    diagnostics = collect_diagnostics(agents, visits, env)
    assert set(diagnostics) == {0, 1}
    d = diagnostics[0][0]
    assert d.mean_kld == pytest.approx(0.0, abs=1e-12)
    assert d.mean_entropy == pytest.approx(np.log(5), abs=1e-12)
    assert d.samples == len(visits)
    assert 0.0 <= d.accuracy <= 1.0


def test_diagnostics_do_not_touch_parameters_and_repeat(tiny_config):
    config = tiny_config()
    agents = build_agents(config)
    hashes = [a.param_hashes() for a in agents]
    env, visits = visits_of(config.grid_config(), 3)
    first = collect_diagnostics(agents, visits, env)
    second = collect_diagnostics(agents, visits, env)
    assert [a.param_hashes() for a in agents] == hashes
    assert {i: {k: d.to_dict() for k, d in v.items()} for i, v in first.items()} == \
           {i: {k: d.to_dict() for k, d in v.items()} for i, v in second.items()}


def test_agents_without_models_are_skipped(tiny_config):
    config = tiny_config(variant="MAAC")
    env, visits = visits_of(config.grid_config(), 0)
    assert collect_diagnostics(build_agents(config), visits, env) == {}


def test_reduced_model_dimension_has_no_kld(tiny_config):
    config = tiny_config(ablation={"om_dim": 3})
    env, visits = visits_of(config.grid_config(), 0)
    d = collect_diagnostics(build_agents(config), visits, env)[0][0]
    assert d.mean_kld is None and d.accuracy is None
    assert 0.0 <= d.mean_entropy <= np.log(3) + 1e-12


def test_summarize_weights_by_samples():
    merged = summarize({0: OpponentDiagnostics(1.0, 1.0, 0.5, 10), 1: OpponentDiagnostics(4.0, 2.0, 0.0, 30)})
    assert merged.mean_kld == pytest.approx(3.25)
    assert merged.mean_entropy == pytest.approx(1.75)
    assert merged.accuracy == pytest.approx(0.125)
    assert merged.samples == 40
    assert summarize({0: OpponentDiagnostics(None, 1.0, None, 3)}).mean_kld is None
    assert summarize({}).samples == 0


def test_format_number():
    assert format_number(None) == ""
    assert format_number(7) == "7"
    assert format_number(1 / 3) == "0.333333333"
    assert format_number(-0.01) == "-0.01"


def test_metrics_log_header_and_empty_fields(tmp_path):
    path = tmp_path / "metrics.csv"
    log = MetricsLog(str(path))
    log.write(episode=20, update_step=2, variant="MAAC", seed=0, agent=1, eval_mean_return=-0.5)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(METRICS_COLUMNS)
    row = read_rows(str(path))[0]
    assert row["wall_time"] == "" and row["om_kld"] == ""
    assert row["variant"] == "MAAC" and row["eval_mean_return"] == "-0.5"


def test_metrics_log_wall_time(tmp_path):
    path = tmp_path / "metrics.csv"
    MetricsLog(str(path), record_wall_time=True).write(episode=0, update_step=0, variant="DOMAC", seed=0, agent=0)
    assert float(read_rows(str(path))[0]["wall_time"]) >= 0.0


def test_metrics_log_rejects_unknown_columns(tmp_path):
    with pytest.raises(KeyError):
        MetricsLog(str(tmp_path / "m.csv")).write(bogus=1)


def test_truncate_after(tmp_path):
    path = str(tmp_path / "metrics.csv")
    log = MetricsLog(path)
    for step in range(4):
        log.write(episode=10 * step, update_step=step, variant="DOMAC", seed=0, agent=0)
    truncate_after(path, 1)
    assert [r["update_step"] for r in read_rows(path)] == ["0", "1"]
    MetricsLog(path, resume_after=0)
    assert [r["update_step"] for r in read_rows(path)] == ["0"]
