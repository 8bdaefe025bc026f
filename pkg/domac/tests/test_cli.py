import pytest

import json

from domac import selftest
from domac.agent import build_agents
from domac.checkpoint import latest_checkpoint, load_checkpoint
from domac.metrics_log import read_rows
from domac.trainer import load_agents
from domac.cli import build_parser, config_from_args, main
from domac.config import parse_config, serialize_config


@pytest.fixture
def config_file(tiny_config, tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(serialize_config(tiny_config(episodes=2)))
    return str(path)


@pytest.fixture
def trained_run(config_file, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", config_file, "--out-dir", str(out)]) == 0
    return out


def test_no_arguments_prints_usage(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_command_and_flags():
    assert main(["fly"]) == 1
    assert main(["train", "--bogus"]) == 1
    assert main(["eval"]) == 1


def test_flags_layer_over_config_file(config_file):
    args = build_parser().parse_args(["train", "--config", config_file, "--seed", "9", "--variant", "OMAC",
                                      "--mask-obs", "--om-dim", "3", "--quantiles", "3", "--om-frozen", "random"])
    config = config_from_args(args)
    assert config.seed == 9 and config.variant == "OMAC"
    assert config.ablation.mask_obs and config.ablation.om_dim == 3
    assert config.ablation.om_frozen == "random"
    assert config.algo.quantiles == 3
    assert config.algo.hidden_dims == (8,)


def test_invalid_flag_value_is_a_usage_error(config_file, tmp_path):
    assert main(["train", "--config", config_file, "--quantiles", "0", "--out-dir", str(tmp_path / "x")]) == 1


def test_bad_config_file_is_a_usage_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("seed = 1\nalgo.gamma = 3\n")
    assert main(["train", "--config", str(path), "--out-dir", str(tmp_path / "x")]) == 1


def test_train_creates_run_directory(trained_run, capsys):
    assert (trained_run / "metrics.csv").exists()
    assert (trained_run / "checkpoints" / "ckpt-00000001.bin").exists()
    assert parse_config(trained_run / "config.cfg").episodes == 2


def test_train_refuses_to_overwrite(trained_run, config_file):
    assert main(["train", "--config", config_file, "--out-dir", str(trained_run)]) == 1
    assert main(["train", "--config", config_file, "--out-dir", str(trained_run), "--resume"]) == 0


def test_train_ablation_flags(config_file, tmp_path):
    out = tmp_path / "ablation"
    assert main(["train", "--config", config_file, "--out-dir", str(out), "--mask-obs", "--om-dim", "3"]) == 0
    config = parse_config(out / "config.cfg")
    assert config.ablation.mask_obs and config.ablation.om_dim == 3


def test_eval_prints_mean_and_std(trained_run, capsys):
    capsys.readouterr()
    ckpt = str(trained_run / "checkpoints" / "ckpt-00000001.bin")
    assert main(["eval", "--checkpoint", ckpt, "--episodes", "3", "--seed", "4"]) == 0
    first = capsys.readouterr().out
    assert "±" in first and "over 3 episodes" in first
    assert main(["eval", "--checkpoint", ckpt, "--episodes", "3", "--seed", "4"]) == 0
    assert capsys.readouterr().out == first


def test_eval_json(trained_run, capsys):
    capsys.readouterr()
    ckpt = str(trained_run / "checkpoints" / "ckpt-00000001.bin")
    assert main(["eval", "--checkpoint", ckpt, "--episodes", "2", "--json"]) == 0
    out = capsys.readouterr().out
    assert '"mean_return"' in out and '"diagnostics"' in out


def test_eval_rejects_zero_episodes(trained_run):
    ckpt = str(trained_run / "checkpoints" / "ckpt-00000001.bin")
    assert main(["eval", "--checkpoint", ckpt, "--episodes", "0"]) == 1


def test_inspect(trained_run, capsys):
    capsys.readouterr()
    assert main(["inspect", "--checkpoint", str(trained_run / "checkpoints" / "ckpt-00000001.bin")]) == 0
    out = capsys.readouterr().out
    assert "format version: 1" in out
    assert "variant:        DOMAC" in out
    assert "agent 0:" in out and "agent 1:" in out


def test_missing_or_corrupt_checkpoint(trained_run, tmp_path):
    assert main(["inspect", "--checkpoint", str(tmp_path / "missing.bin")]) == 2
    ckpt = trained_run / "checkpoints" / "ckpt-00000001.bin"
    blob = bytearray(ckpt.read_bytes())
    blob[-30] ^= 0x01
    broken = tmp_path / "broken.bin"
    broken.write_bytes(bytes(blob))
    assert main(["eval", "--checkpoint", str(broken)]) == 2


def test_selftest_exit_codes(monkeypatch, capsys):
    monkeypatch.setattr(selftest, "CHECKS", [("reward_cases", selftest.reward_case_error, 1e-12),
                                             ("mlp_gradient_tanh", selftest.mlp_gradient_error, 1e-4)])
    assert main(["selftest"]) == 0
    assert "2/2 checks passed" in capsys.readouterr().out
    monkeypatch.setattr(selftest, "CHECKS", [("always_fails", lambda rng: 1.0, 0.5)])
    assert main(["selftest"]) == 2
    assert "FAIL" in capsys.readouterr().out


def run_ablation(config_file, out, *flags):
    assert main(["train", "--config", config_file, "--out-dir", str(out), *flags]) == 0
    config, agents = load_agents(load_checkpoint(latest_checkpoint(str(out / "checkpoints"))))
    summary = json.loads((out / "summary.json").read_text())
    return config, agents, summary, read_rows(str(out / "metrics.csv"))


@pytest.mark.parametrize("om_dim", [3, 8, 16])
def test_reduced_and_widened_model_outputs_complete(config_file, tmp_path, om_dim):
    config, agents, summary, rows = run_ablation(config_file, tmp_path / "run", "--om-dim", str(om_dim))
    assert config.ablation.om_dim == om_dim
    for agent in agents:
        assert [m.output_dim for m in agent.models] == [om_dim]
        assert agent.policy.spec.input_dim == agent.policy.obs_dim + om_dim
    initial = [a.param_hashes() for a in build_agents(config)]
    assert all(summary["param_hashes"][str(i)]["models"] != h["models"] for i, h in enumerate(initial))
    # predictions no longer live in the prey's action space
    assert all(r["om_kld"] == "" and r["om_accuracy"] == "" for r in rows)
    assert all(r["om_entropy"] != "" and r["eval_mean_return"] != "" for r in rows)


def test_three_quantile_critic_completes(config_file, tmp_path):
    config, agents, summary, rows = run_ablation(config_file, tmp_path / "run", "--quantiles", "3")
    assert config.algo.quantiles == 3
    assert all(a.critic.K == 3 and len(a.critic.levels) == 3 for a in agents)
    assert all(r["om_kld"] != "" for r in rows)
    assert all(r["critic_loss"] != "" for r in rows if r["update_step"] != "0")


def test_random_frozen_models_complete(config_file, tmp_path):
    config, agents, summary, rows = run_ablation(config_file, tmp_path / "run", "--om-frozen", "random")
    assert config.ablation.om_frozen == "random"
    initial = [a.param_hashes() for a in build_agents(config)]
    for i, h in enumerate(initial):
        assert summary["param_hashes"][str(i)]["models"] == h["models"]
        assert summary["param_hashes"][str(i)]["policy"] != h["policy"]
    assert all(r["om_kld"] != "" and r["om_accuracy"] != "" for r in rows)


def test_masked_observations_complete(config_file, tmp_path):
    config, agents, summary, rows = run_ablation(config_file, tmp_path / "run", "--mask-obs")
    assert config.grid_config().mask_opponent_obs
    assert all(r["om_kld"] != "" and r["eval_mean_return"] != "" for r in rows)
