"""Command line entry point: ``python -m domac {train,eval,inspect,selftest}``."""
import argparse
import json
import logging
import os
import sys

from domac import config as settings
from domac.audit import audit_command, configure_console_logging
from domac.checkpoint import load_checkpoint
from domac.config import PRESETS, default_config, parse_config
from domac.error_handlers import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, handle_cli_errors
from domac.errors import ConfigurationError, UsageError
from domac.schemas import VARIANTS
from domac.selftest import run_selftest
from domac.trainer import acting_rule, evaluate, load_agents, train

logger = logging.getLogger("domac.cli")


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so exit codes stay ours."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser():
    parser = _Parser(prog="domac", description="Opponent-model-aided distributional actor-critic")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a team of predators")
    p.add_argument("--config", help="run config file (key = value lines)")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out-dir", help="run directory (default: $DOMAC_RUNS_DIR/<variant>-<preset>-s<seed>)")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--mask-obs", action="store_true", default=None, help="hide prey coordinates")
    p.add_argument("--om-dim", type=int, help="opponent-model output dimension")
    p.add_argument("--om-frozen", choices=["trained", "random"])
    p.add_argument("--quantiles", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in --out-dir")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="print the full evaluation record")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("inspect", help="print checkpoint metadata")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(handler=cmd_inspect)

    p = sub.add_parser("selftest", help="run gradient checks and oracle comparisons")
    p.set_defaults(handler=cmd_selftest)
    return parser


def config_from_args(args):
    """Config file (or defaults) with command-line flags layered on top."""
    config = parse_config(args.config) if args.config else default_config()
    top, sections = {}, {}
    if args.seed is not None:
        top["seed"] = args.seed
    if args.variant is not None:
        top["variant"] = args.variant
    if args.episodes is not None:
        top["episodes"] = args.episodes
    if args.preset is not None:
        sections.setdefault("env", {})["preset"] = args.preset
    if args.quantiles is not None:
        sections.setdefault("algo", {})["quantiles"] = args.quantiles
    ablation = {k: v for k, v in (("mask_obs", args.mask_obs), ("om_dim", args.om_dim),
                                  ("om_frozen", args.om_frozen)) if v is not None}
    if ablation:
        sections["ablation"] = ablation
    if not top and not sections:
        return config
    return config.with_overrides(**top, **sections)


def default_run_dir(config):
    return os.path.join(settings.RUNS_DIR, f"{config.variant}-{config.env.preset}-s{config.seed}")


@audit_command("train")
def cmd_train(args):
    try:
        config = config_from_args(args)
    except ConfigurationError as e:
        raise UsageError(e.message, details=e.details) from e
    out_dir = args.out_dir or default_run_dir(config)
    if os.path.exists(os.path.join(out_dir, "metrics.csv")) and not args.resume:
        raise UsageError(f"{out_dir} already holds a run; pass --resume or choose another --out-dir")
    os.makedirs(out_dir, exist_ok=True)
    result = train(config, out_dir, resume=args.resume)
    print(f"run directory: {result.run_dir}")
    if result.final_evaluation is not None:
        ev = result.final_evaluation
        print(f"final evaluation: {ev.mean_return:.4f} ± {ev.std_return:.4f}")
    return EXIT_OK


@audit_command("eval")
def cmd_eval(args):
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    checkpoint = load_checkpoint(args.checkpoint)
    config, agents = load_agents(checkpoint)
    record = evaluate(agents, config.grid_config(), args.episodes, args.seed, acting_rule(config))
    if args.json:
        print(json.dumps(record.to_dict(), indent=2, sort_keys=True))
    print(f"{record.mean_return:.4f} ± {record.std_return:.4f} over {args.episodes} episodes")
    return EXIT_OK


@audit_command("inspect")
def cmd_inspect(args):
    checkpoint = load_checkpoint(args.checkpoint)
    config, agents = load_agents(checkpoint)
    grid = config.grid_config()
    print(f"format version: {checkpoint.version}")
    print(f"variant:        {checkpoint.variant}")
    print(f"seed:           {config.seed}")
    print(f"grid:           {grid.grid_size}x{grid.grid_size}, {grid.n_predators} predators, {grid.n_preys} preys")
    print(f"update step:    {checkpoint.counters['update_step']}")
    print(f"episodes:       {checkpoint.counters['episodes']}")
    print(f"arrays:         {len(checkpoint.arrays)}")
    print("parameters:")
    for agent in agents:
        counts = agent.parameter_counts()
        detail = ", ".join(f"{name} {n}" for name, n in counts.items())
        print(f"  agent {agent.index}: {sum(counts.values())} ({detail})")
        print(f"    hashes: {agent.param_hashes()}")
    return EXIT_OK


@audit_command("selftest")
def cmd_selftest(args):
    results = run_selftest()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<26} {r.value:.3g} < {r.threshold:g}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


@handle_cli_errors
def run(argv):
    args = build_parser().parse_args(argv)
    return args.handler(args)


def main(argv=None):
    configure_console_logging(settings.LOG_LEVEL)
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        build_parser().print_usage(sys.stderr)
        return EXIT_USAGE
    return run(argv)
