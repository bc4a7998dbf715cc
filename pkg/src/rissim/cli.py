"""Command-line entry point: ``rissim {train,eval,sweep,bcd-bench,report}``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from .agent import PPOAgent
from .baselines import PolicyKind
from .config import SWEEP_AXES, ConfigError, ExperimentConfig, dump_config, load_config

DEFAULT_SWEEPS = {
    "M": (25, 50, 75, 100, 125, 150),
    "b": (1, 2, 3, 4),
    "arrival": (0.05, 0.1, 0.2, 0.3),
    "placement": (10, 20, 30, 40, 50),
    "delta": (0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
}


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "policy", None):
        changes["policy"] = args.policy
    if getattr(args, "runs", None):
        changes["n_test_runs"] = args.runs
    if getattr(args, "checkpoint", None):
        changes["checkpoint"] = args.checkpoint
    if getattr(args, "updates", None) is not None:
        changes["n_updates"] = args.updates
    return cfg.replace(**changes).validate()


def _out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _agent_for(cfg: ExperimentConfig, out: str):
    """Trained agent from ``cfg.checkpoint`` if present, else train one and save it under ``out``."""
    if cfg.checkpoint and os.path.exists(cfg.checkpoint):
        return PPOAgent.load(cfg.checkpoint)
    agent, curve = ex.train_agent(cfg, progress=_progress(cfg.n_updates))
    agent.save(cfg.checkpoint or os.path.join(out, "agent.json"))
    curve.write_csv(os.path.join(out, "learning_curve.csv"))
    return agent


def _progress(total):
    step = max(1, total // 20)

    def report(u, curve):
        if (u + 1) % step == 0 or u + 1 == total:
            tail = curve.min_avg_bitrate[-step:]
            logging.info("update %d/%d  mean_return %.4f  min_avg_bitrate %.4f", u + 1, total,
                         float(np.mean(curve.mean_return[-step:])), float(np.nanmean(tail)))
    return report


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args)
    agent, curve = ex.train_agent(cfg, progress=_progress(cfg.n_updates))
    path = cfg.checkpoint or os.path.join(out, "agent.json")
    agent.save(path)
    curve.write_csv(os.path.join(out, "learning_curve.csv"))
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(dump_config(cfg))
    print(f"checkpoint: {path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _out(args)
    kind = cfg.policy_kind
    agent = _agent_for(cfg, out) if kind.uses_agent else None
    results, row = ex.run_experiment(cfg, agent)
    ex.write_runs(os.path.join(out, "runs.csv"), results)
    ex.write_summary(os.path.join(out, "summary.csv"), [row])
    if args.log_episode:
        _, env = ex.run_episode(cfg, kind, 0, agent, log_episode=True)
        env.write_log(os.path.join(out, "episode_log.csv"))
    print(f"{row.policy}: min-avg bit rate {row.mean_min_avg_bitrate:.4f} +/- {row.std:.4f} "
          f"bps/Hz, Jain {row.mean_jain:.4f} over {row.runs} runs")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args)
    values = tuple(args.values) if args.values else (cfg.sweep_values or DEFAULT_SWEEPS[args.axis])
    if args.axis == "delta":
        rows = ex.positioning_study(cfg, values, cfg.vehicle_positions)
        ex.write_positioning(os.path.join(out, "positioning.csv"), rows)
        ex.write_plot_script(os.path.join(out, "plot_positioning.py"), "positioning.csv",
                             "rate retention vs positioning error", x="delta", y="retention",
                             group="x_v", xlabel="positioning error (m)", ylabel="rate retention")
        for r in rows:
            print(f"x_v={r[0]:g} delta={r[1]:g} retention={r[4]:.4f}")
        return 0
    policies = args.policies or [p.value for p in PolicyKind]
    agent = _agent_for(cfg, out) if any(PolicyKind(p).uses_agent for p in policies) else None
    rows = ex.sweep(cfg, args.axis, values, policies, agent)
    ex.write_summary(os.path.join(out, "summary.csv"), rows)
    ex.write_plot_script(os.path.join(out, "plot_summary.py"), "summary.csv",
                         f"min-avg bit rate vs {args.axis}", xlabel=args.axis)
    for r in rows:
        print(f"{args.axis}={r.axis_value:g} {r.policy}: {r.mean_min_avg_bitrate:.4f} "
              f"(Jain {r.mean_jain:.4f})")
    return 0


def cmd_bcd_bench(args) -> int:
    cfg = _config(args)
    out = _out(args)
    rows = ex.bcd_bench(cfg, n_instances=args.instances)
    path = os.path.join(out, "bcd_bench.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("n_elements", "q_levels", "n_vehicles", "first_sweep_ratio", "sweeps",
                    "objective", "runtime_s"))
        for r in rows:
            w.writerow((r.n_elements, r.q_levels, r.n_vehicles, repr(r.first_sweep_ratio), r.sweeps,
                        repr(r.objective), repr(r.runtime_s)))
    ratios = np.array([r.first_sweep_ratio for r in rows])
    print(f"first sweep >= 95% of converged in {np.mean(ratios >= 0.95):.0%} of {len(rows)} "
          f"instances; mean sweeps {np.mean([r.sweeps for r in rows]):.2f}")
    return 0


def cmd_report(args) -> int:
    for path in args.paths:
        rows = ex.read_summary(path)
        print(path)
        print(f"  {'axis_value':>10}  {'policy':<8}  {'min-avg':>9}  {'std':>8}  {'jain':>6}  runs")
        for r in rows:
            print(f"  {r.axis_value:>10g}  {r.policy:<8}  {r.mean_min_avg_bitrate:>9.4f}  "
                  f"{r.std:>8.4f}  {r.mean_jain:>6.4f}  {r.runs}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rissim", description="RIS-assisted vehicular scheduling simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy=True):
        sp.add_argument("--config", help="INI experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="results")
        sp.add_argument("--checkpoint", help="trained policy to load or save")
        sp.add_argument("--updates", type=int, help="PPO updates when training is needed")
        if policy:
            sp.add_argument("--policy", choices=[k.value for k in PolicyKind])
            sp.add_argument("--runs", type=int, help="seeded test episodes")

    sp = sub.add_parser("train", help="train the DRL scheduler")
    common(sp, policy=False)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate one policy over seeded test episodes")
    common(sp)
    sp.add_argument("--log-episode", action="store_true", help="also write episode_log.csv for seed 0")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="sweep one axis for several policies")
    common(sp)
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--values", type=float, nargs="+")
    sp.add_argument("--policies", nargs="+", choices=[k.value for k in PolicyKind])
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bcd-bench", help="first-sweep quality of BCD on random instances")
    common(sp, policy=False)
    sp.add_argument("--instances", type=int, default=50)
    sp.set_defaults(func=cmd_bcd_bench)

    sp = sub.add_parser("report", help="pretty-print summary.csv files")
    sp.add_argument("paths", nargs="+")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command != "report":
        logging.getLogger().setLevel(logging.INFO)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
