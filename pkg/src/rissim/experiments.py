"""Experiment orchestration: training, seeded evaluation, sweeps and case studies."""

from __future__ import annotations

import csv
import logging
import math
import multiprocessing
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .agent import LearningCurve, PPOAgent, train
from .baselines import PolicyKind, greedy_schedule, random_schedule
from .beamforming import bcd_optimize, scheduled_sum_rate
from .channel import (Position3D, build_cascaded_channel, cascaded_coefficient,
                      optimal_continuous_phases, snr, spectral_efficiency)
from .config import ExperimentConfig
from .env import SchedulingEnv
from .metrics import jain_index, min_avg_bitrate

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("axis_value", "policy", "mean_min_avg_bitrate", "std", "mean_jain", "runs")
POSITIONING_COLUMNS = ("x_v", "delta", "rate_true", "rate_estimated", "retention")

# SeedSequence stream tags, so training and test episodes never share draws
_TRAIN, _TEST, _POLICY = 0, 1, 2


def episode_seed(cfg: ExperimentConfig, stream: int, index: int):
    return [cfg.seed, stream, index]


def make_env(cfg: ExperimentConfig, seed, phase_mode: str = "bcd", log_episode: bool = False,
             trace=None) -> SchedulingEnv:
    return SchedulingEnv(scene=cfg.scene(), traffic=cfg.traffic(), episode=cfg.episode(),
                         bcd=cfg.bcd(), phase_mode=phase_mode, seed=seed, trace=trace,
                         log=log_episode)


@dataclass
class RunResult:
    seed: int
    policy: str
    min_avg_bitrate: float
    jain_index: float
    z_values: list
    censored_z: list
    valid: bool
    config_digest: str
    runtime_s: float
    rewards: list = field(default_factory=list, repr=False)


@dataclass
class Aggregate:
    mean_min_avg_bitrate: float
    std: float
    mean_jain: float
    runs: int
    invalid_runs: int


def aggregate(results) -> Aggregate:
    valid = [r for r in results if r.valid]
    mins = np.array([r.min_avg_bitrate for r in valid])
    jains = np.array([r.jain_index for r in valid])
    if not valid:
        return Aggregate(math.nan, math.nan, math.nan, 0, len(results))
    # fixed seed order keeps the floating-point sum reproducible
    return Aggregate(float(mins.mean()), float(mins.std(ddof=1)) if mins.size > 1 else 0.0,
                     float(jains.mean()), len(valid), len(results) - len(valid))


def _select_action(kind: PolicyKind, env: SchedulingEnv, agent, rng, greedy_eval: bool):
    if kind is PolicyKind.GREEDY_BCD:
        return env.step_vector(greedy_schedule(env.slots, env.scene.n_channels))
    if kind is PolicyKind.RANDOM_BCD:
        return env.step_vector(random_schedule(env.slots, env.scene.n_channels, rng))
    a, _, _ = agent.act(env.state(), greedy=greedy_eval)
    return env.step(a)


def run_episode(cfg: ExperimentConfig, kind: PolicyKind, index: int, agent: PPOAgent | None = None,
                log_episode: bool = False, greedy_eval: bool = True):
    """Evaluate one seeded test episode; returns (RunResult, env)."""
    if kind.uses_agent and agent is None:
        raise ValueError(f"policy {kind.value} needs a trained agent")
    t0 = time.perf_counter()
    env = make_env(cfg, episode_seed(cfg, _TEST, index), kind.phase_mode, log_episode)
    rng = np.random.default_rng(np.random.SeedSequence(episode_seed(cfg, _POLICY, index)))
    if agent is not None:
        agent.rng = np.random.default_rng(np.random.SeedSequence(episode_seed(cfg, _POLICY, index)))
    while not env.done:
        _select_action(kind, env, agent, rng, greedy_eval)
    records = env.vehicle_records()
    z = [r.z for r in records if not r.censored]
    censored = [r.z for r in records if r.censored]
    valid = bool(z) and any(v > 0 for v in z)
    result = RunResult(
        seed=index, policy=kind.value,
        min_avg_bitrate=min_avg_bitrate(z) if z else math.nan,
        jain_index=jain_index(z) if valid else math.nan,
        z_values=z, censored_z=censored, valid=valid, config_digest=cfg.digest(),
        runtime_s=time.perf_counter() - t0, rewards=list(env.rewards))
    return result, env


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RISSIM_THREADS", "1")))
    except ValueError:
        return 1


def _eval_cell(args):
    cfg, kind, index, agent = args
    return run_episode(cfg, kind, index, agent)[0]


def evaluate(cfg: ExperimentConfig, kind: PolicyKind, agent: PPOAgent | None = None,
             n_runs: int | None = None) -> list:
    """``n_runs`` seeded test episodes (default ``cfg.n_test_runs``), in seed order."""
    n_runs = cfg.n_test_runs if n_runs is None else n_runs
    cells = [(cfg, kind, i, agent) for i in range(n_runs)]
    workers = _worker_count()
    if workers > 1 and n_runs > 1:
        with multiprocessing.get_context("fork").Pool(workers) as pool:
            return pool.map(_eval_cell, cells)
    return [_eval_cell(c) for c in cells]


def train_agent(cfg: ExperimentConfig, n_updates: int | None = None, phase_mode: str = "bcd",
                progress=None):
    """Train the scheduler on seeded training episodes; returns (agent, LearningCurve)."""
    n_updates = cfg.n_updates if n_updates is None else n_updates

    def factory(i):
        return make_env(cfg, episode_seed(cfg, _TRAIN, i), phase_mode)

    return train(factory, cfg.train_config(), n_updates, progress=progress)


def load_or_train(cfg: ExperimentConfig, progress=None):
    if cfg.checkpoint and os.path.exists(cfg.checkpoint):
        return PPOAgent.load(cfg.checkpoint), None
    agent, curve = train_agent(cfg, progress=progress)
    if cfg.checkpoint:
        agent.save(cfg.checkpoint)
    return agent, curve


@dataclass
class SummaryRow:
    axis_value: float
    policy: str
    mean_min_avg_bitrate: float
    std: float
    mean_jain: float
    runs: int

    def as_tuple(self):
        return (self.axis_value, self.policy, self.mean_min_avg_bitrate, self.std, self.mean_jain,
                self.runs)


AXIS_FIELDS = {"M": "n_elements", "b": "bits", "arrival": "arrival_rate", "placement": "ris_x"}


def run_experiment(cfg: ExperimentConfig, agent: PPOAgent | None = None, axis_value=math.nan):
    """Evaluate ``cfg.policy`` over ``cfg.n_test_runs`` episodes; returns (results, SummaryRow)."""
    cfg.validate()
    kind = cfg.policy_kind
    if kind.uses_agent and agent is None:
        agent, _ = load_or_train(cfg)
    results = evaluate(cfg, kind, agent)
    agg = aggregate(results)
    row = SummaryRow(axis_value, kind.value, agg.mean_min_avg_bitrate, agg.std, agg.mean_jain, agg.runs)
    return results, row


def sweep(cfg: ExperimentConfig, axis: str, values, policies, agent: PPOAgent | None = None,
          n_runs: int | None = None) -> list:
    """Summary rows for every (axis value, policy) cell, values outer, policies inner."""
    if axis not in AXIS_FIELDS:
        raise ValueError(f"sweep axis must be one of {sorted(AXIS_FIELDS)}; use positioning_study for delta")
    rows = []
    for value in values:
        cast = int(value) if axis in ("M", "b") else float(value)
        point = cfg.replace(**{AXIS_FIELDS[axis]: cast}).validate()
        for policy in policies:
            kind = PolicyKind(policy)
            results = evaluate(point, kind, agent if kind.uses_agent else None, n_runs)
            agg = aggregate(results)
            rows.append(SummaryRow(cast, kind.value, agg.mean_min_avg_bitrate, agg.std,
                                   agg.mean_jain, agg.runs))
            log.info("%s=%s %s: %.4f (+/- %.4f, %d runs)", axis, cast, kind.value,
                     agg.mean_min_avg_bitrate, agg.std, agg.runs)
    return rows


def placement_study(cfg: ExperimentConfig, x_values, policies, agent=None, n_runs=None) -> list:
    """Multi-user sweep over the RIS abscissa with the RSU held at ``cfg.rsu_x``."""
    return sweep(cfg, "placement", x_values, policies, agent, n_runs)


def distance_product(x_i: float, x_r: float, x_v: float) -> float:
    """1-D RSU-RIS times RIS-vehicle distance, |x_I x_v - x_I^2 - x_R x_v + x_R x_I|."""
    return abs(x_i * x_v - x_i ** 2 - x_r * x_v + x_r * x_i)


def placement_product_profile(x_r: float, x_v: float, x_grid) -> np.ndarray:
    return np.array([distance_product(x, x_r, x_v) for x in x_grid])


def single_vehicle_rate(cfg: ExperimentConfig, x_v: float, ris_x: float | None = None) -> float:
    """Co-phased single-user rate at vehicle abscissa ``x_v``."""
    scene = cfg.scene() if ris_x is None else cfg.replace(ris_x=ris_x).scene()
    veh = Position3D(x_v, cfg.lane_y, cfg.lane_z)
    ch = build_cascaded_channel(scene.rsu, scene.ris, veh, scene.rf, scene.n_elements)
    th = optimal_continuous_phases(ch, scene.n_elements, scene.rf.element_phase_factor)
    return float(spectral_efficiency(snr(cascaded_coefficient(ch, th), scene.rf)))


def positioning_retention(cfg: ExperimentConfig, x_v: float, delta: float,
                          phase_mode: str = "continuous"):
    """Rate retained when phases are tuned for x_v + delta but the vehicle sits at x_v.

    Returns (rate with true-position phases, rate with estimated-position phases).
    ``phase_mode`` is ``"continuous"`` (co-phasing solution) or ``"bcd"``
    (discrete BCD at ``cfg.bits``).
    """
    scene = cfg.scene()
    rf = scene.rf
    true_ch = build_cascaded_channel(scene.rsu, scene.ris, Position3D(x_v, cfg.lane_y, cfg.lane_z),
                                     rf, scene.n_elements)
    est_ch = build_cascaded_channel(scene.rsu, scene.ris,
                                    Position3D(x_v + delta, cfg.lane_y, cfg.lane_z),
                                    rf, scene.n_elements)
    if phase_mode == "continuous":
        tuned_true = optimal_continuous_phases(true_ch, scene.n_elements, rf.element_phase_factor)
        tuned_est = optimal_continuous_phases(est_ch, scene.n_elements, rf.element_phase_factor)
    elif phase_mode == "bcd":
        tuned_true = bcd_optimize([true_ch], rf, scene.q_levels, cfg.bcd()).theta
        tuned_est = bcd_optimize([est_ch], rf, scene.q_levels, cfg.bcd()).theta
    else:
        raise ValueError(f"unknown phase_mode {phase_mode!r}")
    return (scheduled_sum_rate(tuned_true, [true_ch], rf),
            scheduled_sum_rate(tuned_est, [true_ch], rf))


def positioning_study(cfg: ExperimentConfig, deltas, x_positions, phase_mode: str = "continuous"):
    """Rows (x_v, delta, rate_true, rate_estimated, retention) for every pair."""
    rows = []
    for x_v in x_positions:
        for d in deltas:
            r_true, r_est = positioning_retention(cfg, x_v, d, phase_mode)
            rows.append((float(x_v), float(d), r_true, r_est, r_est / r_true))
    return rows


def random_instance(cfg: ExperimentConfig, rng: np.random.Generator, n_vehicles: int,
                    n_elements: int | None = None):
    """Channels for ``n_vehicles`` placed uniformly on the road under ``cfg`` geometry."""
    scene = cfg.scene() if n_elements is None else cfg.replace(n_elements=n_elements).scene()
    xs = rng.uniform(0.0, cfg.road_length, size=n_vehicles)
    return [build_cascaded_channel(scene.rsu, scene.ris, Position3D(float(x), cfg.lane_y, cfg.lane_z),
                                   scene.rf, scene.n_elements) for x in xs]


@dataclass
class BcdBenchRow:
    n_elements: int
    q_levels: int
    n_vehicles: int
    first_sweep_ratio: float
    sweeps: int
    objective: float
    runtime_s: float


def bcd_bench(cfg: ExperimentConfig, n_instances: int = 50, elements=(25, 50, 100), bits=(2, 3),
              vehicles=(1, 2, 3), seed: int | None = None) -> list:
    """Random Table-II-style BCD instances: first-sweep quality and sweeps to converge."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    rows = []
    rf = cfg.rf()
    for _ in range(n_instances):
        m = int(rng.choice(elements))
        q = 2 ** int(rng.choice(bits))
        c = int(rng.choice(vehicles))
        chans = random_instance(cfg, rng, c, m)
        t0 = time.perf_counter()
        res = bcd_optimize(chans, rf, q, cfg.bcd())
        dt = time.perf_counter() - t0
        rows.append(BcdBenchRow(m, q, c, float(res.sweep_objectives[0] / res.objective), res.sweeps,
                                res.objective, dt))
    return rows


# -- persistence -------------------------------------------------------------

def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_summary(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r.as_tuple()])


def read_summary(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(SUMMARY_COLUMNS)}")
        return [SummaryRow(float(r["axis_value"]), r["policy"], float(r["mean_min_avg_bitrate"]),
                           float(r["std"]), float(r["mean_jain"]), int(r["runs"])) for r in reader]


def write_runs(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("seed", "policy", "min_avg_bitrate", "jain_index", "n_departed", "valid",
                    "config_digest"))
        for r in results:
            w.writerow((r.seed, r.policy, _fmt(r.min_avg_bitrate), _fmt(r.jain_index),
                        len(r.z_values), int(r.valid), r.config_digest))


def write_positioning(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POSITIONING_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


PLOT_SCRIPT = '''"""Plot {title} from {csv_name}. Generated file; needs matplotlib."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
series = defaultdict(list)
with open(path) as fh:
    for row in csv.DictReader(fh):
        series[row["{group}"]].append((float(row["{x}"]), float(row["{y}"])))
for name, pts in sorted(series.items()):
    pts.sort()
    plt.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
plt.xlabel("{xlabel}")
plt.ylabel("{ylabel}")
plt.grid(True, alpha=0.3)
plt.legend()
plt.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150, bbox_inches="tight")
'''


def write_plot_script(path, csv_name: str, title: str, x: str = "axis_value",
                      y: str = "mean_min_avg_bitrate", group: str = "policy",
                      xlabel: str = "", ylabel: str = "min average bit rate (bps/Hz)") -> None:
    with open(path, "w") as fh:
        fh.write(PLOT_SCRIPT.format(title=title, csv_name=csv_name, x=x, y=y, group=group,
                                    xlabel=xlabel or x, ylabel=ylabel))
