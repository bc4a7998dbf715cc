"""Acceptance checks at full scale. Each test prints one PASS/FAIL line."""

import math
import os
import time

import numpy as np
import pytest

from conftest import RIS, RSU, record_verdict, road_channels
from rissim import experiments as ex
from rissim.agent import NetworkParams, PPOAgent
from rissim.baselines import PolicyKind
from rissim.beamforming import bcd_optimize, exhaustive_optimize
from rissim.channel import (Position3D, RfConfig, build_cascaded_channel, cascaded_coefficient,
                            optimal_continuous_phases, quantize_phases)
from rissim.config import ExperimentConfig
from rissim.env import ConstraintViolation, EpisodeConfig, RadioScene, SchedulingEnv
from rissim.mobility import TrafficConfig
from test_agent import max_fd_error, random_batch

TABLE = ExperimentConfig()
N_TEST = 100
# fits the 30 min training-plus-evaluation budget on one core
TRAIN_UPDATES = 4500
POLICIES = [k.value for k in PolicyKind]


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """Agent trained on the reference configuration; RISSIM_AGENT loads a saved one instead."""
    path = os.environ.get("RISSIM_AGENT")
    t0 = time.perf_counter()
    if path and os.path.exists(path):
        return PPOAgent.load(path), None, 0.0
    agent, curve = ex.train_agent(TABLE, n_updates=TRAIN_UPDATES)
    out = tmp_path_factory.mktemp("agent")
    agent.save(out / "agent.json")
    curve.write_csv(out / "learning_curve.csv")
    print(f"trained agent saved to {out}")
    return agent, curve, time.perf_counter() - t0


def _mean(cfg, kind, agent=None, n=N_TEST):
    return ex.aggregate(ex.evaluate(cfg, kind, agent, n))


def test_c01_bcd_first_sweep_quality():
    t0 = time.perf_counter()
    rows = ex.bcd_bench(TABLE, n_instances=50, elements=(25, 50, 100), bits=(2, 3), vehicles=(1, 2, 3),
                        seed=101)
    dt = time.perf_counter() - t0
    share = float(np.mean([r.first_sweep_ratio >= 0.95 for r in rows]))
    ok = share >= 0.90 and dt < 60
    record_verdict(1, ok, f"first sweep >= 95% of converged in {share:.0%} of 50 instances "
                          f"(need 90%), min ratio {min(r.first_sweep_ratio for r in rows):.4f}, {dt:.1f} s")
    assert ok


def test_c02_bcd_vs_exhaustive():
    rng = np.random.default_rng(202)
    rf = RfConfig()
    t0 = time.perf_counter()
    ratios = []
    for _ in range(200):
        chans = road_channels(rng, int(rng.integers(1, 3)), int(rng.integers(1, 6)), rf)
        _, opt = exhaustive_optimize(chans, rf, 4)
        ratios.append(bcd_optimize(chans, rf, 4).objective / opt)
    dt = time.perf_counter() - t0
    ratios = np.array(ratios)
    ok = ratios.min() >= 0.95 and ratios.mean() >= 0.999 and dt < 120
    record_verdict(2, ok, f"BCD/optimum min {ratios.min():.5f} (need 0.95), mean {ratios.mean():.6f} "
                          f"(need 0.999), {dt:.1f} s")
    assert ok


def test_c03_closed_form_magnitude():
    rng = np.random.default_rng(303)
    worst_rel = 0.0
    worst_q = np.inf
    for _ in range(1000):
        rf = RfConfig(rician_k=float(rng.uniform(0.5, 20)), ref_gain=float(rng.uniform(1, 20)),
                      pathloss_exp=float(rng.uniform(2, 4)))
        rsu = Position3D(float(rng.uniform(-20, 20)), float(rng.uniform(30, 60)), float(rng.uniform(5, 15)))
        ris = Position3D(float(rng.uniform(0, 60)), 20.0, float(rng.uniform(5, 15)))
        veh = Position3D(float(rng.uniform(0, 100)), 20.0, 1.0)
        m = int(rng.integers(1, 201))
        ch = build_cascaded_channel(rsu, ris, veh, rf, m)
        closed = rf.ref_gain * rf.los_fraction * m / (ch.d_iv ** (rf.pathloss_exp / 2) *
                                                      ch.d_ir ** (rf.pathloss_exp / 2))
        cont = optimal_continuous_phases(ch, m, rf.element_phase_factor)
        mag = abs(cascaded_coefficient(ch, cont))
        worst_rel = max(worst_rel, abs(mag - closed) / closed)
        q = int(rng.choice([2, 4, 8, 16]))
        qmag = abs(cascaded_coefficient(ch, quantize_phases(cont, q)))
        worst_q = min(worst_q, qmag / (math.cos(math.pi / q) * mag))
    ok = worst_rel < 1e-9 and worst_q >= 1.0 - 1e-12
    record_verdict(3, ok, f"max relative error {worst_rel:.2e} (need < 1e-9); "
                          f"min quantized/(cos(pi/Q) continuous) {worst_q:.4f} (need >= 1)")
    assert ok


def test_c04_gradient_check():
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(20):
        p = NetworkParams.initialize(int(rng.integers(2, 7)), int(rng.integers(2, 7)), 4, rng)
        worst = max(worst, max_fd_error(p, random_batch(rng, p, n=int(rng.integers(3, 10)))))
    ok = worst < 1e-4
    record_verdict(4, ok, f"max relative error vs central differences {worst:.2e} over 20 networks (need < 1e-4)")
    assert ok


def _curve_trend(values, window=500):
    """Means of consecutive 500-update windows and whether each step stays within 2 standard errors."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    blocks = [v[i:i + window] for i in range(0, len(v) - window + 1, window)]
    means = [b.mean() for b in blocks]
    ses = [b.std(ddof=1) / math.sqrt(b.size) for b in blocks]
    ok = len(blocks) >= 2 and all(m2 >= m1 - 2 * math.hypot(s1, s2)
                                  for m1, m2, s1, s2 in zip(means, means[1:], ses, ses[1:]))
    return ok, means


def test_c05_learning_sanity(trained):
    agent, curve, train_s = trained
    t0 = time.perf_counter()
    prop = _mean(TABLE, PolicyKind.PROPOSED_DRL_BCD, agent)
    rs = _mean(TABLE, PolicyKind.RANDOM_BCD)
    total = train_s + time.perf_counter() - t0
    gain = prop.mean_min_avg_bitrate / rs.mean_min_avg_bitrate - 1
    beats = gain >= 0.10
    if curve is not None:
        trend_ok, means = _curve_trend(curve.min_avg_bitrate)
        trend = "block means " + ", ".join(f"{m:.3f}" for m in means)
    else:
        trend_ok, trend = False, "no learning curve (agent loaded from RISSIM_AGENT)"
    ok = beats and trend_ok and total <= 1800
    record_verdict(5, ok, f"proposed {prop.mean_min_avg_bitrate:.3f} vs RS-BCD {rs.mean_min_avg_bitrate:.3f} "
                          f"bps/Hz, gain {gain:+.1%} (need +10%); curve non-decreasing: {trend_ok} "
                          f"({trend}); {total / 60:.1f} min")
    assert ok


def test_c06_m_sweep(trained):
    agent = trained[0]
    ms = (25, 50, 75, 100, 125, 150)
    rows = ex.sweep(TABLE, "M", ms, ["proposed", "gs-bcd"], agent, N_TEST)
    prop = [r.mean_min_avg_bitrate for r in rows if r.policy == "proposed"]
    gs = [r.mean_min_avg_bitrate for r in rows if r.policy == "gs-bcd"]
    inc = all(b > a for a, b in zip(prop, prop[1:])) and all(b > a for a, b in zip(gs, gs[1:]))
    dominates = all(p >= g for p, g in zip(prop, gs))
    gap = prop[-1] / gs[-1] - 1
    ok = inc and dominates and 0.05 <= gap <= 0.30
    record_verdict(6, ok, "proposed " + "/".join(f"{v:.2f}" for v in prop) + "; GS-BCD "
                   + "/".join(f"{v:.2f}" for v in gs)
                   + f"; increasing {inc}, proposed >= GS {dominates}, gap at M=150 {gap:+.1%} (need 5-30%)")
    assert ok


def test_c07_b_sweep(trained):
    agent = trained[0]
    bs = (1, 2, 3, 4)
    rows = ex.sweep(TABLE, "b", bs, ["proposed", "drl-rps"], agent, N_TEST)
    prop = {int(r.axis_value): r for r in rows if r.policy == "proposed"}
    rps = [r for r in rows if r.policy == "drl-rps"]
    near = abs(prop[2].mean_min_avg_bitrate / prop[4].mean_min_avg_bitrate - 1) <= 0.05
    se = [r.std / math.sqrt(r.runs) for r in rps]
    vals = [r.mean_min_avg_bitrate for r in rps]
    flat = all(abs(vals[i] - vals[j]) <= 3 * math.hypot(se[i], se[j])
               for i in range(len(vals)) for j in range(i + 1, len(vals)))
    ok = near and flat
    record_verdict(7, ok, "proposed " + "/".join(f"{prop[b].mean_min_avg_bitrate:.2f}" for b in bs)
                   + f" (b=2 within 5% of b=4: {near}); DRL-RPS " + "/".join(f"{v:.2f}" for v in vals)
                   + f" (flat within 3 SE: {flat})")
    assert ok


def test_c08_arrival_sweep(trained):
    agent = trained[0]
    rates = (0.05, 0.1, 0.2, 0.3)
    rows = ex.sweep(TABLE, "arrival", rates, ["proposed"], agent, N_TEST)
    vals = [r.mean_min_avg_bitrate for r in rows]
    ok = all(b < a for a, b in zip(vals, vals[1:]))
    record_verdict(8, ok, "proposed vs arrival rate " + ", ".join(f"{l}/s: {v:.3f}" for l, v in zip(rates, vals)))
    assert ok


def test_c09_placement(trained):
    agent = trained[0]
    xs = (10, 20, 30, 40, 50)
    rows = ex.placement_study(TABLE, xs, ["gs-bcd", "proposed"], agent, N_TEST)
    gs = [r.mean_min_avg_bitrate for r in rows if r.policy == "gs-bcd"]
    prop = [r.mean_min_avg_bitrate for r in rows if r.policy == "proposed"]
    mono = all(b <= a for a, b in zip(gs, gs[1:]))
    grid = np.linspace(0, 50, 501)
    argmins = [grid[int(np.argmin(ex.placement_product_profile(0.0, x_v, grid)))] for x_v in (20, 50, 80, 100)]
    product_ok = all(a == 0.0 for a in argmins)
    ok = mono and product_ok
    record_verdict(9, ok, "GS-BCD vs x_I " + "/".join(f"{v:.2f}" for v in gs) + f" non-increasing {mono}; "
                   "proposed " + "/".join(f"{v:.2f}" for v in prop)
                   + f"; distance product minimised at x_I = x_R: {product_ok}")
    assert ok


def test_c10_positioning():
    xs = (20.0, 30.0, 40.0, 50.0)
    deltas = (0.2, 0.4, 0.6, 0.8, 1.0)
    rows = ex.positioning_study(TABLE, deltas, xs)
    table = {(r[0], r[1]): r[4] for r in rows}
    at20 = table[(20.0, 0.2)]
    by_distance = all(table[(b, d)] >= table[(a, d)] for d in deltas for a, b in zip(xs, xs[1:]))
    ok = at20 >= 0.9 and by_distance
    record_verdict(10, ok, f"retention at delta=0.2 m, x_v=20 m: {at20:.4f} (need 0.9); "
                           f"non-decreasing in distance at every delta: {by_distance}")
    assert ok


def test_c11_fairness(trained):
    agent = trained[0]
    jain = {}
    for kind in PolicyKind:
        jain[kind.value] = _mean(TABLE, kind, agent if kind.uses_agent else None).mean_jain
    best = all(jain["proposed"] >= jain[k] for k in jain)
    floor = all(v >= 0.7 for v in jain.values())
    ok = best and floor
    record_verdict(11, ok, ", ".join(f"{k} {v:.4f}" for k, v in jain.items())
                   + f"; proposed highest {best}, all >= 0.7 {floor}")
    assert ok


def test_c12_constraint_property_suite():
    rng = np.random.default_rng(1212)
    steps = violations = 0
    worst_drift = 0.0
    rejected = 0
    while steps < 100_000:
        traffic = TrafficConfig(arrival_rate=float(rng.choice([0.2, 0.6, 1.5])),
                                max_concurrent=int(rng.choice([3, 6, 12])))
        c = int(rng.integers(1, min(3, traffic.max_concurrent) + 1))
        scene = RadioScene(rsu=RSU, ris=RIS, rf=RfConfig(), n_elements=int(rng.choice([4, 16, 100])),
                           q_levels=4, n_channels=c)
        env = SchedulingEnv(scene=scene,
                            traffic=traffic, episode=EpisodeConfig(horizon=120),
                            phase_mode=str(rng.choice(["bcd", "random"])), seed=int(rng.integers(1 << 30)))
        bits = {}
        while not env.done and steps < 100_000:
            n = env.slot
            present = {i: v for i, v in enumerate(env.slots) if v is not None}
            mode = rng.random()
            vec = None
            try:
                if mode < 0.4:
                    out = env.step(int(rng.integers(env.n_actions)))
                elif mode < 0.8:
                    vec = (rng.random(env.eta) < rng.random()).astype(np.int8)
                    out = env.step_vector(vec)
                elif mode < 0.9:
                    out = env.step(int(rng.choice([-1, env.n_actions, env.n_actions + 7])))
                else:
                    vec = rng.integers(-1, 3, env.eta)
                    out = env.step_vector(vec)
            except ConstraintViolation:
                violations += 1
                break
            except ValueError:
                rejected += 1
                continue
            steps += 1
            served = set(out.served)
            if len(served) > c or len(served) != len(out.served):
                violations += 1
            if any(not v.present_at(n) for v in present.values() if v.id in served):
                violations += 1
            if not served <= {v.id for v in present.values()}:
                violations += 1
            if vec is not None and served != {present[i].id for i in np.flatnonzero(vec) if i in present}:
                violations += 1
            if out.theta is not None and not (0 <= out.theta.indices.min() and out.theta.indices.max() < 4):
                violations += 1
            for vid, rate in out.rates.items():
                bits[vid] = bits.get(vid, 0.0) + rate
        for rec in env.vehicle_records():
            worst_drift = max(worst_drift, abs(bits.get(rec.vehicle_id, 0.0) / rec.slots_observed - rec.z))
    ok = violations == 0 and worst_drift <= 1e-12
    record_verdict(12, ok, f"{steps} steps, {rejected} malformed actions rejected, {violations} violations, "
                           f"max z drift {worst_drift:.1e}")
    assert ok
