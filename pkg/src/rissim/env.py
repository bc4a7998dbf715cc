"""Scheduling MDP for the RIS-assisted dark zone.

Each step is one slot: the action picks up to C occupied positions of the
state table, BCD (or random phases) configures the RIS for the served set, the
served vehicles accrue log2(1 + SNR), vehicles move, and departures produce the
min-tracking reward.
"""

from __future__ import annotations

import copy
import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import random_phases
from .beamforming import BcdConfig, bcd_optimize_terms
from .channel import (Position3D, RfConfig, build_cascaded_channel, element_terms_batch,
                      optimal_continuous_phases, cascaded_coefficient, snr, spectral_efficiency)
from .mobility import KMH, MobilityEngine, TrafficConfig, Vehicle
from .phases import PhaseShiftMatrix

PENALTY_NEGATED = "negated"
PENALTY_LITERAL = "paper-literal"

EPISODE_LOG_COLUMNS = ("slot", "vehicle_id", "x", "speed", "scheduled_flag",
                       "rate_bpshz", "z_running", "reward", "f")


class ConstraintViolation(AssertionError):
    pass


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 120
    penalty_mode: str = PENALTY_NEGATED

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.penalty_mode not in (PENALTY_NEGATED, PENALTY_LITERAL):
            raise ValueError(f"penalty_mode must be {PENALTY_NEGATED!r} or {PENALTY_LITERAL!r}")


@dataclass(frozen=True)
class RadioScene:
    """RSU/RIS placement plus the radio and RIS parameters of one experiment."""

    rsu: Position3D = Position3D(0.0, 40.0, 10.0)
    ris: Position3D = Position3D(10.0, 20.0, 10.0)
    rf: RfConfig = RfConfig.from_db()
    n_elements: int = 100
    q_levels: int = 4
    n_channels: int = 3

    def __post_init__(self):
        if self.n_elements < 1:
            raise ValueError("n_elements must be >= 1")
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")


class ActionCatalog:
    """All binary eta-vectors with exactly C ones, in ascending lexicographic order."""

    def __init__(self, eta: int, n_channels: int):
        if not 1 <= n_channels <= eta:
            raise ValueError(f"need 1 <= C <= eta, got C={n_channels}, eta={eta}")
        self.eta = eta
        self.n_channels = n_channels
        rows = []
        for combo in itertools.combinations(range(eta), n_channels):
            v = np.zeros(eta, dtype=np.int8)
            v[list(combo)] = 1
            rows.append(v)
        rows.sort(key=lambda v: tuple(v))
        self.vectors = np.array(rows, dtype=np.int8)
        self._index = {v.tobytes(): i for i, v in enumerate(self.vectors)}

    def __len__(self):
        return self.vectors.shape[0]

    def __getitem__(self, i):
        return self.vectors[i]

    def index_of(self, vector) -> int:
        return self._index[np.asarray(vector, dtype=np.int8).tobytes()]


def enumerate_actions(eta: int, n_channels: int) -> ActionCatalog:
    return ActionCatalog(eta, n_channels)


def encode_state(f, slots, eta: int) -> np.ndarray:
    """Flat state (f, k_1, z_1, x_1, ..., k_eta, z_eta, x_eta); empty positions are 0.

    ``slots`` is the position table, a sequence of Vehicle-or-None of length <= eta.
    ``f`` is None (or 0) before the first departure.
    """
    if len(slots) > eta:
        raise ValueError(f"{len(slots)} positions exceed eta={eta}")
    state = np.zeros(1 + 3 * eta)
    state[0] = 0.0 if f is None else f
    for i, v in enumerate(slots):
        if v is not None:
            state[1 + 3 * i: 4 + 3 * i] = (v.speed, v.z_running, v.x)
    return state


def step_reward(departures, f_before, penalty_mode: str = PENALTY_NEGATED):
    """Reward for the vehicles leaving in this slot.

    ``departures`` is a sequence of (vehicle_id, z_v); ``f_before`` is the current
    minimum over earlier departures, or None if nobody has left yet. Returns
    (reward, f_after).
    """
    r = 0.0
    f = f_before
    for _, z in sorted(departures, key=lambda d: d[0]):
        if f is None:
            r += z
            f = z
        elif z < f:
            gap = f - z
            r += gap if penalty_mode == PENALTY_LITERAL else -gap
            f = z
    return r, f


def discounted_return(rewards, gamma: float) -> float:
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    total = 0.0
    weight = 1.0
    for r in rewards:
        total += weight * r
        weight *= gamma
    return total


@dataclass
class StepOutcome:
    reward: float
    next_state: np.ndarray
    rates: dict
    served: tuple
    departures: list
    f: float | None
    done: bool
    theta: PhaseShiftMatrix | None = field(default=None, repr=False)


@dataclass(frozen=True)
class VehicleRecord:
    vehicle_id: int
    arrival_slot: int
    slots_observed: int
    z: float
    censored: bool


class SchedulingEnv:
    """One episode of the RSU scheduling problem.

    ``phase_mode`` is ``"bcd"`` (optimize the RIS for the served set) or
    ``"random"`` (i.i.d. uniform phase indices per slot).
    """

    def __init__(self, scene: RadioScene | None = None, traffic: TrafficConfig | None = None,
                 episode: EpisodeConfig | None = None, bcd: BcdConfig | None = None,
                 phase_mode: str = "bcd", seed=None, trace=None, log: bool = False):
        self.scene = scene or RadioScene()
        self.traffic = traffic or TrafficConfig()
        self.episode = episode or EpisodeConfig()
        self.bcd = bcd or BcdConfig()
        if phase_mode not in ("bcd", "random"):
            raise ValueError(f"unknown phase_mode {phase_mode!r}")
        if self.traffic.max_concurrent < self.scene.n_channels:
            raise ValueError("max_concurrent (eta) must be >= n_channels (C)")
        self.phase_mode = phase_mode
        self.eta = self.traffic.max_concurrent
        self.catalog = enumerate_actions(self.eta, self.scene.n_channels)
        self.trace = trace
        self.log_enabled = log
        self._seed = seed
        self._obs_scale = self._observation_scale()
        self.reset(seed)

    @property
    def n_actions(self) -> int:
        return len(self.catalog)

    @property
    def state_dim(self) -> int:
        return 1 + 3 * self.eta

    @property
    def observation_scale(self) -> np.ndarray:
        return self._obs_scale

    def _observation_scale(self) -> np.ndarray:
        # rate of a lone vehicle at mid-road under co-phased elements
        sc, tr = self.scene, self.traffic
        mid = Position3D(tr.road_length / 2, tr.lane_y, tr.lane_z)
        ch = build_cascaded_channel(sc.rsu, sc.ris, mid, sc.rf, sc.n_elements)
        th = optimal_continuous_phases(ch, sc.n_elements, sc.rf.element_phase_factor)
        z_ref = float(spectral_efficiency(snr(cascaded_coefficient(ch, th), sc.rf)))
        k_ref = max(tr.speed_classes_kmh) * KMH
        per_vehicle = [1.0 / k_ref, 1.0 / z_ref, 1.0 / tr.road_length]
        return np.array([1.0 / z_ref] + per_vehicle * self.eta)

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self._seed = seed
        mob_ss, phase_ss = np.random.SeedSequence(self._seed).spawn(2)
        self.mobility = MobilityEngine(self.traffic, np.random.default_rng(mob_ss), trace=self.trace)
        self.phase_rng = np.random.default_rng(phase_ss)
        self.slot = 0
        self.f = None
        self.slots: list[Vehicle | None] = [None] * self.eta
        self.rewards: list[float] = []
        self.log_rows: list[tuple] = []
        self.served_history: list[tuple] = []
        self._place(self.mobility.spawn_arrivals(0))
        return self.state()

    def _place(self, vehicles) -> None:
        for v in vehicles:
            free = self.slots.index(None)
            self.slots[free] = v

    def state(self) -> np.ndarray:
        return encode_state(self.f, self.slots, self.eta)

    def present(self) -> list[Vehicle]:
        return [v for v in self.slots if v is not None]

    @property
    def done(self) -> bool:
        return self.slot >= self.episode.horizon

    def snapshot(self):
        """Deep copy of the full environment state, rng streams included."""
        return copy.deepcopy(self.__dict__)

    def restore(self, snap) -> None:
        self.__dict__.update(copy.deepcopy(snap))

    def step(self, action_index: int) -> StepOutcome:
        if not 0 <= action_index < self.n_actions:
            raise ValueError(f"action index {action_index} outside [0, {self.n_actions})")
        return self.step_vector(self.catalog[action_index])

    def step_vector(self, action) -> StepOutcome:
        """Apply a binary eta-vector with at most C ones (selections of empty positions are no-ops)."""
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        action = np.asarray(action)
        sc = self.scene
        if action.shape != (self.eta,) or not ((action == 0) | (action == 1)).all():
            raise ValueError("action must be a binary vector of length eta")
        if action.sum() > sc.n_channels:
            raise ValueError(f"action selects {int(action.sum())} > C={sc.n_channels} positions")
        n = self.slot
        served = [self.slots[i] for i in np.flatnonzero(action) if self.slots[i] is not None]
        self._check_schedule(served, n)

        rates = {}
        theta = None
        if served:
            terms = element_terms_batch(sc.rsu, sc.ris, [v.x for v in served], [v.y for v in served],
                                        [v.z for v in served], sc.rf, sc.n_elements)
            if self.phase_mode == "bcd":
                theta = bcd_optimize_terms(terms, sc.rf.snr_scale, sc.q_levels, self.bcd).theta
            else:
                theta = random_phases(sc.n_elements, sc.q_levels, self.phase_rng)
            coeff = terms @ theta.diagonal()
            lv = np.log2(1.0 + sc.rf.snr_scale * np.abs(coeff) ** 2)
            for v, l in zip(served, lv):
                v.served_bits += float(l)
                rates[v.id] = float(l)
        if theta is not None and (theta.indices.min() < 0 or theta.indices.max() >= sc.q_levels):
            raise ConstraintViolation("phase index outside the discrete set")
        for v in self.present():
            v.z_running = v.served_bits / (n - v.arrival_slot + 1)
        self.served_history.append(tuple(v.id for v in served))

        snapshot_rows = [(n, v.id, v.x, v.speed, int(v.id in rates), rates.get(v.id, 0.0), v.z_running)
                         for v in self.present()] if self.log_enabled else []

        gone = self.mobility.advance_all(n)
        for v in gone:
            self.slots[self.slots.index(v)] = None
        reward, self.f = step_reward([(v.id, v.served_bits / (v.departure_slot - v.arrival_slot))
                                      for v in gone], self.f, self.episode.penalty_mode)
        self.rewards.append(reward)
        if self.log_enabled:
            f_log = 0.0 if self.f is None else self.f
            self.log_rows.extend(row + (reward, f_log) for row in snapshot_rows)

        self.slot = n + 1
        if not self.done:
            self._place(self.mobility.spawn_arrivals(self.slot))
        return StepOutcome(reward=reward, next_state=self.state(), rates=rates,
                           served=tuple(v.id for v in served), departures=gone, f=self.f,
                           done=self.done, theta=theta)

    def _check_schedule(self, served, n) -> None:
        c = self.scene.n_channels
        ids = [v.id for v in served]
        if len(served) > c:
            raise ConstraintViolation(f"slot {n}: {len(served)} vehicles on {c} channels")
        if len(set(ids)) != len(ids):
            raise ConstraintViolation(f"slot {n}: vehicle scheduled twice")
        for v in served:
            if not v.present_at(n):
                raise ConstraintViolation(f"slot {n}: vehicle {v.id} not in the dark zone")

    def vehicle_records(self) -> list[VehicleRecord]:
        """Per-vehicle averages: departed vehicles use H_v, the rest the slots seen so far."""
        out = []
        for v in self.mobility.departed:
            h = v.departure_slot - v.arrival_slot
            out.append(VehicleRecord(v.id, v.arrival_slot, h, v.served_bits / h, False))
        for v in self.mobility.active:
            seen = self.slot - v.arrival_slot
            if seen > 0:
                out.append(VehicleRecord(v.id, v.arrival_slot, seen, v.served_bits / seen, True))
        return sorted(out, key=lambda r: r.vehicle_id)

    def departed_z(self) -> list[float]:
        return [r.z for r in self.vehicle_records() if not r.censored]

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EPISODE_LOG_COLUMNS)
            for row in self.log_rows:
                w.writerow(_fmt_row(row))


def _fmt_row(row):
    return [repr(x) if isinstance(x, float) else x for x in row]
