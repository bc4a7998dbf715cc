"""Synthetic traffic on a straight 1-D road segment through the dark zone.

Slot convention: a vehicle that enters in slot ``n`` is on the road at x = 0
during slot ``n`` (arrival_slot = n). After each slot it moves by speed*tau;
once x exceeds the road length it is gone from slot ``n + 1`` on
(departure_slot = n + 1). The residence time is departure_slot - arrival_slot,
the number of slots it was on the road.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KMH = 1000.0 / 3600.0


@dataclass
class Vehicle:
    id: int
    speed: float
    arrival_slot: int
    x: float = 0.0
    y: float = 20.0
    z: float = 1.0
    departure_slot: int | None = None
    served_bits: float = 0.0
    z_running: float = 0.0

    @property
    def departed(self) -> bool:
        return self.departure_slot is not None

    @property
    def residence_slots(self) -> int:
        return residence(self)

    def present_at(self, slot: int) -> bool:
        """A_v <= slot < D_v."""
        if slot < self.arrival_slot:
            return False
        return self.departure_slot is None or slot < self.departure_slot


def residence(vehicle: Vehicle) -> int:
    if vehicle.departure_slot is None:
        raise ValueError(f"vehicle {vehicle.id} has not departed")
    return vehicle.departure_slot - vehicle.arrival_slot


def advance(vehicle: Vehicle, tau: float, slot: int, road_length: float, speed=None) -> Vehicle:
    """Move ``vehicle`` through the end of ``slot``; marks departure past ``road_length``."""
    if vehicle.departed:
        raise ValueError(f"vehicle {vehicle.id} already departed")
    vehicle.x += (vehicle.speed if speed is None else speed) * tau
    if vehicle.x > road_length:
        vehicle.departure_slot = slot + 1
    return vehicle


@dataclass(frozen=True)
class TrafficConfig:
    road_length: float = 100.0
    arrival_rate: float = 0.2
    slot_duration: float = 1.0
    speed_classes_kmh: tuple = (30.0, 50.0)
    class_mix: tuple = (0.5, 0.5)
    speed_fraction: tuple = (0.7, 1.0)
    max_concurrent: int = 12
    lane_y: float = 20.0
    lane_z: float = 1.0
    # relative per-slot speed jitter; 0 keeps every vehicle at constant speed
    speed_jitter: float = 0.0

    def __post_init__(self):
        errors = []
        if not self.road_length > 0:
            errors.append("road_length must be > 0")
        if not self.arrival_rate >= 0:
            errors.append("arrival_rate must be >= 0")
        if not self.slot_duration > 0:
            errors.append("slot_duration must be > 0")
        if len(self.speed_classes_kmh) != len(self.class_mix) or not self.speed_classes_kmh:
            errors.append("speed_classes_kmh and class_mix must have equal, non-zero length")
        elif abs(sum(self.class_mix) - 1.0) > 1e-9 or min(self.class_mix) < 0:
            errors.append("class_mix must be a probability vector")
        if min(self.speed_classes_kmh, default=1) <= 0:
            errors.append("speed classes must be positive")
        lo, hi = self.speed_fraction
        if not 0 < lo <= hi:
            errors.append("speed_fraction must satisfy 0 < lo <= hi")
        if self.max_concurrent < 1:
            errors.append("max_concurrent must be >= 1")
        if not 0 <= self.speed_jitter < 1:
            errors.append("speed_jitter must lie in [0, 1)")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass(frozen=True)
class TraceEntry:
    vehicle_id: int
    arrival_slot: int
    speed_mps: float


TRACE_COLUMNS = ("vehicle_id", "arrival_slot", "speed_mps")


def load_trace(path) -> list[TraceEntry]:
    """Read an external arrival trace (CSV with columns vehicle_id, arrival_slot, speed_mps)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"trace header must be {','.join(TRACE_COLUMNS)}, got {reader.fieldnames}")
        entries = [TraceEntry(int(r["vehicle_id"]), int(r["arrival_slot"]), float(r["speed_mps"]))
                   for r in reader]
    for e in entries:
        if e.speed_mps <= 0:
            raise ValueError(f"vehicle {e.vehicle_id}: speed must be positive")
    return sorted(entries, key=lambda e: (e.arrival_slot, e.vehicle_id))


def write_trace(path, entries) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for e in entries:
            w.writerow((e.vehicle_id, e.arrival_slot, repr(float(e.speed_mps))))


class MobilityEngine:
    """Owns the vehicles of one episode: Poisson arrivals, kinematics, departures.

    Arrivals that would exceed ``max_concurrent`` vehicles on the road wait in a
    FIFO queue and enter in a later slot.
    """

    def __init__(self, cfg: TrafficConfig, rng: np.random.Generator, trace=None):
        self.cfg = cfg
        self.rng = rng
        self.trace = None if trace is None else deque(trace)
        self.pending: deque = deque()
        self.active: list[Vehicle] = []
        self.departed: list[Vehicle] = []
        self._next_id = 0

    def _draw_speed(self) -> float:
        cfg = self.cfg
        k = self.rng.choice(len(cfg.speed_classes_kmh), p=cfg.class_mix)
        frac = self.rng.uniform(*cfg.speed_fraction)
        return cfg.speed_classes_kmh[k] * KMH * frac

    def _generate(self, slot: int) -> None:
        if self.trace is not None:
            while self.trace and self.trace[0].arrival_slot <= slot:
                e = self.trace.popleft()
                self.pending.append((e.vehicle_id, e.speed_mps))
            return
        n_new = self.rng.poisson(self.cfg.arrival_rate * self.cfg.slot_duration)
        for _ in range(n_new):
            self.pending.append((self._next_id, self._draw_speed()))
            self._next_id += 1

    def spawn_arrivals(self, slot: int) -> list[Vehicle]:
        """Vehicles entering the road at the start of ``slot``."""
        self._generate(slot)
        room = self.cfg.max_concurrent - len(self.active)
        entered = []
        while self.pending and room > 0:
            vid, speed = self.pending.popleft()
            v = Vehicle(id=vid, speed=speed, arrival_slot=slot, x=0.0,
                        y=self.cfg.lane_y, z=self.cfg.lane_z)
            entered.append(v)
            room -= 1
        self.active.extend(entered)
        return entered

    def advance_all(self, slot: int) -> list[Vehicle]:
        """Move every active vehicle through the end of ``slot``; returns departures in id order."""
        cfg = self.cfg
        gone = []
        for v in self.active:
            speed = None
            if cfg.speed_jitter > 0:
                speed = v.speed * (1.0 + self.rng.uniform(-cfg.speed_jitter, cfg.speed_jitter))
            advance(v, cfg.slot_duration, slot, cfg.road_length, speed)
            if v.departed:
                gone.append(v)
        if gone:
            self.active = [v for v in self.active if not v.departed]
            self.departed.extend(gone)
        return sorted(gone, key=lambda v: v.id)
