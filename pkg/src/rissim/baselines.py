"""Comparison schemes: greedy and random scheduling, and random RIS phases."""

from __future__ import annotations

import enum

import numpy as np

from .phases import PhaseShiftMatrix


class PolicyKind(str, enum.Enum):
    PROPOSED_DRL_BCD = "proposed"
    GREEDY_BCD = "gs-bcd"
    RANDOM_BCD = "rs-bcd"
    DRL_RANDOM_PHASE = "drl-rps"

    @property
    def uses_agent(self) -> bool:
        return self in (PolicyKind.PROPOSED_DRL_BCD, PolicyKind.DRL_RANDOM_PHASE)

    @property
    def phase_mode(self) -> str:
        return "random" if self is PolicyKind.DRL_RANDOM_PHASE else "bcd"


def _occupied(slots):
    return [i for i, v in enumerate(slots) if v is not None]


def greedy_schedule(slots, n_channels: int) -> np.ndarray:
    """Serve the ``n_channels`` present vehicles with the lowest running average z.

    ``slots`` is the env's position table (Vehicle or None per position). Ties
    go to the earliest arrival, then the lowest vehicle id.
    """
    occupied = _occupied(slots)
    ranked = sorted(occupied, key=lambda i: (slots[i].z_running, slots[i].arrival_slot, slots[i].id))
    action = np.zeros(len(slots), dtype=np.int8)
    action[ranked[:n_channels]] = 1
    return action


def random_schedule(slots, n_channels: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random subset of ``n_channels`` present vehicles (all of them if fewer)."""
    occupied = _occupied(slots)
    action = np.zeros(len(slots), dtype=np.int8)
    if len(occupied) <= n_channels:
        action[occupied] = 1
    else:
        pick = rng.choice(len(occupied), size=n_channels, replace=False)
        action[np.asarray(occupied)[pick]] = 1
    return action


def random_phases(m_elems: int, q_levels: int, rng: np.random.Generator) -> PhaseShiftMatrix:
    return PhaseShiftMatrix(rng.integers(0, q_levels, size=m_elems), q_levels)
