"""Fairness and max-min metrics over per-vehicle average bit rates."""

from __future__ import annotations

import numpy as np


def min_avg_bitrate(z_values) -> float:
    """Smallest average bit rate among departed vehicles."""
    z = np.asarray(list(z_values), dtype=float)
    if z.size == 0:
        raise ValueError("no departed vehicles; the run has no max-min value")
    return float(z.min())


def jain_index(z_values) -> float:
    """(sum z)^2 / (V * sum z^2); 1 means perfectly equal service."""
    z = np.asarray(list(z_values), dtype=float)
    if z.size == 0:
        raise ValueError("Jain's index needs at least one value")
    sq = float(np.sum(z * z))
    if sq == 0:
        raise ValueError("Jain's index is undefined when every value is zero")
    return float(np.sum(z) ** 2 / (z.size * sq))
