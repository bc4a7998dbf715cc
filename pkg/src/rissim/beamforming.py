"""Discrete RIS phase optimization for the set of vehicles scheduled in a slot.

The objective is the immediate sum rate sum_v log2(1 + SNR_v(theta)). The
optimizer is block coordinate descent over single elements: every element in
turn is set to the best of its Q phases while the others stay fixed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .channel import CascadedChannel, RfConfig, cascaded_coefficient, snr
from .phases import PhaseShiftMatrix

__all__ = [
    "BcdConfig",
    "BcdResult",
    "PhaseShiftMatrix",
    "SearchSpaceTooLarge",
    "bcd_optimize",
    "bcd_optimize_terms",
    "exhaustive_optimize",
    "scheduled_sum_rate",
    "stack_terms",
]

EXHAUSTIVE_MAX_BITS = 20


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class BcdConfig:
    rel_tolerance: float = 1e-6
    max_sweeps: int = 20

    def __post_init__(self):
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be > 0")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


@dataclass
class BcdResult:
    theta: PhaseShiftMatrix
    objective: float
    sweeps: int
    sweep_objectives: np.ndarray = field(repr=False)
    # objective after every single-element update, in update order
    update_objectives: np.ndarray = field(repr=False)

    def __iter__(self):
        # allows ``theta, objective, sweeps = bcd_optimize(...)``
        return iter((self.theta, self.objective, self.sweeps))


def stack_terms(channels) -> np.ndarray:
    """Stack per-element cascade terms into a (V, M) complex array."""
    if not channels:
        return np.zeros((0, 0), dtype=np.complex128)
    m = channels[0].n_elements
    if any(ch.n_elements != m for ch in channels):
        raise ValueError("all channels must share the same number of elements")
    return np.stack([ch.element_terms for ch in channels]).astype(np.complex128)


def scheduled_sum_rate(theta, channels, cfg: RfConfig) -> float:
    """Sum of log2(1 + SNR) over the scheduled vehicles; 0 for an empty schedule."""
    total = 0.0
    for ch in channels:
        total += math.log2(1.0 + snr(cascaded_coefficient(ch, theta), cfg))
    return total


@numba.njit(cache=True)
def _sum_rate(partial, scale):
    total = 0.0
    for v in range(partial.shape[0]):
        c = partial[v]
        total += math.log2(1.0 + scale[v] * (c.real * c.real + c.imag * c.imag))
    return total


@numba.njit(cache=True)
def _bcd_kernel(terms, scale, q_levels, idx, rel_tol, max_sweeps):
    n_veh, n_elem = terms.shape
    roots = np.empty(q_levels, dtype=np.complex128)
    for q in range(q_levels):
        ang = 2.0 * math.pi * q / q_levels
        roots[q] = complex(math.cos(ang), math.sin(ang))

    partial = np.zeros(n_veh, dtype=np.complex128)
    for v in range(n_veh):
        acc = 0j
        for m in range(n_elem):
            acc += terms[v, m] * roots[idx[m]]
        partial[v] = acc
    obj = _sum_rate(partial, scale)

    sweep_obj = np.empty(max_sweeps)
    update_obj = np.empty(max_sweeps * n_elem)
    base = np.empty(n_veh, dtype=np.complex128)
    sweeps = 0
    n_updates = 0
    for s in range(max_sweeps):
        prev = obj
        for m in range(n_elem):
            for v in range(n_veh):
                base[v] = partial[v] - terms[v, m] * roots[idx[m]]
            best_q = 0
            best_val = -1.0
            for q in range(q_levels):
                val = 0.0
                for v in range(n_veh):
                    c = base[v] + terms[v, m] * roots[q]
                    val += math.log2(1.0 + scale[v] * (c.real * c.real + c.imag * c.imag))
                # strict comparison keeps the lowest index among ties
                if val > best_val:
                    best_val = val
                    best_q = q
            idx[m] = best_q
            for v in range(n_veh):
                partial[v] = base[v] + terms[v, m] * roots[best_q]
            update_obj[n_updates] = best_val
            n_updates += 1
        # re-accumulate from scratch so rounding does not drift across sweeps
        for v in range(n_veh):
            acc = 0j
            for m in range(n_elem):
                acc += terms[v, m] * roots[idx[m]]
            partial[v] = acc
        obj = _sum_rate(partial, scale)
        sweep_obj[s] = obj
        sweeps = s + 1
        if obj - prev <= rel_tol * abs(prev):
            break
    return idx, obj, sweeps, sweep_obj[:sweeps].copy(), update_obj[:n_updates].copy()


def bcd_optimize_terms(terms: np.ndarray, snr_scale, q_levels: int,
                       bcd: BcdConfig | None = None, init: np.ndarray | None = None) -> BcdResult:
    """BCD on a precomputed (V, M) term matrix.

    ``snr_scale`` is P/sigma^2, as a scalar or one value per vehicle.
    """
    bcd = bcd or BcdConfig()
    terms = np.ascontiguousarray(terms, dtype=np.complex128)
    n_veh, n_elem = terms.shape
    idx = np.zeros(n_elem, dtype=np.int64) if init is None else np.array(init, dtype=np.int64)
    if n_veh == 0:
        return BcdResult(PhaseShiftMatrix(idx, q_levels), 0.0, 0, np.zeros(0), np.zeros(0))
    scale = np.broadcast_to(np.asarray(snr_scale, dtype=np.float64), (n_veh,)).copy()
    idx, obj, sweeps, sweep_obj, update_obj = _bcd_kernel(
        terms, scale, int(q_levels), idx, float(bcd.rel_tolerance), int(bcd.max_sweeps))
    return BcdResult(PhaseShiftMatrix(idx, q_levels), float(obj), int(sweeps), sweep_obj, update_obj)


def bcd_optimize(channels, cfg: RfConfig, q_levels: int, bcd: BcdConfig | None = None) -> BcdResult:
    """Optimize the phase-shift matrix for the scheduled ``channels`` by BCD.

    Starts from all-zero indices and sweeps elements in order 0..M-1 until a
    full sweep improves the sum rate by less than ``bcd.rel_tolerance``
    (relative) or ``bcd.max_sweeps`` is reached.
    """
    if not channels:
        return BcdResult(PhaseShiftMatrix(np.zeros(0, dtype=np.int64), q_levels), 0.0, 0,
                         np.zeros(0), np.zeros(0))
    return bcd_optimize_terms(stack_terms(channels), cfg.snr_scale, q_levels, bcd)


def exhaustive_optimize(channels, cfg: RfConfig, q_levels: int, chunk: int = 1 << 16):
    """Global maximizer of the sum rate over all Q^M phase matrices.

    Ties resolve to the lexicographically smallest index vector. Refuses search
    spaces above 2^20 configurations.
    """
    if not channels:
        raise ValueError("exhaustive search needs at least one channel")
    terms = stack_terms(channels)
    n_elem = terms.shape[1]
    bits = n_elem * math.log2(q_levels)
    if bits > EXHAUSTIVE_MAX_BITS:
        raise SearchSpaceTooLarge(
            f"Q^M = {q_levels}^{n_elem} exceeds 2^{EXHAUSTIVE_MAX_BITS} configurations")
    roots = np.exp(2j * np.pi * np.arange(q_levels) / q_levels)
    scale = cfg.snr_scale
    best_val = -np.inf
    best_idx = None
    configs = itertools.product(range(q_levels), repeat=n_elem)
    while True:
        block = np.array(list(itertools.islice(configs, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        coeffs = roots[block] @ terms.T
        rates = np.log2(1.0 + scale * np.abs(coeffs) ** 2).sum(axis=1)
        k = int(np.argmax(rates))
        if rates[k] > best_val:
            best_val = float(rates[k])
            best_idx = block[k].copy()
    return PhaseShiftMatrix(best_idx, q_levels), best_val
