from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PhaseShiftMatrix:
    """Discrete RIS configuration: element m applies phase 2*pi*indices[m]/q_levels."""

    indices: np.ndarray
    q_levels: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("indices must be a 1-D vector")
        if self.q_levels < 1 or (self.q_levels & (self.q_levels - 1)):
            raise ValueError(f"q_levels must be a power of two, got {self.q_levels}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.q_levels):
            raise ValueError("phase index outside [0, Q)")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def zeros(cls, m_elems: int, q_levels: int) -> "PhaseShiftMatrix":
        return cls(np.zeros(m_elems, dtype=np.int64), q_levels)

    @property
    def n_elements(self) -> int:
        return self.indices.shape[0]

    def radians(self) -> np.ndarray:
        return 2.0 * np.pi * self.indices / self.q_levels

    def diagonal(self) -> np.ndarray:
        """Diagonal entries e^{j theta_m} of the reflection matrix."""
        return np.exp(1j * self.radians())

    def __eq__(self, other):
        if not isinstance(other, PhaseShiftMatrix):
            return NotImplemented
        return self.q_levels == other.q_levels and np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash((self.q_levels, self.indices.tobytes()))
