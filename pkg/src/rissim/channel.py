"""Geometry and LoS channel model for the RSU -> RIS -> vehicle cascade.

All quantities are linear SI internally; dB/dBm inputs are converted once in
:meth:`RfConfig.from_db`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .phases import PhaseShiftMatrix


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def dbm_to_watts(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class Position3D:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite position {self!r}")


@dataclass(frozen=True)
class RfConfig:
    """Radio constants in linear units.

    ``ref_gain`` is the path gain at 1 m. The simulation table lists it as
    "10 dBm", which is read as 10 dB (a gain, not a power).
    ``element_phase_factor`` is 2*pi*d/lambda; half-wavelength spacing gives pi.
    """

    tx_power: float = 0.1
    noise_power: float = 1e-14
    rician_k: float = 10.0
    ref_gain: float = 10.0
    pathloss_exp: float = 4.0
    element_phase_factor: float = math.pi

    def __post_init__(self):
        errors = []
        if not self.tx_power > 0:
            errors.append("tx_power must be > 0")
        if not self.noise_power > 0:
            errors.append("noise_power must be > 0")
        if not self.rician_k >= 0:
            errors.append("rician_k must be >= 0")
        if not self.ref_gain > 0:
            errors.append("ref_gain must be > 0")
        if not self.pathloss_exp >= 1:
            errors.append("pathloss_exp must be >= 1")
        if not 0 < self.element_phase_factor <= 2 * math.pi:
            errors.append("element_phase_factor must lie in (0, 2*pi]")
        if errors:
            raise ValueError("; ".join(errors))

    @classmethod
    def from_db(cls, tx_power_dbm=20.0, noise_power_dbm=-110.0, rician_k_db=10.0,
                ref_gain_db=10.0, pathloss_exp=4.0, element_phase_factor=math.pi):
        return cls(
            tx_power=dbm_to_watts(tx_power_dbm),
            noise_power=dbm_to_watts(noise_power_dbm),
            rician_k=db_to_linear(rician_k_db),
            ref_gain=db_to_linear(ref_gain_db),
            pathloss_exp=pathloss_exp,
            element_phase_factor=element_phase_factor,
        )

    @property
    def snr_scale(self) -> float:
        """P / sigma^2, the factor mapping |cascade|^2 to SNR."""
        return self.tx_power / self.noise_power

    @property
    def los_fraction(self) -> float:
        return self.rician_k / (1.0 + self.rician_k)


@dataclass(frozen=True)
class CascadedChannel:
    """Per-vehicle RSU->RIS and RIS->vehicle channel vectors."""

    h_ir: np.ndarray
    h_iv: np.ndarray
    d_ir: float
    d_iv: float
    phi_ir: float
    phi_iv: float

    def __post_init__(self):
        if self.h_ir.shape != self.h_iv.shape or self.h_ir.ndim != 1:
            raise ValueError("h_ir and h_iv must be 1-D vectors of equal length")
        if not (self.d_ir > 0 and self.d_iv > 0):
            raise ValueError("link distances must be positive")

    @property
    def n_elements(self) -> int:
        return self.h_ir.shape[0]

    @property
    def element_terms(self) -> np.ndarray:
        """Complex per-element contributions a_m, so the cascade is sum_m a_m e^{j theta_m}.

        a_m = h_ir[m] * conj(h_iv[m]) carries the prefactor
        rho K/(1+K) / (d_ir^{alpha/2} d_iv^{alpha/2}) and the phase
        beta*m*(phi_iv - phi_ir).
        """
        return self.h_ir * np.conj(self.h_iv)


def euclidean_distance(a: Position3D, b: Position3D) -> float:
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


def aoa_cosine(x_src: float, x_dst: float, dist: float) -> float:
    """Cosine of the angle of arrival, (x_dst - x_src) / dist."""
    if not dist > 0:
        raise ValueError("distance must be positive")
    return (x_dst - x_src) / dist


def los_array_response(phi: float, m_elems: int, beta: float) -> np.ndarray:
    if m_elems < 1:
        raise ValueError("m_elems must be >= 1")
    if abs(phi) > 1 + 1e-12:
        raise ValueError("|phi| must be <= 1")
    m = np.arange(m_elems)
    return np.exp(-1j * beta * m * phi)


def channel_vector(dist: float, phi: float, cfg: RfConfig, m_elems: int) -> np.ndarray:
    """Path loss times the pure-LoS Rician component."""
    if not dist > 0:
        raise ValueError("distance must be positive")
    amplitude = math.sqrt(cfg.ref_gain * dist ** (-cfg.pathloss_exp)) * math.sqrt(cfg.los_fraction)
    return amplitude * los_array_response(phi, m_elems, cfg.element_phase_factor)


def build_cascaded_channel(rsu: Position3D, ris: Position3D, vehicle: Position3D,
                           cfg: RfConfig, m_elems: int) -> CascadedChannel:
    d_ir = euclidean_distance(ris, rsu)
    d_iv = euclidean_distance(ris, vehicle)
    # phi_{I,R} = (x_I - x_R)/d_{I,R} and phi_{I,v} = (x_I - x_v)/d_{I,v}
    phi_ir = aoa_cosine(rsu.x, ris.x, d_ir)
    phi_iv = aoa_cosine(vehicle.x, ris.x, d_iv)
    return CascadedChannel(
        h_ir=channel_vector(d_ir, phi_ir, cfg, m_elems),
        h_iv=channel_vector(d_iv, phi_iv, cfg, m_elems),
        d_ir=d_ir, d_iv=d_iv, phi_ir=phi_ir, phi_iv=phi_iv,
    )


def _as_radians(theta) -> np.ndarray:
    if hasattr(theta, "radians"):
        return theta.radians()
    return np.asarray(theta, dtype=float)


def cascaded_coefficient(ch: CascadedChannel, theta) -> complex:
    """Composite coefficient for phase vector ``theta``.

    ``theta`` is either a :class:`~rissim.phases.PhaseShiftMatrix` or an
    array of phases in radians.
    """
    phases = _as_radians(theta)
    if phases.shape != (ch.n_elements,):
        raise ValueError(f"theta has length {phases.shape}, channel has M={ch.n_elements}")
    return complex(np.sum(ch.element_terms * np.exp(1j * phases)))


def cascade_prefactor(ch: CascadedChannel) -> float:
    """Magnitude of every per-element term, i.e. the cascade gain per element."""
    return float(abs(ch.h_ir[0]) * abs(ch.h_iv[0]))


def snr(cascaded: complex, cfg: RfConfig) -> float:
    return cfg.tx_power * abs(cascaded) ** 2 / cfg.noise_power


def spectral_efficiency(snr_linear) -> float:
    if np.any(np.asarray(snr_linear) < 0):
        raise ValueError("snr must be non-negative")
    return np.log2(1.0 + snr_linear)


def optimal_continuous_phases(ch: CascadedChannel, m_elems: int, beta: float) -> np.ndarray:
    """Single-user phases that co-phase every element term.

    theta_m = beta*m*(phi_ir - phi_iv) zeroes the exponent of each term, so the
    coefficient becomes the real value prefactor * M.
    """
    if m_elems != ch.n_elements:
        raise ValueError(f"m_elems={m_elems} does not match channel length {ch.n_elements}")
    m = np.arange(m_elems)
    return np.mod(beta * m * (ch.phi_ir - ch.phi_iv), 2 * np.pi)


def quantize_phases(continuous, q_levels: int):
    """Map each phase to the nearest point of {0, 2pi/Q, ..., 2pi(Q-1)/Q}, circularly."""
    if q_levels < 1:
        raise ValueError("q_levels must be >= 1")
    phases = np.mod(np.asarray(continuous, dtype=float), 2 * np.pi)
    idx = np.rint(phases * q_levels / (2 * np.pi)).astype(np.int64) % q_levels
    return PhaseShiftMatrix(idx, q_levels)


def positioning_phase_deviation(elem_index: int, delta: float, x_i: float, x_v: float,
                                transverse_sq: float, beta: float) -> float:
    """Phase deviation at element ``elem_index`` (1-based) for a position error ``delta``.

    beta*(m-1)*[u/sqrt(u^2+Y) - (u+delta)/sqrt((u+delta)^2+Y)], u = x_i - x_v.
    """
    if transverse_sq < 0:
        raise ValueError("transverse_sq must be >= 0")
    u = x_i - x_v
    u_est = u + delta
    den_true = math.sqrt(u * u + transverse_sq)
    den_est = math.sqrt(u_est * u_est + transverse_sq)
    if den_true == 0 or den_est == 0:
        raise ValueError("degenerate geometry: zero RIS-vehicle distance")
    return beta * (elem_index - 1) * (u / den_true - u_est / den_est)


def element_terms_batch(rsu: Position3D, ris: Position3D, xs, ys, zs,
                        cfg: RfConfig, m_elems: int) -> np.ndarray:
    """Per-element cascade terms for many vehicles at once, shape (V, M).

    Row v equals ``build_cascaded_channel(rsu, ris, vehicle_v, cfg, m_elems).element_terms``.
    """
    xs = np.asarray(xs, dtype=float)
    d_ir = euclidean_distance(ris, rsu)
    phi_ir = (ris.x - rsu.x) / d_ir
    d_iv = np.sqrt((ris.x - xs) ** 2 + (ris.y - np.asarray(ys)) ** 2 + (ris.z - np.asarray(zs)) ** 2)
    if np.any(d_iv <= 0):
        raise ValueError("vehicle coincides with the RIS")
    phi_iv = (ris.x - xs) / d_iv
    alpha = cfg.pathloss_exp
    pref = cfg.ref_gain * cfg.los_fraction / (d_ir ** (alpha / 2) * d_iv ** (alpha / 2))
    m = np.arange(m_elems)
    phase = cfg.element_phase_factor * np.outer(phi_iv - phi_ir, m)
    return pref[:, None] * np.exp(1j * phase)
