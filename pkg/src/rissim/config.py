"""Experiment configuration: one flat record, loaded from an INI-style file.

File sections mirror the package modules (``[channel]``, ``[beamforming]``,
``[mobility]``, ``[env]``, ``[agent]``, ``[harness]``); unknown sections or keys
are rejected. Defaults reproduce the reference simulation table.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields

from .agent import TrainConfig
from .baselines import PolicyKind
from .beamforming import BcdConfig
from .channel import Position3D, RfConfig
from .env import EpisodeConfig, RadioScene
from .mobility import TrafficConfig

SWEEP_AXES = ("M", "b", "arrival", "placement", "delta")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _meta(section):
    return {"section": section}


@dataclass(frozen=True)
class ExperimentConfig:
    # [channel]
    tx_power_dbm: float = field(default=20.0, metadata=_meta("channel"))
    noise_power_dbm: float = field(default=-110.0, metadata=_meta("channel"))
    rician_k_db: float = field(default=10.0, metadata=_meta("channel"))
    ref_gain_db: float = field(default=10.0, metadata=_meta("channel"))
    pathloss_exp: float = field(default=4.0, metadata=_meta("channel"))
    element_phase_factor: float = field(default=math.pi, metadata=_meta("channel"))
    rsu_x: float = field(default=0.0, metadata=_meta("channel"))
    rsu_y: float = field(default=40.0, metadata=_meta("channel"))
    rsu_z: float = field(default=10.0, metadata=_meta("channel"))
    ris_x: float = field(default=10.0, metadata=_meta("channel"))
    ris_y: float = field(default=20.0, metadata=_meta("channel"))
    ris_z: float = field(default=10.0, metadata=_meta("channel"))
    # [beamforming]
    n_elements: int = field(default=100, metadata=_meta("beamforming"))
    bits: int = field(default=2, metadata=_meta("beamforming"))
    rel_tolerance: float = field(default=1e-6, metadata=_meta("beamforming"))
    max_sweeps: int = field(default=20, metadata=_meta("beamforming"))
    # [mobility]
    road_length: float = field(default=100.0, metadata=_meta("mobility"))
    arrival_rate: float = field(default=0.2, metadata=_meta("mobility"))
    slot_duration: float = field(default=1.0, metadata=_meta("mobility"))
    max_concurrent: int = field(default=12, metadata=_meta("mobility"))
    lane_y: float = field(default=20.0, metadata=_meta("mobility"))
    lane_z: float = field(default=1.0, metadata=_meta("mobility"))
    speed_jitter: float = field(default=0.0, metadata=_meta("mobility"))
    # [env]
    n_channels: int = field(default=3, metadata=_meta("env"))
    horizon: int = field(default=120, metadata=_meta("env"))
    penalty_mode: str = field(default="negated", metadata=_meta("env"))
    # [agent]
    learning_rate: float = field(default=0.002, metadata=_meta("agent"))
    gamma: float = field(default=0.08, metadata=_meta("agent"))
    clip: float = field(default=0.02, metadata=_meta("agent"))
    episodes_per_update: int = field(default=8, metadata=_meta("agent"))
    update_epochs: int = field(default=4, metadata=_meta("agent"))
    minibatch_size: int = field(default=0, metadata=_meta("agent"))
    value_coef: float = field(default=0.5, metadata=_meta("agent"))
    entropy_coef: float = field(default=0.01, metadata=_meta("agent"))
    normalize_advantages: bool = field(default=True, metadata=_meta("agent"))
    hidden: int = field(default=64, metadata=_meta("agent"))
    n_updates: int = field(default=1500, metadata=_meta("agent"))
    # [harness]
    policy: str = field(default="proposed", metadata=_meta("harness"))
    n_test_runs: int = field(default=500, metadata=_meta("harness"))
    seed: int = field(default=0, metadata=_meta("harness"))
    sweep_axis: str = field(default="", metadata=_meta("harness"))
    sweep_values: tuple = field(default=(), metadata=_meta("harness"))
    vehicle_positions: tuple = field(default=(20.0, 30.0, 40.0, 50.0), metadata=_meta("harness"))
    checkpoint: str = field(default="", metadata=_meta("harness"))

    # -- derived module configs -------------------------------------------
    @property
    def q_levels(self) -> int:
        return 2 ** self.bits

    @property
    def policy_kind(self) -> PolicyKind:
        return PolicyKind(self.policy)

    def rf(self) -> RfConfig:
        return RfConfig.from_db(self.tx_power_dbm, self.noise_power_dbm, self.rician_k_db,
                                self.ref_gain_db, self.pathloss_exp, self.element_phase_factor)

    def scene(self) -> RadioScene:
        return RadioScene(rsu=Position3D(self.rsu_x, self.rsu_y, self.rsu_z),
                          ris=Position3D(self.ris_x, self.ris_y, self.ris_z),
                          rf=self.rf(), n_elements=self.n_elements, q_levels=self.q_levels,
                          n_channels=self.n_channels)

    def traffic(self) -> TrafficConfig:
        return TrafficConfig(road_length=self.road_length, arrival_rate=self.arrival_rate,
                             slot_duration=self.slot_duration, max_concurrent=self.max_concurrent,
                             lane_y=self.lane_y, lane_z=self.lane_z, speed_jitter=self.speed_jitter)

    def episode(self) -> EpisodeConfig:
        return EpisodeConfig(horizon=self.horizon, penalty_mode=self.penalty_mode)

    def bcd(self) -> BcdConfig:
        return BcdConfig(rel_tolerance=self.rel_tolerance, max_sweeps=self.max_sweeps)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, gamma=self.gamma, clip=self.clip,
                           episodes_per_update=self.episodes_per_update,
                           update_epochs=self.update_epochs, minibatch_size=self.minibatch_size,
                           value_coef=self.value_coef, entropy_coef=self.entropy_coef,
                           normalize_advantages=self.normalize_advantages, hidden=self.hidden,
                           seed=self.seed)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def validate(self) -> "ExperimentConfig":
        """Raise ConfigError listing every problem found."""
        errors = []
        for build in (self.rf, self.scene, self.traffic, self.episode, self.bcd, self.train_config):
            try:
                build()
            except ValueError as exc:
                errors.append(f"{build.__name__}: {exc}")
        if self.bits < 1:
            errors.append("bits must be >= 1")
        if self.max_concurrent < self.n_channels:
            errors.append("max_concurrent (eta) must be >= n_channels (C)")
        try:
            PolicyKind(self.policy)
        except ValueError:
            errors.append(f"policy must be one of {[p.value for p in PolicyKind]}, got {self.policy!r}")
        if self.n_test_runs < 1:
            errors.append("n_test_runs must be >= 1")
        if self.n_updates < 0:
            errors.append("n_updates must be >= 0")
        if self.sweep_axis and self.sweep_axis not in SWEEP_AXES:
            errors.append(f"sweep_axis must be one of {SWEEP_AXES}")
        if self.sweep_axis and not self.sweep_values:
            errors.append("sweep_values is empty")
        if errors:
            raise ConfigError(errors)
        return self


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
SECTIONS = sorted({f.metadata["section"] for f in fields(ExperimentConfig)})


def _parse_value(f, raw: str):
    default = f.default
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(x) for x in raw.replace(",", " ").split())
    return raw.strip()


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    errors = []
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            errors.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            f = _FIELDS.get(key)
            if f is None or f.metadata["section"] != section:
                errors.append(f"unknown key {key!r} in [{section}]")
                continue
            try:
                values[key] = _parse_value(f, raw)
            except ValueError as exc:
                errors.append(f"[{section}] {key}: {exc}")
    if errors:
        raise ConfigError(errors)
    cfg = dataclasses.replace(base or ExperimentConfig(), **values)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for f in fields(cfg):
            if f.metadata["section"] != section:
                continue
            v = getattr(cfg, f.name)
            if isinstance(v, tuple):
                v = " ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)
