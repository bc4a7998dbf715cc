"""RIS-assisted vehicular scheduling: channel model, discrete beamforming, mobility,
a scheduling MDP, a from-scratch PPO agent, baselines and an experiment harness."""

from .baselines import PolicyKind
from .channel import Position3D, RfConfig
from .config import ExperimentConfig, load_config
from .env import SchedulingEnv
from .phases import PhaseShiftMatrix

__all__ = ["ExperimentConfig", "PhaseShiftMatrix", "PolicyKind", "Position3D", "RfConfig",
           "SchedulingEnv", "load_config"]
__version__ = "0.1.0"
