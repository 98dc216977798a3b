"""Gasper fork choice, fast confirmation rules and an adversarial network simulator."""

from .chain import Balances, Block, BlockStore, CommitteeSchedule, TimeConfig
from .confirmation import RULES, Observer, SafetyParams
from .simnet import ConfigError, ScenarioConfig, Simulation, Trace, run_scenario

__all__ = [
    "Balances", "Block", "BlockStore", "CommitteeSchedule", "TimeConfig",
    "RULES", "Observer", "SafetyParams",
    "ConfigError", "ScenarioConfig", "Simulation", "Trace", "run_scenario",
]
