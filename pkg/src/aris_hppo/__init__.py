"""Hybrid-action PPO workbench for ARIS-assisted CoMP-NOMA downlink networks.

Modules:
    channel: geometry, path loss, Nakagami-m fading and RIS cascades.
    noma: SINR, SIC feasibility and sum-rate evaluation.
    env: the time-slotted MDP with four reward designs and four variants.
    neural: dense networks with hand-written backprop, Adam, checkpoints.
    hppo: the hybrid-action PPO trainer (scikit-learn style estimator).
    oracle: brute-force and closed-form reference optimizers.
    config, experiments, cli, selfcheck: the experiment harness.
"""

__version__ = "0.1.0"

from ._validation import ConfigError  # noqa: E402
from .channel import ChannelParams, Topology  # noqa: E402
from .env import CompNomaEnv, EnvConfig, HybridAction  # noqa: E402
from .hppo import HPPO  # noqa: E402

__all__ = ["ChannelParams", "CompNomaEnv", "ConfigError", "EnvConfig", "HPPO", "HybridAction",
           "Topology", "__version__"]
