"""Multi-band cellular rate tracking at desk scale.

Seeded channel simulation, bandit-driven sparse measurements, a
transformer-based one-step-ahead per-link rate predictor with its own
reverse-mode autodiff core, predictor-free baselines, and MSE/CDF reports.
"""

from .channel import (MOBILITY_LEVELS, AntennaModel, MobilityLevel, RouteTrace,
                      SimConfig, UEState, simulate_route)
from .estimator import RatePredictor
from .links import LinkConfig, default_links
from .ratemap import BanditState, rate_from_snr, saturation_snr_db

__all__ = [
    "MOBILITY_LEVELS", "AntennaModel", "BanditState", "LinkConfig",
    "MobilityLevel", "RatePredictor", "RouteTrace", "SimConfig", "UEState",
    "default_links", "rate_from_snr", "saturation_snr_db", "simulate_route",
]

__version__ = "0.1.0"
