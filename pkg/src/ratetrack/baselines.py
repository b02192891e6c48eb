"""Predictor-free baselines.

B1 observes every link and predicts by a one-step lag of the true rates.
B2 follows the bandit mask: a link's prediction refreshes only when it was
measured at the previous step, otherwise the last value is carried forward.
Both start from the true rate vector at t = 0 and drop the first W steps to
align with the predictor's window.
"""

from __future__ import annotations

import numpy as np

from .channel import RouteTrace
from .validation import check_masked_route


def b1_step(previous_true_rates: np.ndarray) -> np.ndarray:
    """Full-observation one-step lag."""
    return np.asarray(previous_true_rates, dtype=np.float64).copy()


def b2_step(state: np.ndarray, previous_true_rates: np.ndarray,
            previous_mask: np.ndarray) -> np.ndarray:
    """Masked carry-forward; returns the new prediction (also the new state)."""
    state = np.asarray(state, dtype=np.float64)
    rates = np.asarray(previous_true_rates, dtype=np.float64)
    mask = np.asarray(previous_mask)
    if mask.shape != state.shape or rates.shape != state.shape:
        raise ValueError(
            f"b2_step: mask/rate shape {mask.shape}/{rates.shape} "
            f"does not match state {state.shape}")
    return mask * rates + (1 - mask) * state


def run_baseline(route: RouteTrace, which: str, window: int) -> np.ndarray:
    """Baseline prediction series aligned to t in [window, steps), shape (T-W, M)."""
    if which not in ("b1", "b2"):
        raise ValueError(f"unknown baseline {which!r}")
    if which == "b2":
        check_masked_route(route)
    rates = route.rate_bps
    preds = np.empty_like(rates)
    preds[0] = rates[0]
    state = rates[0].copy()
    for t in range(1, route.steps):
        if which == "b1":
            state = b1_step(rates[t - 1])
        else:
            state = b2_step(state, rates[t - 1], route.mask[t - 1])
        preds[t] = state
    return preds[window:]
