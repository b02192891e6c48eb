"""MSE, error-CDF, and baseline-reduction metrics over aligned rate series.

All rates are converted to Mbps before metric computation, so squared
errors and MSEs are in Mbps^2; every report carries the unit explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import RouteTrace
from .validation import check_aligned

BPS_PER_MBPS = 1e6
UNITS = "Mbps^2"


def squared_errors_mbps2(predictions_bps: np.ndarray, truths_bps: np.ndarray) -> np.ndarray:
    """Per-sample squared errors (same shape as the inputs), in Mbps^2."""
    check_aligned("predictions", predictions_bps, "truths", truths_bps)
    diff = (np.asarray(predictions_bps) - np.asarray(truths_bps)) / BPS_PER_MBPS
    return diff * diff


def mse(predictions_bps: np.ndarray, truths_bps: np.ndarray) -> tuple[np.ndarray, float]:
    """(per-link MSE over time, overall MSE over links and time), in Mbps^2."""
    sq = squared_errors_mbps2(predictions_bps, truths_bps)
    return sq.mean(axis=0), float(sq.mean())


def pool_mse(per_route_sq: list[np.ndarray]) -> tuple[np.ndarray, float]:
    """Pool per-route squared-error arrays; overall weights links by sample count."""
    stacked = np.concatenate(per_route_sq, axis=0)
    return stacked.mean(axis=0), float(stacked.mean())


def error_cdf(squared_errors: np.ndarray, grid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF of pooled squared errors, emitted on a quantile grid.

    Returns (error values, cumulative probabilities); the last point is the
    sample maximum with probability exactly 1.
    """
    pool = np.sort(np.asarray(squared_errors, dtype=np.float64).ravel())
    if pool.size == 0:
        raise ValueError("error_cdf: empty error pool")
    if grid is None:
        grid = np.linspace(0.0, 1.0, 201)
    grid = np.asarray(grid, dtype=np.float64)
    if grid[-1] != 1.0:
        grid = np.append(grid, 1.0)
    values = np.quantile(pool, grid)
    probs = np.searchsorted(pool, values, side="right") / pool.size
    probs[-1] = 1.0
    return values, probs


def reduction_vs_baseline(model_mse, baseline_mse):
    """Percent MSE reduction, 100*(1 - model/baseline); None where baseline is 0."""
    m = np.asarray(model_mse, dtype=np.float64)
    b = np.asarray(baseline_mse, dtype=np.float64)
    if m.ndim == 0:
        return None if b == 0 else float(100.0 * (1.0 - m / b))
    return [None if bb == 0 else float(100.0 * (1.0 - mm / bb)) for mm, bb in zip(m, b)]


@dataclass
class EvalReport:
    """Aggregate metrics for one method on one dataset split."""

    method: str
    per_link_mse: list[float]
    overall_mse: float
    units: str = UNITS
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "per_link_mse": self.per_link_mse,
                "overall_mse": self.overall_mse, "units": self.units,
                "metadata": self.metadata}


def timeseries_rows(route: RouteTrace, preds_bps: dict[str, np.ndarray],
                    window: int) -> tuple[list[str], list[list]]:
    """Plot-ready per-step table for one route.

    Columns: t, true per-link rates (Mbps), true max, per-method predicted
    max, per-method per-link squared errors (Mbps^2), and the measurement
    mask for shading.
    """
    truths = route.rate_bps[window:] / BPS_PER_MBPS
    steps, m = truths.shape
    methods = list(preds_bps)
    for name, p in preds_bps.items():
        check_aligned("truths", truths, f"{name} predictions", p)
    header = (["t"]
              + [f"true_mbps_{i + 1}" for i in range(m)]
              + ["true_max_mbps"]
              + [f"pred_max_mbps_{name}" for name in methods]
              + [f"sqerr_{name}_{i + 1}" for name in methods for i in range(m)]
              + [f"meas_{i + 1}" for i in range(m)])
    rows = []
    sq = {name: squared_errors_mbps2(p, route.rate_bps[window:]) for name, p in preds_bps.items()}
    for s in range(steps):
        t = window + s
        row = [t] + list(truths[s]) + [float(truths[s].max())]
        row += [float(preds_bps[name][s].max() / BPS_PER_MBPS) for name in methods]
        for name in methods:
            row += list(sq[name][s])
        row += ([int(v) for v in route.mask[t]] if route.mask is not None else [1] * m)
        rows.append(row)
    return header, rows
