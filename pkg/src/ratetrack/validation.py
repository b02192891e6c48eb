"""Small input-validation helpers shared across modules."""

from __future__ import annotations

import numpy as np


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_unit_vector(name: str, v, tol: float = 1e-6) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if abs(n - 1.0) > tol:
        raise ValueError(f"{name} must be a unit vector, got norm {n}")
    return v


def check_aligned(name_a: str, a: np.ndarray, name_b: str, b: np.ndarray) -> None:
    if np.asarray(a).shape != np.asarray(b).shape:
        raise ValueError(
            f"{name_a} and {name_b} are misaligned: "
            f"{np.asarray(a).shape} vs {np.asarray(b).shape}")


def check_masked_route(route) -> None:
    """A route usable for prediction must carry a mask and observations."""
    if route.mask is None or route.obs_snr_db is None:
        raise ValueError(f"route {route.route_index} has no mask; run masking first")
    measured = route.mask == 1
    present = ~np.isnan(route.obs_snr_db)
    if not np.array_equal(measured, present):
        raise ValueError(f"route {route.route_index}: mask and observations disagree")
