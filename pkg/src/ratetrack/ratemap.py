"""CQI-to-rate mapping, masked observations, and the measurement bandit.

The rate map is a bandwidth-scaled, efficiency-discounted Shannon rate with
a hard spectral-efficiency cap. Measurements are sparse: an exponential-
weights bandit with epsilon-greedy exploration picks a size-k subset of
links each 50 ms step; unmeasured links observe nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .links import LinkConfig


def rate_from_snr(snr_linear, link: LinkConfig):
    """Rate in bits/s for a linear SNR: B * min(rho_max, beta*log2(1+snr)).

    Accepts scalars or arrays; monotone nondecreasing, capped at B*rho_max.
    """
    snr = np.asarray(snr_linear, dtype=np.float64)
    if np.any(snr < 0):
        raise ValueError("rate_from_snr: linear SNR must be >= 0")
    se = np.minimum(link.rho_max, link.beta * np.log2(1.0 + snr))
    out = link.bandwidth_hz * se
    return float(out) if np.isscalar(snr_linear) else out


def rate_from_snr_db(snr_db, link: LinkConfig):
    return rate_from_snr(10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0), link)


def saturation_snr_db(link: LinkConfig) -> float:
    """Smallest SNR (dB) at which the rate map hits its cap."""
    with np.errstate(over="ignore"):
        gamma = np.power(2.0, np.float64(link.rho_max / link.beta)) - 1.0
    return float(10.0 * np.log10(gamma))


def observe(true_snr_db: np.ndarray, active: np.ndarray, noise_std_db: float,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-link observed SNR (dB); NaN marks "no measurement".

    active holds 0-based link indices. noise_std_db = 0 reproduces the truth
    exactly on measured links.
    """
    true_snr_db = np.asarray(true_snr_db, dtype=np.float64)
    obs = np.full(true_snr_db.shape, np.nan)
    active = np.asarray(active, dtype=np.intp)
    if active.size:
        if active.size != np.unique(active).size or active.min() < 0 or active.max() >= true_snr_db.size:
            raise ValueError(f"observe: invalid active set {active}")
        vals = true_snr_db[active]
        if noise_std_db > 0:
            if rng is None:
                raise ValueError("observe: rng required for noisy measurements")
            vals = vals + rng.normal(0.0, noise_std_db, size=vals.shape)
        obs[active] = vals
    return obs


@dataclass
class BanditState:
    """Exponential-weights state over links with epsilon-greedy exploration."""

    weights: np.ndarray
    epsilon: float = 0.2
    eta: float = 0.1
    k: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("bandit weights must be positive and finite")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.k < 1 or self.k > self.weights.size:
            raise ValueError(f"subset size k={self.k} out of range for {self.weights.size} links")

    @property
    def n_links(self) -> int:
        return self.weights.size

    @classmethod
    def fresh(cls, n_links: int, epsilon: float = 0.2, eta: float = 0.1, k: int = 1) -> "BanditState":
        return cls(weights=np.ones(n_links), epsilon=epsilon, eta=eta, k=k)


def _weighted_inclusion_probs(weights: np.ndarray, k: int) -> np.ndarray:
    """Exact inclusion probabilities of sequential weighted sampling w/o replacement.

    Enumerates ordered draws; fine for the handful of links modeled here.
    """
    m = weights.size
    if k == 1:
        return weights / weights.sum()
    if k == m:
        return np.ones(m)
    incl = np.zeros(m)
    for order in permutations(range(m), k):
        p = 1.0
        remaining = weights.sum()
        for idx in order:
            p *= weights[idx] / remaining
            remaining -= weights[idx]
        incl[list(order)] += p
    return incl


def selection_probabilities(state: BanditState) -> np.ndarray:
    """Marginal probability that each link lands in the measured subset."""
    uniform = state.k / state.n_links
    weighted = _weighted_inclusion_probs(state.weights, state.k)
    return state.epsilon * uniform + (1.0 - state.epsilon) * weighted


def bandit_select(state: BanditState, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw the measured subset; returns (0-based link indices, marginal probs).

    With probability epsilon the subset is uniform; otherwise links are drawn
    without replacement proportionally to the weights, renormalizing after
    each draw. The returned probabilities are the marginals of the mixture at
    draw time, needed for the importance-weighted update.
    """
    probs = selection_probabilities(state)
    m = state.n_links
    if rng.random() < state.epsilon:
        chosen = rng.choice(m, size=state.k, replace=False)
    else:
        w = state.weights.copy()
        chosen = np.empty(state.k, dtype=np.intp)
        avail = np.arange(m)
        for j in range(state.k):
            p = w / w.sum()
            pick = rng.choice(avail.size, p=p)
            chosen[j] = avail[pick]
            avail = np.delete(avail, pick)
            w = np.delete(w, pick)
    chosen = np.sort(chosen)
    return chosen, probs[chosen]


def bandit_update(state: BanditState, active: np.ndarray, observed_rates_bps: np.ndarray,
                  probs: np.ndarray, links: list[LinkConfig]) -> BanditState:
    """Importance-weighted exponential-weights update on the measured links.

    Rewards are rates normalized by each link's cap, so they live in [0, 1];
    weights are rescaled to mean 1 afterwards to keep them bounded.
    """
    for idx, rate, p in zip(active, observed_rates_bps, probs):
        r = rate / links[idx].cap_bps
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"normalized reward {r} outside [0, 1] on link {idx + 1}")
        state.weights[idx] *= np.exp(state.eta * r / p)
    state.weights /= state.weights.mean()
    if not np.all(np.isfinite(state.weights)) or np.any(state.weights <= 0):
        raise RuntimeError("bandit weights left the positive finite range")
    return state


def run_bandit_masking(true_snr_db: np.ndarray, links: list[LinkConfig],
                       epsilon: float = 0.2, eta: float = 0.1, k: int = 1,
                       noise_std_db: float = 0.0,
                       rng: np.random.Generator | None = None,
                       seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Run select/observe/update over one route's (T, M) SNR trace.

    Returns (mask, obs_snr_db): mask is (T, M) in {0, 1}; obs is (T, M) with
    NaN where unmeasured. Labels stay the full true rates; this only decides
    what the predictor gets to see.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    steps, m = true_snr_db.shape
    state = BanditState.fresh(m, epsilon=epsilon, eta=eta, k=k)
    mask = np.zeros((steps, m), dtype=np.int64)
    obs = np.full((steps, m), np.nan)
    for t in range(steps):
        active, probs = bandit_select(state, rng)
        o = observe(true_snr_db[t], active, noise_std_db, rng)
        mask[t, active] = 1
        obs[t] = o
        rates = np.array([rate_from_snr_db(o[i], links[i]) for i in active])
        bandit_update(state, active, rates, probs, links)
    return mask, obs
