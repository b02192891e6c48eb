"""Seeded parametric channel simulator for a walking, rotating handset.

Stands in for ray tracing: log-distance pathloss, spatially correlated
shadowing, and directive antenna patterns rotated by the handset's yaw and
pitch. The combination keeps the phenomena the predictor has to learn
(band rank reversals, rotation-driven per-antenna dominance) without a
geometry engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .links import LinkConfig, default_links
from .ratemap import rate_from_snr_db

STEP_SECONDS = 0.05  # one measurement period


@dataclass(frozen=True)
class MobilityLevel:
    """Bounds of the pedestrian + handset-rotation random walk."""

    name: str
    v_max: float                 # m/s
    heading_rate_bound: float    # rad/s
    yaw_increment_bound: float   # rad per 50 ms step
    pitch_increment_bound: float # rad per 50 ms step


MOBILITY_LEVELS = {
    "low": MobilityLevel("low", 2.0, np.pi / 2, np.pi / 10, np.pi / 20),
    "medium": MobilityLevel("medium", 5.0, np.pi / 3, 2 * np.pi / 10, 2 * np.pi / 20),
    "high": MobilityLevel("high", 10.0, np.pi / 6, 3 * np.pi / 10, 3 * np.pi / 20),
}


@dataclass
class UEState:
    x: float
    y: float
    heading: float
    speed: float
    yaw: float
    pitch: float
    step: int = 0
    dist_since_shadow: float = 0.0


@dataclass(frozen=True)
class AntennaModel:
    """Directivity pattern of one UE antenna in the handset body frame.

    For a dipole, ``boresight`` is the dipole axis. ``back_lobe_floor_db``
    is relative to peak gain and stands in for body/hand shadowing.
    """

    rx_id: int
    kind: str                    # "dipole" | "patch"
    boresight: tuple[float, float, float]
    peak_gain_dbi: float
    pattern_exponent: float = 2.0
    back_lobe_floor_db: float = -20.0

    def __post_init__(self):
        if self.kind not in ("dipole", "patch"):
            raise ValueError(f"unknown antenna kind {self.kind!r}")
        n = np.linalg.norm(self.boresight)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"boresight must be a unit vector, |v|={n}")


def default_antennas() -> dict[int, AntennaModel]:
    """RX1/RX2: opposed 15 GHz patches; RX3/RX4: orthogonal 3.5 GHz dipoles."""
    return {
        1: AntennaModel(1, "patch", (1.0, 0.0, 0.0), peak_gain_dbi=6.0),
        2: AntennaModel(2, "patch", (-1.0, 0.0, 0.0), peak_gain_dbi=6.0),
        3: AntennaModel(3, "dipole", (0.0, 0.0, 1.0), peak_gain_dbi=1.76),
        4: AntennaModel(4, "dipole", (1.0, 0.0, 0.0), peak_gain_dbi=1.76),
    }


@dataclass
class SimConfig:
    """Geometry and propagation knobs for one simulation run."""

    links: list[LinkConfig] = field(default_factory=default_links)
    antennas: dict[int, AntennaModel] = field(default_factory=default_antennas)
    site_xy: tuple[float, float] = (0.0, 0.0)
    gnb_height_m: float = 10.0
    ue_height_m: float = 1.5
    start_radius_m: tuple[float, float] = (250.0, 600.0)
    shadow_sigma_db: dict[float, float] = field(default_factory=lambda: {3.5: 4.0, 15.0: 6.0})
    shadow_corr_dist_m: float = 13.0
    steps_per_route: int = 1200

    def validate(self) -> None:
        if not self.links:
            raise ValueError("config has no links")
        if self.steps_per_route < 1:
            raise ValueError("steps_per_route must be >= 1")
        for link in self.links:
            if link.rx_id not in self.antennas:
                raise ValueError(f"link {link.link_id} references unknown RX {link.rx_id}")
        if self.shadow_corr_dist_m <= 0:
            raise ValueError("shadow correlation distance must be positive")

    def sigma_for(self, link: LinkConfig) -> float:
        return self.shadow_sigma_db.get(link.carrier_freq_ghz, 4.0)


@dataclass
class RouteTrace:
    """Ground truth for one route, later augmented with masks/observations."""

    route_index: int
    seed: int
    mobility: str
    period_ms: float
    snr_db: np.ndarray            # (T, M)
    rate_bps: np.ndarray          # (T, M)
    mask: np.ndarray | None = None         # (T, M) in {0, 1}
    obs_snr_db: np.ndarray | None = None   # (T, M), NaN = unmeasured

    @property
    def steps(self) -> int:
        return self.snr_db.shape[0]

    @property
    def n_links(self) -> int:
        return self.snr_db.shape[1]


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]; values already in range pass through unchanged."""
    if -np.pi < a <= np.pi:
        return a
    a = (a + np.pi) % (2 * np.pi) - np.pi
    return np.pi if a == -np.pi else a


def step_mobility(state: UEState, level: MobilityLevel, rng: np.random.Generator) -> UEState:
    """Bounded random walk in speed and heading, then advance the position."""
    accel = rng.uniform(-1.0, 1.0)
    speed = float(np.clip(state.speed + accel * STEP_SECONDS, 0.0, level.v_max))
    omega = rng.uniform(-level.heading_rate_bound, level.heading_rate_bound)
    heading = _wrap_angle(state.heading + omega * STEP_SECONDS)
    dist = speed * STEP_SECONDS
    return replace(
        state,
        x=state.x + dist * np.cos(heading),
        y=state.y + dist * np.sin(heading),
        heading=heading,
        speed=speed,
        step=state.step + 1,
        dist_since_shadow=state.dist_since_shadow + dist,
    )


def step_rotation(state: UEState, level: MobilityLevel, rng: np.random.Generator) -> UEState:
    """Random-walk the handset yaw and pitch within the level's bounds."""
    yaw = _wrap_angle(state.yaw + rng.uniform(-level.yaw_increment_bound,
                                              level.yaw_increment_bound))
    pitch = float(np.clip(state.pitch + rng.uniform(-level.pitch_increment_bound,
                                                    level.pitch_increment_bound),
                          -np.pi / 2, np.pi / 2))
    return replace(state, yaw=yaw, pitch=pitch)


def antenna_gain(model: AntennaModel, direction_body: np.ndarray) -> float:
    """Gain (dBi) toward a unit arrival direction expressed in the body frame."""
    d = np.asarray(direction_body, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError(f"arrival direction must be a unit vector, got norm {np.linalg.norm(d)}")
    bore = np.asarray(model.boresight)
    cosang = float(np.clip(d @ bore, -1.0, 1.0))
    floor_lin = 10.0 ** (model.back_lobe_floor_db / 10.0)
    if model.kind == "dipole":
        sin2 = max(1.0 - cosang * cosang, floor_lin)
        return model.peak_gain_dbi + 10.0 * np.log10(sin2)
    # patch: cosine-power lobe, floored to emulate body blockage behind the phone
    lobe = max(cosang, 0.0) ** model.pattern_exponent
    gain = model.peak_gain_dbi + 10.0 * np.log10(max(lobe, floor_lin))
    return max(gain, model.peak_gain_dbi + model.back_lobe_floor_db)


def pathloss_db(distance_3d_m: float, carrier_freq_ghz: float) -> float:
    """Urban-micro line-of-sight log-distance pathloss; distance clamped to 1 m."""
    d = max(distance_3d_m, 1.0)
    return 32.4 + 21.0 * np.log10(d) + 20.0 * np.log10(carrier_freq_ghz)


def shadowing_step(previous_db: float, distance_delta_m: float, sigma_db: float,
                   corr_distance_m: float, rng: np.random.Generator) -> float:
    """Gauss-Markov shadowing: correlation decays with distance traveled."""
    if sigma_db < 0:
        raise ValueError("shadowing sigma must be >= 0")
    if corr_distance_m <= 0:
        raise ValueError("correlation distance must be positive")
    rho = np.exp(-distance_delta_m / corr_distance_m)
    return rho * previous_db + sigma_db * np.sqrt(1.0 - rho * rho) * rng.standard_normal()


def snr_db(link: LinkConfig, gain_dbi: float, pl_db: float, shadow_db: float) -> float:
    """Link budget: tx + gain - pathloss - shadowing - noise power."""
    noise_dbm = link.noise_psd_dbm_hz + 10.0 * np.log10(link.bandwidth_hz) + link.noise_figure_db
    return link.tx_power_dbm + gain_dbi - pl_db - shadow_db - noise_dbm


def _body_frame_direction(ue_xyz: np.ndarray, gnb_xyz: np.ndarray,
                          yaw: float, pitch: float) -> np.ndarray:
    """Unit vector UE->gNB rotated into the handset body frame."""
    d = gnb_xyz - ue_xyz
    d = d / np.linalg.norm(d)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    # world -> body: undo Rz(yaw) then Ry(pitch)
    rz = np.array([[cy, sy, 0.0], [-sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]])
    return ry @ (rz @ d)


def simulate_route(config: SimConfig, level: MobilityLevel, seed: int,
                   route_index: int = 0) -> RouteTrace:
    """Simulate one route; fully determined by (config, level, seed)."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    m = len(config.links)
    steps = config.steps_per_route

    radius = rng.uniform(*config.start_radius_m)
    angle = rng.uniform(-np.pi, np.pi)
    state = UEState(
        x=config.site_xy[0] + radius * np.cos(angle),
        y=config.site_xy[1] + radius * np.sin(angle),
        heading=rng.uniform(-np.pi, np.pi),
        speed=rng.uniform(0.0, level.v_max),
        yaw=rng.uniform(-np.pi, np.pi),
        pitch=0.0,
    )
    shadows = np.array([rng.normal(0.0, config.sigma_for(link)) for link in config.links])
    gnb_xyz = np.array([config.site_xy[0], config.site_xy[1], config.gnb_height_m])

    snr = np.empty((steps, m))
    for t in range(steps):
        ue_xyz = np.array([state.x, state.y, config.ue_height_m])
        dist = float(np.linalg.norm(gnb_xyz - ue_xyz))
        d_body = _body_frame_direction(ue_xyz, gnb_xyz, state.yaw, state.pitch)
        for j, link in enumerate(config.links):
            gain = antenna_gain(config.antennas[link.rx_id], d_body)
            pl = pathloss_db(dist, link.carrier_freq_ghz)
            snr[t, j] = snr_db(link, gain, pl, shadows[j])
        prev = state
        state = step_rotation(step_mobility(state, level, rng), level, rng)
        delta = np.hypot(state.x - prev.x, state.y - prev.y)
        for j, link in enumerate(config.links):
            shadows[j] = shadowing_step(shadows[j], delta, config.sigma_for(link),
                                        config.shadow_corr_dist_m, rng)

    rate = np.column_stack([rate_from_snr_db(snr[:, j], link)
                            for j, link in enumerate(config.links)])
    return RouteTrace(route_index=route_index, seed=seed, mobility=level.name,
                      period_ms=STEP_SECONDS * 1000.0, snr_db=snr, rate_bps=rate)


def route_seed(master_seed: int, route_index: int) -> int:
    """Stable per-route seed derived from the master seed."""
    ss = np.random.SeedSequence([master_seed, route_index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
