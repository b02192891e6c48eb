"""Static link descriptions: one (cell, RX antenna) pair per link."""

from __future__ import annotations

from dataclasses import dataclass, asdict


@dataclass(frozen=True)
class LinkConfig:
    """One downlink: a cell transmitting to one UE antenna at a fixed carrier."""

    link_id: int
    gnb_id: int
    rx_id: int
    carrier_freq_ghz: float
    bandwidth_hz: float
    beta: float = 0.6            # coding efficiency discount on the log term
    rho_max: float = 4.8         # spectral-efficiency ceiling, bits/s/Hz
    tx_power_dbm: float = 51.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 7.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError(f"link {self.link_id}: bandwidth must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError(f"link {self.link_id}: beta must be in (0, 1]")
        if self.rho_max <= 0:
            raise ValueError(f"link {self.link_id}: rho_max must be positive")

    @property
    def cap_bps(self) -> float:
        """Hard rate ceiling B * rho_max in bits/s."""
        return self.bandwidth_hz * self.rho_max

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LinkConfig":
        return cls(**d)


def default_links() -> list[LinkConfig]:
    """Four-link handset layout: two 3.5 GHz dipole links, two 15 GHz patch links."""
    return [
        LinkConfig(link_id=1, gnb_id=1, rx_id=3, carrier_freq_ghz=3.5, bandwidth_hz=100e6),
        LinkConfig(link_id=2, gnb_id=1, rx_id=4, carrier_freq_ghz=3.5, bandwidth_hz=100e6),
        LinkConfig(link_id=3, gnb_id=2, rx_id=1, carrier_freq_ghz=15.0, bandwidth_hz=200e6),
        LinkConfig(link_id=4, gnb_id=2, rx_id=2, carrier_freq_ghz=15.0, bandwidth_hz=200e6),
    ]
