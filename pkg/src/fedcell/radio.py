"""Link budget: indoor path loss, RSRP, SINR, CQI and per-UE rate.

All dB/dBm/linear conversions go through the helpers at the top of this
module.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .geometry import RoomLayout, los_matrix


def db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def linear_to_db(lin):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(lin, dtype=float))


def dbm_to_mw(dbm):
    return db_to_linear(dbm)


def mw_to_dbm(mw):
    return linear_to_db(mw)


@dataclass(frozen=True)
class RadioParams:
    bandwidth_hz: float = 20e6
    carrier_ghz: float = 3.5
    tx_gain_db: float = 0.0
    rx_gain_db: float = 0.0
    # kTB over 20 MHz, no noise figure
    noise_power_dbm: float = -101.0
    ue_height_m: float = 1.0

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError(f"bandwidth_hz must be > 0, got {self.bandwidth_hz}")
        if not self.carrier_ghz > 0:
            raise ValueError(f"carrier_ghz must be > 0, got {self.carrier_ghz}")


@dataclass(frozen=True)
class CqiEntry:
    snr_floor_db: float
    cqi_index: int
    modulation_bits: int
    code_rate_x1024: int

    @property
    def spectral_efficiency(self) -> float:
        return self.modulation_bits * self.code_rate_x1024 / 1024.0


@lru_cache(maxsize=1)
def default_cqi_table() -> tuple[CqiEntry, ...]:
    """The 16-row 4-bit CQI table shipped in ``data/cqi_table.csv``."""
    text = (resources.files("fedcell") / "data" / "cqi_table.csv").read_text()
    rows = [
        CqiEntry(
            snr_floor_db=float(r["snr_floor_db"]),
            cqi_index=int(r["cqi"]),
            modulation_bits=int(r["modulation_bits"]),
            code_rate_x1024=int(r["code_rate_x1024"]),
        )
        for r in csv.DictReader(text.splitlines())
    ]
    _check_table(rows)
    return tuple(rows)


def _check_table(rows):
    floors = [r.snr_floor_db for r in rows]
    idx = [r.cqi_index for r in rows]
    if any(b <= a for a, b in zip(floors, floors[1:])) or any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValueError("CQI table must be strictly increasing in floor and index")
    if rows[0].cqi_index != 0 or rows[0].spectral_efficiency != 0:
        raise ValueError("CQI 0 must carry zero rate")


def _floors(table) -> np.ndarray:
    return np.array([e.snr_floor_db for e in table])


def _efficiencies(table) -> np.ndarray:
    return np.array([e.spectral_efficiency for e in table])


# ---------------------------------------------------------------------------

def pathloss_db(d3d, los, params: RadioParams = RadioParams()):
    """Indoor LoS/NLoS path loss in dB, distances clamped to >= 1 m."""
    d = np.maximum(np.asarray(d3d, dtype=float), 1.0)
    fc = params.carrier_ghz
    pl_los = 22.0 * np.log10(d) + 28.0 + 20.0 * np.log10(fc)
    pl_nlos = 36.7 * np.log10(d) + 22.7 + 26.0 * np.log10(fc) - 0.3 * (params.ue_height_m - 1.5)
    out = np.where(los, pl_los, pl_nlos)
    return float(out) if out.ndim == 0 else out


def rsrp_dbm(powers_dbm, pl_db, params: RadioParams = RadioParams()):
    """Received power per (cell, UE); ``powers_dbm`` is indexed by cell."""
    p = np.asarray(powers_dbm, dtype=float)
    pl = np.asarray(pl_db, dtype=float)
    if pl.ndim == 2:
        p = p[:, None]
    return p + params.tx_gain_db + params.rx_gain_db - pl


def sinr_db(serving: int, powers_dbm, pl_db, params: RadioParams = RadioParams()) -> float:
    """SINR of one UE served by ``serving`` given per-cell powers and path losses.

    Interferers at -inf dBm contribute nothing.
    """
    rx_mw = dbm_to_mw(rsrp_dbm(powers_dbm, pl_db, params))
    interference = rx_mw.sum() - rx_mw[serving]
    return float(linear_to_db(rx_mw[serving] / (dbm_to_mw(params.noise_power_dbm) + interference)))


def sinr_matrix_db(rsrp: np.ndarray, params: RadioParams = RadioParams()) -> np.ndarray:
    """(M, N) SINR if each cell in turn were serving each UE."""
    rx_mw = dbm_to_mw(rsrp)
    total = rx_mw.sum(axis=0, keepdims=True)
    return linear_to_db(rx_mw / (dbm_to_mw(params.noise_power_dbm) + total - rx_mw))


def sinr_to_cqi(sinr, table=None):
    """Largest CQI whose SNR floor is <= ``sinr`` (floors are inclusive)."""
    floors = _floors(table or default_cqi_table())
    out = np.searchsorted(floors[1:], np.asarray(sinr, dtype=float), side="right")
    return int(out) if out.ndim == 0 else out


def cqi_to_rate_bps(cqi, bandwidth_hz: float = 20e6, table=None):
    eff = _efficiencies(table or default_cqi_table())
    out = bandwidth_hz * eff[np.asarray(cqi)]
    return float(out) if np.ndim(out) == 0 else out


def shannon_rate_bps(sinr_db_value, bandwidth_hz: float = 20e6):
    """Shannon capacity; kept for reference, rates use the CQI table."""
    return bandwidth_hz * np.log2(1.0 + db_to_linear(sinr_db_value))


# ---------------------------------------------------------------------------

@dataclass
class LinkState:
    """Per-(cell, UE) link quantities; every array is (M, N)."""

    d3d: np.ndarray
    los: np.ndarray
    pathloss_db: np.ndarray
    rsrp_dbm: np.ndarray
    sinr_db: np.ndarray
    cqi: np.ndarray
    rate_bps: np.ndarray


class LinkGeometry:
    """Power-independent part of the link budget for fixed UE positions.

    Caches distance, LoS and path loss so several power vectors can be
    scored against the same positions.
    """

    def __init__(self, ue_positions: np.ndarray, layout: RoomLayout, params: RadioParams):
        ue = np.asarray(ue_positions, dtype=float)
        self.params = params
        self.d3d = np.linalg.norm(layout.cells[:, None, :] - ue[None, :, :], axis=-1)
        self.los = los_matrix(layout.cells, ue, layout.panels)
        self.pathloss_db = pathloss_db(self.d3d, self.los, params)

    def links(self, powers_dbm) -> LinkState:
        rsrp = rsrp_dbm(powers_dbm, self.pathloss_db, self.params)
        sinr = sinr_matrix_db(rsrp, self.params)
        cqi = sinr_to_cqi(sinr)
        return LinkState(
            d3d=self.d3d,
            los=self.los,
            pathloss_db=self.pathloss_db,
            rsrp_dbm=rsrp,
            sinr_db=sinr,
            cqi=cqi,
            rate_bps=cqi_to_rate_bps(cqi, self.params.bandwidth_hz),
        )


def serving_cells(rsrp: np.ndarray) -> np.ndarray:
    """Strongest-RSRP cell per UE; ties go to the lowest cell index."""
    return np.argmax(rsrp, axis=0)


def ue_rates(links: LinkState, attach: np.ndarray) -> np.ndarray:
    """Full-bandwidth rate each UE gets from its serving cell (no sharing)."""
    return links.rate_bps[attach, np.arange(links.rate_bps.shape[1])]


def attach_ues(ue_positions, layout: RoomLayout, powers_dbm, params: RadioParams = RadioParams()):
    """Attach every UE to its max-RSRP cell; returns (attach, LinkState)."""
    links = LinkGeometry(ue_positions, layout, params).links(powers_dbm)
    return serving_cells(links.rsrp_dbm), links
