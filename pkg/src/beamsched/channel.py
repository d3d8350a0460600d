"""User geometry, satellite beam gains and the downlink channel matrix."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import jv

from .config import ConfigError, ScenarioConfig, db_to_lin

# u = BESSEL_U_3DB * sin(theta) / sin(theta_3dB) puts the -3 dB point at theta_3dB
BESSEL_U_3DB = 2.07123
PATTERN_FLOOR_DB = -40.0


class OutOfGridError(ValueError):
    pass


@dataclass(frozen=True)
class UserTerminal:
    id: int
    beam_id: int
    position: tuple[float, float]  # km from the sub-satellite point
    rx_gain: float
    beam_gains: np.ndarray  # linear, one entry per beam
    distance: float  # m, identical for every beam
    phase: float  # rad in [0, 2pi)


@dataclass(frozen=True)
class ChannelMatrix:
    amplitude: np.ndarray  # B, real M x K
    phases: np.ndarray  # diagonal of Phi, unit modulus, length K
    column_user_ids: tuple[int, ...]

    @property
    def H(self) -> np.ndarray:
        return self.amplitude * self.phases[None, :]

    @property
    def Phi(self) -> np.ndarray:
        return np.diag(self.phases)

    @property
    def shape(self) -> tuple[int, int]:
        return self.amplitude.shape


def rx_antenna_gain(diameter: float, efficiency: float, carrier_freq_ghz: float) -> float:
    """Parabolic dish gain eta * (pi D / lambda)^2 (linear)."""
    if diameter <= 0 or efficiency <= 0 or carrier_freq_ghz <= 0:
        raise ValueError("diameter, efficiency and frequency must be positive")
    lam = 299_792_458.0 / (carrier_freq_ghz * 1e9)
    return efficiency * (math.pi * diameter / lam) ** 2


def bessel_pattern(theta: np.ndarray | float, theta_3db: float) -> np.ndarray:
    """Normalised tapered-aperture pattern in (0, 1], 1 on boresight, floored at -40 dB."""
    theta = np.abs(np.asarray(theta, dtype=float))
    u = BESSEL_U_3DB * np.sin(theta) / math.sin(theta_3db)
    small = u < 1e-6
    us = np.where(small, 1.0, u)
    amp = jv(1, us) / (2 * us) + 36 * jv(3, us) / us**3
    g = np.where(small, 1.0, amp**2)
    return np.maximum(g, db_to_lin(PATTERN_FLOOR_DB))


def off_axis_angle(user_xy: np.ndarray, center_xy: np.ndarray, orbit_distance_m: float) -> np.ndarray:
    """Angle at the satellite between the beam boresight and the user (flat earth)."""
    d_km = orbit_distance_m / 1e3
    user_xy = np.atleast_2d(np.asarray(user_xy, dtype=float))
    u = np.column_stack([user_xy, np.full(len(user_xy), -d_km)])
    c = np.array([center_xy[0], center_xy[1], -d_km], dtype=float)
    cross = np.linalg.norm(np.cross(u, c), axis=1)
    return np.arctan2(cross, u @ c)


def hex_centers(num_beams: int, spacing_km: float) -> np.ndarray:
    """First ``num_beams`` centres of a hexagonal lattice, spiralling out from the origin."""
    dirs = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)]
    axial = [(0, 0)]
    ring = 1
    while len(axial) < num_beams:
        q, r = -ring, ring  # start corner of the ring
        for dq, dr in dirs:
            for _ in range(ring):
                axial.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    axial = np.array(axial[:num_beams], dtype=float)
    x = spacing_km * (axial[:, 0] + axial[:, 1] / 2)
    y = spacing_km * (math.sqrt(3) / 2) * axial[:, 1]
    return np.column_stack([x, y])


def beam_centers(config: ScenarioConfig) -> np.ndarray:
    return hex_centers(config.num_beams, 2 * config.beam_radius_km)


class CsvBeamPattern:
    """Per-beam gain grids imported from ``x_km,y_km,beam_id,gain_dbi`` rows."""

    def __init__(self, grids: dict[int, RegularGridInterpolator]):
        self._grids = grids

    @classmethod
    def from_csv(cls, path: str | Path) -> "CsvBeamPattern":
        rows: dict[int, list[tuple[float, float, float]]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = ["x_km", "y_km", "beam_id", "gain_dbi"]
            if reader.fieldnames != expected:
                raise ConfigError("beam_pattern_source", f"{path}: header must be {','.join(expected)}")
            for row in reader:
                rows.setdefault(int(row["beam_id"]), []).append(
                    (float(row["x_km"]), float(row["y_km"]), float(row["gain_dbi"]))
                )
        grids = {}
        for beam, pts in rows.items():
            arr = np.array(pts)
            xs = np.unique(arr[:, 0])
            ys = np.unique(arr[:, 1])
            if len(xs) * len(ys) != len(arr) or len(xs) < 2 or len(ys) < 2:
                raise ConfigError("beam_pattern_source", f"{path}: beam {beam} is not a full rectangular grid")
            vals = np.full((len(xs), len(ys)), np.nan)
            vals[np.searchsorted(xs, arr[:, 0]), np.searchsorted(ys, arr[:, 1])] = arr[:, 2]
            grids[beam] = RegularGridInterpolator((xs, ys), vals, method="linear", bounds_error=True)
        return cls(grids)

    @property
    def beam_ids(self) -> list[int]:
        return sorted(self._grids)

    def gain_dbi(self, beam_id: int, xy: np.ndarray) -> np.ndarray:
        try:
            grid = self._grids[beam_id]
        except KeyError:
            raise OutOfGridError(f"no pattern grid for beam {beam_id}") from None
        try:
            return grid(np.atleast_2d(xy))
        except ValueError as exc:
            raise OutOfGridError(f"beam {beam_id}: position outside imported grid ({exc})") from None


@lru_cache(maxsize=8)
def _load_csv_pattern(path: str) -> CsvBeamPattern:
    return CsvBeamPattern.from_csv(path)


def beam_gain(
    user_position: Sequence[float] | np.ndarray,
    beam_center: Sequence[float] | np.ndarray,
    config: ScenarioConfig,
    beam_id: int | None = None,
) -> np.ndarray | float:
    """Linear satellite antenna gain of beam ``beam_id`` towards ``user_position``.

    Accepts a single (x, y) position or an (n, 2) array of them.
    """
    pos = np.asarray(user_position, dtype=float)
    single = pos.ndim == 1
    if config.beam_pattern_source == "parametric":
        theta = off_axis_angle(pos, np.asarray(beam_center, dtype=float), config.orbit_distance_m)
        g = db_to_lin(config.peak_beam_gain_dbi) * bessel_pattern(theta, config.theta_3db_rad)
    else:
        if beam_id is None:
            raise ValueError("csv beam patterns need a beam_id")
        pattern = _load_csv_pattern(str(config.beam_pattern_source))
        g = db_to_lin(pattern.gain_dbi(beam_id, pos))
    return float(g[0]) if single else g


def generate_users(config: ScenarioConfig, rng: np.random.Generator) -> list[UserTerminal]:
    """Drop ``users_per_beam`` users uniformly on each beam's 3 dB disc."""
    config.validate()
    centers = beam_centers(config)
    n_per = config.users_per_beam
    if n_per == 0:
        return []
    g_rx = rx_antenna_gain(config.rx_antenna_diameter_m, config.rx_antenna_efficiency, config.carrier_freq_ghz)
    M = config.num_beams
    beam_of = np.repeat(np.arange(M), n_per)
    r = config.beam_radius_km * np.sqrt(rng.uniform(size=beam_of.size))
    ang = rng.uniform(0.0, 2 * np.pi, size=beam_of.size)
    xy = centers[beam_of] + np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    psi = rng.uniform(0.0, 2 * np.pi, size=beam_of.size)

    gains = np.empty((beam_of.size, M))
    for m in range(M):
        gains[:, m] = beam_gain(xy, centers[m], config, beam_id=m)

    return [
        UserTerminal(
            id=k,
            beam_id=int(beam_of[k]),
            position=(float(xy[k, 0]), float(xy[k, 1])),
            rx_gain=g_rx,
            beam_gains=gains[k],
            distance=config.orbit_distance_m,
            phase=float(psi[k]),
        )
        for k in range(beam_of.size)
    ]


def amplitude_vector(user: UserTerminal, config: ScenarioConfig) -> np.ndarray:
    # b_mk = lambda sqrt(G_R G_mk) / (4 pi d_mk)
    return config.wavelength_m * np.sqrt(user.rx_gain * user.beam_gains) / (4 * math.pi * user.distance)


def channel_vector(user: UserTerminal, config: ScenarioConfig) -> np.ndarray:
    return amplitude_vector(user, config) * np.exp(1j * user.phase)


def channel_matrix(users: Sequence[UserTerminal], config: ScenarioConfig) -> ChannelMatrix:
    """Stack channel vectors column-wise in the given (scheduling) order."""
    if len(users) == 0:
        raise ValueError("channel_matrix needs at least one user")
    B = np.column_stack([amplitude_vector(u, config) for u in users])
    phases = np.exp(1j * np.array([u.phase for u in users]))
    return ChannelMatrix(amplitude=B, phases=phases, column_user_ids=tuple(u.id for u in users))
