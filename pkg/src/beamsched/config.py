"""Scenario configuration: physical constants, experiment sizes and solver knobs."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

SPEED_OF_LIGHT = 299_792_458.0
ENV_PREFIX = "BEAMSCHED_"


class ConfigError(ValueError):
    """Invalid scenario configuration. ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def dbw_to_w(x: float) -> float:
    return 10.0 ** (x / 10.0)


def db_to_lin(x: float) -> float:
    return 10.0 ** (x / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    num_beams: int = 7
    users_per_beam: int = 15
    window_slots: int = 50
    bandwidth_mhz: float = 500.0
    carrier_freq_ghz: float = 19.95
    max_power_w: float = dbw_to_w(18.45)
    noise_variance_w: float = dbw_to_w(-118.3)
    rx_antenna_diameter_m: float = 0.6
    rx_antenna_efficiency: float = 0.6
    peak_beam_gain_dbi: float = 44.4
    orbit_distance_m: float = 35_786e3
    qos_rate_per_slot_mbps: float = 500.0
    qos_slots_range: tuple[int, int] = (0, 13)
    rng_seed: int = 0
    beam_pattern_source: str = "parametric"
    beam_radius_km: float = 150.0
    # scheduling / power knobs
    fixed_power_rule: str = "equal"  # "equal": P/|K|, "per_beam": P/M
    sus_alpha: float = 0.4
    nu_ignores_bandwidth: bool = False
    sca_eps_rel: float = 1e-3
    sca_max_iter: int = 50
    sca_power_tol: float = 1e-6
    # documentation only; the sum-power constraint is what is enforced
    per_beam_power_dbw: float = 10.0
    eirp_dbw_per_hz: float = -27.0

    def __post_init__(self) -> None:
        rng = self.qos_slots_range
        if not isinstance(rng, tuple):
            object.__setattr__(self, "qos_slots_range", tuple(int(v) for v in rng))
        self.validate()

    @property
    def num_users(self) -> int:
        return self.num_beams * self.users_per_beam

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / (self.carrier_freq_ghz * 1e9)

    @property
    def theta_3db_rad(self) -> float:
        return math.atan(self.beam_radius_km * 1e3 / self.orbit_distance_m)

    def validate(self) -> None:
        def positive(name: str) -> None:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(name, f"must be > 0, got {v!r}")

        for name in ("num_beams", "window_slots"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {v!r}")
        if not isinstance(self.users_per_beam, int) or self.users_per_beam < 0:
            raise ConfigError("users_per_beam", f"must be an integer >= 0, got {self.users_per_beam!r}")
        for name in (
            "bandwidth_mhz",
            "carrier_freq_ghz",
            "max_power_w",
            "noise_variance_w",
            "rx_antenna_diameter_m",
            "orbit_distance_m",
            "beam_radius_km",
            "sca_eps_rel",
            "sca_power_tol",
        ):
            positive(name)
        if not 0 < self.rx_antenna_efficiency <= 1:
            raise ConfigError("rx_antenna_efficiency", "must lie in (0, 1]")
        if self.qos_rate_per_slot_mbps < 0:
            raise ConfigError("qos_rate_per_slot_mbps", "must be >= 0")
        lo, hi = self.qos_slots_range
        if not (0 <= lo <= hi <= self.window_slots):
            raise ConfigError(
                "qos_slots_range",
                f"need 0 <= min <= max <= window_slots ({self.window_slots}), got {self.qos_slots_range}",
            )
        if self.fixed_power_rule not in ("equal", "per_beam"):
            raise ConfigError("fixed_power_rule", "must be 'equal' or 'per_beam'")
        if not 0 < self.sus_alpha <= 1:
            raise ConfigError("sus_alpha", "must lie in (0, 1]")
        if not isinstance(self.sca_max_iter, int) or self.sca_max_iter < 1:
            raise ConfigError("sca_max_iter", "must be an integer >= 1")
        if self.beam_pattern_source != "parametric" and not str(self.beam_pattern_source).endswith(".csv"):
            raise ConfigError("beam_pattern_source", "must be 'parametric' or a path to a .csv file")

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["qos_slots_range"] = list(self.qos_slots_range)
        return d


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _coerce(name: str, value: Any) -> Any:
    """Convert a raw (possibly string) value to the type of field ``name``."""
    default = getattr(ScenarioConfig, name, None)
    if name == "qos_slots_range":
        if isinstance(value, str):
            value = [v for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
        try:
            lo, hi = (int(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(name, f"expected two integers, got {value!r}") from None
        return (lo, hi)
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"cannot interpret {value!r}") from None


def config_from_mapping(data: Mapping[str, Any]) -> ScenarioConfig:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    kwargs = {k: _coerce(k, v) for k, v in data.items()}
    return ScenarioConfig(**kwargs)


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in _FIELD_TYPES:
                out[name] = value
    return out


def load_config(path: str | os.PathLike | None = None, environ: Mapping[str, str] | None = None) -> ScenarioConfig:
    """Read a flat key/value file (YAML or JSON) and apply ``BEAMSCHED_*`` env overrides.

    A ``preset: full`` or ``preset: desk`` key selects the base profile.
    """
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError("<file>", f"cannot parse {path}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("<file>", "config must be a flat mapping of key -> value")
        data.update(loaded)
    data.update(env_overrides(environ))
    preset = data.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}")
    base = PRESETS[preset].to_dict()
    base.update(data)
    return config_from_mapping(base)


DESK = ScenarioConfig()
FULL = ScenarioConfig(users_per_beam=110, window_slots=500)
PRESETS = {"desk": DESK, "full": FULL}
