"""Scenario data model, configuration loading, coordinates and seeded streams.

Everything downstream reads an immutable :class:`Scenario`.  Randomness is
never drawn from a global generator: each consumer asks for a stream keyed by
``(master_seed, domain_tag, entity_id, step)`` so results do not depend on
evaluation order.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

EARTH_RADIUS = 6_371_000.0
THERMAL_NOISE_DBM_HZ = -174.0
N_BEAMS = 8

SCENARIO_CLASSES = ("Indoor", "UMi", "UMa")

# closed ranges for the steerable beam parameters
BEAM_LIMITS = {
    "azimuth_offset": (-60.0, 60.0),
    "electrical_tilt": (0.0, 15.0),
    "h_beamwidth": (15.0, 110.0),
    "v_beamwidth": (3.0, 30.0),
}
TX_POWER_LIMITS = (0.0, 53.0)


class ConfigError(ValueError):
    """Configuration document failed to parse or validate.

    ``path`` is a dotted location such as ``sites[0].cells[1].beams``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BeamConfig:
    azimuth_offset: float = 0.0
    electrical_tilt: float = 6.0
    h_beamwidth: float = 20.0
    v_beamwidth: float = 10.0

    def validate(self, path: str = "beam") -> None:
        for name, (lo, hi) in BEAM_LIMITS.items():
            v = getattr(self, name)
            if not (math.isfinite(v) and lo <= v <= hi):
                raise ConfigError(f"{path}.{name}", f"{v} outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return {
            "azimuth_offset": self.azimuth_offset,
            "electrical_tilt": self.electrical_tilt,
            "h_beamwidth": self.h_beamwidth,
            "v_beamwidth": self.v_beamwidth,
        }


def default_beams() -> tuple[BeamConfig, ...]:
    """Eight beams fanned across a 120 degree sector, 15 degrees apart."""
    return tuple(BeamConfig(azimuth_offset=-52.5 + 15.0 * i) for i in range(N_BEAMS))


@dataclass(frozen=True)
class CellConfig:
    cell_id: int
    mechanical_azimuth: float
    tx_power: float = 43.0
    carrier_freq: float = 3.5
    bandwidth: float = 100.0
    n_tx_antennas: int = 4
    max_gain: float = 17.0
    beams: tuple[BeamConfig, ...] = field(default_factory=default_beams)

    def to_dict(self) -> dict:
        return {
            "cell_id": self.cell_id,
            "mechanical_azimuth": self.mechanical_azimuth,
            "tx_power": self.tx_power,
            "carrier_freq": self.carrier_freq,
            "bandwidth": self.bandwidth,
            "n_tx_antennas": self.n_tx_antennas,
            "max_gain": self.max_gain,
            "beams": [b.to_dict() for b in self.beams],
        }


@dataclass(frozen=True)
class SiteConfig:
    site_id: int
    position: tuple[float, float]
    antenna_height: float
    cells: tuple[CellConfig, ...]

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "position": list(self.position),
            "antenna_height": self.antenna_height,
            "cells": [c.to_dict() for c in self.cells],
        }


@dataclass(frozen=True)
class TrafficProfile:
    session_rate: float = 2.0  # sessions / hour
    mean_session_packets: float = 20.0
    packet_size_log_mu: float = math.log(1000.0)
    packet_size_log_sigma: float = 1.0
    dl_fraction: float = 0.8
    packet_interval: float = 0.1  # mean gap between packets of a session, s
    full_buffer: bool = False

    def to_dict(self) -> dict:
        return {
            "session_rate": self.session_rate,
            "mean_session_packets": self.mean_session_packets,
            "packet_size_log_mu": self.packet_size_log_mu,
            "packet_size_log_sigma": self.packet_size_log_sigma,
            "dl_fraction": self.dl_fraction,
            "packet_interval": self.packet_interval,
            "full_buffer": self.full_buffer,
        }


@dataclass(frozen=True)
class PopulationSpec:
    n_users: int = 0
    speed_classes: tuple[tuple[float, float], ...] = ((1.5, 1.0),)
    traffic_profiles: tuple[tuple[TrafficProfile, float], ...] = ((TrafficProfile(), 1.0),)
    ue_noise_figure: float = 9.0
    ue_height: float = 1.5

    @property
    def speed_max(self) -> float:
        return max((s for s, _ in self.speed_classes), default=0.0)

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "speed_classes": [{"speed": s, "fraction": f} for s, f in self.speed_classes],
            "traffic_profiles": [dict(p.to_dict(), fraction=f) for p, f in self.traffic_profiles],
            "ue_noise_figure": self.ue_noise_figure,
            "ue_height": self.ue_height,
        }


@dataclass(frozen=True, eq=False)
class Region:
    origin_lat: float
    origin_lon: float
    cell_size: float
    width: int
    height: int
    clutter: np.ndarray  # (height, width) int codes, row 0 at the origin edge
    scenario_class: np.ndarray  # (height, width) indices into SCENARIO_CLASSES

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.cell_size, self.height * self.cell_size

    def contains(self, x, y) -> np.ndarray | bool:
        w, h = self.extent
        return (x >= 0) & (x <= w) & (y >= 0) & (y <= h)

    def raster_index(self, x, y) -> np.ndarray:
        """Flat raster index (row * width + col) of the grid cell holding (x, y)."""
        col = np.clip(np.floor(np.asarray(x, float) / self.cell_size), 0, self.width - 1).astype(np.int64)
        row = np.clip(np.floor(np.asarray(y, float) / self.cell_size), 0, self.height - 1).astype(np.int64)
        return row * self.width + col

    def grid_centers(self) -> tuple[np.ndarray, np.ndarray]:
        cols, rows = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return ((cols + 0.5) * self.cell_size).ravel(), ((rows + 0.5) * self.cell_size).ravel()

    def to_dict(self) -> dict:
        classes = self.scenario_class
        if np.all(classes == classes.flat[0]):
            cls_out: Any = SCENARIO_CLASSES[int(classes.flat[0])]
        else:
            cls_out = [[SCENARIO_CLASSES[int(v)] for v in row] for row in classes]
        return {
            "origin_lat": self.origin_lat,
            "origin_lon": self.origin_lon,
            "cell_size": self.cell_size,
            "width": self.width,
            "height": self.height,
            "clutter": self.clutter.astype(int).tolist(),
            "scenario_class": cls_out,
        }


@dataclass(frozen=True)
class RadioConfig:
    re_bandwidth_hz: float = 30e3
    rbs_per_cell: int = 273
    shadowing_sigma: dict = field(default_factory=lambda: {"Indoor": 8.0, "UMi": 7.8, "UMa": 6.0})
    # per class: (intercept dB, distance slope, frequency slope)
    pathloss: dict = field(
        default_factory=lambda: {
            "UMa": (28.0, 2.2, 2.0),
            "UMi": (32.4, 2.1, 2.0),
            "Indoor": (32.4, 1.73, 2.0),
        }
    )
    calibration: tuple[float, float] = (1.0, 0.0)
    clutter_loss_db: dict = field(default_factory=lambda: {0: 0.0, 1: 15.0})
    static_load: float = 1.0
    ue_antennas: int = 2
    bs_noise_figure: float = 5.0

    def to_dict(self) -> dict:
        return {
            "re_bandwidth_hz": self.re_bandwidth_hz,
            "rbs_per_cell": self.rbs_per_cell,
            "shadowing_sigma": dict(self.shadowing_sigma),
            "pathloss": {k: list(v) for k, v in self.pathloss.items()},
            "calibration": {"a": self.calibration[0], "b": self.calibration[1]},
            "clutter_loss_db": {str(k): v for k, v in self.clutter_loss_db.items()},
            "static_load": self.static_load,
            "ue_antennas": self.ue_antennas,
            "bs_noise_figure": self.bs_noise_figure,
        }


@dataclass(frozen=True, eq=False)
class Scenario:
    region: Region
    sites: tuple[SiteConfig, ...]
    population: PopulationSpec
    radio: RadioConfig
    master_seed: int

    @property
    def cells(self) -> list[CellConfig]:
        return [c for s in self.sites for c in s.cells]

    @property
    def n_cells(self) -> int:
        return sum(len(s.cells) for s in self.sites)

    def cell_sites(self) -> list[tuple[SiteConfig, CellConfig]]:
        return [(s, c) for s in self.sites for c in s.cells]

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, master_seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "region": self.region.to_dict(),
            "sites": [s.to_dict() for s in self.sites],
            "population": self.population.to_dict(),
            "radio": self.radio.to_dict(),
            "seed": self.master_seed,
        }

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(scenario_hash(self))


# ---------------------------------------------------------------------------
# parsing / validation
# ---------------------------------------------------------------------------


def _num(d: dict, key: str, path: str, default=None, cast=float):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}.{key}", "required field missing")
        return default
    try:
        v = cast(d[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {d[key]!r}") from None
    if isinstance(v, float) and not math.isfinite(v):
        raise ConfigError(f"{path}.{key}", "must be finite")
    return v


def _check_fractions(values: Sequence[float], path: str) -> None:
    if not values:
        raise ConfigError(path, "must not be empty")
    if any(f < 0 for f in values):
        raise ConfigError(path, "fractions must be non-negative")
    if abs(sum(values) - 1.0) > 1e-9:
        raise ConfigError(path, f"fractions sum to {sum(values)!r}, expected 1")


def parse_beam(d: dict, path: str) -> BeamConfig:
    if not isinstance(d, dict):
        raise ConfigError(path, "beam must be an object")
    base = BeamConfig()
    b = BeamConfig(
        azimuth_offset=_num(d, "azimuth_offset", path, base.azimuth_offset),
        electrical_tilt=_num(d, "electrical_tilt", path, base.electrical_tilt),
        h_beamwidth=_num(d, "h_beamwidth", path, base.h_beamwidth),
        v_beamwidth=_num(d, "v_beamwidth", path, base.v_beamwidth),
    )
    b.validate(path)
    return b


def parse_beams(raw, path: str) -> tuple[BeamConfig, ...]:
    if not isinstance(raw, list) or len(raw) != N_BEAMS:
        n = len(raw) if isinstance(raw, list) else "non-list"
        raise ConfigError(path, f"exactly {N_BEAMS} beams required, got {n}")
    return tuple(parse_beam(b, f"{path}[{i}]") for i, b in enumerate(raw))


def _parse_cell(d: dict, path: str) -> CellConfig:
    if "cell_id" not in d:
        raise ConfigError(f"{path}.cell_id", "required field missing")
    beams = parse_beams(d["beams"], f"{path}.beams") if "beams" in d else default_beams()
    cell = CellConfig(
        cell_id=int(d["cell_id"]),
        mechanical_azimuth=_num(d, "mechanical_azimuth", path, 0.0) % 360.0,
        tx_power=_num(d, "tx_power", path, 43.0),
        carrier_freq=_num(d, "carrier_freq", path, 3.5),
        bandwidth=_num(d, "bandwidth", path, 100.0),
        n_tx_antennas=_num(d, "n_tx_antennas", path, 4, int),
        max_gain=_num(d, "max_gain", path, 17.0),
        beams=beams,
    )
    lo, hi = TX_POWER_LIMITS
    if not lo <= cell.tx_power <= hi:
        raise ConfigError(f"{path}.tx_power", f"{cell.tx_power} outside [{lo}, {hi}] dBm")
    if cell.carrier_freq <= 0:
        raise ConfigError(f"{path}.carrier_freq", "must be > 0")
    if cell.bandwidth <= 0:
        raise ConfigError(f"{path}.bandwidth", "must be > 0")
    if cell.n_tx_antennas < 1:
        raise ConfigError(f"{path}.n_tx_antennas", "must be >= 1")
    return cell


def _parse_raster(raw, region: dict, base_dir: Path | None, path: str) -> np.ndarray:
    w, h = int(region["width"]), int(region["height"])
    if raw is None:
        return np.zeros((h, w), dtype=np.int64)
    if isinstance(raw, dict) and "csv" in raw:
        p = Path(raw["csv"])
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        try:
            with open(p, newline="") as fh:
                rows = [[int(v) for v in r] for r in csv.reader(fh) if r]
        except (OSError, ValueError) as exc:
            raise ConfigError(path, f"cannot read clutter CSV {p}: {exc}") from None
        raw = rows
    try:
        arr = np.asarray(raw, dtype=np.int64)
    except (TypeError, ValueError):
        raise ConfigError(path, "clutter must be a 2-D integer array") from None
    if arr.shape != (h, w):
        raise ConfigError(path, f"raster shape {arr.shape} != (height, width) = {(h, w)}")
    return arr


def _parse_classes(raw, h: int, w: int, path: str) -> np.ndarray:
    if raw is None:
        raw = "UMa"
    if isinstance(raw, str):
        if raw not in SCENARIO_CLASSES:
            raise ConfigError(path, f"unknown scenario class {raw!r}")
        return np.full((h, w), SCENARIO_CLASSES.index(raw), dtype=np.int64)
    try:
        out = np.array([[SCENARIO_CLASSES.index(v) for v in row] for row in raw], dtype=np.int64)
    except ValueError as exc:
        raise ConfigError(path, f"unknown scenario class ({exc})") from None
    except TypeError:
        raise ConfigError(path, "scenario_class must be a string or 2-D array of strings") from None
    if out.shape != (h, w):
        raise ConfigError(path, f"raster shape {out.shape} != (height, width) = {(h, w)}")
    return out


def _parse_region(d: dict, base_dir: Path | None) -> Region:
    path = "region"
    if not isinstance(d, dict):
        raise ConfigError(path, "must be an object")
    width = _num(d, "width", path, cast=int)
    height = _num(d, "height", path, cast=int)
    cell_size = _num(d, "cell_size", path)
    if width < 1 or height < 1:
        raise ConfigError(f"{path}.width", "width and height must be >= 1")
    if cell_size <= 0:
        raise ConfigError(f"{path}.cell_size", "must be > 0")
    origin_lat = _num(d, "origin_lat", path, 0.0)
    if abs(origin_lat) >= 85.0:
        raise ConfigError(f"{path}.origin_lat", "must satisfy |lat| < 85")
    return Region(
        origin_lat=origin_lat,
        origin_lon=_num(d, "origin_lon", path, 0.0),
        cell_size=cell_size,
        width=width,
        height=height,
        clutter=_parse_raster(d.get("clutter"), d, base_dir, f"{path}.clutter"),
        scenario_class=_parse_classes(d.get("scenario_class"), height, width, f"{path}.scenario_class"),
    )


def _parse_population(d: dict) -> PopulationSpec:
    path = "population"
    if not isinstance(d, dict):
        raise ConfigError(path, "must be an object")
    n_users = _num(d, "n_users", path, 0, int)
    if n_users < 0:
        raise ConfigError(f"{path}.n_users", "must be >= 0")
    base = PopulationSpec()
    speeds = base.speed_classes
    if "speed_classes" in d:
        speeds = []
        for i, s in enumerate(d["speed_classes"]):
            p = f"{path}.speed_classes[{i}]"
            v = _num(s, "speed", p)
            if v < 0:
                raise ConfigError(f"{p}.speed", "must be >= 0")
            speeds.append((v, _num(s, "fraction", p)))
        _check_fractions([f for _, f in speeds], f"{path}.speed_classes")
    profiles = base.traffic_profiles
    if "traffic_profiles" in d:
        profiles = []
        dflt = TrafficProfile()
        for i, t in enumerate(d["traffic_profiles"]):
            p = f"{path}.traffic_profiles[{i}]"
            prof = TrafficProfile(
                session_rate=_num(t, "session_rate", p, dflt.session_rate),
                mean_session_packets=_num(t, "mean_session_packets", p, dflt.mean_session_packets),
                packet_size_log_mu=_num(t, "packet_size_log_mu", p, dflt.packet_size_log_mu),
                packet_size_log_sigma=_num(t, "packet_size_log_sigma", p, dflt.packet_size_log_sigma),
                dl_fraction=_num(t, "dl_fraction", p, dflt.dl_fraction),
                packet_interval=_num(t, "packet_interval", p, dflt.packet_interval),
                full_buffer=bool(t.get("full_buffer", False)),
            )
            if prof.session_rate < 0:
                raise ConfigError(f"{p}.session_rate", "must be >= 0")
            if prof.mean_session_packets < 1:
                raise ConfigError(f"{p}.mean_session_packets", "must be >= 1")
            if prof.packet_size_log_sigma < 0:
                raise ConfigError(f"{p}.packet_size_log_sigma", "must be >= 0")
            if prof.packet_interval <= 0:
                raise ConfigError(f"{p}.packet_interval", "must be > 0")
            if not 0.0 <= prof.dl_fraction <= 1.0:
                raise ConfigError(f"{p}.dl_fraction", "must lie in [0, 1]")
            profiles.append((prof, _num(t, "fraction", p, 1.0)))
        _check_fractions([f for _, f in profiles], f"{path}.traffic_profiles")
    return PopulationSpec(
        n_users=n_users,
        speed_classes=tuple(speeds),
        traffic_profiles=tuple(profiles),
        ue_noise_figure=_num(d, "ue_noise_figure", path, base.ue_noise_figure),
        ue_height=_num(d, "ue_height", path, base.ue_height),
    )


def _parse_radio(d: dict | None) -> RadioConfig:
    path = "radio"
    d = d or {}
    base = RadioConfig()
    sigma = dict(base.shadowing_sigma)
    for k, v in d.get("shadowing_sigma", {}).items():
        if k not in SCENARIO_CLASSES:
            raise ConfigError(f"{path}.shadowing_sigma.{k}", "unknown scenario class")
        if float(v) < 0:
            raise ConfigError(f"{path}.shadowing_sigma.{k}", "must be >= 0")
        sigma[k] = float(v)
    pl = dict(base.pathloss)
    for k, v in d.get("pathloss", {}).items():
        if k not in SCENARIO_CLASSES:
            raise ConfigError(f"{path}.pathloss.{k}", "unknown scenario class")
        if isinstance(v, dict):
            v = (v["intercept"], v["distance_slope"], v["frequency_slope"])
        v = tuple(float(x) for x in v)
        if len(v) != 3 or v[1] <= 0:
            raise ConfigError(f"{path}.pathloss.{k}", "need (intercept, slope > 0, freq slope)")
        pl[k] = v
    cal = d.get("calibration", {"a": 1.0, "b": 0.0})
    a, b = float(cal.get("a", 1.0)), float(cal.get("b", 0.0))
    if a <= 0:
        raise ConfigError(f"{path}.calibration.a", "must be > 0")
    clutter = {int(k): float(v) for k, v in d.get("clutter_loss_db", {"0": 0.0, "1": 15.0}).items()}
    radio = RadioConfig(
        re_bandwidth_hz=_num(d, "re_bandwidth_hz", path, base.re_bandwidth_hz),
        rbs_per_cell=_num(d, "rbs_per_cell", path, base.rbs_per_cell, int),
        shadowing_sigma=sigma,
        pathloss=pl,
        calibration=(a, b),
        clutter_loss_db=clutter,
        static_load=_num(d, "static_load", path, base.static_load),
        ue_antennas=_num(d, "ue_antennas", path, base.ue_antennas, int),
        bs_noise_figure=_num(d, "bs_noise_figure", path, base.bs_noise_figure),
    )
    if radio.re_bandwidth_hz <= 0:
        raise ConfigError(f"{path}.re_bandwidth_hz", "must be > 0")
    if radio.rbs_per_cell < 1:
        raise ConfigError(f"{path}.rbs_per_cell", "must be >= 1")
    if not 0.0 <= radio.static_load <= 1.0:
        raise ConfigError(f"{path}.static_load", "must lie in [0, 1]")
    return radio


def parse_scenario(doc: dict, base_dir: Path | None = None) -> Scenario:
    """Build a validated :class:`Scenario` from a decoded configuration document."""
    if not isinstance(doc, dict):
        raise ConfigError("", "configuration must be a JSON object")
    for key in ("region", "sites"):
        if key not in doc:
            raise ConfigError(key, "required section missing")
    region = _parse_region(doc["region"], base_dir)
    if not isinstance(doc["sites"], list) or not doc["sites"]:
        raise ConfigError("sites", "at least one site required")
    sites = []
    seen: set[int] = set()
    for i, s in enumerate(doc["sites"]):
        path = f"sites[{i}]"
        pos = s.get("position")
        if isinstance(pos, dict) and "lat" in pos:
            pos = geo_to_local(float(pos["lat"]), float(pos["lon"]), region.origin_lat, region.origin_lon)
        if pos is None or len(pos) != 2:
            raise ConfigError(f"{path}.position", "expected [x, y] or {lat, lon}")
        x, y = float(pos[0]), float(pos[1])
        if not region.contains(x, y):
            raise ConfigError(f"{path}.position", f"({x}, {y}) outside region bounds")
        h = _num(s, "antenna_height", path, 25.0)
        if h <= 0:
            raise ConfigError(f"{path}.antenna_height", "must be > 0")
        if not s.get("cells"):
            raise ConfigError(f"{path}.cells", "at least one cell required")
        cells = []
        for j, c in enumerate(s["cells"]):
            cell = _parse_cell(c, f"{path}.cells[{j}]")
            if cell.cell_id in seen:
                raise ConfigError(f"{path}.cells[{j}].cell_id", f"duplicate cell_id {cell.cell_id}")
            seen.add(cell.cell_id)
            cells.append(cell)
        sites.append(SiteConfig(int(s.get("site_id", i)), (x, y), h, tuple(cells)))
    seed = doc.get("seed", 0)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError("seed", "must be an integer") from None
    return Scenario(
        region=region,
        sites=tuple(sites),
        population=_parse_population(doc.get("population", {})),
        radio=_parse_radio(doc.get("radio")),
        master_seed=seed,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed JSON in {path}: {exc}") from None
    return parse_scenario(doc, base_dir=path.parent)


def scenario_to_json(scn: Scenario) -> str:
    return json.dumps(scn.to_dict(), indent=1, sort_keys=True)


def write_scenario(scn: Scenario, path) -> None:
    Path(path).write_text(scenario_to_json(scn), encoding="utf-8")


def scenario_hash(scn: Scenario) -> str:
    return hashlib.sha256(scenario_to_json(scn).encode()).hexdigest()


def clone_doc(doc: dict) -> dict:
    return copy.deepcopy(doc)


# ---------------------------------------------------------------------------
# coordinates
# ---------------------------------------------------------------------------


def geo_to_local(lat, lon, origin_lat, origin_lon) -> tuple[float, float]:
    """Equirectangular projection about the origin; returns (x east, y north) in m."""
    if abs(lat) >= 85.0 or abs(origin_lat) >= 85.0:
        raise ValueError("latitude must satisfy |lat| < 85 degrees")
    k = math.pi / 180.0 * EARTH_RADIUS
    return (lon - origin_lon) * k * math.cos(math.radians(origin_lat)), (lat - origin_lat) * k


def local_to_geo(x, y, origin_lat, origin_lon) -> tuple[float, float]:
    if abs(origin_lat) >= 85.0:
        raise ValueError("latitude must satisfy |lat| < 85 degrees")
    k = math.pi / 180.0 * EARTH_RADIUS
    return origin_lat + y / k, origin_lon + x / (k * math.cos(math.radians(origin_lat)))


# ---------------------------------------------------------------------------
# keyed random streams
# ---------------------------------------------------------------------------


def _key_bytes(master_seed: int, domain_tag: str, entity_id: int, step: int) -> bytes:
    raw = f"{int(master_seed)}\x1f{domain_tag}\x1f{int(entity_id)}\x1f{int(step)}".encode()
    return hashlib.blake2b(raw, digest_size=16).digest()


def rng_stream(master_seed: int, domain_tag: str, entity_id: int = 0, step: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by the full tuple."""
    key = int.from_bytes(_key_bytes(master_seed, domain_tag, entity_id, step), "little")
    return np.random.Generator(np.random.Philox(key=key))


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def keyed_uniforms(master_seed: int, domain_tag: str, entity_ids, step: int = 0, draw: int = 0) -> np.ndarray:
    """One uniform in [0, 1) per entity id, stateless and vectorised.

    Value for a given (seed, tag, entity, step, draw) never depends on which
    other entities are evaluated alongside it.
    """
    base = np.frombuffer(_key_bytes(master_seed, domain_tag, 0, step)[:8], dtype="<u8")[0]
    ids = np.asarray(entity_ids, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = _splitmix(_splitmix(ids * np.uint64(2654435761) + np.uint64(draw) * _GOLDEN) ^ base)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def keyed_normals(master_seed: int, domain_tag: str, entity_ids, step: int = 0) -> np.ndarray:
    u1 = keyed_uniforms(master_seed, domain_tag, entity_ids, step, draw=0)
    u2 = keyed_uniforms(master_seed, domain_tag, entity_ids, step, draw=1)
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
