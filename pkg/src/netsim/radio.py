"""Large-scale coverage: sub-beam gain, path loss, RSRP, SINR and SSB selection.

Conventions
-----------
* Azimuths are compass bearings (clockwise from +y / north), degrees.
* Elevation to a point is the depression angle seen from the antenna,
  ``atan2(antenna_height - ue_height, horizontal distance)``; a positive
  electrical tilt points the beam down.
* RSRP is per resource element: the cell's total power is spread evenly over
  ``rbs_per_cell * 12`` REs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    N_BEAMS,
    SCENARIO_CLASSES,
    THERMAL_NOISE_DBM_HZ,
    BeamConfig,
    CellConfig,
    RadioConfig,
    Scenario,
    keyed_normals,
)

PATTERN_FLOOR_DB = 30.0


def wrap_deg(a):
    """Wrap angle(s) into (-180, 180]."""
    w = np.mod(np.asarray(a, dtype=float) + 180.0, 360.0) - 180.0
    w = np.where(w == -180.0, 180.0, w)
    return float(w) if w.ndim == 0 else w


def beam_gain(beam: BeamConfig, cell: CellConfig, az_to_point, el_to_point):
    """Gain (dBi) of one sub-beam toward a direction; works on scalars or arrays."""
    dphi = wrap_deg(np.asarray(az_to_point, float) - cell.mechanical_azimuth - beam.azimuth_offset)
    dtheta = np.asarray(el_to_point, float) - beam.electrical_tilt
    a_h = -np.minimum(12.0 * (dphi / beam.h_beamwidth) ** 2, PATTERN_FLOOR_DB)
    a_v = -np.minimum(12.0 * (dtheta / beam.v_beamwidth) ** 2, PATTERN_FLOOR_DB)
    g = cell.max_gain - np.minimum(-(a_h + a_v), PATTERN_FLOOR_DB)
    return float(g) if np.ndim(g) == 0 else g


@dataclass(frozen=True)
class PathLossModel:
    coeffs: dict = field(default_factory=lambda: dict(RadioConfig().pathloss))
    sigma: dict = field(default_factory=lambda: dict(RadioConfig().shadowing_sigma))
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("calibration scale must be > 0")
        for cls, (_, alpha, _) in self.coeffs.items():
            if alpha <= 0:
                raise ValueError(f"{cls}: distance slope must be > 0")
        if any(s < 0 for s in self.sigma.values()):
            raise ValueError("shadowing sigma must be >= 0")

    @classmethod
    def from_radio(cls, radio: RadioConfig) -> "PathLossModel":
        a, b = radio.calibration
        return cls(dict(radio.pathloss), dict(radio.shadowing_sigma), a, b)

    def raw(self, scenario_class, d3d, freq):
        """Uncalibrated log-distance loss in dB."""
        beta, alpha, gamma = self.coeffs[_class_name(scenario_class)]
        return beta + alpha * 10.0 * np.log10(d3d) + gamma * 10.0 * np.log10(freq)

    def raw_by_index(self, class_idx: np.ndarray, d3d, freq):
        tab = np.array([self.coeffs[c] for c in SCENARIO_CLASSES])
        beta, alpha, gamma = tab[class_idx].T
        return beta + alpha * 10.0 * np.log10(d3d) + gamma * 10.0 * np.log10(freq)

    def sigma_by_index(self, class_idx: np.ndarray) -> np.ndarray:
        return np.array([self.sigma[c] for c in SCENARIO_CLASSES])[class_idx]


def _class_name(c) -> str:
    return SCENARIO_CLASSES[c] if isinstance(c, (int, np.integer)) else str(c)


def path_loss(model: PathLossModel, scenario_class, d3d: float, freq: float, stream=None) -> tuple[float, float]:
    """Calibrated loss and a shadowing sample (0 when ``stream`` is None)."""
    if not d3d >= 1.0:
        raise ValueError(f"d3d must be >= 1 m, got {d3d}")
    loss = model.a * float(model.raw(scenario_class, d3d, freq)) + model.b
    shadow = 0.0
    if stream is not None:
        shadow = float(stream.normal(0.0, model.sigma[_class_name(scenario_class)]))
    return loss, shadow


def re_power(cell: CellConfig, n_re: int) -> float:
    """Transmit power per RE, dBm."""
    return cell.tx_power - 10.0 * math.log10(n_re)


def rsrp(cell: CellConfig, beam: BeamConfig, az_to_point, el_to_point, loss, n_re: int, shadow=0.0):
    return re_power(cell, n_re) + beam_gain(beam, cell, az_to_point, el_to_point) - loss - shadow


def best_beam(per_beam_rsrp: Sequence[float]) -> int:
    v = np.asarray(per_beam_rsrp, dtype=float)
    if v.shape != (N_BEAMS,):
        raise ValueError(f"expected {N_BEAMS} beam values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("beam RSRP values must be finite")
    return int(np.argmax(v))


def noise_per_re(re_bandwidth_hz: float, noise_figure: float) -> float:
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(re_bandwidth_hz) + noise_figure


def db2lin(x):
    return np.power(10.0, np.asarray(x, float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(x)


def sinr(serving_rsrp: float, interferers: Sequence[float], noise: float, load_factors: Sequence[float]) -> float:
    if len(interferers) != len(load_factors):
        raise ValueError("interferers and load_factors differ in length")
    i_lin = float(np.sum(np.asarray(load_factors, float) * db2lin(interferers))) if len(interferers) else 0.0
    return float(lin2db(db2lin(serving_rsrp) / (i_lin + db2lin(noise))))


# ---------------------------------------------------------------------------
# coverage over many points
# ---------------------------------------------------------------------------


@dataclass
class CoverageFrame:
    step: int
    cell_ids: list[int]
    rsrp: np.ndarray  # (P, C, 8) dBm
    serving_cell: np.ndarray  # (P,) index into cell_ids
    serving_beam: np.ndarray  # (P,)
    sinr: np.ndarray  # (P,) dB, for the serving cell
    cell_best_beam: np.ndarray  # (P, C)
    cell_rsrp: np.ndarray  # (P, C) best-beam RSRP per cell
    noise: float  # dBm per RE

    @property
    def serving_rsrp(self) -> np.ndarray:
        p = np.arange(len(self.serving_cell))
        return self.rsrp[p, self.serving_cell, self.serving_beam]

    def sinr_for(self, cell_idx: np.ndarray, loads) -> np.ndarray:
        """SINR (dB) if each point were served by ``cell_idx`` (best beam of that cell)."""
        return _sinr_matrix(self.cell_rsrp, np.asarray(cell_idx), np.asarray(loads, float), self.noise)


def _sinr_matrix(cell_rsrp: np.ndarray, serving: np.ndarray, loads: np.ndarray, noise: float) -> np.ndarray:
    p = np.arange(cell_rsrp.shape[0])
    lin = db2lin(cell_rsrp)
    s = lin[p, serving]
    weighted = lin * loads[None, :]
    weighted[p, serving] = 0.0
    return lin2db(s / (weighted.sum(axis=1) + db2lin(noise)))


def resolve_beams(scenario: Scenario, beams=None) -> dict[int, tuple[BeamConfig, ...]]:
    """Per-cell beam sets: configured ones overridden by ``beams`` (mapping or Action)."""
    out = {c.cell_id: c.beams for c in scenario.cells}
    if beams is None:
        return out
    mapping = getattr(beams, "beams", beams)
    for cid, bs in mapping.items():
        out[int(cid)] = tuple(bs)
    return out


def _as_points(scenario: Scenario, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ValueError("points must be non-empty")
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ValueError("points must be (n, 2) or (n, 3)")
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.full(len(pts), scenario.population.ue_height)])
    return pts


def link_geometry(site, pts: np.ndarray):
    """(d3d, azimuth, elevation) from a site to each point; d3d floored at 1 m."""
    dx = pts[:, 0] - site.position[0]
    dy = pts[:, 1] - site.position[1]
    d2d = np.hypot(dx, dy)
    dh = site.antenna_height - pts[:, 2]
    d3d = np.maximum(np.sqrt(d2d**2 + dh**2), 1.0)
    az = np.mod(np.degrees(np.arctan2(dx, dy)), 360.0)
    el = np.degrees(np.arctan2(dh, d2d))
    return d3d, az, el


def clutter_loss(scenario: Scenario, codes: np.ndarray) -> np.ndarray:
    """Extra loss per clutter code; unknown codes add nothing."""
    lut = scenario.radio.clutter_loss_db
    uniq, inv = np.unique(codes, return_inverse=True)
    return np.array([lut.get(int(c), 0.0) for c in uniq])[inv].reshape(np.shape(codes))


def shadow_field(scenario: Scenario, cell_id: int, raster_idx: np.ndarray, class_idx: np.ndarray, model) -> np.ndarray:
    """Shadowing (dB) frozen per (raster cell, serving cell)."""
    z = keyed_normals(scenario.master_seed, f"shadow/{cell_id}", raster_idx)
    return z * model.sigma_by_index(class_idx)


def coverage_frame(
    scenario: Scenario,
    points,
    beams=None,
    step: int = 0,
    loads=None,
    shadowing: bool = True,
    model: PathLossModel | None = None,
) -> CoverageFrame:
    """RSRP for every (point, cell, beam); serving = global strongest; SINR vs. loaded neighbours."""
    pts = _as_points(scenario, points)
    model = model or PathLossModel.from_radio(scenario.radio)
    beam_sets = resolve_beams(scenario, beams)
    reg = scenario.region
    ridx = reg.raster_index(pts[:, 0], pts[:, 1])
    cls = reg.scenario_class.ravel()[ridx]
    clutter_codes = reg.clutter.ravel()[ridx]
    clutter_db = clutter_loss(scenario, clutter_codes)
    n_re = scenario.radio.rbs_per_cell * 12

    cells = scenario.cell_sites()
    P, C = len(pts), len(cells)
    out = np.empty((P, C, N_BEAMS))
    for ci, (site, cell) in enumerate(cells):
        d3d, az, el = link_geometry(site, pts)
        loss = model.a * model.raw_by_index(cls, d3d, cell.carrier_freq) + model.b + clutter_db
        if shadowing:
            loss = loss + shadow_field(scenario, cell.cell_id, ridx, cls, model)
        base = re_power(cell, n_re) - loss
        for bi, beam in enumerate(beam_sets[cell.cell_id]):
            out[:, ci, bi] = base + beam_gain(beam, cell, az, el)

    flat = out.reshape(P, C * N_BEAMS)
    best = np.argmax(flat, axis=1)
    serving_cell, serving_beam = np.divmod(best, N_BEAMS)
    cell_best = np.argmax(out, axis=2)
    cell_rsrp = np.take_along_axis(out, cell_best[:, :, None], axis=2)[:, :, 0]
    if loads is None:
        loads = np.full(C, scenario.radio.static_load)
    noise = noise_per_re(scenario.radio.re_bandwidth_hz, scenario.population.ue_noise_figure)
    s = _sinr_matrix(cell_rsrp, serving_cell, np.asarray(loads, float), noise)
    return CoverageFrame(
        step=step,
        cell_ids=[c.cell_id for _, c in cells],
        rsrp=out,
        serving_cell=serving_cell,
        serving_beam=serving_beam,
        sinr=s,
        cell_best_beam=cell_best,
        cell_rsrp=cell_rsrp,
        noise=noise,
    )


def grid_frame(scenario: Scenario, beams=None, loads=None, shadowing: bool = True) -> CoverageFrame:
    """Coverage at every raster-cell centre (point id = flat raster index)."""
    x, y = scenario.region.grid_centers()
    return coverage_frame(scenario, np.column_stack([x, y]), beams, 0, loads, shadowing)


def calibrate(model: PathLossModel, measurements) -> PathLossModel:
    """Least-squares affine correction ``observed ~ a * PL_model + b``.

    ``measurements`` is an iterable of (d3d, freq, scenario_class, observed_loss).
    """
    meas = list(measurements)
    if len(meas) < 2:
        raise ValueError("need at least 2 measurements to calibrate")
    pred = np.array([float(model.raw(c, d, f)) for d, f, c, _ in meas])
    obs = np.array([float(m[3]) for m in meas])
    if np.ptp(pred) == 0:
        raise ValueError("degenerate calibration: all model predictions identical")
    xm, ym = pred.mean(), obs.mean()
    a = float(np.dot(pred - xm, obs - ym) / np.dot(pred - xm, pred - xm))
    b = float(ym - a * xm)
    if a <= 0:
        raise ValueError(f"fitted scale {a} is not positive")
    return replace(model, a=a, b=b)
