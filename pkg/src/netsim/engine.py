"""Combination emulators, reward, and the reset/step episode engine.

Time runs in steps of ``step_seconds`` (300 s by default).  ``Engine.reset``
returns a preview observation of step 0 under the configured beams, computed
with the coverage-only kernel; each ``Engine.step(action)`` then simulates the
next step under ``action`` and returns its :class:`KpiFrame`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import behavior, radio, stack
from .channel import ChannelGrid, GridSpec, MultipathProfile, apply_large_scale, draw_multipath, freq_response
from .core import (
    BEAM_LIMITS,
    N_BEAMS,
    SCENARIO_CLASSES,
    ConfigError,
    Scenario,
    load_scenario,
    parse_beams,
    parse_scenario,
    rng_stream,
)

METRICS = ("rsrp", "sinr", "users", "traffic", "rate")


class Mode(str, Enum):
    STACK = "stack"
    COVERAGE = "coverage"


class ActionError(ValueError):
    pass


class EpisodeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    """Eight beam settings for every cell."""

    beams: dict  # cell_id -> tuple of 8 BeamConfig

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "Action":
        return cls({c.cell_id: tuple(c.beams) for c in scenario.cells})

    @classmethod
    def from_dict(cls, doc: dict) -> "Action":
        try:
            cells = doc["cells"]
        except (KeyError, TypeError):
            raise ActionError("action must be an object with a 'cells' list") from None
        beams = {}
        for i, c in enumerate(cells):
            try:
                cid = int(c["cell_id"])
            except (KeyError, TypeError, ValueError):
                raise ActionError(f"cells[{i}].cell_id missing or not an integer") from None
            if cid in beams:
                raise ActionError(f"cell {cid} appears twice")
            try:
                beams[cid] = parse_beams(c.get("beams"), f"cell {cid}.beams")
            except ConfigError as exc:
                raise ActionError(_beam_error_text(cid, exc)) from None
        return cls(beams)

    def to_dict(self) -> dict:
        return {
            "cells": [{"cell_id": cid, "beams": [b.to_dict() for b in bs]} for cid, bs in self.beams.items()]
        }

    def validate(self, scenario: Scenario) -> None:
        want = [c.cell_id for c in scenario.cells]
        if sorted(self.beams) != sorted(want):
            missing = sorted(set(want) - set(self.beams))
            extra = sorted(set(self.beams) - set(want))
            raise ActionError(f"action must cover every cell exactly once (missing {missing}, unknown {extra})")
        for cid, bs in self.beams.items():
            if len(bs) != N_BEAMS:
                raise ActionError(f"cell {cid}: expected {N_BEAMS} beams, got {len(bs)}")
            for bi, b in enumerate(bs):
                for name, (lo, hi) in BEAM_LIMITS.items():
                    v = getattr(b, name)
                    if not (math.isfinite(v) and lo <= v <= hi):
                        raise ActionError(f"cell {cid} beam {bi} {name}={v} outside [{lo}, {hi}]")

    def with_value(self, cell_id: int, beam_ids: Sequence[int], name: str, value: float) -> "Action":
        beams = dict(self.beams)
        bs = list(beams[cell_id])
        for bi in beam_ids:
            bs[bi] = replace(bs[bi], **{name: float(value)})
        beams[cell_id] = tuple(bs)
        return Action(beams)

    def digest(self) -> str:
        return hashlib.sha1(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


def _beam_error_text(cid: int, exc: ConfigError) -> str:
    # "cell 3.beams[2].electrical_tilt" -> "cell 3 beam 2 electrical_tilt"
    path = exc.path.replace(".beams[", " beam ").replace("].", " ")
    return f"{path}: {str(exc).split(': ', 1)[-1]}"


# ---------------------------------------------------------------------------
# reward
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardWeights:
    w_rsrp: float = 1.0
    w_sinr: float = 1.0
    w_users: float = 1.0
    w_traffic: float = 1.0
    w_rate: float = 1.0
    anchors: dict = field(default_factory=dict)  # metric -> (lo, hi); missing ones filled per scenario

    def __post_init__(self):
        ws = self.as_tuple()
        if any(w < 0 or not math.isfinite(w) for w in ws):
            raise ValueError("reward weights must be finite and non-negative")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one reward weight must be > 0")
        for m, (lo, hi) in self.anchors.items():
            if m not in METRICS:
                raise ValueError(f"unknown metric {m!r}")
            if not hi > lo:
                raise ValueError(f"anchor for {m}: hi must exceed lo")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.w_rsrp, self.w_sinr, self.w_users, self.w_traffic, self.w_rate)

    @classmethod
    def parse(cls, text: str) -> "RewardWeights":
        vals = [float(v) for v in text.split(",")]
        if len(vals) != 5:
            raise ValueError("weights need five comma-separated values: rsrp,sinr,users,traffic,rate")
        return cls(*vals)

    def scaled(self, c: float) -> "RewardWeights":
        return RewardWeights(*(w * c for w in self.as_tuple()), anchors=dict(self.anchors))

    def to_dict(self) -> dict:
        return {
            "rsrp": self.w_rsrp,
            "sinr": self.w_sinr,
            "users": self.w_users,
            "traffic": self.w_traffic,
            "rate": self.w_rate,
            "anchors": {k: list(v) for k, v in self.anchors.items()},
        }

    @classmethod
    def from_obj(cls, obj) -> "RewardWeights":
        if obj is None:
            return cls()
        if isinstance(obj, str):
            return cls.parse(obj)
        if isinstance(obj, (list, tuple)):
            return cls(*[float(v) for v in obj])
        anchors = {k: tuple(float(x) for x in v) for k, v in obj.get("anchors", {}).items()}
        return cls(*(float(obj.get(m, 1.0)) for m in METRICS), anchors=anchors)


def reward(aggregates: dict, weights: RewardWeights, anchors: dict) -> float:
    """Weighted sum of min-max normalised metrics, each clamped to [0, 1].

    Metrics without samples (no users) contribute 0.
    """
    vals = {
        "rsrp": aggregates["mean_rsrp_dbm"],
        "sinr": aggregates["mean_sinr_db"],
        "users": aggregates["total_users"],
        "traffic": aggregates["total_traffic_bytes"],
        "rate": aggregates["mean_user_rate_bps"],
    }
    has_samples = aggregates.get("n_measured", 1) > 0
    total = 0.0
    for w, m in zip(weights.as_tuple(), METRICS):
        if w == 0:
            continue
        if m in ("rsrp", "sinr") and not has_samples:
            continue
        lo, hi = anchors[m]
        total += w * min(max((vals[m] - lo) / (hi - lo), 0.0), 1.0)
    return total


# ---------------------------------------------------------------------------
# episode spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StackParams:
    policy: str = "pf"
    n_tti: int = 100
    slot_duration: float = 0.5e-3
    symbols_per_slot: int = 14
    hysteresis_db: float = 3.0
    ttt_s: float | None = None  # None -> one step
    q_rxlevmin: float = -120.0
    max_users_per_cell: int = 200
    p0_dbm: float = -90.0
    alpha: float = 0.8
    p_max_dbm: float = 23.0
    harq_max_tx: int = 4

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class EpisodeSpec:
    scenario: Scenario
    horizon_steps: int = 288
    step_seconds: float = 300.0
    weights: RewardWeights = field(default_factory=RewardWeights)
    mode: Mode = Mode.STACK
    stack: StackParams = field(default_factory=StackParams)
    per_user: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps", "must be >= 1")
        if not self.step_seconds > 0:
            raise ConfigError("step_seconds", "must be > 0")
        if self.stack.policy not in ("rr", "pf"):
            raise ConfigError("stack.policy", "must be 'rr' or 'pf'")
        if self.stack.n_tti < 1:
            raise ConfigError("stack.n_tti", "must be >= 1")

    @property
    def horizon_seconds(self) -> float:
        return self.horizon_steps * self.step_seconds

    @property
    def ttt(self) -> float:
        return self.stack.ttt_s if self.stack.ttt_s is not None else self.step_seconds

    def anchors(self) -> dict:
        out = {
            "rsrp": (-120.0, -80.0),
            "sinr": (-5.0, 25.0),
            "users": (0.0, float(max(self.scenario.population.n_users, 1))),
            "traffic": (0.0, self._traffic_anchor()),
            "rate": (0.0, 200e6),
        }
        out.update(self.weights.anchors)
        return out

    def _traffic_anchor(self) -> float:
        pop = self.scenario.population
        offered = 0.0
        peak_user = SUBCARRIERS_RB_BYTES * self.scenario.radio.rbs_per_cell * self.symbols_per_step
        for prof, frac in pop.traffic_profiles:
            n = pop.n_users * frac
            if prof.full_buffer:
                offered += n * peak_user
            else:
                mean_size = math.exp(prof.packet_size_log_mu + prof.packet_size_log_sigma**2 / 2)
                offered += n * prof.session_rate / 3600.0 * self.step_seconds * prof.mean_session_packets * mean_size
        return max(2.0 * offered, 1.0)

    @property
    def tti_duration(self) -> float:
        """Real time each representative TTI stands for."""
        return self.step_seconds / self.stack.n_tti

    @property
    def symbols_per_step(self) -> float:
        return self.stack.symbols_per_slot * self.step_seconds / self.stack.slot_duration

    def with_mode(self, mode) -> "EpisodeSpec":
        return replace(self, mode=Mode(mode))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "horizon_steps": self.horizon_steps,
            "step_seconds": self.step_seconds,
            "weights": self.weights.to_dict(),
            "mode": self.mode.value,
            "stack": self.stack.to_dict(),
            "per_user": self.per_user,
        }

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "EpisodeSpec":
        if not isinstance(doc, dict) or "scenario" not in doc:
            raise ConfigError("scenario", "episode spec needs a scenario (inline object or path)")
        scn = doc["scenario"]
        if isinstance(scn, str):
            p = Path(scn)
            scenario = load_scenario(p if p.is_absolute() or base_dir is None else base_dir / p)
        else:
            scenario = parse_scenario(scn, base_dir)
        if "seed_override" in doc:
            scenario = scenario.with_seed(int(doc["seed_override"]))
        mode = doc.get("mode", "stack")
        mode = {"ProtocolStack": "stack", "CoverageOnly": "coverage"}.get(mode, mode)
        try:
            stack_params = StackParams(**doc.get("stack", {}))
        except TypeError as exc:
            raise ConfigError("stack", str(exc)) from None
        try:
            weights = RewardWeights.from_obj(doc.get("weights"))
        except ValueError as exc:
            raise ConfigError("weights", str(exc)) from None
        try:
            return cls(
                scenario=scenario,
                horizon_steps=int(doc.get("horizon_steps", 288)),
                step_seconds=float(doc.get("step_seconds", 300.0)),
                weights=weights,
                mode=Mode(mode),
                stack=stack_params,
                per_user=bool(doc.get("per_user", False)),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("mode", str(exc)) from None


SUBCARRIERS_RB_BYTES = stack.SUBCARRIERS_PER_RB * stack.SE_CAP * 2 / 8.0


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------


@dataclass
class KpiFrame:
    step: int
    cells: list[dict]
    aggregates: dict
    reward: float
    users: list[dict] | None = None

    def to_dict(self) -> dict:
        d = {"step": self.step, "reward": self.reward, "aggregates": self.aggregates, "cells": self.cells}
        if self.users is not None:
            d["users"] = self.users
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def region_aggregates(cells: list[dict]) -> dict:
    """Region-level metrics, recomputed purely from per-cell records."""
    n_meas = sum(c["camped"] for c in cells)
    n_conn = sum(c["connected"] for c in cells)
    rsrp_sum = sum(c["rsrp_mean_dbm"] * c["camped"] for c in cells)
    sinr_sum = sum(c["sinr_mean_db"] * c["camped"] for c in cells)
    rate = sum(c["dl_rate_bps"] + c["ul_rate_bps"] for c in cells)
    return {
        "mean_rsrp_dbm": rsrp_sum / n_meas if n_meas else 0.0,
        "mean_sinr_db": sinr_sum / n_meas if n_meas else 0.0,
        "total_users": n_conn,
        "total_traffic_bytes": sum(c["dl_bytes"] + c["ul_bytes"] for c in cells),
        "mean_user_rate_bps": rate / n_conn if n_conn else 0.0,
        "n_measured": n_meas,
    }


def _cell_record(cell_id, camped, connected, load, rsrp_vals, sinr_vals, kpi=None, ho_out=0, ul_load=0.0):
    kpi = kpi or {}
    return {
        "cell_id": int(cell_id),
        "camped": int(camped),
        "connected": int(connected),
        "load": float(load),
        "ul_load": float(kpi.get("ul_load", ul_load)),
        "dl_rate_bps": float(kpi.get("dl_rate_bps", 0.0)),
        "ul_rate_bps": float(kpi.get("ul_rate_bps", 0.0)),
        "dl_bytes": float(kpi.get("dl_bytes", 0.0)),
        "ul_bytes": float(kpi.get("ul_bytes", 0.0)),
        "rsrp_mean_dbm": float(np.mean(rsrp_vals)) if len(rsrp_vals) else 0.0,
        "sinr_mean_db": float(np.mean(sinr_vals)) if len(sinr_vals) else 0.0,
        "handovers_out": int(ho_out),
    }


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


class Engine:
    """One episode of one combination emulator; never shared between sessions."""

    def __init__(self, spec: EpisodeSpec, trajectories=None, traffic=None):
        self.spec = spec
        self.scenario = spec.scenario
        self._traj_override = trajectories
        self._traffic_override = traffic
        self._model = radio.PathLossModel.from_radio(self.scenario.radio)
        self._cells = self.scenario.cell_sites()
        self._cell_ids = [c.cell_id for _, c in self._cells]
        self._n_re = self.scenario.radio.rbs_per_cell * 12
        self._re_power = np.array([radio.re_power(c, self._n_re) for _, c in self._cells])
        self._anchors = spec.anchors()
        self.step_index = None
        self.done = False

    # -- lifecycle --------------------------------------------------------

    def reset(self) -> KpiFrame:
        spec = self.spec
        self.default_action = Action.from_scenario(self.scenario)
        self.action = self.default_action
        n = self.scenario.population.n_users
        if self._traj_override is not None:
            self.trajectories = self._traj_override
        elif n:
            self.trajectories = behavior.generate_trajectories(self.scenario, spec.horizon_seconds, spec.step_seconds)
        else:
            self.trajectories = []
        self._positions = (
            np.stack([t.xy for t in self.trajectories], axis=1) if self.trajectories else np.zeros((spec.horizon_steps + 1, 0, 2))
        )
        if len(self._positions) < spec.horizon_steps:
            raise ConfigError("trajectories", "trajectories shorter than the horizon")
        if spec.mode is Mode.STACK:
            if self._traffic_override is not None:
                self.traffic = self._traffic_override
            elif n:
                self.traffic = behavior.generate_traffic(self.scenario, spec.horizon_seconds)
            else:
                self.traffic = []
            self._init_stack_state()
        self.step_index = 0
        self.done = False
        return self._coverage_step(0, self.default_action)

    def step(self, action: Action | None = None) -> tuple[KpiFrame, float, bool]:
        if self.step_index is None:
            raise EpisodeError("no_episode: call reset first")
        if self.done:
            raise EpisodeError("episode finished: call reset")
        if action is not None:
            action.validate(self.scenario)
            self.action = action
        k = self.step_index
        if self.spec.mode is Mode.COVERAGE:
            frame = self._coverage_step(k, self.action)
        else:
            frame = self._stack_step(k, self.action)
        self.step_index += 1
        self.done = self.step_index >= self.spec.horizon_steps
        return frame, frame.reward, self.done

    # -- shared pieces ----------------------------------------------------

    def _frame(self, k, cells, users=None) -> KpiFrame:
        agg = region_aggregates(cells)
        r = reward(agg, self.spec.weights, self._anchors)
        return KpiFrame(k, cells, agg, r, users if self.spec.per_user else None)

    def _coverage(self, k, action, loads):
        pts = self._positions[k]
        return radio.coverage_frame(self.scenario, pts, action, k, loads, model=self._model)

    def _coverage_step(self, k: int, action: Action) -> KpiFrame:
        C = len(self._cells)
        load = self.scenario.radio.static_load
        if self._positions.shape[1] == 0:
            cells = [_cell_record(cid, 0, 0, load, [], []) for cid in self._cell_ids]
            return self._frame(k, cells, [])
        cov = self._coverage(k, action, np.full(C, load))
        srsrp = cov.serving_rsrp
        covered = srsrp >= self.spec.stack.q_rxlevmin
        cells = []
        for ci, cid in enumerate(self._cell_ids):
            m = cov.serving_cell == ci
            cells.append(_cell_record(cid, m.sum(), (m & covered).sum(), load, srsrp[m], cov.sinr[m]))
        users = None
        if self.spec.per_user:
            users = [
                {
                    "user_id": u,
                    "cell_id": self._cell_ids[cov.serving_cell[u]],
                    "beam_id": int(cov.serving_beam[u]),
                    "state": "Covered" if covered[u] else "Uncovered",
                    "best_rsrp_dbm": float(srsrp[u]),
                    "rsrp_dbm": float(srsrp[u]),
                    "sinr_db": float(cov.sinr[u]),
                    "dl_rate_bps": 0.0,
                    "ul_rate_bps": 0.0,
                }
                for u in range(len(srsrp))
            ]
        return self._frame(k, cells, users)

    # -- protocol stack ---------------------------------------------------

    def _init_stack_state(self):
        rb = self.scenario.radio.rbs_per_cell
        self.cell_states = [stack.CellState(cid, rb) for cid in self._cell_ids]
        n = len(self.trajectories)
        self.attachments = [stack.Attachment(u) for u in range(n)]
        self.loads = np.full(len(self._cells), self.scenario.radio.static_load)
        self._event_ptr = [0] * n

    def _arrivals(self, u: int, t_end: float):
        tr = self.traffic[u]
        i0 = self._event_ptr[u]
        i1 = int(np.searchsorted(tr.t, t_end, side="left"))
        self._event_ptr[u] = i1
        d = tr.is_dl[i0:i1]
        b = tr.nbytes[i0:i1]
        return float(b[d].sum()), float(b[~d].sum())

    def _stack_step(self, k: int, action: Action) -> KpiFrame:
        spec, sp = self.spec, self.spec.stack
        C = len(self._cells)
        n = len(self.attachments)
        if n == 0:
            cells = [_cell_record(cid, 0, 0, 0.0, [], []) for cid in self._cell_ids]
            self.loads = np.zeros(C)
            return self._frame(k, cells, [])

        cov = self._coverage(k, action, self.loads)
        beam_rsrp = cov.rsrp  # (P, C, 8)
        cs = self.cell_states
        counts = np.zeros(C, dtype=int)
        for a in self.attachments:
            if a.state is stack.UeState.CONNECTED:
                counts[a.serving_cell] += 1
        ho_out = np.zeros(C, dtype=int)

        # RRC pass, ordered by user id
        for u in range(n):
            a = self.attachments[u]
            m = beam_rsrp[u]
            if a.state is stack.UeState.CONNECTED and m[a.serving_cell].max() < sp.q_rxlevmin:
                counts[a.serving_cell] -= 1
                self._detach(u, a.serving_cell)
                a = stack.Attachment(u)
            if a.state is stack.UeState.CONNECTED:
                old = a.serving_cell
                a = stack.evaluate_handover(
                    a, m, sp.hysteresis_db, spec.ttt, spec.step_seconds,
                    can_admit=lambda c: counts[c] < sp.max_users_per_cell,
                )
                if a.serving_cell != old:
                    counts[old] -= 1
                    counts[a.serving_cell] += 1
                    ho_out[old] += 1
                    self._move(u, old, a.serving_cell)
            else:
                a = stack.initial_access(u, m, sp.q_rxlevmin, sp.max_users_per_cell - counts)
                if a.state is stack.UeState.CONNECTED:
                    counts[a.serving_cell] += 1
                    cs[a.serving_cell].connected_users.add(u)
            self.attachments[u] = a

        camped = np.array(
            [a.serving_cell if a.state is stack.UeState.CONNECTED else cov.serving_cell[u] for u, a in enumerate(self.attachments)]
        )
        dl_sinr = cov.sinr_for(camped, self.loads)
        p = np.arange(n)
        camped_rsrp = cov.cell_rsrp[p, camped]

        # traffic arrivals for this step
        t_end = (k + 1) * spec.step_seconds
        for u, a in enumerate(self.attachments):
            tr = self.traffic[u]
            if tr.full_buffer:
                if a.state is stack.UeState.CONNECTED:
                    c = cs[a.serving_cell]
                    if tr.dl_fraction > 0:
                        c.dl_buffer[u] = math.inf
                    if tr.dl_fraction < 1:
                        c.ul_buffer[u] = math.inf
                continue
            dl_b, ul_b = self._arrivals(u, t_end)
            if a.state is stack.UeState.CONNECTED:
                c = cs[a.serving_cell]
                c.dl_buffer[u] = c.dl_buffer.get(u, 0.0) + dl_b
                c.ul_buffer[u] = c.ul_buffer.get(u, 0.0) + ul_b

        # link adaptation, held for the whole step
        n_rx = self.scenario.radio.ue_antennas
        bs_noise = radio.noise_per_re(self.scenario.radio.re_bandwidth_hz, self.scenario.radio.bs_noise_figure)
        dl_links, ul_links = {}, {}
        for ci, c in enumerate(cs):
            if not c.connected_users:
                continue
            n_tx = self._cells[ci][1].n_tx_antennas
            users = sorted(c.connected_users)
            m_rb = max(1, c.rb_total // max(1, len(users)))
            for u in users:
                dl_links[u] = stack.link_adapt(float(dl_sinr[u]), n_tx, n_rx)
                pl = float(self._re_power[ci] - camped_rsrp[u])
                p_ue = stack.uplink_power(sp.p0_dbm, sp.alpha, pl, m_rb, sp.p_max_dbm)
                s_ul = float(stack.ul_sinr(camped_rsrp[u], self._re_power[ci], p_ue, m_rb, bs_noise))
                ul_links[u] = stack.link_adapt(s_ul, 1, n_tx)

        # MAC: representative TTIs
        dt = spec.tti_duration
        n_sym = sp.symbols_per_slot * dt / sp.slot_duration
        user_bytes = np.zeros((n, 2))
        records = []
        new_loads = np.zeros(C)
        for ci, c in enumerate(cs):
            allocs = []
            for direction, links in (("DL", dl_links), ("UL", ul_links)):
                for t in range(sp.n_tti):
                    if not c.backlogged(direction):
                        c.idle_decay(direction, sp.n_tti - t)
                        break
                    alloc = stack.schedule_tti(c, {}, sp.policy, direction, n_sym, dt, links=links)
                    if not alloc.grants:
                        c.idle_decay(direction, sp.n_tti - t)
                        break
                    c.apply(alloc, dt)
                    allocs.append(alloc)
                    col = 0 if direction == "DL" else 1
                    for u, g in alloc.grants.items():
                        user_bytes[u, col] += g.goodput_bytes
            kpi = stack.cell_kpis(c, allocs, dt, n_tti=sp.n_tti)
            c.load = kpi["load"]
            new_loads[ci] = kpi["load"]
            m = camped == ci
            records.append(
                _cell_record(c.cell_id, m.sum(), len(c.connected_users), kpi["load"], camped_rsrp[m], dl_sinr[m], kpi, ho_out[ci])
            )
        self.loads = new_loads

        users = None
        if spec.per_user:
            srsrp = cov.serving_rsrp
            users = []
            for u, a in enumerate(self.attachments):
                users.append(
                    {
                        "user_id": u,
                        "cell_id": self._cell_ids[camped[u]],
                        "beam_id": int(a.serving_beam if a.state is stack.UeState.CONNECTED else cov.cell_best_beam[u, camped[u]]),
                        "state": a.state.value,
                        "best_rsrp_dbm": float(srsrp[u]),
                        "rsrp_dbm": float(camped_rsrp[u]),
                        "sinr_db": float(dl_sinr[u]),
                        "dl_rate_bps": float(user_bytes[u, 0] * 8.0 / spec.step_seconds),
                        "ul_rate_bps": float(user_bytes[u, 1] * 8.0 / spec.step_seconds),
                    }
                )
        return self._frame(k, records, users)

    def _detach(self, u, ci):
        c = self.cell_states[ci]
        c.connected_users.discard(u)
        for d in (c.dl_buffer, c.ul_buffer, c.dl_avg, c.ul_avg):
            d.pop(u, None)

    def _move(self, u, src, dst):
        a, b = self.cell_states[src], self.cell_states[dst]
        a.connected_users.discard(u)
        b.connected_users.add(u)
        # pending data follows the user; PF history restarts at the new cell
        for name in ("dl_buffer", "ul_buffer"):
            v = getattr(a, name).pop(u, 0.0)
            if v:
                getattr(b, name)[u] = getattr(b, name).get(u, 0.0) + v
        a.dl_avg.pop(u, None)
        a.ul_avg.pop(u, None)


# ---------------------------------------------------------------------------
# combination emulators
# ---------------------------------------------------------------------------


def run_episode(spec: EpisodeSpec, actions=None, trajectories=None, traffic=None) -> list[KpiFrame]:
    """Run a full episode; ``actions`` is None, one Action, or one per step."""
    eng = Engine(spec, trajectories, traffic)
    eng.reset()
    frames = []
    for k in range(spec.horizon_steps):
        if isinstance(actions, (list, tuple)):
            act = actions[k] if k < len(actions) else None
        else:
            act = actions
        frame, _, _ = eng.step(act)
        frames.append(frame)
    return frames


def run_protocol_stack_sim(spec: EpisodeSpec, actions=None, **kw) -> list[KpiFrame]:
    return run_episode(spec.with_mode(Mode.STACK), actions, **kw)


def run_coverage_sim(spec: EpisodeSpec, actions=None, **kw) -> list[KpiFrame]:
    return run_episode(spec.with_mode(Mode.COVERAGE), actions, **kw)


def env_reset(spec: EpisodeSpec) -> tuple[Engine, KpiFrame]:
    eng = Engine(spec)
    return eng, eng.reset()


def env_step(engine: Engine, action: Action | None):
    return engine.step(action)


@dataclass(frozen=True)
class LinkSpec:
    cell_id: int
    position: tuple[float, float]
    grid: GridSpec = field(default_factory=GridSpec)
    profile: MultipathProfile | None = None  # None -> scenario class of the position
    shadowing: bool = True
    draw: int = 0


def link_budget(scenario: Scenario, link: LinkSpec, beams=None) -> dict:
    """Large-scale terms for one (cell, position) link, via the coverage kernel."""
    x, y = link.position
    if not scenario.region.contains(x, y):
        raise ValueError(f"position ({x}, {y}) outside region")
    ids = [c.cell_id for c in scenario.cells]
    if link.cell_id not in ids:
        raise ValueError(f"unknown cell {link.cell_id}")
    ci = ids.index(link.cell_id)
    cov = radio.coverage_frame(scenario, [[x, y]], beams, 0, shadowing=link.shadowing)
    site, cell = scenario.cell_sites()[ci]
    beam_id = int(cov.cell_best_beam[0, ci])
    n_re = scenario.radio.rbs_per_cell * 12
    # rsrp = re_power + gain - loss  =>  gain - loss = rsrp - re_power
    net = float(cov.cell_rsrp[0, ci]) - radio.re_power(cell, n_re)
    reg = scenario.region
    cls = SCENARIO_CLASSES[int(reg.scenario_class.ravel()[reg.raster_index(x, y)])]
    return {"cell_index": ci, "beam_id": beam_id, "net_gain_db": net, "scenario_class": cls, "n_tx": cell.n_tx_antennas}


def run_link_channel_sim(scenario: Scenario, link: LinkSpec, beams=None) -> ChannelGrid:
    lb = link_budget(scenario, link, beams)
    profile = link.profile or MultipathProfile(scenario_class=lb["scenario_class"])
    stream = rng_stream(scenario.master_seed, "mpath", link.cell_id, link.draw)
    taps = draw_multipath(profile, lb["n_tx"], scenario.radio.ue_antennas, stream)
    grid = freq_response(taps, link.grid)
    return apply_large_scale(grid, loss_db=-lb["net_gain_db"], gain_db=0.0)
