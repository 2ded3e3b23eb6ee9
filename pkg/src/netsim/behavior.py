"""User mobility and traffic generation.

Random-waypoint motion and a Poisson-session / geometric-burst / lognormal-size
packet process.  Both sit behind plain functions so a learned generator can
replace them without touching the consumers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Scenario, TrafficProfile, local_to_geo, rng_stream

MAX_PAUSE = 60.0
# histogram edges 1 B, 2 B, ..., 1 MiB; the last bin also takes anything larger
SIZE_BIN_EDGES = 2 ** np.arange(21)


@dataclass
class Trajectory:
    user_id: int
    tick: float
    speed: float
    xy: np.ndarray  # (n_points, 2); row i is the position at t = i * tick

    @property
    def points(self) -> list[tuple[int, float, float]]:
        return [(i, float(x), float(y)) for i, (x, y) in enumerate(self.xy)]

    def __len__(self) -> int:
        return len(self.xy)


@dataclass
class TrafficTrace:
    user_id: int
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    is_dl: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    nbytes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    session_starts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    full_buffer: bool = False
    dl_fraction: float = 1.0

    @property
    def events(self) -> list[tuple[float, str, int]]:
        return [(float(t), "DL" if d else "UL", int(b)) for t, d, b in zip(self.t, self.is_dl, self.nbytes)]

    @property
    def n_sessions(self) -> int:
        return len(self.session_starts)


def _quota_assign(n: int, fractions) -> np.ndarray:
    """Deterministic class index per user so class sizes track the fractions."""
    cum = np.cumsum(fractions)
    pos = (np.arange(n) + 0.5) / max(n, 1)
    return np.minimum(np.searchsorted(cum, pos, side="right"), len(cum) - 1)


def _waypoint_path(rng, speed, w, h, horizon):
    x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
    times, xs, ys = [0.0], [x0], [y0]
    if speed <= 0:
        return np.array(times), np.array(xs), np.array(ys)
    t = 0.0
    while t <= horizon:
        nx, ny = rng.uniform(0, w), rng.uniform(0, h)
        t += math.hypot(nx - xs[-1], ny - ys[-1]) / speed
        times.append(t)
        xs.append(nx)
        ys.append(ny)
        t += rng.uniform(0.0, MAX_PAUSE)
        times.append(t)
        xs.append(nx)
        ys.append(ny)
    return np.array(times), np.array(xs), np.array(ys)


def generate_trajectories(scenario: Scenario, horizon: float, tick: float = 300.0) -> list[Trajectory]:
    """One random-waypoint trajectory per user, sampled every ``tick`` seconds."""
    if tick <= 0:
        raise ValueError("tick must be > 0")
    if tick > horizon:
        raise ValueError(f"tick {tick} exceeds horizon {horizon}")
    pop = scenario.population
    n_points = int(math.floor(horizon / tick + 1e-9)) + 1
    sample_t = np.arange(n_points) * tick
    w, h = scenario.region.extent
    classes = _quota_assign(pop.n_users, [f for _, f in pop.speed_classes])
    out = []
    for uid in range(pop.n_users):
        speed = pop.speed_classes[classes[uid]][0]
        rng = rng_stream(scenario.master_seed, "traj", uid, 0)
        kt, kx, ky = _waypoint_path(rng, speed, w, h, sample_t[-1])
        if len(kt) == 1:
            xy = np.tile([kx[0], ky[0]], (n_points, 1))
        else:
            xy = np.column_stack([np.interp(sample_t, kt, kx), np.interp(sample_t, kt, ky)])
        out.append(Trajectory(uid, float(tick), float(speed), xy))
    return out


def stationary_trajectory(user_id: int, x: float, y: float, n_points: int, tick: float = 300.0) -> Trajectory:
    return Trajectory(user_id, tick, 0.0, np.tile([float(x), float(y)], (n_points, 1)))


def linear_trajectory(user_id: int, start, velocity, n_points: int, tick: float = 300.0) -> Trajectory:
    """Constant-velocity track; handy for drive-by tests."""
    k = np.arange(n_points)[:, None] * tick
    xy = np.asarray(start, float)[None, :] + k * np.asarray(velocity, float)[None, :]
    return Trajectory(user_id, tick, float(np.hypot(*velocity)), xy)


def _user_traffic(rng, uid: int, prof: TrafficProfile, horizon: float) -> TrafficTrace:
    if prof.full_buffer:
        return TrafficTrace(uid, full_buffer=True, dl_fraction=prof.dl_fraction)
    lam = prof.session_rate / 3600.0
    n_sess = rng.poisson(lam * horizon) if lam > 0 else 0
    starts = np.sort(rng.uniform(0.0, horizon, n_sess))
    if n_sess == 0:
        return TrafficTrace(uid, session_starts=starts, dl_fraction=prof.dl_fraction)
    counts = rng.geometric(1.0 / prof.mean_session_packets, n_sess)
    total = int(counts.sum())
    gaps = rng.exponential(prof.packet_interval, total)
    # first packet of every session sits at the session start
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    gaps[first] = 0.0
    offs = np.cumsum(gaps)
    offs -= np.repeat(offs[first], counts)
    t = np.repeat(starts, counts) + offs
    sizes = np.maximum(1, np.rint(rng.lognormal(prof.packet_size_log_mu, prof.packet_size_log_sigma, total)))
    is_dl = rng.uniform(size=total) < prof.dl_fraction
    keep = t < horizon
    t, sizes, is_dl = t[keep], sizes[keep].astype(np.int64), is_dl[keep]
    order = np.argsort(t, kind="stable")
    return TrafficTrace(uid, t[order], is_dl[order], sizes[order], starts, dl_fraction=prof.dl_fraction)


def generate_traffic(scenario: Scenario, horizon: float) -> list[TrafficTrace]:
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    pop = scenario.population
    classes = _quota_assign(pop.n_users, [f for _, f in pop.traffic_profiles])
    return [
        _user_traffic(
            rng_stream(scenario.master_seed, "traffic", uid, 0), uid, pop.traffic_profiles[classes[uid]][0], horizon
        )
        for uid in range(pop.n_users)
    ]


@dataclass
class BehaviorStats:
    ul_bytes: dict[int, int]
    dl_bytes: dict[int, int]
    size_hist: np.ndarray  # counts per bin [2^i, 2^(i+1)), i = 0..19
    n_events: int

    @property
    def total_ul(self) -> int:
        return sum(self.ul_bytes.values())

    @property
    def total_dl(self) -> int:
        return sum(self.dl_bytes.values())

    @property
    def dl_share(self) -> float:
        tot = self.total_ul + self.total_dl
        return self.total_dl / tot if tot else 0.0


def behavior_stats(traces: list[TrafficTrace]) -> BehaviorStats:
    ul, dl = {}, {}
    hist = np.zeros(len(SIZE_BIN_EDGES) - 1, dtype=np.int64)
    n = 0
    for tr in traces:
        b = tr.nbytes
        dl[tr.user_id] = int(b[tr.is_dl].sum())
        ul[tr.user_id] = int(b[~tr.is_dl].sum())
        if len(b):
            idx = np.clip(np.floor(np.log2(b)).astype(int), 0, len(hist) - 1)
            hist += np.bincount(idx, minlength=len(hist))
        n += len(b)
    return BehaviorStats(ul, dl, hist, n)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def export_trajectories_jsonl(trajs: list[Trajectory], path, scenario: Scenario | None = None) -> None:
    """One JSON object per user; adds lat/lon lists when a scenario is given."""
    with open(path, "w") as fh:
        for tr in trajs:
            rec = {"user_id": tr.user_id, "tick": tr.tick, "x": tr.xy[:, 0].tolist(), "y": tr.xy[:, 1].tolist()}
            if scenario is not None:
                reg = scenario.region
                lat, lon = local_to_geo(tr.xy[:, 0], tr.xy[:, 1], reg.origin_lat, reg.origin_lon)
                rec["lat"], rec["lon"] = lat.tolist(), lon.tolist()
            fh.write(json.dumps(rec) + "\n")


def export_traffic_jsonl(traces: list[TrafficTrace], path) -> None:
    with open(path, "w") as fh:
        for tr in traces:
            rec = {
                "user_id": tr.user_id,
                "t": tr.t.tolist(),
                "dir": ["DL" if d else "UL" for d in tr.is_dl],
                "bytes": tr.nbytes.tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def export_trajectories_csv(trajs: list[Trajectory], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "t", "x", "y"])
        for tr in trajs:
            for i, (x, y) in enumerate(tr.xy):
                w.writerow([tr.user_id, i, repr(float(x)), repr(float(y))])


def export_traffic_csv(traces: list[TrafficTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "t", "dir", "bytes"])
        for tr in traces:
            for t, d, b in zip(tr.t, tr.is_dl, tr.nbytes):
                w.writerow([tr.user_id, repr(float(t)), "DL" if d else "UL", int(b)])
