"""Beam-parameter search: simulated annealing with an exhaustive baseline."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import behavior
from .core import BEAM_LIMITS, N_BEAMS, rng_stream
from .engine import Action, EpisodeSpec, Mode, run_episode


@dataclass(frozen=True)
class Dimension:
    """One searchable knob: a field shared by ``beam_ids`` of ``cell_id``."""

    cell_id: int
    beam_ids: tuple[int, ...]
    name: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]

    @classmethod
    def grid(cls, spec: EpisodeSpec, name: str, lo: float, hi: float, step: float, scope: str = "cell") -> "SearchSpace":
        """Same value grid for every cell (``scope='cell'``) or every beam (``'beam'``)."""
        if name not in BEAM_LIMITS:
            raise ValueError(f"unknown beam field {name!r}")
        if step <= 0 or hi < lo:
            raise ValueError("grid needs lo <= hi and step > 0")
        values = tuple(float(v) for v in np.round(np.arange(lo, hi + step * 0.5, step), 10))
        blo, bhi = BEAM_LIMITS[name]
        if values[0] < blo or values[-1] > bhi:
            raise ValueError(f"{name} grid [{values[0]}, {values[-1]}] exceeds [{blo}, {bhi}]")
        dims = []
        for cell in spec.scenario.cells:
            if scope == "cell":
                dims.append(Dimension(cell.cell_id, tuple(range(N_BEAMS)), name, values))
            else:
                dims.extend(Dimension(cell.cell_id, (b,), name, values) for b in range(N_BEAMS))
        return cls(tuple(dims))

    @property
    def size(self) -> int:
        return math.prod(len(d.values) for d in self.dims)

    def to_action(self, base: Action, idx) -> Action:
        act = base
        for d, i in zip(self.dims, idx):
            act = act.with_value(d.cell_id, d.beam_ids, d.name, d.values[i])
        return act

    def snap(self, base: Action) -> tuple[int, ...]:
        """Grid index closest to the base action's current values."""
        out = []
        for d in self.dims:
            cur = np.mean([getattr(base.beams[d.cell_id][b], d.name) for b in d.beam_ids])
            out.append(int(np.argmin(np.abs(np.asarray(d.values) - cur))))
        return tuple(out)


@dataclass
class Objective:
    """Mean episode reward of a constant action, with users and traffic frozen."""

    spec: EpisodeSpec
    trajectories: list = None
    traffic: list = None
    n_calls: int = 0

    def __post_init__(self):
        scn = self.spec.scenario
        if self.trajectories is None and scn.population.n_users:
            self.trajectories = behavior.generate_trajectories(scn, self.spec.horizon_seconds, self.spec.step_seconds)
        if self.traffic is None and self.spec.mode is Mode.STACK and scn.population.n_users:
            self.traffic = behavior.generate_traffic(scn, self.spec.horizon_seconds)

    def __call__(self, action: Action) -> float:
        self.n_calls += 1
        frames = run_episode(self.spec, action, self.trajectories, self.traffic)
        return float(np.mean([f.reward for f in frames]))


@dataclass
class SearchResult:
    best_action: Action
    best_reward: float
    trace: list = field(default_factory=list)  # (eval index, action digest, reward)
    best_index: tuple = ()


def local_search_optimize(
    spec: EpisodeSpec,
    budget: int,
    space: SearchSpace,
    seed: int = 0,
    t_start: float | None = None,
    t_end: float | None = None,
    objective: Objective | None = None,
) -> SearchResult:
    """Simulated annealing with one-grid-step coordinate moves.

    ``budget`` counts distinct objective evaluations; revisiting a cached
    configuration is free.  When every neighbour of the current point has
    been seen, the walk restarts from a random unvisited point.  The temperature falls geometrically from
    ``t_start`` to ``t_end`` over the budget (defaults scale with the total
    reward weight).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not space.dims or any(len(d.values) == 0 for d in space.dims):
        raise ValueError("empty search space")
    objective = objective or Objective(spec)
    wsum = sum(spec.weights.as_tuple())
    t_start = 0.02 * wsum if t_start is None else t_start
    t_end = 1e-4 * wsum if t_end is None else t_end
    cool = (t_end / t_start) ** (1.0 / max(budget - 1, 1))
    rng = rng_stream(seed, "anneal", 0, 0)
    base = Action.from_scenario(spec.scenario)

    cache: dict[tuple, float] = {}
    trace = []

    def evaluate(idx):
        if idx not in cache:
            act = space.to_action(base, idx)
            cache[idx] = objective(act)
            trace.append((len(trace), act.digest(), cache[idx]))
        return cache[idx]

    cur = space.snap(base)
    f_cur = evaluate(cur)
    best, f_best = cur, f_cur
    temp = t_start
    movable = [i for i, d in enumerate(space.dims) if len(d.values) > 1]
    stall = 0
    while len(cache) < budget and movable and stall < 50 * budget:
        d = movable[int(rng.integers(len(movable)))]
        n_vals = len(space.dims[d].values)
        delta = 1 if rng.random() < 0.5 else -1
        j = cur[d] + delta
        if not 0 <= j < n_vals:
            j = cur[d] - delta
        cand = cur[:d] + (j,) + cur[d + 1 :]
        fresh = cand not in cache
        f_cand = evaluate(cand)
        if fresh:
            stall = 0
            temp *= cool
        else:
            stall += 1
        if f_cand >= f_cur or rng.random() < math.exp((f_cand - f_cur) / temp):
            cur, f_cur = cand, f_cand
        if f_cand > f_best:
            best, f_best = cand, f_cand
        if not fresh and len(cache) < budget and all(n in cache for n in _neighbours(space, cur)):
            # frozen in a fully explored basin: restart from an unvisited point
            for _ in range(100):
                jump = tuple(int(rng.integers(len(dim.values))) for dim in space.dims)
                if jump not in cache:
                    cur, f_cur = jump, evaluate(jump)
                    if f_cur > f_best:
                        best, f_best = cur, f_cur
                    stall = 0
                    break
    return SearchResult(space.to_action(base, best), f_best, trace, best)


def _neighbours(space: SearchSpace, idx: tuple) -> list[tuple]:
    out = []
    for d, dim in enumerate(space.dims):
        for j in (idx[d] - 1, idx[d] + 1):
            if 0 <= j < len(dim.values):
                out.append(idx[:d] + (j,) + idx[d + 1 :])
    return out


def exhaustive_search(spec: EpisodeSpec, space: SearchSpace, objective: Objective | None = None) -> SearchResult:
    """Evaluate every grid point; the oracle for the annealer."""
    if not space.dims:
        raise ValueError("empty search space")
    objective = objective or Objective(spec)
    base = Action.from_scenario(spec.scenario)
    trace = []
    best, f_best = None, -math.inf
    for idx in itertools.product(*(range(len(d.values)) for d in space.dims)):
        act = space.to_action(base, idx)
        f = objective(act)
        trace.append((len(trace), act.digest(), f))
        if f > f_best:
            best, f_best = idx, f
    return SearchResult(space.to_action(base, best), f_best, trace, best)
