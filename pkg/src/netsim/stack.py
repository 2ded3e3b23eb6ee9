"""Base-station / terminal protocol abstraction.

RRC: threshold-based access and an A3-style handover (offset + time to
trigger).  MAC: round-robin and proportional-fair RB schedulers with
Shannon-bounded link adaptation, a rank <= 2 MIMO abstraction, open-loop UL
power control and a HARQ goodput discount.  KPIs are aggregated per cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np


SE_CAP = 7.4063  # bits/s/Hz per layer
RANK2_PENALTY_DB = 3.0
OUTAGE_SINR_DB = -6.0
TARGET_BLER = 0.1
PF_SMOOTHING = 0.05
PF_FLOOR = 1.0  # bit/s
SUBCARRIERS_PER_RB = 12


class UeState(str, Enum):
    IDLE = "Idle"
    CONNECTED = "Connected"
    BLOCKED = "Blocked"


class Policy(str, Enum):
    ROUND_ROBIN = "rr"
    PROPORTIONAL_FAIR = "pf"


@dataclass
class Attachment:
    user_id: int
    serving_cell: int | None = None  # index into the measurement rows
    serving_beam: int | None = None
    state: UeState = UeState.IDLE
    ho_timer: float = 0.0
    avg_throughput: float = PF_FLOOR


# ---------------------------------------------------------------------------
# RRC
# ---------------------------------------------------------------------------


def initial_access(
    user_id: int,
    beam_rsrp: np.ndarray,
    q_rxlevmin: float,
    free_slots: Sequence[int] | None = None,
) -> Attachment:
    """Camp on the strongest cell that clears ``q_rxlevmin`` and has room.

    ``beam_rsrp`` is (n_cells, 8); rows are cells, the serving beam is the row
    argmax.  ``free_slots[c]`` is the remaining admission capacity of cell c.
    """
    m = np.asarray(beam_rsrp, dtype=float)
    if m.size == 0:
        raise ValueError("no measurements")
    best = m.max(axis=1)
    # strongest first; stable sort keeps the lowest cell index on ties
    for c in np.argsort(-best, kind="stable"):
        if best[c] < q_rxlevmin:
            break
        if free_slots is not None and free_slots[c] <= 0:
            continue
        return Attachment(user_id, int(c), int(np.argmax(m[c])), UeState.CONNECTED)
    return Attachment(user_id, None, None, UeState.BLOCKED)


def evaluate_handover(
    att: Attachment,
    beam_rsrp: np.ndarray,
    hysteresis: float,
    ttt: float,
    dt: float,
    can_admit=None,
) -> Attachment:
    """One A3 evaluation: neighbour > serving + hysteresis, held for ``ttt``."""
    if att.state is not UeState.CONNECTED:
        raise ValueError("handover evaluation needs a connected UE")
    m = np.asarray(beam_rsrp, dtype=float)
    best = m.max(axis=1)
    s = att.serving_cell
    others = best.copy()
    others[s] = -np.inf
    target = int(np.argmax(others))
    beam = int(np.argmax(m[s]))
    if len(best) > 1 and others[target] > best[s] + hysteresis:
        timer = att.ho_timer + dt
        if timer >= ttt:
            if can_admit is None or can_admit(target):
                return replace(att, serving_cell=target, serving_beam=int(np.argmax(m[target])), ho_timer=0.0)
            timer = ttt
        return replace(att, serving_beam=beam, ho_timer=timer)
    return replace(att, serving_beam=beam, ho_timer=0.0)


# ---------------------------------------------------------------------------
# PHY / MAC primitives
# ---------------------------------------------------------------------------


class LinkAdaptation(NamedTuple):
    spectral_efficiency: float
    rank: int
    bler: float


def link_adapt(sinr_db: float, n_tx: int, n_rx: int) -> LinkAdaptation:
    if not math.isfinite(sinr_db):
        raise ValueError("sinr must be finite")
    rank = min(n_tx, n_rx, 2)
    per_layer = sinr_db - (RANK2_PENALTY_DB if rank == 2 else 0.0)
    se = rank * min(math.log2(1.0 + 10.0 ** (per_layer / 10.0)), SE_CAP)
    bler = TARGET_BLER if sinr_db >= OUTAGE_SINR_DB else 1.0
    return LinkAdaptation(se, rank, bler)


def uplink_power(p0: float, alpha: float, pl: float, m_rb: int, p_max: float) -> float:
    if m_rb < 1:
        raise ValueError("m_rb must be >= 1")
    return min(p_max, p0 + 10.0 * math.log10(m_rb) + alpha * pl)


class HarqResult(NamedTuple):
    factor: float
    residual_bler: float
    outage: bool


def harq_goodput_factor(bler: float, max_tx: int) -> HarqResult:
    if not 0.0 <= bler <= 1.0:
        raise ValueError(f"bler {bler} outside [0, 1]")
    if max_tx < 1:
        raise ValueError("max_tx must be >= 1")
    return HarqResult(1.0 - bler, bler**max_tx, bler >= 1.0)


# ---------------------------------------------------------------------------
# scheduling
# ---------------------------------------------------------------------------


@dataclass
class Grant:
    rb_count: int
    spectral_efficiency: float
    rank: int
    bler: float
    transport_bytes: float

    @property
    def goodput_bytes(self) -> float:
        return self.transport_bytes * (1.0 - self.bler)


@dataclass
class TtiAllocation:
    direction: str  # "DL" or "UL"
    rb_total: int
    grants: dict[int, Grant] = field(default_factory=dict)

    @property
    def rb_used(self) -> int:
        return sum(g.rb_count for g in self.grants.values())


@dataclass
class CellState:
    cell_id: int
    rb_total: int
    connected_users: set = field(default_factory=set)
    load: float = 0.0
    dl_buffer: dict = field(default_factory=dict)  # user -> pending bytes (inf = full buffer)
    ul_buffer: dict = field(default_factory=dict)
    dl_avg: dict = field(default_factory=dict)  # PF smoothed throughput, bit/s
    ul_avg: dict = field(default_factory=dict)

    def buffer(self, direction: str) -> dict:
        return self.dl_buffer if direction == "DL" else self.ul_buffer

    def averages(self, direction: str) -> dict:
        return self.dl_avg if direction == "DL" else self.ul_avg

    def backlogged(self, direction: str) -> list[int]:
        buf = self.buffer(direction)
        return sorted(u for u in self.connected_users if buf.get(u, 0.0) > 0.0)

    def apply(self, alloc: TtiAllocation, dt: float) -> None:
        """Drain buffers by the transported bytes and update PF averages."""
        buf = self.buffer(alloc.direction)
        avg = self.averages(alloc.direction)
        for u, g in alloc.grants.items():
            buf[u] = buf[u] - g.transport_bytes
            if buf[u] < 1e-9:
                buf[u] = 0.0
        for u in self.connected_users:
            g = alloc.grants.get(u)
            served = g.goodput_bytes * 8.0 / dt if g is not None else 0.0
            avg[u] = max((1.0 - PF_SMOOTHING) * avg.get(u, PF_FLOOR) + PF_SMOOTHING * served, PF_FLOOR)

    def idle_decay(self, direction: str, n_tti: int) -> None:
        """PF averages after ``n_tti`` empty TTIs."""
        avg = self.averages(direction)
        k = (1.0 - PF_SMOOTHING) ** n_tti
        for u in self.connected_users:
            avg[u] = max(avg.get(u, PF_FLOOR) * k, PF_FLOOR)


def schedule_tti(
    cell: CellState,
    ue_sinr: dict,
    policy: Policy | str = Policy.PROPORTIONAL_FAIR,
    direction: str = "DL",
    n_symbols: float = 14.0,
    dt: float = 1e-3,
    n_tx: int = 1,
    n_rx: int = 1,
    links: dict | None = None,
) -> TtiAllocation:
    """Share the cell's RBs for one TTI among backlogged users.

    ``ue_sinr`` maps user -> SINR dB; ``links`` may carry precomputed
    :class:`LinkAdaptation` results per user instead.  A user in outage
    (BLER 1) is not scheduled.
    """
    if cell.rb_total < 1:
        raise ValueError("cell has no resource blocks")
    policy = Policy(policy)
    buf = cell.buffer(direction)
    alloc = TtiAllocation(direction, cell.rb_total)
    cands = []
    for u in cell.backlogged(direction):
        la = links[u] if links is not None else link_adapt(ue_sinr[u], n_tx, n_rx)
        if la.bler < 1.0 and la.spectral_efficiency > 0:
            cands.append((u, la, SUBCARRIERS_PER_RB * la.spectral_efficiency * n_symbols / 8.0))
    if not cands:
        return alloc

    def need(u, per_rb):
        b = buf[u]
        return cell.rb_total if math.isinf(b) else min(cell.rb_total, max(1, math.ceil(b / per_rb - 1e-12)))

    if policy is Policy.ROUND_ROBIN:
        base, rem = divmod(cell.rb_total, len(cands))
        for i, (u, la, per_rb) in enumerate(cands):
            rb = min(base + (1 if i < rem else 0), need(u, per_rb))
            if rb > 0:
                alloc.grants[u] = Grant(rb, la.spectral_efficiency, la.rank, la.bler, min(rb * per_rb, buf[u]))
    else:
        avg = cell.averages(direction)

        def priority(c):
            u, la, per_rb = c
            inst = per_rb * 8.0 * cell.rb_total * (1.0 - la.bler) / dt
            return -inst / max(avg.get(u, PF_FLOOR), PF_FLOOR), u

        left = cell.rb_total
        for u, la, per_rb in sorted(cands, key=priority):
            if left == 0:
                break
            rb = min(left, need(u, per_rb))
            alloc.grants[u] = Grant(rb, la.spectral_efficiency, la.rank, la.bler, min(rb * per_rb, buf[u]))
            left -= rb
    return alloc


def cell_kpis(cell: CellState, allocations: Sequence[TtiAllocation], dt: float, n_tti: int | None = None) -> dict:
    """Aggregate a window of TTI allocations.

    ``n_tti`` is the window length in TTIs when trailing empty TTIs were not
    materialised; it defaults to the longer of the DL and UL allocation runs.
    """
    dl = [a for a in allocations if a.direction == "DL"]
    ul = [a for a in allocations if a.direction == "UL"]
    if n_tti is None:
        n_tti = max(len(dl), len(ul))
    if n_tti <= 0:
        raise ValueError("empty KPI window")
    window = n_tti * dt
    dl_bytes = sum(g.goodput_bytes for a in dl for g in a.grants.values())
    ul_bytes = sum(g.goodput_bytes for a in ul for g in a.grants.values())
    return {
        "connected": len(cell.connected_users),
        "load": sum(a.rb_used for a in dl) / (n_tti * cell.rb_total),
        "ul_load": sum(a.rb_used for a in ul) / (n_tti * cell.rb_total),
        "dl_rate_bps": dl_bytes * 8.0 / window,
        "ul_rate_bps": ul_bytes * 8.0 / window,
        "dl_bytes": dl_bytes,
        "ul_bytes": ul_bytes,
    }


def sum_log_throughput(throughputs: Sequence[float]) -> float:
    t = np.asarray(throughputs, dtype=float)
    return float(np.sum(np.log(np.maximum(t, PF_FLOOR))))


def ul_sinr(rsrp_dbm, re_power_dbm, p_ue_dbm, m_rb, bs_noise_dbm):
    """UL SINR from DL coupling loss; UL interference is folded into the noise floor."""
    coupling = np.asarray(rsrp_dbm) - re_power_dbm
    p_re = np.asarray(p_ue_dbm) - 10.0 * np.log10(np.asarray(m_rb) * SUBCARRIERS_PER_RB)
    return p_re + coupling - bs_noise_dbm
