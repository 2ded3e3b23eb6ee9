"""Small-scale fading, RE-level channel grids and the baseline CSI codec.

Channel export format (``.jtch``), little-endian::

    magic      4 bytes  b"JTCH"
    version    u16      1
    dims       4 x u32  n_subcarriers, n_symbols, n_tx, n_rx
    spacing    f64      subcarrier spacing, Hz
    values     f32 pairs (re, im), C order over (subcarrier, symbol, tx, rx)

CSI payload bit layout (MSB first): M as 8 bits, q as 4 bits, then for each
kept coefficient its position (``ceil(log2(n_subcarriers * n_tx * n_rx))``
bits; delay index major, antenna pair minor) followed by the real and
imaginary parts as ``q``-bit offset-binary integers.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import SCENARIO_CLASSES

JTCH_MAGIC = b"JTCH"
JTCH_VERSION = 1
_JTCH_HEADER = struct.Struct("<4sHIIIId")

CODEC_ID = "dft-trunc-uq/1"
HEADER_BITS = 12
MAX_M = 255
MAX_Q = 15


# ---------------------------------------------------------------------------
# multipath
# ---------------------------------------------------------------------------


@dataclass
class TapSet:
    delays: np.ndarray  # (L,) seconds, sorted
    powers: np.ndarray  # (L,) linear, sums to 1
    gains: np.ndarray  # (L, n_tx, n_rx) complex
    dopplers: np.ndarray  # (L,) Hz, per-tap frequency offset
    rician_k: float = 0.0
    doppler_hz: float = 0.0

    @property
    def n_tx(self) -> int:
        return self.gains.shape[1]

    @property
    def n_rx(self) -> int:
        return self.gains.shape[2]


@dataclass(frozen=True)
class MultipathProfile:
    scenario_class: str = "UMa"
    n_taps: int = 8
    delay_spread: float = 300e-9
    rician_k: float = 0.0
    doppler_hz: float = 0.0

    def validate(self) -> None:
        if self.scenario_class not in SCENARIO_CLASSES:
            raise ValueError(f"unknown scenario class {self.scenario_class!r}")
        if self.n_taps < 1:
            raise ValueError("n_taps must be >= 1")
        if not self.delay_spread > 0:
            raise ValueError("delay_spread must be > 0")
        if self.rician_k < 0 or self.doppler_hz < 0:
            raise ValueError("rician_k and doppler_hz must be >= 0")


def _cn(rng, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def draw_multipath(profile: MultipathProfile, n_tx: int, n_rx: int, stream: np.random.Generator) -> TapSet:
    """Exponential power-delay profile; tap 0 carries the Rician LOS part."""
    profile.validate()
    if n_tx < 1 or n_rx < 1:
        raise ValueError("antenna counts must be >= 1")
    L = profile.n_taps
    delays = np.arange(L) * profile.delay_spread / L
    powers = np.exp(-delays / profile.delay_spread)
    powers /= powers.sum()
    k = profile.rician_k
    gains = _cn(stream, (L, n_tx, n_rx)) * np.sqrt(powers)[:, None, None]
    if k > 0:
        los_phase = np.exp(1j * stream.uniform(0.0, 2.0 * np.pi))
        gains[0] = math.sqrt(powers[0]) * (
            math.sqrt(k / (k + 1.0)) * los_phase + math.sqrt(1.0 / (k + 1.0)) * gains[0] / math.sqrt(powers[0])
        )
    dopplers = stream.uniform(-profile.doppler_hz, profile.doppler_hz, L) if profile.doppler_hz > 0 else np.zeros(L)
    return TapSet(delays, powers, gains, dopplers, k, profile.doppler_hz)


# ---------------------------------------------------------------------------
# frequency-domain grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    n_subcarriers: int = 72
    n_symbols: int = 14
    spacing: float = 30e3
    symbol_duration: float | None = None  # defaults to 1/spacing (no CP)

    def validate(self) -> None:
        if self.n_subcarriers < 1 or self.n_symbols < 1:
            raise ValueError("grid dims must be >= 1")
        if not self.spacing > 0:
            raise ValueError("spacing must be > 0")

    @property
    def t_symbol(self) -> float:
        return self.symbol_duration if self.symbol_duration is not None else 1.0 / self.spacing


@dataclass
class ChannelGrid:
    values: np.ndarray  # (K, S, T, R) complex
    spacing: float
    large_scale_applied: bool = False

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(self.values.shape)  # type: ignore[return-value]


def freq_response(taps: TapSet, grid: GridSpec) -> ChannelGrid:
    """H[k, s, t, r] = sum_l g_l[t, r] exp(-j2pi f_k tau_l) exp(j2pi nu_l t_s)."""
    grid.validate()
    f = np.arange(grid.n_subcarriers) * grid.spacing
    ts = np.arange(grid.n_symbols) * grid.t_symbol
    freq_phase = np.exp(-2j * np.pi * np.outer(f, taps.delays))  # (K, L)
    time_phase = np.exp(2j * np.pi * np.outer(ts, taps.dopplers))  # (S, L)
    h = np.einsum("kl,sl,ltr->kstr", freq_phase, time_phase, taps.gains)
    return ChannelGrid(h, grid.spacing)


def apply_large_scale(grid: ChannelGrid, loss_db: float, gain_db: float = 0.0) -> ChannelGrid:
    if grid.large_scale_applied:
        raise ValueError("large-scale gain already applied to this grid")
    scale = 10.0 ** ((gain_db - loss_db) / 20.0)
    return ChannelGrid(grid.values * scale, grid.spacing, True)


def write_jtch(grid: ChannelGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(jtch_bytes(grid))


def jtch_bytes(grid: ChannelGrid) -> bytes:
    K, S, T, R = grid.dims
    inter = np.empty(grid.values.size * 2, dtype="<f4")
    flat = grid.values.reshape(-1)
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    return _JTCH_HEADER.pack(JTCH_MAGIC, JTCH_VERSION, K, S, T, R, float(grid.spacing)) + inter.tobytes()


def read_jtch(path) -> ChannelGrid:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _JTCH_HEADER.size:
        raise ValueError("file too short for a JTCH header")
    magic, version, K, S, T, R, spacing = _JTCH_HEADER.unpack_from(raw)
    if magic != JTCH_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != JTCH_VERSION:
        raise ValueError(f"unsupported JTCH version {version}")
    n = K * S * T * R
    data = np.frombuffer(raw, dtype="<f4", offset=_JTCH_HEADER.size)
    if data.size != 2 * n:
        raise ValueError(f"expected {2 * n} floats, found {data.size}")
    vals = (data[0::2].astype(np.float64) + 1j * data[1::2]).reshape(K, S, T, R)
    return ChannelGrid(vals, spacing)


# ---------------------------------------------------------------------------
# CSI compression
# ---------------------------------------------------------------------------


@dataclass
class CsiReport:
    bit_budget: int
    payload: str  # '0'/'1' characters
    dims: tuple[int, int, int, int]
    step: float  # quantiser step; side information carried beside the payload
    codec_id: str = CODEC_ID
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "codec_id": self.codec_id,
                "bit_budget": self.bit_budget,
                "dims": list(self.dims),
                "step": self.step,
                "n_bits": len(self.payload),
                "payload": self.payload,
                "meta": self.meta,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "CsiReport":
        d = json.loads(text)
        return cls(d["bit_budget"], d["payload"], tuple(d["dims"]), d["step"], d["codec_id"], d.get("meta", {}))


def _pos_bits(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def _quantise(v: np.ndarray, q: int, amp: float) -> tuple[np.ndarray, float]:
    """Mid-tread uniform quantiser over [-amp, amp] with 2^(q-1)-1 positive levels."""
    levels = 2 ** (q - 1) - 1
    if levels == 0 or amp == 0:
        return np.zeros(v.shape, dtype=np.int64), 0.0
    step = amp / levels
    return np.clip(np.rint(v / step), -levels, levels).astype(np.int64), step


def _delay_domain(grid: ChannelGrid) -> np.ndarray:
    """First-symbol channel as (K * T * R,) delay-domain coefficients."""
    return np.fft.ifft(grid.values[:, 0], axis=0).reshape(-1)


def _encode_choice(x: np.ndarray, order: np.ndarray, M: int, q: int):
    kept = x[order[:M]]
    amp = float(np.max(np.maximum(np.abs(kept.real), np.abs(kept.imag)))) if M else 0.0
    qr, step = _quantise(kept.real, q, amp)
    qi, _ = _quantise(kept.imag, q, amp)
    rec = (qr + 1j * qi) * step
    err = float(np.sum(np.abs(kept - rec) ** 2) + np.sum(np.abs(x[order[M:]]) ** 2))
    return err, qr, qi, step


def csi_compress(grid: ChannelGrid, bit_budget: int) -> CsiReport:
    """Delay-domain truncation plus uniform quantisation.

    Every (M, q) pair that fits the budget is tried and the one with the lowest
    reconstruction error wins (ties: fewer bits, then smaller M), so a larger
    budget can never do worse than a smaller one.
    """
    if bit_budget < 16:
        raise ValueError("bit_budget must be >= 16")
    K, S, T, R = grid.dims
    x = _delay_domain(grid)
    N = x.size
    pb = _pos_bits(N)
    if HEADER_BITS + pb + 2 > bit_budget:
        raise ValueError(f"budget {bit_budget} too small to encode one tap ({HEADER_BITS + pb + 2} bits)")
    order = np.argsort(-np.abs(x), kind="stable")
    best = None
    for q in range(1, MAX_Q + 1):
        m_max = min(MAX_M, N, (bit_budget - HEADER_BITS) // (pb + 2 * q))
        for M in range(1, m_max + 1):
            err, qr, qi, step = _encode_choice(x, order, M, q)
            bits = HEADER_BITS + M * (pb + 2 * q)
            key = (err, bits, M, q)
            if best is None or key < best[0]:
                best = (key, M, q, qr, qi, step)
    (_, bits, _, _), M, q, qr, qi, step = best
    off = 2 ** (q - 1) - 1
    parts = [format(M, "08b"), format(q, "04b")]
    for pos, r, i in zip(order[:M], qr, qi):
        parts.append(format(int(pos), f"0{pb}b"))
        parts.append(format(int(r) + off, f"0{q}b"))
        parts.append(format(int(i) + off, f"0{q}b"))
    payload = "".join(parts)
    assert len(payload) == bits <= bit_budget
    return CsiReport(bit_budget, payload, (K, S, T, R), step, meta={"M": M, "q": q})


def csi_decompress(report: CsiReport, grid: GridSpec | None = None) -> ChannelGrid:
    if report.codec_id != CODEC_ID:
        raise ValueError(f"unknown codec {report.codec_id!r}")
    K, S, T, R = report.dims
    if grid is not None and (grid.n_subcarriers, grid.n_symbols) != (K, S):
        raise ValueError("grid spec does not match report dims")
    bits = report.payload
    if len(bits) < HEADER_BITS or set(bits) - {"0", "1"}:
        raise ValueError("corrupt payload header")
    M, q = int(bits[:8], 2), int(bits[8:12], 2)
    N = K * T * R
    pb = _pos_bits(N)
    if q < 1 or len(bits) != HEADER_BITS + M * (pb + 2 * q):
        raise ValueError(f"payload length {len(bits)} inconsistent with M={M}, q={q}")
    if len(bits) > report.bit_budget:
        raise ValueError("payload exceeds bit budget")
    off = 2 ** (q - 1) - 1
    x = np.zeros(N, dtype=complex)
    p = HEADER_BITS
    for _ in range(M):
        pos = int(bits[p : p + pb], 2)
        p += pb
        r = int(bits[p : p + q], 2) - off
        p += q
        i = int(bits[p : p + q], 2) - off
        p += q
        if pos >= N:
            raise ValueError(f"tap position {pos} out of range")
        x[pos] = (r + 1j * i) * report.step
    h0 = np.fft.fft(x.reshape(K, T, R), axis=0)
    vals = np.repeat(h0[:, None], S, axis=1)
    spacing = grid.spacing if grid is not None else 1.0
    return ChannelGrid(vals, spacing)


def csi_fidelity(h_true: ChannelGrid, h_hat: ChannelGrid) -> tuple[float, float]:
    """(NMSE, cosine similarity) between two grids of identical shape."""
    a, b = np.asarray(h_true.values), np.asarray(h_hat.values)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    ea = float(np.sum(np.abs(a) ** 2))
    if ea == 0:
        raise ValueError("reference channel is all zero")
    nmse = float(np.sum(np.abs(a - b) ** 2)) / ea
    eb = float(np.sum(np.abs(b) ** 2))
    cos = 0.0 if eb == 0 else abs(complex(np.vdot(b, a))) / math.sqrt(ea * eb)
    return nmse, min(cos, 1.0)
