"""Single-mac engine: input summation, familiarity, code selection, learning.

A mac is Q winner-take-all competitive modules (CMs) of K binary units each.
Its afferent weights are binary and stored bit-packed, one row per unit
(row-major, least-significant bit first), so bit ``j`` of byte ``j // 8`` is
presynaptic input ``j``. Three afferent sources exist: bottom-up (U),
horizontal (H) and top-down (D).

Every primitive performed on a weight row is a function of ``(Q, K, |active
set|)`` only. ``OpCounter`` records those primitives so callers can check
that storage and retrieval cost does not grow with the number of stored items.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, ClassVar

import numpy as np

SOURCES = ("U", "H", "D")
MAGIC = b"SPRS"
FORMAT_VERSION = 1

_MAC_HEADER = struct.Struct("<4sH5I")


class InputShapeError(ValueError):
    """An input index or code does not fit the mac's dimensions."""


class EmptyInputError(ValueError):
    """All afferent sources are empty; callers must gate such macs out."""


@dataclass(frozen=True)
class CSAParams:
    beta_max: float = 12.0
    g_exponent: float = 1.0
    g_uniform_floor: float = 0.02
    source_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    retrieval_argmax: bool = True

    def __post_init__(self):
        if not self.beta_max > 0:
            raise ValueError("beta_max must be > 0")
        if self.g_exponent < 1:
            raise ValueError("g_exponent must be >= 1")
        if not 0 <= self.g_uniform_floor < 1:
            raise ValueError("g_uniform_floor must be in [0, 1)")
        w = tuple(float(x) for x in self.source_weights)
        if len(w) != 3 or min(w) < 0 or w[0] <= 0:
            raise ValueError("source_weights must be 3 non-negative values with w_U > 0")
        object.__setattr__(self, "source_weights", w)

    def beta(self, G: float) -> float:
        return self.beta_max * G**self.g_exponent

    def to_dict(self) -> dict:
        return {
            "beta_max": self.beta_max,
            "g_exponent": self.g_exponent,
            "g_uniform_floor": self.g_uniform_floor,
            "source_weights": list(self.source_weights),
            "retrieval_argmax": self.retrieval_argmax,
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "CSAParams":
        d = dict(d or {})
        if "source_weights" in d:
            d["source_weights"] = tuple(d["source_weights"])
        return cls(**d)


@dataclass(frozen=True)
class MacConfig:
    Q: int
    K: int
    nU: int
    nH: int = 0
    nD: int = 0
    csa: CSAParams = field(default_factory=CSAParams)

    def __post_init__(self):
        if self.Q < 1 or self.K < 2 or self.nU < 1:
            raise ValueError(f"need Q >= 1, K >= 2, nU >= 1 (got Q={self.Q}, K={self.K}, nU={self.nU})")
        if self.nH < 0 or self.nD < 0:
            raise ValueError("nH and nD must be >= 0")

    @property
    def n_units(self) -> int:
        return self.Q * self.K

    def n_inputs(self, source: str) -> int:
        return {"U": self.nU, "H": self.nH, "D": self.nD}[source]


@dataclass(frozen=True)
class Code:
    """An SDR: one winning unit index per competitive module."""

    winners: tuple[int, ...]
    K: int

    def __post_init__(self):
        w = tuple(map(int, self.winners))
        if not w:
            raise InputShapeError("a code needs at least one CM")
        if min(w) < 0 or max(w) >= self.K:
            raise InputShapeError(f"winner out of range [0, {self.K})")
        object.__setattr__(self, "winners", w)

    @property
    def Q(self) -> int:
        return len(self.winners)

    def units(self) -> np.ndarray:
        """Flat unit indices (``cm * K + winner``) of the Q active units."""
        return np.arange(self.Q, dtype=np.intp) * self.K + np.asarray(self.winners, dtype=np.intp)


@dataclass
class InputVector:
    active_U: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    active_H: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    active_D: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))

    def __post_init__(self):
        for s in SOURCES:
            name = "active_" + s
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.intp).reshape(-1))

    def get(self, source: str) -> np.ndarray:
        return getattr(self, "active_" + source)

    def is_empty(self) -> bool:
        return all(self.get(s).size == 0 for s in SOURCES)


@dataclass
class UnitActivations:
    V: np.ndarray
    cm_max: np.ndarray
    Q: int
    K: int


@dataclass
class OpCounter:
    """Primitive operation tallies.

    ``row_reads`` counts weight rows touched, ``bit_reads`` individual weight
    bits read, ``unit_updates`` per-unit arithmetic steps and ``weight_writes``
    weight-set attempts (whether or not the bit was already 1).
    """

    row_reads: int = 0
    bit_reads: int = 0
    unit_updates: int = 0
    weight_writes: int = 0

    FIELDS: ClassVar[tuple[str, ...]] = ("row_reads", "bit_reads", "unit_updates", "weight_writes")

    def add(self, other: "OpCounter") -> None:
        self.row_reads += other.row_reads
        self.bit_reads += other.bit_reads
        self.unit_updates += other.unit_updates
        self.weight_writes += other.weight_writes

    def as_dict(self) -> dict[str, int]:
        return {
            "row_reads": self.row_reads,
            "bit_reads": self.bit_reads,
            "unit_updates": self.unit_updates,
            "weight_writes": self.weight_writes,
        }

    def total(self) -> int:
        return self.row_reads + self.bit_reads + self.unit_updates + self.weight_writes


def _row_bytes(n: int) -> int:
    return (n + 7) // 8


class Mac:
    """One SDR coding field with bit-packed binary U/H/D weights."""

    def __init__(self, config: MacConfig):
        self.config = config
        rows = config.n_units
        self.W = {s: np.zeros((rows, _row_bytes(config.n_inputs(s))), dtype=np.uint8) for s in SOURCES}
        self.stored_count = 0

    @property
    def Q(self) -> int:
        return self.config.Q

    @property
    def K(self) -> int:
        return self.config.K

    def weights(self, source: str = "U") -> np.ndarray:
        """Unpacked boolean view, shape ``(Q*K, n_inputs)``."""
        n = self.config.n_inputs(source)
        return np.unpackbits(self.W[source], axis=1, count=n, bitorder="little").astype(bool)

    def weight_count(self) -> int:
        return sum(int(np.unpackbits(w).sum()) for w in self.W.values())

    def copy(self) -> "Mac":
        m = Mac(self.config)
        m.W = {s: w.copy() for s, w in self.W.items()}
        m.stored_count = self.stored_count
        return m

    # convenience wrappers
    def activations(self, inp: InputVector, ops: OpCounter | None = None) -> UnitActivations:
        return compute_activations(self, inp, ops)

    def learn(self, inp: InputVector, code: Code, ops: OpCounter | None = None) -> int:
        return learn(self, inp, code, ops)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_mac(self, buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, csa: CSAParams | None = None) -> "Mac":
        return read_mac(io.BytesIO(data), csa)


def _check_indices(idx: np.ndarray, n: int, source: str) -> None:
    if idx.size == 0:
        return
    if n == 0 or idx.min() < 0 or idx.max() >= n:
        raise InputShapeError(f"{source} index out of range [0, {n})")
    if np.unique(idx).size != idx.size:
        raise InputShapeError(f"duplicate {source} indices")


def _gather_bits(packed: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Weight bits ``W[:, idx]`` as a uint8 array of shape (rows, len(idx))."""
    return (packed[:, idx >> 3] >> (idx & 7).astype(np.uint8)) & 1


def compute_activations(
    mac: Mac, inp: InputVector, ops: OpCounter | None = None, validate: bool = True
) -> UnitActivations:
    cfg = mac.config
    weights = cfg.csa.source_weights
    V = np.ones(cfg.n_units)
    any_source = False
    for s, w in zip(SOURCES, weights):
        idx = inp.get(s)
        if validate:
            _check_indices(idx, cfg.n_inputs(s), s)
        if idx.size == 0:
            continue
        any_source = True
        frac = _gather_bits(mac.W[s], idx).sum(axis=1) / idx.size
        if ops is not None:
            ops.row_reads += cfg.n_units
            ops.bit_reads += cfg.n_units * idx.size
        if w == 1.0:
            V *= frac
        elif w != 0.0:
            V *= frac**w
    if not any_source:
        raise EmptyInputError("all input sources are empty")
    if ops is not None:
        ops.unit_updates += cfg.n_units
    return UnitActivations(V=V, cm_max=V.reshape(cfg.Q, cfg.K).max(axis=1), Q=cfg.Q, K=cfg.K)


def compute_familiarity(acts: UnitActivations) -> float:
    """Mean over CMs of the maximal normalized input, in [0, 1]."""
    if acts.cm_max.shape != (acts.Q,):
        raise InputShapeError("cm_max must have one entry per CM")
    return float(acts.cm_max.mean())


def win_probabilities(acts: UnitActivations, G: float, params: CSAParams) -> np.ndarray:
    """Per-CM winner distribution, shape (Q, K), used in sampling mode."""
    V = acts.V.reshape(acts.Q, acts.K)
    if G <= params.g_uniform_floor:
        return np.full((acts.Q, acts.K), 1.0 / acts.K)
    z = params.beta(G) * V
    z = np.exp(z - z.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def select_code(
    acts: UnitActivations,
    G: float,
    mode: str,
    rng: np.random.Generator | None,
    params: CSAParams | None = None,
    ops: OpCounter | None = None,
) -> Code:
    """Pick one winner per CM.

    Retrieval with ``retrieval_argmax`` takes the maximal unit of each CM
    (lowest index on ties). Otherwise each CM samples from a softmax over its
    units whose gain rises with familiarity; at or below the uniform floor
    the draw is exactly uniform.
    """
    if mode not in ("learning", "retrieval"):
        raise ValueError(f"unknown mode {mode!r}")
    params = params or CSAParams()
    if ops is not None:
        ops.unit_updates += acts.Q * acts.K
    if mode == "retrieval" and params.retrieval_argmax:
        return Code(acts.V.reshape(acts.Q, acts.K).argmax(axis=1).tolist(), acts.K)
    if rng is None:
        raise ValueError("sampling mode needs an rng")
    if G <= params.g_uniform_floor:
        winners = rng.integers(0, acts.K, size=acts.Q)
    else:
        cdf = np.cumsum(win_probabilities(acts, G, params), axis=1)
        u = rng.random(acts.Q)[:, None] * cdf[:, -1:]
        winners = np.minimum((cdf <= u).sum(axis=1), acts.K - 1)
    return Code(winners.tolist(), acts.K)


def learn(
    mac: Mac, inp: InputVector, code: Code, ops: OpCounter | None = None, validate: bool = True
) -> int:
    """Set every (active input, winner) weight to 1; return count of 0->1 flips."""
    cfg = mac.config
    if code.Q != cfg.Q or code.K != cfg.K:
        raise InputShapeError(f"code shape ({code.Q}, {code.K}) != mac ({cfg.Q}, {cfg.K})")
    rows = code.units()
    newly = 0
    for s in SOURCES:
        idx = inp.get(s)
        if validate:
            _check_indices(idx, cfg.n_inputs(s), s)
        if idx.size == 0:
            continue
        if ops is not None:
            ops.row_reads += cfg.Q
            ops.weight_writes += cfg.Q * idx.size
        bits = np.zeros(mac.W[s].shape[1] * 8, dtype=bool)
        bits[idx] = True
        mask = np.packbits(bits, bitorder="little")
        old = mac.W[s][rows]
        newly += int(np.unpackbits(mask & ~old).sum())
        mac.W[s][rows] = old | mask
    mac.stored_count += 1
    return newly


def code_intersection(a: Code, b: Code) -> int:
    if a.Q != b.Q or a.K != b.K:
        raise InputShapeError("codes have different shapes")
    return sum(x == y for x, y in zip(a.winners, b.winners))


def store(mac: Mac, inp: InputVector, rng: np.random.Generator, ops: OpCounter | None = None) -> Code:
    """One learning event: activations, familiarity, sampled code, learn."""
    acts = compute_activations(mac, inp, ops)
    code = select_code(acts, compute_familiarity(acts), "learning", rng, mac.config.csa, ops)
    learn(mac, inp, code, ops)
    return code


def retrieve(mac: Mac, inp: InputVector, ops: OpCounter | None = None) -> tuple[Code, float]:
    acts = compute_activations(mac, inp, ops)
    G = compute_familiarity(acts)
    return select_code(acts, G, "retrieval", None, mac.config.csa, ops), G


# -- serialization -----------------------------------------------------------

def write_mac(mac: Mac, f: BinaryIO) -> None:
    c = mac.config
    f.write(_MAC_HEADER.pack(MAGIC, FORMAT_VERSION, c.Q, c.K, c.nU, c.nH, c.nD))
    for s in SOURCES:
        f.write(np.ascontiguousarray(mac.W[s]).tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError("truncated SPRS data")
    return data


def read_mac(f: BinaryIO, csa: CSAParams | None = None) -> Mac:
    magic, version, Q, K, nU, nH, nD = _MAC_HEADER.unpack(_read_exact(f, _MAC_HEADER.size))
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported SPRS version {version}")
    mac = Mac(MacConfig(Q=Q, K=K, nU=nU, nH=nH, nD=nD, csa=csa or CSAParams()))
    for s in SOURCES:
        shape = mac.W[s].shape
        mac.W[s] = np.frombuffer(_read_exact(f, shape[0] * shape[1]), dtype=np.uint8).reshape(shape).copy()
    return mac


def random_input(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """``k`` distinct sorted indices from ``range(n)``."""
    return np.sort(rng.choice(n, size=k, replace=False))

