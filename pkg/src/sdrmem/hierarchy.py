"""Leveled models of tiled macs with overlapping rectangular receptive fields.

Level 1 macs see pixels of the input frame; a level ``l >= 2`` mac sees the
units of the level ``l-1`` macs inside its RF. Levels are numbered from 1 in
the public API (``trace`` records, ``decode_topdown``), matching the usual
L1/L2 naming; the input grid is L0.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from . import core
from .classify import ClassField
from .core import Code, CSAParams, InputVector, Mac, MacConfig, OpCounter


class ConfigError(ValueError):
    """Model geometry or parameters are inconsistent."""


@dataclass(frozen=True)
class LevelConfig:
    grid: tuple[int, int]
    rf_shape: tuple[int, int]
    rf_stride: tuple[int, int]
    Q: int
    K: int
    csa: CSAParams = field(default_factory=CSAParams)
    pi_min: int = 2
    pi_max: int | None = None  # None: half of each mac's RF element count
    persistence: int = 1
    horizontal: bool = False
    topdown: bool = False

    def to_dict(self) -> dict:
        return {
            "grid": list(self.grid),
            "rf_shape": list(self.rf_shape),
            "rf_stride": list(self.rf_stride),
            "pi_min": self.pi_min,
            "pi_max": self.pi_max,
            "persistence": self.persistence,
            "horizontal": self.horizontal,
            "topdown": self.topdown,
            "mac_cfg": {"Q": self.Q, "K": self.K, "csa": self.csa.to_dict()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LevelConfig":
        d = dict(d)
        mac = dict(d.pop("mac_cfg", {}))
        try:
            return cls(
                grid=tuple(d.pop("grid")),
                rf_shape=tuple(d.pop("rf_shape")),
                rf_stride=tuple(d.pop("rf_stride", (1, 1))),
                Q=int(mac.pop("Q")),
                K=int(mac.pop("K")),
                csa=CSAParams.from_dict(mac.pop("csa", None)),
                **d,
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"bad level config: {e}") from e


@dataclass(frozen=True)
class ModelConfig:
    input_dims: tuple[int, int]  # (height, width)
    levels: tuple[LevelConfig, ...]
    class_count: int | None = None

    def to_dict(self) -> dict:
        return {
            "input_dims": list(self.input_dims),
            "levels": [lv.to_dict() for lv in self.levels],
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(
                input_dims=tuple(d["input_dims"]),
                levels=tuple(LevelConfig.from_dict(x) for x in d["levels"]),
                class_count=d.get("class_count"),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"bad model config: {e}") from e

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ModelConfig":
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read model config {path}: {e}") from e


class Level:
    """Instantiated macs of one level plus their RF wiring."""

    def __init__(self, index: int, cfg: LevelConfig, lower_dims: tuple[int, int], lower_unit_count: int):
        self.index = index
        self.cfg = cfg
        self.lower_dims = lower_dims
        self.lower_unit_count = lower_unit_count  # 1 for pixels, Q*K of lower macs otherwise
        self._check_geometry()
        rows, cols = cfg.grid
        lh, lw = lower_dims
        rh, rw = cfg.rf_shape
        sr, sc = cfg.rf_stride
        self.rf: list[np.ndarray] = []
        for r in range(rows):
            for c in range(cols):
                rr = np.arange(r * sr, min(r * sr + rh, lh))
                cc = np.arange(c * sc, min(c * sc + rw, lw))
                self.rf.append((rr[:, None] * lw + cc[None, :]).ravel())
        n_lower = lh * lw
        indptr = np.cumsum([0] + [len(x) for x in self.rf])
        self.incidence = sparse.csr_matrix(
            (np.ones(indptr[-1], dtype=np.int32), np.concatenate(self.rf), indptr), shape=(len(self.rf), n_lower)
        )
        # lower element -> macs whose RF contains it
        csc = self.incidence.tocsc()
        self.inverse = np.split(csc.indices, csc.indptr[1:-1])
        self.rf_count = np.array([len(x) for x in self.rf])
        self.pi_min = np.full(len(self.rf), cfg.pi_min)
        if cfg.pi_max is None:
            self.pi_max = self.rf_count // 2
        else:
            self.pi_max = np.minimum(cfg.pi_max, self.rf_count)
        self.macs: list[Mac] = []
        for n in self.rf_count:
            nU = int(n) * lower_unit_count
            mc = MacConfig(
                Q=cfg.Q,
                K=cfg.K,
                nU=nU,
                nH=cfg.Q * cfg.K if cfg.horizontal else 0,
                nD=nU if cfg.topdown else 0,
                csa=cfg.csa,
            )
            self.macs.append(Mac(mc))

    def _check_geometry(self) -> None:
        cfg = self.cfg
        if min(cfg.grid) < 1 or min(cfg.rf_shape) < 1 or min(cfg.rf_stride) < 1:
            raise ConfigError(f"L{self.index}: grid, rf_shape and rf_stride must be >= 1")
        for axis, name in ((0, "rows"), (1, "cols")):
            if cfg.rf_shape[axis] > self.lower_dims[axis]:
                raise ConfigError(f"L{self.index}: rf_shape {name} exceeds lower level {self.lower_dims}")
            if (cfg.grid[axis] - 1) * cfg.rf_stride[axis] >= self.lower_dims[axis]:
                raise ConfigError(f"L{self.index}: RF grid overflows lower level {name}")
        if cfg.persistence < 1:
            raise ConfigError(f"L{self.index}: persistence must be >= 1")
        if cfg.pi_min < 0 or (cfg.pi_max is not None and cfg.pi_max < cfg.pi_min):
            raise ConfigError(f"L{self.index}: need 0 <= pi_min <= pi_max")
        if cfg.pi_max is not None and cfg.pi_max > cfg.rf_shape[0] * cfg.rf_shape[1]:
            raise ConfigError(f"L{self.index}: pi_max exceeds RF element count")

    @property
    def n_macs(self) -> int:
        return len(self.macs)

    @property
    def units_per_mac(self) -> int:
        return self.cfg.Q * self.cfg.K

    def grid_index(self, m: int) -> tuple[int, int]:
        return divmod(m, self.cfg.grid[1])


def gate_macs(level: Level, lower_activity: np.ndarray) -> np.ndarray:
    """Indices of macs whose RF active-element count lies in [pi_min, pi_max]."""
    counts = level.incidence @ np.asarray(lower_activity, dtype=np.int32).ravel()
    return np.flatnonzero((counts >= level.pi_min) & (counts <= level.pi_max))


@dataclass
class TraceStep:
    t: int
    active: list[tuple[int, tuple[int, int], Code]]
    pixel_count: int

    def units(self) -> set[tuple[int, int, tuple[int, int], int, int]]:
        return {
            (self.t, lv, mac, q, w)
            for lv, mac, code in self.active
            for q, w in enumerate(code.winners)
        }


@dataclass
class Trace:
    signature: str
    steps: list[TraceStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def units(self) -> set:
        out: set = set()
        for s in self.steps:
            out |= s.units()
        return out

    def to_jsonl(self) -> str:
        lines = []
        for s in self.steps:
            active = [{"level": lv, "mac": list(mac), "code": list(code.winners)} for lv, mac, code in s.active]
            lines.append(json.dumps({"t": s.t, "active": active}))
        return "\n".join(lines) + ("\n" if lines else "")


class SequenceState:
    """Per-sequence runtime state: held codes and persistence deadlines."""

    def __init__(self, model: "Model"):
        self.codes = [np.full((lv.n_macs, lv.cfg.Q), -1, dtype=np.int64) for lv in model.levels]
        self.prev = [c.copy() for c in self.codes]
        self.hold_until = [np.zeros(lv.n_macs, dtype=np.int64) for lv in model.levels]


class Model:
    def __init__(self, config: ModelConfig):
        self.config = config
        if len(config.input_dims) != 2 or min(config.input_dims) < 1:
            raise ConfigError("input_dims must be (height, width) >= 1")
        if not config.levels:
            raise ConfigError("a model needs at least one level")
        self.levels: list[Level] = []
        lower_dims, lower_units = tuple(config.input_dims), 1
        prev_persistence = 1
        for i, lc in enumerate(config.levels, start=1):
            if lc.persistence < prev_persistence:
                raise ConfigError("persistence must be non-decreasing with level")
            prev_persistence = lc.persistence
            lv = Level(i, lc, lower_dims, lower_units)
            self.levels.append(lv)
            lower_dims, lower_units = tuple(lc.grid), lc.Q * lc.K
        self.class_field = ClassField(config.class_count, self.top_unit_count) if config.class_count else None

    @property
    def input_dims(self) -> tuple[int, int]:
        return tuple(self.config.input_dims)

    @property
    def top(self) -> Level:
        return self.levels[-1]

    @property
    def top_unit_count(self) -> int:
        return self.top.n_macs * self.top.units_per_mac

    def signature(self) -> str:
        return json.dumps(self.config.to_dict(), sort_keys=True)

    def stats(self) -> dict:
        return {
            "macs_per_level": [lv.n_macs for lv in self.levels],
            "total_units": sum(lv.n_macs * lv.units_per_mac for lv in self.levels),
            "total_weights": sum(
                m.config.n_units * (m.config.nU + m.config.nH + m.config.nD) for lv in self.levels for m in lv.macs
            ),
            "weights_set": sum(m.weight_count() for lv in self.levels for m in lv.macs),
            "stored_count": sum(m.stored_count for lv in self.levels for m in lv.macs),
        }

    def new_state(self) -> SequenceState:
        return SequenceState(self)

    # -- processing ----------------------------------------------------------

    def _lower_activity(self, li: int, frame_flat: np.ndarray, state: SequenceState) -> np.ndarray:
        if li == 0:
            return frame_flat
        return state.codes[li - 1][:, 0] >= 0

    def _u_input(self, li: int, m: int, frame_flat: np.ndarray, state: SequenceState) -> np.ndarray:
        lv = self.levels[li]
        rf = lv.rf[m]
        if li == 0:
            return np.flatnonzero(frame_flat[rf])
        below = self.levels[li - 1]
        codes = state.codes[li - 1][rf]
        pos = np.flatnonzero(codes[:, 0] >= 0)
        if pos.size == 0:
            return np.empty(0, dtype=np.intp)
        offs = np.arange(below.cfg.Q) * below.cfg.K
        return (pos[:, None] * below.units_per_mac + offs[None, :] + codes[pos]).ravel()

    def process_frame(
        self,
        frame: np.ndarray,
        t: int,
        mode: str,
        key: int,
        state: SequenceState,
        ops: OpCounter | None = None,
        executor: Executor | None = None,
    ) -> TraceStep:
        frame = np.asarray(frame, dtype=bool)
        if frame.shape != self.input_dims:
            raise ValueError(f"frame shape {frame.shape} != model input {self.input_dims}")
        if mode not in ("learning", "retrieval"):
            raise ValueError(f"unknown mode {mode!r}")
        flat = frame.ravel()
        active: list[tuple[int, tuple[int, int], Code]] = []
        for li, lv in enumerate(self.levels):
            lower = self._lower_activity(li, flat, state)
            gated = gate_macs(lv, lower)
            if ops is not None:
                ops.unit_updates += lv.n_macs
            held = state.hold_until[li] > t
            codes = state.codes[li]
            codes[~held] = -1
            todo = [int(m) for m in gated if not held[m]]

            def run(m: int, li=li, lv=lv):
                local = OpCounter() if ops is not None else None
                u = self._u_input(li, m, flat, state)
                h = np.empty(0, dtype=np.intp)
                if lv.cfg.horizontal and state.prev[li][m, 0] >= 0:
                    h = np.arange(lv.cfg.Q) * lv.cfg.K + state.prev[li][m]
                inp = InputVector(active_U=u, active_H=h)
                if inp.is_empty():
                    return m, None, local
                mac = lv.macs[m]
                acts = core.compute_activations(mac, inp, local, validate=False)
                G = core.compute_familiarity(acts)
                rng = None
                if mode == "learning" or not mac.config.csa.retrieval_argmax:
                    rng = np.random.default_rng([key, li + 1, m, t])
                code = core.select_code(acts, G, mode, rng, mac.config.csa, local)
                if mode == "learning":
                    if lv.cfg.topdown:
                        inp.active_D = u
                    core.learn(mac, inp, code, local, validate=False)
                return m, code, local

            results = executor.map(run, todo) if executor is not None and len(todo) > 1 else map(run, todo)
            for m, code, local in results:
                if local is not None:
                    ops.add(local)
                if code is None:
                    continue
                codes[m] = code.winners
                state.hold_until[li][m] = t + lv.cfg.persistence
            if mode == "learning" and lv.cfg.topdown:
                # persisting macs keep associating their held code with current RF activity
                for m in np.flatnonzero(held & (codes[:, 0] >= 0)):
                    d = self._u_input(li, int(m), flat, state)
                    if d.size:
                        core.learn(lv.macs[m], InputVector(active_D=d), Code(tuple(codes[m]), lv.cfg.K), ops)
            for m in np.flatnonzero(codes[:, 0] >= 0):
                active.append((li + 1, lv.grid_index(int(m)), Code(tuple(codes[m].tolist()), lv.cfg.K)))
        for li in range(len(self.levels)):
            state.prev[li] = state.codes[li].copy()
        return TraceStep(t=t, active=active, pixel_count=int(flat.sum()))

    def process_sequence(
        self,
        frames: Sequence[np.ndarray],
        mode: str,
        rng: np.random.Generator | int,
        ops: OpCounter | None = None,
        executor: Executor | None = None,
    ) -> Trace:
        """Run frames in order from a reset state and return their trace.

        ``rng`` is either a generator (one key is drawn from it) or the key
        itself. Per-mac streams derive from (key, level, mac, t), so results
        do not depend on how macs are scheduled.
        """
        if len(frames) == 0:
            raise ValueError("empty sequence")
        key = int(rng.integers(2**63)) if isinstance(rng, np.random.Generator) else int(rng)
        state = self.new_state()
        trace = Trace(self.signature())
        for t, frame in enumerate(frames):
            trace.steps.append(self.process_frame(frame, t, mode, key, state, ops, executor))
        return trace

    # -- readouts ------------------------------------------------------------

    def top_units(self, trace: Trace) -> np.ndarray:
        """Flat indices of top-level units active on the final trace step."""
        if not trace.steps:
            raise ValueError("empty trace")
        top = self.top
        cols = top.cfg.grid[1]
        out = []
        for lv, (r, c), code in trace.steps[-1].active:
            if lv == len(self.levels):
                out.append((r * cols + c) * top.units_per_mac + code.units())
        return np.sort(np.concatenate(out)) if out else np.empty(0, dtype=np.intp)

    def top_code_vector(self, trace: Trace) -> np.ndarray:
        vec = np.zeros(self.top_unit_count, dtype=np.uint8)
        vec[self.top_units(trace)] = 1
        return vec

    def decode_topdown(self, level: int, codes: dict[int | tuple[int, int], Code]) -> np.ndarray:
        """Reconstruct an input frame by descending D weights from ``level``."""
        if not 1 <= level <= len(self.levels):
            raise ValueError(f"no level {level}")
        for lv in self.levels[:level]:
            if not lv.cfg.topdown:
                raise ValueError(f"top-down matrices not enabled at L{lv.index}")
        lv = self.levels[level - 1]
        units: dict[int, set[int]] = {}
        for m, code in codes.items():
            if isinstance(m, tuple):
                m = m[0] * lv.cfg.grid[1] + m[1]
            units.setdefault(int(m), set()).update(code.units().tolist())
        for li in range(level - 1, -1, -1):
            lv = self.levels[li]
            below: dict[int, set[int]] = {}
            pixels: set[int] = set()
            for m, us in units.items():
                if not us:
                    continue
                rows = lv.macs[m].weights("D")[sorted(us)].any(axis=0)
                for j in np.flatnonzero(rows):
                    p, u = divmod(int(j), lv.lower_unit_count)
                    elem = int(lv.rf[m][p])
                    if li == 0:
                        pixels.add(elem)
                    else:
                        below.setdefault(elem, set()).add(u)
            units = below
        frame = np.zeros(self.input_dims, dtype=bool)
        if pixels:
            frame.ravel()[sorted(pixels)] = True
        return frame

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        """Write the model atomically (temp file in the same dir, then rename)."""
        path = Path(path)
        meta = {
            "config": self.config.to_dict(),
            "stored_counts": [[m.stored_count for m in lv.macs] for lv in self.levels],
        }
        blob = json.dumps(meta, sort_keys=True).encode()
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(struct.pack("<4sHI", core.MAGIC, core.FORMAT_VERSION, len(blob)))
                f.write(blob)
                for lv in self.levels:
                    for mac in lv.macs:
                        core.write_mac(mac, f)
                if self.class_field is not None:
                    f.write(self.class_field.to_bytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Model":
        with open(path, "rb") as f:
            head = struct.Struct("<4sHI")
            magic, version, n = head.unpack(f.read(head.size))
            if magic != core.MAGIC or version != core.FORMAT_VERSION:
                raise ValueError(f"{path}: not an SPRS model file")
            meta = json.loads(f.read(n))
            model = cls(ModelConfig.from_dict(meta["config"]))
            for lv, counts in zip(model.levels, meta["stored_counts"]):
                for i, mac in enumerate(lv.macs):
                    loaded = core.read_mac(f, mac.config.csa)
                    if loaded.config != mac.config:
                        raise ValueError(f"{path}: mac shape mismatch at L{lv.index} mac {i}")
                    loaded.stored_count = counts[i]
                    lv.macs[i] = loaded
            if model.class_field is not None:
                model.class_field = ClassField.from_bytes(f.read())
        return model


def build_model(cfg: ModelConfig | dict) -> Model:
    if isinstance(cfg, dict):
        cfg = ModelConfig.from_dict(cfg)
    return Model(cfg)


def recognition_match(trace_a: Trace, trace_b: Trace) -> float:
    """Fraction of trace_a's (t, level, mac, unit) activations also in trace_b."""
    if trace_a.signature != trace_b.signature:
        raise ValueError("traces come from different models")
    a, b = trace_a.units(), trace_b.units()
    if not a:
        return 1.0 if not b else 0.0
    return len(a & b) / len(a)


def with_csa(cfg: ModelConfig, csa: CSAParams) -> ModelConfig:
    """Copy of ``cfg`` with every level using ``csa``."""
    return replace(cfg, levels=tuple(replace(lv, csa=csa) for lv in cfg.levels))
