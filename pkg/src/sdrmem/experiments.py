"""Experiment runners: MNIST classification, episodic sanity replay,
snippet-sequence LOO evaluation, fixed-time op benchmark, synthetic data.

Each runner takes an ``ExperimentConfig``, writes its artifacts to
``cfg.out`` and returns the report dict that it also saves as
``report.json``. Only ``report.json`` carries wall-clock numbers; every other
artifact is a pure function of (config, seed, data).
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import core
from .classify import LinearHyperparams, fold_report_csv, loo_evaluate, vectors_to_csv, vectors_to_jsonl
from .formats import DataError, iter_snippet_dirs, load_mnist, read_pbm, read_pgm, write_json
from .hierarchy import ConfigError, Model, ModelConfig, build_model, recognition_match
from .preprocess import MNIST_SHAPE, Snippet, augment_dataset, preprocess_mnist, preprocess_video
from .synth import SynthConfig, generate, write_snippets

KINDS = ("mnist", "video", "synthetic-seq", "fixed-time", "sanity")
DEFAULT_CHECKPOINTS = (0, 10, 100, 1000, 10000)


class AcceptanceError(RuntimeError):
    """A run finished but missed its asserted target."""


@dataclass
class ExperimentConfig:
    kind: str
    model: dict | str | None = None  # inline model config or a path to one
    data: dict = field(default_factory=dict)  # images/labels for MNIST, dir for video
    train_per_class: int = 200
    test_per_class: int = 100
    seed: int = 0
    out: str = "out"
    params: dict = field(default_factory=dict)
    base_dir: str = "."  # relative paths resolve against the config file's folder

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("train/test counts must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    def path(self, p: str) -> Path:
        p = Path(os.path.expanduser(p))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def model_config(self) -> ModelConfig:
        if self.model is None:
            raise ConfigError(f"{self.kind} experiment needs a model config")
        if isinstance(self.model, str):
            return ModelConfig.load(self.path(self.model))
        return ModelConfig.from_dict(self.model)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        known = {"kind", "model", "data", "train_per_class", "test_per_class", "seed", "out", "params"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "kind" not in d:
            raise ConfigError("config needs a 'kind'")
        return cls(**d, base_dir=base_dir)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(d, base_dir=str(path.parent))


def bundled_config(name: str) -> ExperimentConfig:
    """One of the configs shipped in ``sdrmem/configs`` (``mnist``, ``weizmann`` ...)."""
    res = resources.files("sdrmem") / "configs" / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return ExperimentConfig.from_dict(json.loads(res.read_text()))


@contextmanager
def _executor(threads: int):
    if threads <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex


def _map(ex, fn, items):
    return list(ex.map(fn, items)) if ex is not None else [fn(x) for x in items]


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _finish(cfg: ExperimentConfig, report: dict) -> dict:
    report = {"kind": cfg.kind, "seed": int(cfg.seed), "config": cfg.to_dict(), **report}
    write_json(Path(cfg.out) / "report.json", report)
    return report


# -- MNIST -----------------------------------------------------------------


def split_per_class(labels: np.ndarray, n_train: int, n_test: int, rng: np.random.Generator):
    """Seeded per-class draw: ``n_train`` items per class, then ``n_test`` more from the rest."""
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if idx.size < n_train + n_test:
            raise DataError(f"class {c} has {idx.size} items, need {n_train + n_test}")
        train.extend(idx[:n_train].tolist())
        test.extend(idx[n_train : n_train + n_test].tolist())
    return rng.permutation(train), np.sort(test)


def load_mnist_data(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    try:
        images, labels = cfg.data["images"], cfg.data["labels"]
    except KeyError as e:
        raise ConfigError(f"mnist data needs {e.args[0]!r}") from e
    return load_mnist(cfg.path(images), cfg.path(labels))


def _preprocess_all(raw: np.ndarray, threshold: float, ex) -> tuple[np.ndarray, np.ndarray]:
    out = _map(ex, lambda x: preprocess_mnist(x, threshold), list(raw))
    return np.array([f for f, _ in out]), np.array([e for _, e in out])


def _check_input(model: Model, shape) -> None:
    if tuple(shape) != model.input_dims:
        raise ConfigError(f"model input {model.input_dims} does not match data frames {tuple(shape)}")


def run_mnist(cfg: ExperimentConfig, threads: int = 1, X=None, y=None) -> dict:
    """Single-trial class-field training, retrieval-mode testing."""
    if X is None:
        X, y = load_mnist_data(cfg)
    model = build_model(cfg.model_config())
    if model.class_field is None:
        raise ConfigError("mnist model needs class_count")
    _check_input(model, MNIST_SHAPE)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    train, test = split_per_class(np.asarray(y), cfg.train_per_class, cfg.test_per_class, rng)
    threshold = float(cfg.params.get("edge_threshold", 0.25))

    with _executor(threads) as ex:
        t0 = time.perf_counter()
        used = np.concatenate([train, test])
        frames = np.zeros((len(X),) + MNIST_SHAPE, dtype=bool)
        empty = np.zeros(len(X), dtype=bool)
        frames[used], empty[used] = _preprocess_all(X[used], threshold, ex)
        prep_time = time.perf_counter() - t0

        t0 = time.perf_counter()
        for i in train:
            trace = model.process_sequence([frames[i]], "learning", rng, executor=ex)
            model.class_field.train(model.top_units(trace), int(y[i]))
        train_time = time.perf_counter() - t0

        t0 = time.perf_counter()

        def readout(i):
            trace = model.process_sequence([frames[i]], "retrieval", 0)
            return model.class_field.classify(model.top_units(trace))

        results = _map(ex, readout, test)
        test_time = time.perf_counter() - t0

    rows, per_class = [], {}
    for i, r in zip(test, results):
        truth = int(y[i])
        rows.append([int(i), truth, r.label, int(r.label == truth), int(r.no_evidence)])
        per_class.setdefault(truth, []).append(r.label == truth)
    (Path(cfg.out) / "predictions.csv").write_text(_csv(rows, ["index", "label", "predicted", "correct", "no_evidence"]))
    model.save(Path(cfg.out) / "model.sprs")
    acc = sum(r[3] for r in rows) / len(rows)
    return _finish(
        cfg,
        {
            "accuracy": acc,
            "per_class_accuracy": {str(c): float(np.mean(v)) for c, v in sorted(per_class.items())},
            "n_train": len(train),
            "n_test": len(test),
            "empty_inputs": int(empty[used].sum()),
            "preprocess_seconds": prep_time,
            "train_seconds": train_time,
            "test_seconds": test_time,
            "model": model.stats(),
        },
    )


def run_sanity(cfg: ExperimentConfig, threads: int = 1, X=None, y=None) -> dict:
    """Store each training item once, replay all in retrieval mode, compare traces."""
    if X is None:
        X, y = load_mnist_data(cfg)
    model = build_model(cfg.model_config())
    _check_input(model, MNIST_SHAPE)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    train, _ = split_per_class(np.asarray(y), cfg.train_per_class, 0, rng)
    if len(train) == 0:
        raise DataError("sanity run needs at least one training item")
    threshold = float(cfg.params.get("edge_threshold", 0.25))

    with _executor(threads) as ex:
        frames, _ = _preprocess_all(X[train], threshold, ex)
        t0 = time.perf_counter()
        stored = [model.process_sequence([f], "learning", rng, executor=ex) for f in frames]
        train_time = time.perf_counter() - t0
        t0 = time.perf_counter()
        replays = _map(ex, lambda f: model.process_sequence([f], "retrieval", 0), list(frames))
        test_time = time.perf_counter() - t0

    matches = [recognition_match(a, b) for a, b in zip(stored, replays)]
    rows = [[int(i), int(y[i]), f"{m:.6f}", int(m == 1.0)] for i, m in zip(train, matches)]
    (Path(cfg.out) / "predictions.csv").write_text(_csv(rows, ["index", "label", "match", "exact"]))
    model.save(Path(cfg.out) / "model.sprs")
    return _finish(
        cfg,
        {
            "recognition_match": float(np.mean(matches)),
            "exact_recall_rate": float(np.mean([m == 1.0 for m in matches])),
            "n_items": len(train),
            "train_seconds": train_time,
            "test_seconds": test_time,
            "model": model.stats(),
        },
    )


# -- snippet sequences -----------------------------------------------------


def load_snippets(root: str | os.PathLike, target: int = 10, threshold: float = 0.25) -> list[Snippet]:
    """Snippet directories: PBM frames are used as is, PGM frames are preprocessed with the sidecar bbox."""
    out = []
    for d in iter_snippet_dirs(root):
        try:
            meta = json.loads((d / "meta.json").read_text())
            label, actor = int(meta["label"]), int(meta["actor"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"{d}/meta.json: malformed sidecar ({e})") from e
        pbm, pgm = sorted(d.glob("*.pbm")), sorted(d.glob("*.pgm"))
        if pbm:
            frames = [read_pbm(p) for p in pbm]
        elif pgm:
            if not meta.get("bbox"):
                raise DataError(f"{d}/meta.json: gray frames need a bbox")
            frames = preprocess_video([read_pgm(p) for p in pgm], tuple(meta["bbox"]), target, threshold)
        else:
            raise DataError(f"{d}: no frames")
        out.append(Snippet(frames=frames, label=label, actor=actor, variant=int(meta.get("variant", 0)), name=d.name))
    if not out:
        raise DataError(f"{root}: no snippet directories")
    return out


def _snippet_source(cfg: ExperimentConfig) -> list[Snippet]:
    if cfg.kind == "synthetic-seq" and "dir" not in cfg.data:
        sc = SynthConfig(**cfg.params.get("synthetic", {}))
        return generate(sc, np.random.default_rng([cfg.seed, 1]))
    if "dir" not in cfg.data:
        raise ConfigError("video data needs 'dir'")
    return load_snippets(
        cfg.path(cfg.data["dir"]),
        int(cfg.params.get("target_frames", 10)),
        float(cfg.params.get("edge_threshold", 0.25)),
    )


def snippet_vectors(cfg: ExperimentConfig, threads: int = 1, snippets=None):
    """Unsupervised single pass over the augmented set; one top-level code vector per snippet."""
    model = build_model(cfg.model_config())
    if snippets is None:
        snippets = _snippet_source(cfg)
    _check_input(model, snippets[0].frames[0].shape)
    if len({s.actor for s in snippets}) < 2:
        raise DataError("leave-one-actor-out needs snippets from at least two actors")
    rng = np.random.default_rng(cfg.seed)
    augmented = augment_dataset(
        snippets, int(cfg.params.get("variants", 5)), rng, float(cfg.params.get("noise_fraction", 0.2))
    )
    order = rng.permutation(len(augmented))
    vectors = np.zeros((len(augmented), model.top_unit_count), dtype=np.uint8)
    t0 = time.perf_counter()
    with _executor(threads) as ex:
        for i in order:
            trace = model.process_sequence(augmented[i].frames, "learning", rng, executor=ex)
            vectors[i] = model.top_code_vector(trace)
    return model, augmented, vectors, time.perf_counter() - t0


def run_video(cfg: ExperimentConfig, threads: int = 1, snippets=None) -> dict:
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    model, aug, V, train_time = snippet_vectors(cfg, threads, snippets)
    labels = np.array([s.label for s in aug])
    actors = np.array([s.actor for s in aug])
    originals = np.array([s.is_original for s in aug])
    hp = LinearHyperparams(**cfg.params.get("svm", {}))
    t0 = time.perf_counter()
    acc, folds = loo_evaluate(V, labels, actors, originals, hp)
    test_time = time.perf_counter() - t0

    rows = []
    for f in folds:
        for i, truth, pred in f.predictions:
            rows.append([aug[i].name, f.actor, truth, pred, int(truth == pred)])
    rows.sort(key=lambda r: r[0])
    out = Path(cfg.out)
    (out / "predictions.csv").write_text(_csv(rows, ["snippet", "actor", "label", "predicted", "correct"]))
    (out / "folds.csv").write_text(fold_report_csv(folds))
    (out / "vectors.csv").write_text(vectors_to_csv(V, labels, actors))
    model.save(out / "model.sprs")
    per_class = {}
    for r in rows:
        per_class.setdefault(r[2], []).append(r[4])
    n_classes = len(np.unique(labels))
    return _finish(
        cfg,
        {
            "accuracy": acc,
            "chance": 1.0 / n_classes,
            "per_class_accuracy": {str(c): float(np.mean(v)) for c, v in sorted(per_class.items())},
            "per_fold": [{"actor": f.actor, "correct": f.correct, "total": f.total} for f in folds],
            "n_snippets": len(aug),
            "n_originals": int(originals.sum()),
            "vector_length": int(V.shape[1]),
            "mean_active_bits": float(V.sum(axis=1).mean()),
            "train_seconds": train_time,
            "test_seconds": test_time,
            "model": model.stats(),
        },
    )


def run_export_vectors(cfg: ExperimentConfig, threads: int = 1, snippets=None) -> dict:
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    model, aug, V, train_time = snippet_vectors(cfg, threads, snippets)
    labels = [s.label for s in aug]
    actors = [s.actor for s in aug]
    out = Path(cfg.out)
    (out / "vectors.csv").write_text(vectors_to_csv(V, labels, actors))
    (out / "vectors.jsonl").write_text(vectors_to_jsonl(V, labels, actors))
    model.save(out / "model.sprs")
    return _finish(cfg, {"n_vectors": len(aug), "vector_length": int(V.shape[1]), "train_seconds": train_time})


# -- fixed-time benchmark --------------------------------------------------


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def run_fixed_time(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Fill one mac with random items, probing store/retrieve cost at checkpoints.

    Probes run on a copy of the mac so they never add to the stored set.
    Raises ``AcceptanceError`` if op counts differ between checkpoints.
    """
    p = cfg.params
    Q, K, n, k = int(p.get("Q", 8)), int(p.get("K", 8)), int(p.get("n_inputs", 256)), int(p.get("active", 24))
    checkpoints = sorted(int(c) for c in p.get("checkpoints", DEFAULT_CHECKPOINTS))
    if checkpoints and checkpoints[0] < 0:
        raise ConfigError("checkpoints must be >= 0")
    reps = int(p.get("timing_reps", 200))
    mac = core.Mac(core.MacConfig(Q=Q, K=K, nU=n))
    rng = np.random.default_rng(cfg.seed)
    probe_rng = np.random.default_rng([cfg.seed, 1])
    probes = [core.InputVector(core.random_input(probe_rng, n, k)) for _ in range(reps)]
    rows, series = [], []
    stored = 0
    for cp in checkpoints:
        while stored < cp:
            core.store(mac, core.InputVector(core.random_input(rng, n, k)), rng)
            stored += 1
        store_ops, retr_ops = core.OpCounter(), core.OpCounter()
        probe = mac.copy()
        core.store(probe, probes[0], np.random.default_rng(0), store_ops)
        core.retrieve(mac, probes[0], retr_ops)
        cyc = itertools.cycle(probes)

        def do_store():
            core.store(mac.copy(), next(cyc), probe_rng)

        def do_retrieve():
            core.retrieve(mac, next(cyc))

        # copying is part of every store sample, so it cancels out in the ratio
        t_store = _median_time(do_store, reps)
        t_retr = _median_time(do_retrieve, reps)
        for op, ops, t in (("store", store_ops, t_store), ("retrieve", retr_ops, t_retr)):
            d = ops.as_dict()
            rows.append([cp, op, d["row_reads"], d["bit_reads"], d["unit_updates"], d["weight_writes"], f"{t:.9f}"])
            series.append({"checkpoint": cp, "op": op, **d, "median_seconds": t})
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out) / "optime.csv").write_text(
        _csv(rows, ["checkpoint", "op", "row_reads", "bit_reads", "unit_updates", "weight_writes", "median_seconds"])
    )
    counts = {}
    for s in series:
        counts.setdefault(s["op"], set()).add(tuple(s[f] for f in core.OpCounter.FIELDS))
    constant = all(len(v) == 1 for v in counts.values())
    ratios = {}
    for op in ("store", "retrieve"):
        ts = [s["median_seconds"] for s in series if s["op"] == op]
        ratios[op] = ts[-1] / ts[0] if len(ts) > 1 and ts[0] > 0 else 1.0
    report = _finish(
        cfg,
        {
            "ops_constant": constant,
            "wall_ratio_last_first": ratios,
            "stored_count": mac.stored_count,
            "series": series,
        },
    )
    if not constant:
        raise AcceptanceError("primitive-op counts changed with the number of stored items")
    return report


# -- synthetic data --------------------------------------------------------


def gen_synthetic(cfg: ExperimentConfig) -> dict:
    sc = SynthConfig(**cfg.params.get("synthetic", {}))
    snippets = generate(sc, np.random.default_rng([cfg.seed, 1]))
    dirs = write_snippets(snippets, cfg.out)
    return {"snippets": len(dirs), "out": str(cfg.out)}
