"""Supervised readouts over top-level code vectors.

``ClassField`` is a localist field of class units with binary top-down
weights from every top-level unit: training ORs the active units into the
class row, classification takes the row with the largest overlap.

``train_linear`` is a one-vs-rest linear SVM fit by seeded stochastic
subgradient descent on the hinge loss, used for the leave-one-actor-out
snippet protocol.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

_CF_HEADER = struct.Struct("<4sII")
_CF_MAGIC = b"SPCF"


@dataclass
class Readout:
    label: int
    scores: np.ndarray
    no_evidence: bool = False


class ClassField:
    def __init__(self, n_classes: int, n_units: int):
        if n_classes < 1 or n_units < 1:
            raise ValueError("need at least one class and one unit")
        self.C = n_classes
        self.n_units = n_units
        self.D = np.zeros((n_classes, n_units), dtype=bool)

    def train(self, units: Iterable[int], label: int) -> int:
        if not 0 <= label < self.C:
            raise ValueError(f"label {label} outside [0, {self.C})")
        idx = np.asarray(list(units) if not isinstance(units, np.ndarray) else units, dtype=np.intp)
        new = int((~self.D[label, idx]).sum()) if idx.size else 0
        self.D[label, idx] = True
        return new

    def scores(self, units: Iterable[int]) -> np.ndarray:
        idx = np.asarray(list(units) if not isinstance(units, np.ndarray) else units, dtype=np.intp)
        return self.D[:, idx].sum(axis=1)

    def classify(self, units: Iterable[int]) -> Readout:
        """Winner is the class with the largest summed input; ties go low."""
        if not self.D.any():
            return Readout(0, np.zeros(self.C, dtype=np.int64), no_evidence=True)
        s = self.scores(units)
        return Readout(int(np.argmax(s)), s, no_evidence=bool(s.max() == 0))

    def to_bytes(self) -> bytes:
        bits = np.packbits(self.D, axis=1, bitorder="little")
        return _CF_HEADER.pack(_CF_MAGIC, self.C, self.n_units) + bits.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ClassField":
        magic, C, n = _CF_HEADER.unpack_from(data)
        if magic != _CF_MAGIC:
            raise ValueError("not a class-field block")
        cf = cls(C, n)
        row = (n + 7) // 8
        bits = np.frombuffer(data, dtype=np.uint8, count=C * row, offset=_CF_HEADER.size).reshape(C, row)
        cf.D = np.unpackbits(bits, axis=1, count=n, bitorder="little").astype(bool)
        return cf


def train_class_field(cf: ClassField, top_units: Iterable[int], label: int) -> int:
    return cf.train(top_units, label)


def classify(cf: ClassField, top_units: Iterable[int]) -> Readout:
    return cf.classify(top_units)


# -- linear SVM --------------------------------------------------------------

@dataclass(frozen=True)
class LinearHyperparams:
    epochs: int = 50
    step: float = 0.1
    reg: float = 1e-4
    seed: int = 0


@dataclass
class LinearModel:
    classes: np.ndarray
    W: np.ndarray  # (n_classes, dim)
    b: np.ndarray

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.W.T + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def train_linear(X: np.ndarray, y: Sequence[int], hp: LinearHyperparams = LinearHyperparams()) -> LinearModel:
    """One-vs-rest hinge-loss SVM by seeded stochastic subgradient descent.

    Identical (vector, label) rows are merged into one row weighted by its
    relative frequency, so the fit depends on the empirical distribution of
    the data only: duplicating the whole training set, or reordering it,
    gives the same model bit for bit.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, dim) with one label per row")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("need at least two classes")
    rows, inverse, counts = np.unique(
        np.column_stack([y.astype(np.float64), X]), axis=0, return_inverse=True, return_counts=True
    )
    Xu, yu = rows[:, 1:], rows[:, 0]
    weight = counts * (len(rows) / counts.sum())
    target = np.where(yu[:, None] == classes[None, :].astype(np.float64), 1.0, -1.0)

    rng = np.random.default_rng(hp.seed)
    W = np.zeros((classes.size, X.shape[1]))
    b = np.zeros(classes.size)
    t = 0
    for _ in range(hp.epochs):
        for i in rng.permutation(len(rows)):
            t += 1
            eta = hp.step / np.sqrt(t)
            x, tgt = Xu[i], target[i]
            viol = tgt * (W @ x + b) < 1.0
            W *= 1.0 - eta * hp.reg
            if viol.any():
                g = eta * weight[i] * tgt[viol]
                W[viol] += g[:, None] * x[None, :]
                b[viol] += g
    return LinearModel(classes=classes, W=W, b=b)


@dataclass
class FoldSpec:
    actor: int
    train_idx: np.ndarray
    test_idx: np.ndarray


@dataclass
class FoldResult:
    actor: int
    correct: int
    total: int
    predictions: list[tuple[int, int, int]] = field(default_factory=list)  # (item, true, predicted)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


def make_folds(actors: Sequence[int], originals: Sequence[bool]) -> list[FoldSpec]:
    """Leave-one-actor-out: train on other actors (all variants), test on originals."""
    actors = np.asarray(actors)
    originals = np.asarray(originals, dtype=bool)
    ids = np.unique(actors)
    if ids.size < 2:
        raise ValueError("leave-one-out needs at least two actors")
    folds = []
    for a in ids:
        test = np.flatnonzero((actors == a) & originals)
        if test.size == 0:
            raise ValueError(f"actor {a} has no original snippets")
        folds.append(FoldSpec(int(a), np.flatnonzero(actors != a), test))
    return folds


def loo_evaluate(
    X: np.ndarray,
    labels: Sequence[int],
    actors: Sequence[int],
    originals: Sequence[bool],
    hp: LinearHyperparams = LinearHyperparams(),
) -> tuple[float, list[FoldResult]]:
    X = np.asarray(X)
    labels = np.asarray(labels)
    results = []
    for fold in make_folds(actors, originals):
        model = train_linear(X[fold.train_idx], labels[fold.train_idx], hp)
        pred = model.predict(X[fold.test_idx])
        truth = labels[fold.test_idx]
        results.append(
            FoldResult(
                actor=fold.actor,
                correct=int((pred == truth).sum()),
                total=len(truth),
                predictions=[(int(i), int(t), int(p)) for i, t, p in zip(fold.test_idx, truth, pred)],
            )
        )
    correct = sum(r.correct for r in results)
    total = sum(r.total for r in results)
    return correct / total, results


def fold_report_csv(results: Sequence[FoldResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["actor", "correct", "total", "accuracy"])
    for r in results:
        w.writerow([r.actor, r.correct, r.total, f"{r.accuracy:.6f}"])
    return buf.getvalue()


# -- snippet-vector exchange -------------------------------------------------

def vectors_to_csv(X: np.ndarray, labels: Sequence[int], actors: Sequence[int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row, lab, act in zip(np.asarray(X, dtype=np.uint8), labels, actors):
        w.writerow([int(lab), int(act), *row.tolist()])
    return buf.getvalue()


def vectors_from_csv(text: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    data = np.array(rows, dtype=np.int64)
    return data[:, 2:].astype(np.uint8), data[:, 0], data[:, 1]


def vectors_to_jsonl(X: np.ndarray, labels: Sequence[int], actors: Sequence[int]) -> str:
    X = np.asarray(X)
    lines = [
        json.dumps({"label": int(lab), "actor": int(act), "dim": X.shape[1], "active": np.flatnonzero(row).tolist()})
        for row, lab, act in zip(X, labels, actors)
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def vectors_from_jsonl(text: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    recs = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not recs:
        return np.zeros((0, 0), dtype=np.uint8), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    X = np.zeros((len(recs), recs[0]["dim"]), dtype=np.uint8)
    for i, r in enumerate(recs):
        X[i, r["active"]] = 1
    return X, np.array([r["label"] for r in recs]), np.array([r["actor"] for r in recs])
