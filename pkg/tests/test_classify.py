import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdrmem.classify import (
    ClassField,
    LinearHyperparams,
    classify,
    fold_report_csv,
    loo_evaluate,
    make_folds,
    train_class_field,
    train_linear,
    vectors_from_csv,
    vectors_from_jsonl,
    vectors_to_csv,
    vectors_to_jsonl,
)

# -- class field -----------------------------------------------------------


def test_train_counts_and_idempotence():
    cf = ClassField(10, 1944)
    units = np.arange(0, 1944, 19)[:102]
    assert train_class_field(cf, units, 4) == 102
    assert train_class_field(cf, units, 4) == 0
    with pytest.raises(ValueError):
        cf.train([1], 10)


def test_disjoint_rows_stay_disjoint():
    cf = ClassField(3, 50)
    cf.train(range(0, 10), 0)
    cf.train(range(10, 20), 1)
    assert not (cf.D[0] & cf.D[1]).any()


def test_classify_exact_unit_set_and_no_evidence():
    cf = ClassField(10, 100)
    r = classify(cf, [1, 2, 3])
    assert r.no_evidence and r.label == 0
    cf.train([5, 6, 7], 3)
    r = classify(cf, [5, 6, 7])
    assert r.label == 3 and not r.no_evidence


def test_classify_summation_oracle():
    cf = ClassField(10, 100)
    cf.train(range(0, 20), 5)
    cf.train(range(50, 70), 7)
    probe = list(range(10, 20)) + list(range(66, 70))  # 10 in row 5, 4 in row 7
    dense = cf.D.astype(int)
    sums = [sum(dense[c, u] for u in probe) for c in range(10)]
    assert sums[5] == 10 and sums[7] == 4
    r = classify(cf, probe)
    assert r.label == 5 and r.scores.tolist() == sums


def test_ties_go_to_lowest_class():
    cf = ClassField(4, 10)
    cf.train([1, 2], 3)
    cf.train([1, 2], 1)
    assert classify(cf, [1, 2]).label == 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_training_order_irrelevant(seed):
    rng = np.random.default_rng(seed)
    items = [(rng.choice(200, 15, replace=False), int(rng.integers(5))) for _ in range(30)]
    a, b = ClassField(5, 200), ClassField(5, 200)
    for u, c in items:
        a.train(u, c)
    for k in rng.permutation(len(items)):
        b.train(*items[k])
        b.train(*items[k])  # duplicates change nothing
    assert np.array_equal(a.D, b.D)


def test_class_field_bytes_roundtrip():
    cf = ClassField(3, 13)
    cf.train([0, 12, 7], 2)
    back = ClassField.from_bytes(cf.to_bytes())
    assert np.array_equal(back.D, cf.D)
    with pytest.raises(ValueError):
        ClassField.from_bytes(b"XXXX" + bytes(20))


# -- linear SVM ------------------------------------------------------------


def clusters(rng, n_per=30, dim=1944, classes=2, on=80):
    X, y = [], []
    protos = [rng.choice(dim, on, replace=False) for _ in range(classes)]
    for c, p in enumerate(protos):
        for _ in range(n_per):
            v = np.zeros(dim, np.uint8)
            v[rng.choice(p, on * 3 // 4, replace=False)] = 1
            X.append(v)
            y.append(c)
    return np.array(X), np.array(y)


def test_separable_clusters_fit_perfectly():
    X, y = clusters(np.random.default_rng(0))
    model = train_linear(X, y)
    assert (model.predict(X) == y).all()


def test_duplicate_and_shuffle_give_same_model():
    rng = np.random.default_rng(1)
    X, y = clusters(rng, classes=3, n_per=20, dim=300, on=40)
    Xt, _ = clusters(rng, classes=3, n_per=5, dim=300, on=40)
    m1 = train_linear(X, y)
    m2 = train_linear(np.vstack([X, X]), np.concatenate([y, y]))
    perm = rng.permutation(len(y))
    m3 = train_linear(X[perm], y[perm])
    assert np.array_equal(m1.decision_function(Xt), m2.decision_function(Xt))
    assert np.array_equal(m1.decision_function(Xt), m3.decision_function(Xt))


def test_deterministic_and_seed_sensitive():
    X, y = clusters(np.random.default_rng(2), classes=3, dim=200, on=30)
    a = train_linear(X, y, LinearHyperparams(epochs=5, seed=3))
    b = train_linear(X, y, LinearHyperparams(epochs=5, seed=3))
    assert np.array_equal(a.W, b.W)


def test_linear_errors():
    with pytest.raises(ValueError):
        train_linear(np.zeros((4, 3)), [1, 1, 1, 1])
    with pytest.raises(ValueError):
        train_linear(np.zeros((4, 3)), [0, 1])


# -- leave-one-actor-out ---------------------------------------------------


def snippet_table(n_actors=9, n_classes=10, variants=5):
    labels, actors, orig = [], [], []
    for a in range(n_actors):
        for c in range(n_classes):
            for v in range(variants + 1):
                labels.append(c)
                actors.append(a)
                orig.append(v == 0)
    return np.array(labels), np.array(actors), np.array(orig)


def test_folds_disjoint_and_cover_originals():
    labels, actors, orig = snippet_table()
    folds = make_folds(actors, orig)
    assert len(folds) == 9
    seen = []
    for f in folds:
        assert len(f.train_idx) == 480 and len(f.test_idx) == 10
        assert not set(f.train_idx) & set(f.test_idx)
        assert orig[f.test_idx].all()
        seen.extend(f.test_idx.tolist())
    assert sorted(seen) == np.flatnonzero(orig).tolist()


def test_folds_need_two_actors():
    with pytest.raises(ValueError):
        make_folds([0, 0], [True, False])
    with pytest.raises(ValueError):
        make_folds([0, 1, 1], [True, False, False])


def test_loo_separable_and_uninformative():
    labels, actors, orig = snippet_table(n_actors=3, n_classes=4, variants=1)
    X = np.eye(4, dtype=np.uint8)[labels]
    acc, folds = loo_evaluate(X, labels, actors, orig, LinearHyperparams(epochs=10))
    assert acc == 1.0 and sum(f.total for f in folds) == 12
    acc0, _ = loo_evaluate(np.ones((len(labels), 5)), labels, actors, orig, LinearHyperparams(epochs=5))
    assert acc0 == pytest.approx(0.25)
    csv_text = fold_report_csv(folds)
    assert csv_text.splitlines()[0] == "actor,correct,total,accuracy"
    assert len(csv_text.splitlines()) == 4


def test_vector_exchange_roundtrips():
    rng = np.random.default_rng(0)
    X = (rng.random((6, 17)) < 0.3).astype(np.uint8)
    lab, act = np.arange(6) % 3, np.arange(6) // 2
    for dump, load in ((vectors_to_csv, vectors_from_csv), (vectors_to_jsonl, vectors_from_jsonl)):
        X2, l2, a2 = load(dump(X, lab, act))
        assert np.array_equal(X2, X) and np.array_equal(l2, lab) and np.array_equal(a2, act)
    first = vectors_to_csv(X, lab, act).splitlines()[0].split(",")
    assert first[:2] == ["0", "0"] and len(first) == 19
