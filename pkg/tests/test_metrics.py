import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laat.metrics import (
    UndefinedMetricError,
    binary_auc,
    compute_report,
    frequency_buckets,
    macro_auc,
    macro_f1,
    micro_auc,
    micro_f1,
    precision_at_k,
)

# -- brute-force references ----------------------------------------------------


def f1_from_counts(tp, fp, fn):
    """Exact rational F1 from the textbook precision/recall definition."""
    p = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    r = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    return 2 * p * r / (p + r) if p + r else Fraction(0)


def counts(preds, gold, cols):
    tp = fp = fn = 0
    for i in range(len(preds)):
        for j in cols:
            if preds[i][j] and gold[i][j]:
                tp += 1
            elif preds[i][j]:
                fp += 1
            elif gold[i][j]:
                fn += 1
    return tp, fp, fn


def ref_micro_f1(preds, gold):
    return float(f1_from_counts(*counts(preds, gold, range(len(gold[0])))))


def ref_macro_f1(preds, gold):
    vals = [f1_from_counts(*counts(preds, gold, [j])) for j in range(len(gold[0]))]
    return float(sum(vals) / len(vals))


def ref_pair_auc(scores, gold):
    pos = [s for s, g in zip(scores, gold) if g]
    neg = [s for s, g in zip(scores, gold) if not g]
    good = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return good / (len(pos) * len(neg))


def ref_p_at_k(scores, gold, k):
    out = []
    for s, g in zip(scores, gold):
        ranked = sorted(range(len(s)), key=lambda j: (-s[j], j))[:k]
        out.append(Fraction(int(sum(g[j] for j in ranked)), k))
    return float(sum(out) / len(out))


def random_case(rng):
    n, L = int(rng.integers(1, 21)), int(rng.integers(1, 21))
    gold = (rng.random((n, L)) < rng.uniform(0.05, 0.6)).astype(int)
    # coarse scores so ties occur
    scores = np.round(rng.random((n, L)), int(rng.integers(1, 4)))
    preds = (scores >= 0.5).astype(int)
    return scores, preds, gold


# -- worked examples -----------------------------------------------------------

GOLD = np.array([[1, 0, 1], [0, 1, 0]])
PREDS = np.array([[1, 1, 0], [0, 1, 0]])


def test_micro_f1_worked_example():
    assert micro_f1(PREDS, GOLD) == 2 / 3


def test_macro_f1_worked_example():
    assert macro_f1(PREDS, GOLD) == 5 / 9
    assert ref_macro_f1(PREDS.tolist(), GOLD.tolist()) == 5 / 9


def test_auc_worked_example():
    assert binary_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert ref_pair_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_f1_conventions():
    assert micro_f1(GOLD, GOLD) == 1.0
    assert micro_f1(np.zeros_like(GOLD), GOLD) == 0.0
    # one perfect label, one zero-support label never predicted
    assert macro_f1(np.array([[1, 0], [0, 0]]), np.array([[1, 0], [0, 0]])) == 0.5
    with pytest.raises(ValueError):
        micro_f1(np.zeros((2, 2)), np.zeros((2, 3)))


def test_auc_conventions():
    assert binary_auc([0.1, 0.9], [0, 1]) == 1.0
    assert binary_auc([0.3] * 4, [0, 1, 0, 1]) == 0.5
    assert binary_auc([0.9, 0.1], [0, 1]) == 0.0
    with pytest.raises(UndefinedMetricError):
        micro_auc(np.ones((2, 2)), np.ones((2, 2)))


def test_macro_auc_exclusion():
    scores = np.array([[0.1, 0.2], [0.4, 0.3], [0.35, 0.1], [0.8, 0.5]])
    gold = np.array([[0, 0], [0, 0], [1, 0], [1, 0]])
    assert macro_auc(scores, gold) == (0.75, 1)
    assert macro_auc(np.array([[0.1, 0.9], [0.9, 0.1]]), np.array([[0, 1], [1, 0]])) == (1.0, 0)
    with pytest.raises(UndefinedMetricError):
        macro_auc(scores[:, 1:], gold[:, 1:])


def test_precision_at_k_examples():
    s = np.array([[0.9, 0.2, 0.8]])
    assert precision_at_k(s, np.array([[1, 0, 1]]), 2) == 1.0
    assert precision_at_k(s, np.array([[0, 1, 0]]), 2) == 0.0
    # ties go to the lower index; k > |L| still divides by k
    assert precision_at_k(np.array([[0.5, 0.5]]), np.array([[1, 0]]), 1) == 1.0
    assert precision_at_k(np.array([[0.5, 0.5]]), np.array([[1, 1]]), 5) == 0.4
    with pytest.raises(ValueError):
        precision_at_k(s, s, 0)


# -- oracle equivalence ----------------------------------------------------------

def test_against_brute_force_on_random_matrices():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        scores, preds, gold = random_case(rng)
        assert micro_f1(preds, gold) == ref_micro_f1(preds.tolist(), gold.tolist())
        assert macro_f1(preds, gold) == ref_macro_f1(preds.tolist(), gold.tolist())
        for k in (1, 5, 8, 15):
            assert precision_at_k(scores, gold, k) == ref_p_at_k(scores.tolist(), gold.tolist(), k)
        flat_s, flat_g = scores.ravel().tolist(), gold.ravel().tolist()
        if 0 < sum(flat_g) < len(flat_g):
            assert abs(micro_auc(scores, gold) - ref_pair_auc(flat_s, flat_g)) <= 1e-9


# -- properties ------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores, _, gold = random_case(rng)
    if not 0 < gold.sum() < gold.size:
        return
    base = micro_auc(scores, gold)
    assert micro_auc(np.exp(3 * scores) - 7, gold) == base
    assert micro_auc(scores ** 3, gold) == base


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_precision_at_k_range_and_monotone(seed):
    rng = np.random.default_rng(seed)
    scores, _, gold = random_case(rng)
    vals = [precision_at_k(scores, gold, k) for k in (5, 8, 15)]
    assert all(0 <= v <= 1 for v in vals)
    # hits can only grow with k, so P@k shrinks once every positive is inside the top 5
    top5 = [set(sorted(range(gold.shape[1]), key=lambda j: (-row[j], j))[:5]) for row in scores]
    if all(set(np.flatnonzero(g)) <= t for g, t in zip(gold, top5)):
        assert vals[0] >= vals[1] >= vals[2]
    hits = [v * k for v, k in zip(vals, (5, 8, 15))]
    assert hits[0] <= hits[1] + 1e-12 and hits[1] <= hits[2] + 1e-12


def test_micro_equals_macro_with_identical_tables():
    block = np.array([[1], [0], [1], [0]])
    preds = np.hstack([np.array([[1], [1], [0], [0]])] * 3)
    gold = np.hstack([block] * 3)
    assert micro_f1(preds, gold) == macro_f1(preds, gold)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_report_ranges_and_determinism(seed):
    rng = np.random.default_rng(seed)
    scores, _, gold = random_case(rng)
    rep = compute_report(scores, gold)
    for v in rep.headline().values():
        assert v is None or 0 <= v <= 1
    assert rep.macro_auc_excluded <= rep.num_labels
    assert rep.to_json() == compute_report(scores, gold).to_json()


def test_all_half_scores_predict_everything():
    rep = compute_report(np.full((2, 3), 0.5), GOLD)
    assert rep.micro_f1 == ref_micro_f1(np.ones((2, 3)).tolist(), GOLD.tolist())


def test_report_serialization():
    rep = compute_report(np.array([[0.9, 0.1, 0.7], [0.2, 0.6, 0.3]]), GOLD, labels=["a", "b", "c"])
    d = json.loads(rep.to_json())
    assert set(d["p_at_k"]) == {"5", "8", "15"}
    assert [s["label"] for s in d["per_label"]] == ["a", "b", "c"]
    text = rep.to_text("LAAT")
    assert "Macro-AUC" in text.splitlines()[0] and text.splitlines()[1].startswith("LAAT")
    assert "100.0" in rep.table_row()


def test_frequency_buckets():
    rep = compute_report(np.array([[0.9, 0.1, 0.7], [0.2, 0.6, 0.3]]), GOLD)
    out = frequency_buckets(rep, [3, 20, 100])
    assert set(out) == {"[0,10)", "[10,50)", "[50,inf)"}
