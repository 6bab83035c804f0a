import itertools
import json
from fractions import Fraction

import numpy as np
import pytest

from acsl_lab.eval_metrics import average_precision, group_report, mean_reports, per_class_ap, rank


def brute_force_ap(ranking):
    """Rank-sum AP in exact rational arithmetic."""
    hits, total, n_pos = 0, Fraction(0), sum(ranking)
    for i, positive in enumerate(ranking, start=1):
        if positive:
            hits += 1
            total += Fraction(hits, i)
    return total / n_pos


def test_perfect_ranking():
    assert average_precision([1, 1, 1, 0, 0]) == 1.0


def test_single_positive_last():
    assert average_precision([0] * 6 + [1]) == pytest.approx(1 / 7, rel=1e-15)


def test_alternating():
    assert average_precision([1, 0, 1, 0]) == pytest.approx(5 / 6, rel=1e-15)


def test_no_positive_is_none():
    assert average_precision([0, 0]) is None


def test_rank_breaks_ties_by_index():
    ranked = rank([0.5, 0.9, 0.5, 0.1], [True, False, False, True])
    np.testing.assert_array_equal(ranked, [False, True, False, True])


def test_small_rankings_exhaustive():
    for n in range(1, 7):
        for ranking in itertools.product((0, 1), repeat=n):
            if any(ranking):
                assert abs(average_precision(ranking) - float(brute_force_ap(ranking))) <= 1e-12


def test_monotone_score_transform_invariance():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(50, 4))
    labels = rng.integers(0, 4, size=50)
    base = per_class_ap(scores, labels)
    assert per_class_ap(np.exp(3 * scores) + 1, labels) == base
    assert per_class_ap(np.tanh(scores), labels) == base


def test_class_permutation():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(40, 5))
    labels = rng.integers(0, 5, size=40)
    perm = np.array([3, 0, 4, 1, 2])
    inverse = np.argsort(perm)
    base = per_class_ap(scores, labels)
    permuted = per_class_ap(scores[:, perm], inverse[labels])
    assert permuted == [base[p] for p in perm]


def test_uniform_ap():
    r = group_report([0.4] * 5, ["rare", "common", "common", "frequent", "rare"])
    assert r.m_ap == r.ap_r == r.ap_c == r.ap_f == pytest.approx(0.4)


def test_direct_means():
    r = group_report([1.0, 0.0, 0.0, 0.0], ["rare", "frequent", "frequent", "frequent"])
    assert r.m_ap == 0.25
    assert r.ap_r == 1.0 and r.ap_f == 0.0
    assert r.ap_c is None


def test_count_weighted_identity():
    rng = np.random.default_rng(2)
    groups = list(rng.choice(["rare", "common", "frequent"], size=30))
    aps = list(rng.random(30))
    r = group_report(aps, groups)
    sizes = {g: groups.count(g) for g in ("rare", "common", "frequent")}
    weighted = (sizes["rare"] * r.ap_r + sizes["common"] * r.ap_c + sizes["frequent"] * r.ap_f) / 30
    assert abs(r.m_ap - weighted) <= 1e-12
    assert all(0 <= v <= 1 for v in r.summary().values())


def test_excluded_classes():
    r = group_report([0.5, None, 1.0], ["rare", "rare", "common"])
    assert r.excluded == [1]
    assert r.ap_r == 0.5 and r.m_ap == 0.75


def test_report_serialisation():
    r = group_report([0.5, None], ["rare", "common"], "sigmoid")
    data = json.loads(r.to_json())
    assert data["summary"]["ap_c"] is None
    assert data["score_semantics"] == "sigmoid"
    tsv = r.to_tsv()
    assert "1\tcommon\tabsent" in tsv
    assert "m_ap\t0.5" in tsv


def test_group_map_must_cover_classes():
    with pytest.raises(ValueError):
        group_report([0.1, 0.2], ["rare"])


def test_mean_reports():
    a = group_report([1.0, 0.0], ["rare", "common"])
    b = group_report([0.5, None], ["rare", "common"])
    m = mean_reports([a, b])
    assert m["ap_r"] == 0.75 and m["ap_c"] == 0.0 and m["ap_f"] is None
