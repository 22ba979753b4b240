"""Confusion counts, point metrics, rank AUC against the pairwise oracle, table output."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmfusion.errors import ContractError
from mmfusion.metrics import (
    TABLE_COLUMNS,
    Confusion,
    auc,
    confusion,
    evaluate_scores,
    pairwise_auc,
    point_metrics,
    report_table,
    round3,
)


def random_case(rng):
    """n <= 50 scores on a coarse grid so ties are common, both classes present."""
    n = int(rng.integers(2, 51))
    labels = rng.integers(0, 2, n)
    labels[rng.choice(n, 2, replace=False)] = [0, 1]
    levels = int(rng.integers(1, 12))
    scores = rng.integers(0, levels, n) / max(levels - 1, 1)
    return scores, labels


class TestConfusion:
    def test_perfect(self):
        assert confusion([0.9, 0.1], [1, 0]).as_tuple() == (1, 0, 0, 1)

    def test_threshold_is_inclusive(self):
        assert confusion([0.5], [0]).as_tuple() == (0, 1, 0, 0)

    def test_mixed(self):
        assert confusion([0.9, 0.6, 0.4, 0.2], [1, 0, 1, 0]).as_tuple() == (1, 1, 1, 1)

    def test_empty(self):
        with pytest.raises(ContractError):
            confusion([], [])

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            confusion([0.1, 0.2], [1])


class TestPointMetrics:
    def test_hand_fixture_exact(self):
        acc, prec, sens, f1, undefined = point_metrics(Confusion(tp=2, fp=1, fn=2, tn=5))
        assert (acc, prec, sens, f1) == (0.7, 2 / 3, 0.5, 4 / 7)
        assert undefined == []

    def test_perfect(self):
        assert point_metrics(Confusion(3, 0, 0, 4))[:4] == (1.0, 1.0, 1.0, 1.0)

    def test_no_positive_predictions(self):
        acc, prec, sens, f1, undefined = point_metrics(Confusion(0, 0, 3, 2))
        assert prec == 0.0 and f1 == 0.0
        assert "precision" in undefined and "f1" in undefined

    def test_zero_f1_when_no_true_positives(self):
        _, prec, sens, f1, undefined = point_metrics(Confusion(0, 2, 2, 1))
        assert (prec, sens, f1) == (0.0, 0.0, 0.0) and undefined == ["f1"]

    def test_f1_is_bounded_harmonic_mean(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            c = Confusion(*(int(v) for v in rng.integers(0, 20, 4)))
            if c.n == 0:
                continue
            acc, p, s, f1, _ = point_metrics(c)
            if p + s > 0:
                assert min(p, s) - 1e-15 <= f1 <= max(p, s) + 1e-15
                assert f1 == pytest.approx(2 * p * s / (p + s), rel=1e-14)
            assert 0.0 <= acc <= 1.0

    def test_accuracy_matches_direct_count(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            scores, labels = random_case(rng)
            t = float(rng.uniform())
            acc = point_metrics(confusion(scores, labels, t))[0]
            assert acc == np.mean((scores >= t).astype(int) == labels)


class TestAUC:
    def test_perfect(self):
        assert auc([0.9, 0.8, 0.7, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_tied(self):
        assert auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5

    def test_three_of_four_pairs(self):
        assert auc([0.8, 0.3, 0.5, 0.1], [1, 1, 0, 0]) == 0.75

    @pytest.mark.parametrize("labels,missing", [([1, 1], "negative"), ([0, 0], "positive")])
    def test_single_class(self, labels, missing):
        with pytest.raises(ContractError, match=missing):
            auc([0.1, 0.2], labels)

    def test_matches_pairwise_oracle_on_1000_cases(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            scores, labels = random_case(rng)
            worst = max(worst, abs(auc(scores, labels) - pairwise_auc(scores, labels)))
        assert worst <= 1e-12

    def test_monotone_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            scores, labels = random_case(rng)
            base = auc(scores, labels)
            assert auc(np.exp(3 * scores), labels) == base
            assert auc(scores ** 3 - 7, labels) == base

    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=50))
    @settings(max_examples=200, deadline=None)
    def test_property_against_oracle(self, pairs):
        scores = np.array([s / 5 for s, _ in pairs])
        labels = np.array([int(b) for _, b in pairs])
        if labels.min() == labels.max():
            return
        a = auc(scores, labels)
        assert 0.0 <= a <= 1.0
        assert abs(a - pairwise_auc(scores, labels)) <= 1e-12
        # flipping the score order mirrors the AUC
        assert abs(auc(-scores, labels) - (1 - a)) <= 1e-12


class TestReport:
    def test_evaluate_scores(self):
        m = evaluate_scores([0.9, 0.6, 0.4, 0.2], [1, 0, 1, 0])
        assert m.confusion.as_tuple() == (1, 1, 1, 1) and m.n == 4
        assert m.accuracy == 0.5 and m.auc == 0.75

    def test_single_class_flags_auc(self):
        m = evaluate_scores([0.9, 0.2], [1, 1])
        assert m.auc == 0.0 and "auc" in m.undefined

    def test_round3_half_up(self):
        assert round3(0.66666) == "0.667"
        assert round3(0.6665) == "0.667"
        assert round3(0.0005) == "0.001"
        assert round3(1.0) == "1.000"

    def test_perfect_row(self):
        m = evaluate_scores([0.9, 0.1], [1, 0])
        text, csv_text = report_table([("VGG16+ANN", m)])
        lines = text.splitlines()
        assert [c.strip() for c in lines[0].split("|")] == list(TABLE_COLUMNS)
        cells = [c.strip() for c in lines[2].split("|")]
        assert cells == ["VGG16", "ANN", "1.000", "1.000", "1.000", "1.000", "1.000"]
        assert csv_text.splitlines()[1] == "VGG16,ANN,1.000,1.000,1.000,1.000,1.000"

    def test_failed_row(self):
        text, csv_text = report_table([("ViT+LSTM", None)])
        assert csv_text.splitlines()[1] == "ViT,LSTM,failed,failed,failed,failed,failed"

    def test_empty(self):
        with pytest.raises(ContractError):
            report_table([])

    def test_to_dict(self):
        d = evaluate_scores([0.9, 0.1], [1, 0]).to_dict()
        assert d["confusion"] == {"tp": 1, "fp": 0, "fn": 0, "tn": 1}
