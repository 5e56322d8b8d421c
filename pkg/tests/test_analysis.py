import math

import numpy as np
import pytest
import scipy.stats

from credweak import label_model as lm
from credweak.analysis import (
    AblationEntry,
    ContingencyTable2x2,
    SignalAssociation,
    aggregate_associations,
    ablation,
    answer_distribution,
    associations,
    chi_squared,
    tp_fn_frequencies,
)
from credweak.corpus import Dataset, make_folds
from credweak.errors import ValidationError
from credweak.extraction import AnswerMatrix

from conftest import make_articles, planted_votes, vote_matrix


def answers_from_votes(votes, name="d"):
    mapping = {1: "yes", 0: "no", -1: "unsure"}
    values = np.vectorize(mapping.get)(votes).astype("<U6")
    m, n = votes.shape
    return AnswerMatrix(
        dataset=name,
        article_ids=[f"a{i}" for i in range(m)],
        signal_ids=[f"s{j}" for j in range(n)],
        values=values,
        warnings=np.zeros((m, n), dtype=bool),
    )


class TestChiSquared:
    def test_hand_computed_balanced_table(self):
        stat, p = chi_squared(ContingencyTable2x2(10, 20, 20, 10))
        assert stat == pytest.approx(20 / 3, abs=1e-4)
        assert p == pytest.approx(0.00982, abs=1e-4)

    def test_independence(self):
        stat, p = chi_squared(ContingencyTable2x2(5, 5, 5, 5))
        assert stat == 0.0
        assert p == 1.0

    def test_perfect_association(self):
        stat, p = chi_squared(ContingencyTable2x2(10, 0, 0, 10))
        assert stat == pytest.approx(20.0, abs=1e-10)
        assert p == pytest.approx(7.7e-6, rel=0.01)

    def test_zero_marginal_is_vacuous(self):
        assert chi_squared(ContingencyTable2x2(0, 0, 5, 5)) == (0.0, 1.0)
        assert chi_squared(ContingencyTable2x2(5, 0, 5, 0)) == (0.0, 1.0)

    def test_transpose_and_swap_invariance(self):
        t = ContingencyTable2x2(7, 2, 3, 11)
        base = chi_squared(t)
        transposed = chi_squared(ContingencyTable2x2(7, 3, 2, 11))
        swapped = chi_squared(ContingencyTable2x2(11, 3, 2, 7))
        assert base == pytest.approx(transposed)
        assert base == pytest.approx(swapped)

    def test_linear_scaling(self):
        t1 = chi_squared(ContingencyTable2x2(8, 3, 5, 9))[0]
        t3 = chi_squared(ContingencyTable2x2(24, 9, 15, 27))[0]
        assert t3 == pytest.approx(3 * t1, abs=1e-9)

    def test_p_monotone_in_statistic(self):
        ps = [math.erfc(math.sqrt(x / 2)) for x in (0.0, 0.5, 1.0, 4.0, 10.0)]
        assert ps == sorted(ps, reverse=True)
        assert ps[0] == 1.0

    def test_against_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            cells = rng.integers(1, 60, size=4)
            t = ContingencyTable2x2(*map(int, cells))
            stat, p = chi_squared(t)
            ref = scipy.stats.chi2_contingency(
                np.array([[t.a, t.b], [t.c, t.d]]), correction=False
            )
            assert stat == pytest.approx(float(ref.statistic), abs=1e-9)
            assert p == pytest.approx(float(ref.pvalue), abs=1e-9)

    def test_validation(self):
        with pytest.raises(ValidationError):
            ContingencyTable2x2(-1, 0, 0, 5)
        with pytest.raises(ValidationError):
            ContingencyTable2x2(0, 0, 0, 0)


class TestAnswerDistribution:
    def test_all_yes_column(self):
        votes = np.ones((10, 1), dtype=np.int8)
        labels = np.array([1, 0] * 5)
        dist = answer_distribution(answers_from_votes(votes), labels)
        assert dist["s0"][0]["yes"] == 1.0
        assert dist["s0"][1]["yes"] == 1.0

    def test_proportions_sum_to_one(self):
        rng = np.random.default_rng(1)
        votes = rng.integers(-1, 2, size=(40, 3), dtype=np.int8)
        labels = rng.integers(0, 2, size=40)
        dist = answer_distribution(answers_from_votes(votes), labels)
        for sid in dist:
            for cls in (0, 1):
                assert sum(dist[sid][cls].values()) == pytest.approx(1.0)

    def test_planted_rates_recovered(self):
        m = 4000
        rng = np.random.default_rng(2)
        labels = np.array([1] * (m // 2) + [0] * (m // 2))
        yes = np.where(labels == 1, rng.random(m) < 0.8, rng.random(m) < 0.2)
        votes = np.where(yes, 1, 0).astype(np.int8)[:, None]
        dist = answer_distribution(answers_from_votes(votes), labels)
        bound = 1 / math.sqrt(m // 2)
        assert abs(dist["s0"][1]["yes"] - 0.8) < 3 * bound
        assert abs(dist["s0"][0]["yes"] - 0.2) < 3 * bound


class TestAssociations:
    def test_label_aligned_signal_is_strongest(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, size=300)
        aligned = labels.astype(np.int8)
        noise = rng.integers(-1, 2, size=(300, 3), dtype=np.int8)
        votes = np.column_stack([aligned, noise])
        rows = associations(answers_from_votes(votes), labels)
        assert rows[0].normalized == 1.0
        assert rows[0].reject
        assert all(r.normalized <= 1.0 for r in rows)

    def test_exactly_one_normalized_max(self):
        rng = np.random.default_rng(4)
        votes = rng.integers(-1, 2, size=(200, 19), dtype=np.int8)
        labels = rng.integers(0, 2, size=200)
        rows = associations(answers_from_votes(votes), labels)
        assert sum(1 for r in rows if r.normalized == 1.0) == 1

    def test_ranking_preserved(self):
        rng = np.random.default_rng(5)
        votes = rng.integers(-1, 2, size=(300, 6), dtype=np.int8)
        labels = rng.integers(0, 2, size=300)
        rows = associations(answers_from_votes(votes), labels)
        by_raw = sorted(rows, key=lambda r: r.chi2)
        by_norm = sorted(rows, key=lambda r: r.normalized)
        assert [r.signal_id for r in by_raw] == [r.signal_id for r in by_norm]


class TestAggregateAssociations:
    def rows(self, normalized, reject):
        return [SignalAssociation("s0", 1.0, 0.01, normalized, reject)]

    def test_single_dataset_identity(self):
        per = {"a": self.rows(0.7, True)}
        agg = aggregate_associations(per, {"a": "politics"}, "politics")
        assert agg[0].normalized == 0.7
        assert agg[0].reject is True

    def test_conjunction_of_flags(self):
        per = {"a": self.rows(0.4, True), "b": self.rows(0.6, False)}
        domains = {"a": "politics", "b": "politics"}
        agg = aggregate_associations(per, domains, "politics")
        assert agg[0].reject is False
        assert agg[0].normalized == pytest.approx(0.5)

    def test_all_group(self):
        per = {"a": self.rows(0.4, True), "b": self.rows(0.8, True)}
        domains = {"a": "politics", "b": "entertainment"}
        agg = aggregate_associations(per, domains, "all")
        assert agg[0].normalized == pytest.approx(0.6)
        assert agg[0].reject is True

    def test_unknown_group(self):
        with pytest.raises(ValidationError):
            aggregate_associations({"a": self.rows(1, True)}, {"a": "politics"}, "sports")

    def test_empty_group(self):
        with pytest.raises(ValidationError):
            aggregate_associations({"a": self.rows(1, True)}, {"a": "politics"}, "entertainment")


class TestAblation:
    def cv_setup(self, rng, m=160, accs=(0.9, 0.85, 0.8, 0.75), props=(0.9, 0.9, 0.9, 0.9)):
        votes, y = planted_votes(rng, m, list(accs), list(props))
        d = Dataset(name="d", articles=make_articles(y.tolist()))
        folds = make_folds(d, 4, seed=0)
        return votes, y, folds

    def test_removing_abstaining_column_is_negligible(self):
        changes = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            votes, y, folds = self.cv_setup(rng)
            votes_plus = np.column_stack([votes, np.full(len(y), -1, dtype=np.int8)])
            vm = vote_matrix(votes_plus)
            entries = ablation(vm, y, folds, lm.LabelModelConfig(seed=seed))
            dead = next(e for e in entries if e.signal_id == "s4")
            changes.append(abs(dead.percent_change))
        assert max(changes) < 0.5

    def test_removing_informative_column_hurts(self):
        drops = []
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            y = rng.integers(0, 2, size=200)
            strong = np.where(rng.random(200) < 0.95, y, 1 - y).astype(np.int8)
            noise = rng.integers(-1, 2, size=(200, 3), dtype=np.int8)
            votes = np.column_stack([strong, noise])
            d = Dataset(name="d", articles=make_articles(y.tolist()))
            folds = make_folds(d, 4, seed=seed)
            entries = ablation(vote_matrix(votes), y, folds, lm.LabelModelConfig(seed=seed))
            drops.append(entries[0].percent_change)
        assert np.mean(drops) < 0
        assert min(drops) < 0

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        votes, y, folds = self.cv_setup(rng, m=80)
        vm = vote_matrix(votes)
        cfg = lm.LabelModelConfig(seed=1, epochs=100)
        a = ablation(vm, y, folds, cfg)
        b = ablation(vm, y, folds, cfg)
        assert a == b

    def test_single_signal_rejected(self):
        votes = np.ones((10, 1), dtype=np.int8)
        y = np.array([1, 0] * 5)
        folds = make_folds(Dataset(name="d", articles=make_articles(y.tolist())), 2, 0)
        with pytest.raises(ValidationError):
            ablation(vote_matrix(votes), y, folds, lm.LabelModelConfig(seed=0))

    def test_percent_change_definition(self):
        entry = AblationEntry(signal_id="s", baseline_f1=0.8, ablated_f1=0.76)
        assert entry.percent_change == pytest.approx(-5.0)


class TestTpFnFrequencies:
    def test_all_yes_tp_rows(self):
        votes = np.ones((6, 19), dtype=np.int8)
        gold = np.ones(6, dtype=np.int8)
        preds = np.ones(6, dtype=np.int8)
        freqs = tp_fn_frequencies(answers_from_votes(votes), preds, gold)
        assert freqs.tp_total == pytest.approx(19.0)
        assert freqs.fn_count == 0
        assert freqs.fn_total is None

    def test_empty_fn_group_has_markers(self):
        votes = np.ones((4, 2), dtype=np.int8)
        gold = np.array([1, 1, 0, 0])
        preds = np.array([1, 1, 0, 0])
        freqs = tp_fn_frequencies(answers_from_votes(votes), preds, gold)
        assert freqs.fn_freq == (None, None)
        assert freqs.percent_decrease(0) is None

    def test_rates_and_decrease(self):
        values = np.array(
            [["yes", "no"], ["yes", "yes"], ["no", "no"], ["yes", "no"]], dtype="<U6"
        )
        am = AnswerMatrix(
            dataset="d", article_ids=["a", "b", "c", "d"], signal_ids=["s0", "s1"],
            values=values, warnings=np.zeros((4, 2), dtype=bool),
        )
        gold = np.array([1, 1, 1, 1])
        preds = np.array([1, 1, 0, 0])
        freqs = tp_fn_frequencies(am, preds, gold)
        assert freqs.tp_freq == (1.0, 0.5)
        assert freqs.fn_freq == (0.5, 0.0)
        assert freqs.percent_decrease(0) == pytest.approx(50.0)
        assert freqs.percent_decrease(1) == pytest.approx(100.0)

    def test_alignment_checked(self):
        votes = np.ones((3, 2), dtype=np.int8)
        with pytest.raises(ValidationError):
            tp_fn_frequencies(answers_from_votes(votes), np.ones(2), np.ones(3))
