"""Diversity and utility metric tests."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divsearch.errors import ConfigError, EmptyInputError
from divsearch.metrics import (
    div_at_k,
    evaluate_rankings,
    mean_utility_at_k,
    shannon_equitability,
)

from conftest import FIG_SEQUENCE, ranked_from_groups


class TestDivAtK:
    def test_all_groups_present(self, spec4):
        ranking = ranked_from_groups([0, 1, 2, 3, 1])
        assert div_at_k([ranking], spec4, 4) == 1.0

    def test_single_group_scores_zero(self, spec4):
        ranking = ranked_from_groups([0, 0, 0, 0])
        assert div_at_k([ranking], spec4, 4) == 0.0

    def test_interleaving_example_sequence(self, spec4):
        ranking = ranked_from_groups(FIG_SEQUENCE)
        assert div_at_k([ranking], spec4, 10) == 1.0
        assert div_at_k([ranking], spec4, 4) == 0.0

    def test_groupless_entries_are_skipped(self):
        from divsearch.core import DiversitySpec

        spec2 = DiversitySpec("tone", ("d1", "d2"))
        ranking = ranked_from_groups([None, 0, None, 1])
        assert div_at_k([ranking], spec2, 2) == 1.0

    def test_k_below_group_count_rejected(self, spec4):
        with pytest.raises(ConfigError):
            div_at_k([ranked_from_groups([0, 1, 2, 3])], spec4, 3)

    def test_no_rankings_rejected(self, spec4):
        with pytest.raises(EmptyInputError):
            div_at_k([], spec4, 4)

    def test_mean_over_queries(self, spec4):
        full = ranked_from_groups([0, 1, 2, 3])
        partial = ranked_from_groups([0, 1, 2, 2])
        assert div_at_k([full, partial], spec4, 4) == 0.5

    def test_short_ranking_evaluated_over_what_exists(self, spec4):
        ranking = ranked_from_groups([0, 1, 2, 3])  # only 4 group-bearing
        assert div_at_k([ranking], spec4, 10) == 1.0

    @given(
        groups=st.lists(
            st.one_of(st.none(), st.integers(min_value=0, max_value=3)),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_k(self, groups):
        from divsearch.core import DiversitySpec

        spec = DiversitySpec("tone", ("d1", "d2", "d3", "d4"))
        ranking = ranked_from_groups(groups)
        values = [div_at_k([ranking], spec, k) for k in range(4, 30)]
        assert values == sorted(values)

    def test_permutation_of_prefix_does_not_change_score(self, spec4):
        rng = np.random.default_rng(5)
        for _ in range(20):
            groups = [
                None if rng.random() < 0.2 else int(rng.integers(4))
                for _ in range(20)
            ]
            ranking = ranked_from_groups(groups)
            k = 6
            bearing = [i for i, g in enumerate(groups) if g is not None][:k]
            perm = rng.permutation(len(bearing))
            shuffled = list(groups)
            for dst, src in zip(bearing, perm):
                shuffled[dst] = groups[bearing[src]]
            assert div_at_k([ranking], spec4, k) == div_at_k(
                [ranked_from_groups(shuffled)], spec4, k
            )


class TestShannonEquitability:
    def test_uniform_counts(self):
        assert shannon_equitability([5, 5, 5, 5]) == pytest.approx(1.0)

    def test_single_group(self):
        assert shannon_equitability([20, 0, 0, 0]) == pytest.approx(0.0)

    def test_skewed_counts(self):
        # H = 1.5*ln(2), ln(4) = 2*ln(2) -> exactly 0.75
        assert shannon_equitability([2, 1, 1, 0]) == pytest.approx(0.75, abs=1e-12)

    def test_degenerate_single_group_dimension(self):
        assert shannon_equitability([7]) == 1.0

    def test_all_zero_rejected(self):
        with pytest.raises(EmptyInputError):
            shannon_equitability([0, 0, 0])

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            shannon_equitability([1, -1])

    @given(
        counts=st.lists(st.integers(min_value=0, max_value=50), min_size=2, max_size=6),
        scale=st.integers(min_value=1, max_value=9),
    )
    @settings(max_examples=100, deadline=None)
    def test_invariant_under_scaling(self, counts, scale):
        if sum(counts) == 0:
            counts[0] = 1
        base = shannon_equitability(counts)
        scaled = shannon_equitability([scale * c for c in counts])
        assert scaled == pytest.approx(base, abs=1e-12)

    @given(
        counts=st.lists(st.integers(min_value=0, max_value=50), min_size=2, max_size=6)
    )
    @settings(max_examples=100, deadline=None)
    def test_equals_one_iff_uniform_positive(self, counts):
        if sum(counts) == 0:
            counts[0] = 1
        value = shannon_equitability(counts)
        uniform = len(set(counts)) == 1 and counts[0] > 0
        if uniform:
            assert value == pytest.approx(1.0)
        else:
            assert value < 1.0 - 1e-12


class TestMeanUtility:
    def test_two_entries(self):
        ranking = ranked_from_groups([0, 1], utilities=[1.0, 0.5])
        assert mean_utility_at_k(ranking, 2) == pytest.approx(0.75)

    def test_k_beyond_length_uses_whole_list(self):
        ranking = ranked_from_groups([0, 1], utilities=[1.0, 0.5])
        assert mean_utility_at_k(ranking, 10) == pytest.approx(0.75)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(3)
        utilities = sorted(rng.uniform(0, 1, size=20), reverse=True)
        ranking = ranked_from_groups([0] * 20, utilities=utilities)
        expected = sum(utilities[:10]) / 10
        assert mean_utility_at_k(ranking, 10) == pytest.approx(expected, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            mean_utility_at_k(ranked_from_groups([]), 5)

    def test_k_zero_rejected(self):
        with pytest.raises(ConfigError):
            mean_utility_at_k(ranked_from_groups([0]), 0)


class TestEvaluateRankings:
    def test_counts_and_skips_add_up(self, spec4):
        long_enough = ranked_from_groups([0, 1, 2, 3, 0, 1])
        short = ranked_from_groups([0, 1])
        report = evaluate_rankings([long_enough, short], spec4, 4)
        assert report.queries_counted == 1
        assert report.queries_skipped == 1
        assert report.queries_counted + report.queries_skipped == 2
        assert report.k == 4

    def test_per_group_counts(self, spec4):
        report = evaluate_rankings([ranked_from_groups([0, 0, 1, None, 2])], spec4, 4)
        assert report.per_group_counts == [2, 1, 1, 0]

    def test_report_serializes_flat(self, spec4):
        report = evaluate_rankings([ranked_from_groups([0, 1, 2, 3])], spec4, 4)
        data = report.to_dict()
        assert set(data) == {
            "div_at_k",
            "k",
            "queries_counted",
            "queries_skipped",
            "equitability",
            "mean_utility_at_k",
            "per_group_counts",
        }
