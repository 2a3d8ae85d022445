import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harmlab.btrank import PairwiseWins, bt_fit, read_pairs_csv, scores_csv
from harmlab.errors import RankingError


def wins_matrix(labels, entries):
    w = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for i, j, c in entries:
        w[i, j] = c
    return PairwiseWins(labels=list(labels), wins=w)


class TestFitBasics:
    def test_even_split_is_symmetric(self):
        data = wins_matrix("AB", [(0, 1, 5), (1, 0, 5)])
        result = bt_fit(data)
        assert np.allclose(result.scores, [0.5, 0.5], atol=1e-10)

    def test_three_to_one_closed_form(self):
        data = wins_matrix("AB", [(0, 1, 3), (1, 0, 1)])
        result = bt_fit(data)
        assert np.allclose(result.scores, [0.75, 0.25], atol=1e-10)

    def test_scores_sum_to_one(self):
        rng = np.random.default_rng(0)
        w = rng.integers(1, 40, size=(4, 4))
        np.fill_diagonal(w, 0)
        result = bt_fit(PairwiseWins(labels=list("ABCD"), wins=w))
        assert abs(result.scores.sum() - 1.0) <= 1e-12
        assert np.all(result.scores > 0.0)

    def test_four_method_ordering(self):
        # clear dominance chain: A > B > C > D
        labels = ["ours", "second", "third", "fourth"]
        entries = []
        strengths = [40, 30, 20, 5]
        for i in range(4):
            for j in range(4):
                if i != j:
                    entries.append((i, j, strengths[i]))
        result = bt_fit(wins_matrix(labels, entries))
        order = [name for name, _ in result.ranking()]
        assert order == labels

    @given(st.integers(1, 50), st.integers(1, 50))
    @settings(max_examples=40, deadline=None)
    def test_two_player_closed_form_property(self, wa, wb):
        result = bt_fit(wins_matrix("AB", [(0, 1, wa), (1, 0, wb)]))
        assert abs(result.scores[0] - wa / (wa + wb)) <= 1e-9

    def test_count_scaling_invariance(self):
        rng = np.random.default_rng(1)
        w = rng.integers(1, 20, size=(3, 3))
        np.fill_diagonal(w, 0)
        base = bt_fit(PairwiseWins(labels=list("ABC"), wins=w))
        scaled = bt_fit(PairwiseWins(labels=list("ABC"), wins=w * 7))
        assert np.allclose(base.scores, scaled.scores, atol=1e-9)

    def test_label_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        w = rng.integers(1, 20, size=(4, 4))
        np.fill_diagonal(w, 0)
        base = bt_fit(PairwiseWins(labels=list("ABCD"), wins=w))
        perm = [2, 0, 3, 1]
        wp = w[np.ix_(perm, perm)]
        permuted = bt_fit(PairwiseWins(labels=[list("ABCD")[i] for i in perm], wins=wp))
        assert dict(base.ranking()) == pytest.approx(dict(permuted.ranking()), abs=1e-9)


class TestEdgeCases:
    def test_disconnected_graph_lists_components(self):
        data = wins_matrix("ABCD", [(0, 1, 3), (1, 0, 2), (2, 3, 4), (3, 2, 1)])
        with pytest.raises(RankingError, match=r"\{A, B\}.*\{C, D\}"):
            bt_fit(data)

    def test_zero_win_method_pinned_at_zero(self):
        data = wins_matrix("ABC", [(0, 1, 3), (1, 0, 2), (0, 2, 4), (1, 2, 1)])
        result = bt_fit(data)
        assert result.scores[2] == 0.0
        assert result.zero_win.tolist() == [False, False, True]
        assert abs(result.scores.sum() - 1.0) <= 1e-12

    def test_single_method_rejected(self):
        with pytest.raises(RankingError):
            bt_fit(PairwiseWins(labels=["only"], wins=np.zeros((1, 1), dtype=np.int64)))

    def test_negative_counts_rejected(self):
        with pytest.raises(RankingError):
            PairwiseWins(labels=list("AB"), wins=np.array([[0, -1], [2, 0]]))

    def test_nonzero_diagonal_rejected(self):
        with pytest.raises(RankingError):
            PairwiseWins(labels=list("AB"), wins=np.array([[1, 2], [2, 0]]))


class TestCsv:
    def test_read_with_header_and_accumulation(self):
        text = "winner,loser,count\nA,B,2\nA,B,1\nB,A,1\n"
        data = read_pairs_csv(io.StringIO(text))
        assert data.labels == ["A", "B"]
        assert data.wins.tolist() == [[0, 3], [1, 0]]

    def test_read_without_header(self):
        data = read_pairs_csv(io.StringIO("x,y,4\ny,x,4\n"))
        assert data.wins.sum() == 8

    def test_bad_count_rejected(self):
        with pytest.raises(RankingError, match="bad count"):
            read_pairs_csv(io.StringIO("a,b,many\n"))

    def test_scores_csv_sorted_descending(self):
        result = bt_fit(read_pairs_csv(io.StringIO("A,B,3\nB,A,1\n")))
        text = scores_csv(result)
        assert text.splitlines() == ["method,score", "A,0.75", "B,0.25"]
