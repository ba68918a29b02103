import numpy as np
import pytest

from itermatch.transport import MatchMatrix, extract_matches, pairwise_distance, sinkhorn
from oracles import mutual_argmax_scan, sinkhorn_exp_domain


class TestPairwiseDistance:
    def test_identical_rows_give_zero(self):
        x = np.array([[0.6, 0.8], [1.0, 0.0]])
        d = pairwise_distance(x, x)
        assert d[0, 0] == 0.0
        assert d[1, 1] == 0.0

    def test_orthogonal_unit_vectors(self):
        x = np.array([[1.0, 0.0]])
        y = np.array([[0.0, 1.0]])
        assert pairwise_distance(x, y)[0, 0] == pytest.approx(np.sqrt(2), rel=1e-12)

    def test_against_naive_loop(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(8, 5))
        y = rng.normal(size=(8, 5))
        d = pairwise_distance(x, y)
        naive = np.array([[np.linalg.norm(a - b) for b in y] for a in x])
        assert np.max(np.abs(d - naive)) < 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            pairwise_distance(np.ones((2, 3)), np.ones((2, 4)))


class TestSinkhorn:
    def test_single_pair_must_match(self):
        # The 1x1-plus-dustbin problem couples its two diagonal cells only
        # through the vanishing dustbin kernel, so convergence is sublinear;
        # the pair still takes almost all the mass at the default depth.
        mm = sinkhorn(np.array([[0.0]]), dustbin_score=-50.0, iterations=10)
        assert mm.scores[0, 0] == pytest.approx(1.0, abs=0.05)
        deep = sinkhorn(np.array([[0.0]]), dustbin_score=-50.0, iterations=50_000)
        assert deep.scores[0, 0] == pytest.approx(1.0, abs=1e-4)
        assert deep.expanded[0, 1] < 1e-4
        assert deep.expanded[1, 0] < 1e-4

    def test_marginal_residuals_at_ten_iterations(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            d = rng.uniform(0.0, 2.0, size=(32, 48))
            mm = sinkhorn(d, dustbin_score=-1.0, iterations=10, inv_temperature=5.0)
            row_err, col_err = mm.marginal_residuals()
            assert row_err < 1e-3
            assert col_err < 1e-3

    def test_two_by_two_against_long_run_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            d = rng.uniform(0.0, 1.5, size=(2, 2))
            mine = sinkhorn(d, dustbin_score=-0.5, iterations=10_000)
            oracle = sinkhorn_exp_domain(d, dustbin=-0.5, iterations=10_000)
            assert np.max(np.abs(mine.expanded - oracle)) < 1e-6

    def test_cost_shift_invariance(self):
        rng = np.random.default_rng(3)
        d = rng.uniform(0.0, 2.0, size=(12, 9))
        base = sinkhorn(d, dustbin_score=0.3, iterations=200)
        # Adding a constant to every score cell (real and dustbin alike)
        # cancels in the normalized transport plan.
        shifted = sinkhorn(d + 0.75, dustbin_score=0.3 - 0.75, iterations=200)
        assert np.max(np.abs(base.expanded - shifted.expanded)) < 1e-9

    def test_row_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        d = rng.uniform(0.0, 2.0, size=(7, 5))
        perm = rng.permutation(7)
        a = sinkhorn(d, -1.0, 10)
        b = sinkhorn(d[perm], -1.0, 10)
        np.testing.assert_allclose(b.scores, a.scores[perm], atol=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            sinkhorn(np.array([[np.inf]]))
        with pytest.raises(ValueError):
            sinkhorn(np.zeros((2, 2)), iterations=0)

    def test_guarded_path_matches_fast_path(self, monkeypatch):
        # Forcing the guard makes every normalization take the direct
        # log-sum-exp route; the transport plan must not change.
        import itermatch.transport as tr
        rng = np.random.default_rng(5)
        d = rng.uniform(0.0, 2.0, size=(6, 8))
        fast = sinkhorn(d, -1.0, 50, inv_temperature=2.0)
        monkeypatch.setattr(tr, "_POTENTIAL_GUARD", -1.0)
        slow = sinkhorn(d, -1.0, 50, inv_temperature=2.0)
        assert np.max(np.abs(fast.expanded - slow.expanded)) < 1e-9


class TestExtractMatches:
    def test_hand_case(self):
        m = np.array([[0.9, 0.0], [0.0, 0.8]])
        got = extract_matches(m, 0.2)
        assert [(g.i, g.j, g.score) for g in got] == [(0, 0, 0.9), (1, 1, 0.8)]

    def test_all_below_threshold(self):
        assert extract_matches(np.full((3, 3), 0.1), 0.2) == []

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            m = rng.uniform(0.0, 1.0, size=(6, 7))
            got = [(g.i, g.j, g.score) for g in extract_matches(m, 0.2)]
            assert got == mutual_argmax_scan(m, 0.2)

    def test_each_index_at_most_once(self):
        rng = np.random.default_rng(7)
        m = rng.uniform(0.0, 1.0, size=(10, 10))
        got = extract_matches(m, 0.05)
        assert len({g.i for g in got}) == len(got)
        assert len({g.j for g in got}) == len(got)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(8)
        m = rng.uniform(0.0, 1.0, size=(8, 8))
        sets = [{(g.i, g.j) for g in extract_matches(m, th)}
                for th in (0.1, 0.3, 0.5, 0.7)]
        for smaller, larger in zip(sets[1:], sets):
            assert smaller <= larger

    def test_accepts_match_matrix(self):
        mm = sinkhorn(np.array([[0.0, 2.0], [2.0, 0.0]]), -5.0, 100, 5.0)
        got = extract_matches(mm, 0.2)
        assert {(g.i, g.j) for g in got} == {(0, 0), (1, 1)}

    def test_non_mutual_mode_keeps_all_above_threshold(self):
        m = np.array([[0.9, 0.5], [0.1, 0.1]])
        got = extract_matches(m, 0.4, mutual=False)
        assert {(g.i, g.j) for g in got} == {(0, 0), (0, 1)}


def test_scores_block_view():
    mm = MatchMatrix(expanded=np.arange(12.0).reshape(3, 4))
    np.testing.assert_array_equal(mm.scores, [[0.0, 1.0, 2.0], [4.0, 5.0, 6.0]])
