"""Streaming ridge router: accumulation, closed-form solve, growth, routing."""

import numpy as np
import pytest

from gclstream.analytic_router import (
    RouterState, new_router_state, accumulate, solve, route, grow,
    snapshot, restore,
)
from gclstream.expansion import ExpandedBatch, RandomExpansion
from gclstream.errors import NotSolvedError, NumericalError, ShapeError

from oracles import batch_ridge, one_hot


def _stream_instance(rng, M, N, T, lam):
    """Feed random rows through accumulate and return (state, phi, labels)."""
    phi = rng.standard_normal((N, M))
    labels = rng.integers(T, size=N)
    state = new_router_state(M, lam, num_experts=T)
    start = 0
    while start < N:
        size = int(rng.integers(1, 17))
        sl = slice(start, min(start + size, N))
        for e in range(T):
            pick = labels[sl] == e
            if pick.any():
                accumulate(state, ExpandedBatch(phi[sl][pick], e))
        start += size
    return state, phi, labels


class TestAccumulate:
    """G and Q are exact sums over the stream, order independent."""

    def test_single_row_outer_product_by_hand(self):
        state = new_router_state(3, 1.0, num_experts=2)
        accumulate(state, ExpandedBatch(np.array([[1.0, 0.0, 2.0]]), 0))
        np.testing.assert_array_equal(
            state.gram, [[1, 0, 2], [0, 0, 0], [2, 0, 4]])
        np.testing.assert_array_equal(state.proto[:, 0], [1, 0, 2])
        np.testing.assert_array_equal(state.proto[:, 1], [0, 0, 0])
        assert state.samples_seen == 1

    def test_two_identical_rows_double_the_outer_product(self):
        row = np.array([[1.0, 0.0, 2.0]])
        once = new_router_state(3, 1.0)
        accumulate(once, ExpandedBatch(row, 0))
        twice = new_router_state(3, 1.0)
        accumulate(twice, ExpandedBatch(np.vstack([row, row]), 0))
        np.testing.assert_array_equal(twice.gram, 2 * once.gram)
        np.testing.assert_array_equal(twice.proto, 2 * once.proto)

    def test_empty_batch_is_a_no_op(self):
        state = new_router_state(3, 1.0)
        accumulate(state, ExpandedBatch(np.zeros((0, 3)), 0))
        assert state.samples_seen == 0
        np.testing.assert_array_equal(state.gram, np.zeros((3, 3)))

    def test_batch_split_invariance(self):
        """Accumulating one batch or the same rows row-by-row is identical."""
        rng = np.random.default_rng(0)
        phi = rng.standard_normal((10, 4))
        whole = new_router_state(4, 1.0)
        accumulate(whole, ExpandedBatch(phi, 0))
        parts = new_router_state(4, 1.0)
        for row in phi:
            accumulate(parts, ExpandedBatch(row[None, :], 0))
        np.testing.assert_allclose(parts.gram, whole.gram, atol=1e-12)
        np.testing.assert_allclose(parts.proto, whole.proto, atol=1e-12)

    def test_gram_stays_symmetric(self):
        rng = np.random.default_rng(1)
        state = new_router_state(6, 1.0)
        for _ in range(50):
            accumulate(state, ExpandedBatch(rng.standard_normal((7, 6)), 0))
        np.testing.assert_array_equal(state.gram, state.gram.T)

    def test_width_mismatch_raises(self):
        state = new_router_state(3, 1.0)
        with pytest.raises(ShapeError):
            accumulate(state, ExpandedBatch(np.zeros((2, 4)), 0))

    def test_unregistered_expert_raises(self):
        state = new_router_state(3, 1.0, num_experts=2)
        with pytest.raises(ValueError):
            accumulate(state, ExpandedBatch(np.zeros((1, 3)), 2))
        with pytest.raises(ValueError):
            accumulate(state, ExpandedBatch(np.zeros((1, 3)), None))

    def test_non_finite_rows_raise(self):
        state = new_router_state(3, 1.0)
        with pytest.raises(NumericalError):
            accumulate(state, ExpandedBatch(np.array([[1.0, np.nan, 0.0]]), 0))


class TestSolve:
    """The cached solve is the batch ridge solution of the streamed stats."""

    def test_zero_statistics_give_zero_weights(self):
        state = new_router_state(4, 2.0, num_experts=3)
        np.testing.assert_array_equal(solve(state), np.zeros((3, 4)))

    def test_two_by_two_solve_by_hand(self):
        """One sample [1,0] to the only expert with lam=1: G+I = diag(2,1),
        Q = [1,0], so U = [1/2, 0]."""
        state = new_router_state(2, 1.0, num_experts=1)
        accumulate(state, ExpandedBatch(np.array([[1.0, 0.0]]), 0))
        np.testing.assert_allclose(solve(state), [[0.5, 0.0]], atol=1e-15)

    def test_matches_batch_ridge_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            M, N, T = 8, 20, 3
            lam = float(rng.choice([0.1, 1.0, 10.0]))
            state, phi, labels = _stream_instance(rng, M, N, T, lam)
            expected = batch_ridge(phi, one_hot(labels, T), lam)
            np.testing.assert_allclose(solve(state), expected,
                                       rtol=1e-10, atol=1e-12)

    def test_solve_is_cached_until_next_update(self):
        rng = np.random.default_rng(2)
        state, _, _ = _stream_instance(rng, 4, 12, 2, 1.0)
        first = solve(state)
        assert solve(state) is first
        accumulate(state, ExpandedBatch(rng.standard_normal((1, 4)), 0))
        assert state.solved is None

    def test_scaling_counts_scales_weights_linearly(self):
        """Doubling every sample doubles Q and G; U is not scale-invariant
        but routing order on duplicated data is preserved."""
        rng = np.random.default_rng(3)
        phi = rng.standard_normal((30, 5))
        labels = rng.integers(2, size=30)
        single = new_router_state(5, 1.0, num_experts=2)
        double = new_router_state(5, 1.0, num_experts=2)
        for e in range(2):
            rows = phi[labels == e]
            accumulate(single, ExpandedBatch(rows, e))
            accumulate(double, ExpandedBatch(np.vstack([rows, rows]), e))
        expected = batch_ridge(np.vstack([phi, phi]),
                               one_hot(np.concatenate([labels, labels]), 2),
                               1.0)
        np.testing.assert_allclose(solve(double), expected, atol=1e-10)

    def test_jitter_rescues_near_singular_gram(self):
        """A rank-one Gram with a tiny ridge still factorizes (possibly via
        the escalating jitter) and returns finite weights."""
        state = new_router_state(16, 1e-12, num_experts=1)
        row = np.ones((1, 16))
        accumulate(state, ExpandedBatch(row * 1e8, 0))
        weights = solve(state)
        assert np.isfinite(weights).all()


class TestRoute:
    def test_requires_solved_state(self):
        exp = RandomExpansion(3, 8, seed=0)
        state = new_router_state(8, 1.0)
        accumulate(state, ExpandedBatch(np.ones((1, 8)), 0))
        with pytest.raises(NotSolvedError):
            route(np.ones((1, 3)), exp, state)

    def test_tie_breaks_to_lowest_id(self):
        exp = RandomExpansion(2, 2, seed=0)
        exp._weights = np.eye(2)
        # U maps phi to scores [0.2, 0.9, 0.9]: experts 1 and 2 tie.
        U = np.array([[0.2, 0.0], [0.9, 0.0], [0.9, 0.0]])
        scores, picks = route(np.array([[1.0, 0.0]]), exp, U)
        np.testing.assert_allclose(scores, [[0.2, 0.9, 0.9]])
        assert picks[0] == 1

    def test_single_expert_always_selected(self):
        rng = np.random.default_rng(4)
        exp = RandomExpansion(3, 8, seed=1)
        state = new_router_state(8, 1.0, num_experts=1)
        accumulate(state, ExpandedBatch(rng.standard_normal((10, 8)), 0))
        solve(state)
        _, picks = route(rng.standard_normal((6, 3)), exp, state)
        np.testing.assert_array_equal(picks, np.zeros(6, dtype=np.int64))

    def test_width_mismatch_raises(self):
        exp = RandomExpansion(3, 8, seed=1)
        with pytest.raises(ShapeError):
            route(np.ones((1, 3)), exp, np.zeros((2, 9)))


class TestGrow:
    def test_grow_pads_a_zero_column(self):
        state = new_router_state(3, 1.0, num_experts=1)
        accumulate(state, ExpandedBatch(np.array([[1.0, 2.0, 3.0]]), 0))
        grow(state, 2)
        assert state.num_experts == 2
        np.testing.assert_array_equal(state.proto[:, 1], np.zeros(3))

    def test_new_expert_scores_zero_until_it_sees_data(self):
        state = new_router_state(3, 1.0, num_experts=1)
        accumulate(state, ExpandedBatch(np.array([[1.0, 2.0, 3.0]]), 0))
        grow(state, 2)
        weights = solve(state)
        np.testing.assert_array_equal(weights[1], np.zeros(3))

    def test_grow_mid_stream_matches_batch_ridge_at_full_width(self):
        rng = np.random.default_rng(8)
        M, lam = 6, 1.0
        state = new_router_state(M, lam, num_experts=1)
        phi1 = rng.standard_normal((15, M))
        accumulate(state, ExpandedBatch(phi1, 0))
        grow(state, 3)
        phi2 = rng.standard_normal((9, M))
        phi3 = rng.standard_normal((4, M))
        accumulate(state, ExpandedBatch(phi2, 1))
        accumulate(state, ExpandedBatch(phi3, 2))
        phi = np.vstack([phi1, phi2, phi3])
        labels = np.concatenate([np.zeros(15), np.ones(9), np.full(4, 2)])
        expected = batch_ridge(phi, one_hot(labels, 3), lam)
        np.testing.assert_allclose(solve(state), expected, atol=1e-10)

    def test_shrinking_raises(self):
        state = new_router_state(3, 1.0, num_experts=2)
        with pytest.raises(ValueError):
            grow(state, 2)


class TestSnapshotRestore:
    def test_round_trip_preserves_solution(self):
        rng = np.random.default_rng(9)
        state, _, _ = _stream_instance(rng, 5, 18, 2, 1.0)
        copy = restore(snapshot(state))
        np.testing.assert_array_equal(copy.gram, state.gram)
        np.testing.assert_array_equal(copy.proto, state.proto)
        assert copy.lam == state.lam
        assert copy.samples_seen == state.samples_seen
        np.testing.assert_allclose(solve(copy), solve(state), atol=1e-15)


class TestConstruction:
    def test_invalid_sizes_raise(self):
        with pytest.raises(ShapeError):
            new_router_state(0, 1.0)
        with pytest.raises(ValueError):
            new_router_state(4, 0.0)
        with pytest.raises(ValueError):
            new_router_state(4, 1.0, num_experts=0)
