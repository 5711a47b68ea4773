import numpy as np
import pytest

from segalign.motion import LatentSequence
from segalign.segmentation import (
    CostMatrix,
    PrimitiveLibrary,
    SegmentBoundaries,
    boundaries_from_json,
    boundaries_to_json,
    brute_force_objective,
    brute_force_segment,
    build_primitive_library,
    cluster_dp_segment,
    cut_errors,
    gaussian_kernel_matrix,
    kernel_cost_table,
    kernel_cpd_segment,
    kernel_span_cost,
    library_from_json,
    library_to_json,
    seg_error_corpus,
    seg_error_eval,
    segment_cost_matrix_dp,
    uniform_segment,
    window_cost_matrix,
)


class TestSegmentBoundaries:
    def test_cuts_and_from_cuts(self):
        b = SegmentBoundaries(spans=((0, 3), (3, 7), (7, 10)))
        assert b.cuts == (3, 7)
        assert SegmentBoundaries.from_cuts(10, [3, 7]) == b

    def test_gap_rejected(self):
        with pytest.raises(ValueError):
            SegmentBoundaries(spans=((0, 3), (4, 7)))

    def test_empty_span_rejected(self):
        with pytest.raises(ValueError):
            SegmentBoundaries(spans=((0, 3), (3, 3)))

    def test_must_start_at_zero(self):
        with pytest.raises(ValueError):
            SegmentBoundaries(spans=((1, 3),))

    def test_json_round_trip(self):
        b = SegmentBoundaries.from_cuts(8, [2, 5])
        assert boundaries_from_json(boundaries_to_json(b)) == b


class TestUniform:
    def test_even_division(self):
        assert uniform_segment(12, 3).spans == ((0, 4), (4, 8), (8, 12))

    def test_remainder_goes_first(self):
        assert uniform_segment(10, 3).spans == ((0, 4), (4, 7), (7, 10))

    def test_one_token_each(self):
        assert uniform_segment(3, 3).spans == ((0, 1), (1, 2), (2, 3))

    def test_too_many_segments(self):
        with pytest.raises(ValueError):
            uniform_segment(2, 3)


class TestKernelCpd:
    def test_cost_table_matches_direct_cost(self):
        rng = np.random.default_rng(0)
        K = gaussian_kernel_matrix(rng.normal(size=(9, 2)))
        C = kernel_cost_table(K)
        for s in range(9):
            for e in range(s + 1, 10):
                assert abs(C[s, e] - kernel_span_cost(K, s, e)) < 1e-12

    def test_single_point_span_costs_zero(self):
        K = gaussian_kernel_matrix(np.random.default_rng(1).normal(size=(5, 3)))
        for i in range(5):
            assert abs(kernel_span_cost(K, i, i + 1)) < 1e-12

    def test_clean_two_regime_boundary(self):
        x = LatentSequence(vectors=np.array([[0.0]] * 5 + [[10.0]] * 5))
        b = kernel_cpd_segment(x, 2)
        assert b.cuts == (5,)

    def test_single_segment(self):
        x = LatentSequence(vectors=np.random.default_rng(0).normal(size=(6, 2)))
        assert kernel_cpd_segment(x, 1).spans == ((0, 6),)

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = int(rng.integers(4, 11))
            a = int(rng.integers(2, min(4, n) + 1))
            x = LatentSequence(vectors=rng.normal(size=(n, 2)))
            K = gaussian_kernel_matrix(x.vectors)
            assert kernel_cpd_segment(x, a) == brute_force_segment(K, a)

    def test_identical_points_bandwidth_fallback(self):
        x = LatentSequence(vectors=np.zeros((6, 2)))
        b = kernel_cpd_segment(x, 2)
        assert b.num_segments == 2

    def test_too_many_segments(self):
        x = LatentSequence(vectors=np.zeros((3, 1)))
        with pytest.raises(ValueError):
            kernel_cpd_segment(x, 4)


class TestClusterDp:
    def test_zero_cost_run_structure(self):
        # windows 0-2 fit primitive 0 perfectly, windows 3-5 primitive 1
        costs = np.array([[0.0, 9.0]] * 3 + [[9.0, 0.0]] * 3)
        cuts, assigns, obj = segment_cost_matrix_dp(CostMatrix(costs=costs), 2)
        assert cuts == [3]
        assert assigns == [0, 1]
        assert obj == 0.0

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n = int(rng.integers(4, 11))
            a = int(rng.integers(2, min(4, n) + 1))
            cost = CostMatrix(costs=rng.uniform(size=(n, int(rng.integers(2, 5)))))
            cuts, _, obj = segment_cost_matrix_dp(cost, a)
            assert SegmentBoundaries.from_cuts(n, cuts) == brute_force_segment(cost, a)
            assert obj == brute_force_objective(cost, a)

    def test_library_fit_and_segment(self):
        rng = np.random.default_rng(6)
        corpus = []
        for _ in range(20):
            x = np.vstack([
                rng.normal(0.0, 0.1, size=(6, 2)),
                rng.normal(5.0, 0.1, size=(6, 2)),
            ])
            corpus.append(LatentSequence(vectors=x))
        lib = build_primitive_library(corpus, window_size=1, stride=1,
                                      num_primitives=4, seed=0, iters=10)
        b = cluster_dp_segment(corpus[0], lib, 2)
        assert b.cuts == (6,)

    def test_window_cost_matrix_shape(self):
        lib = PrimitiveLibrary(centers=np.zeros((3, 4)), window_size=2, stride=1)
        x = LatentSequence(vectors=np.arange(10, dtype=float).reshape(5, 2))
        assert window_cost_matrix(x, lib).costs.shape == (4, 3)

    def test_library_json_round_trip(self):
        lib = PrimitiveLibrary(centers=np.array([[1.0, 2.0]]), window_size=2, stride=1)
        back = library_from_json(library_to_json(lib))
        np.testing.assert_array_equal(back.centers, lib.centers)
        assert (back.window_size, back.stride) == (2, 1)


class TestBruteForceGuards:
    def test_instance_size_cap(self):
        with pytest.raises(ValueError):
            brute_force_segment(CostMatrix(costs=np.zeros((20, 2))), 2)

    def test_segment_count_cap(self):
        with pytest.raises(ValueError):
            brute_force_segment(CostMatrix(costs=np.zeros((10, 2))), 5)


class TestSegError:
    def test_exact_match_zero(self):
        b = SegmentBoundaries.from_cuts(10, [4])
        assert seg_error_eval(b, b) == (0.0, 0.0)

    def test_mean_and_population_std(self):
        pred = SegmentBoundaries.from_cuts(12, [3, 9])
        truth = SegmentBoundaries.from_cuts(12, [4, 6])
        mean, std = seg_error_eval(pred, truth)
        assert mean == 2.0   # errors 1 and 3
        assert std == 1.0

    def test_single_segment_convention(self):
        b = SegmentBoundaries(spans=((0, 5),))
        assert seg_error_eval(b, b) == (0.0, 0.0)

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            seg_error_eval(
                SegmentBoundaries.from_cuts(10, [5]),
                SegmentBoundaries.from_cuts(10, [3, 7]),
            )

    def test_corpus_pooling(self):
        p1 = (SegmentBoundaries.from_cuts(10, [4]), SegmentBoundaries.from_cuts(10, [5]))
        p2 = (SegmentBoundaries.from_cuts(10, [7]), SegmentBoundaries.from_cuts(10, [4]))
        mean, std = seg_error_corpus([p1, p2])
        assert mean == 2.0   # pooled errors 1 and 3
        assert std == 1.0
        assert cut_errors(*p2) == [3]
