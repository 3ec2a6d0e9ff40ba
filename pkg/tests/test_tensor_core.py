import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import cosine, matmul as loop_matmul, softmax_row
from streambank.errors import ShapeError
from streambank.tensor_core import (
    Rng, concat_rows, cosine_sim_matrix, load_matrix, matmul, matrix_from_bytes,
    matrix_to_bytes, randn, row_softmax, save_matrix,
)


class TestMatmul:
    def test_identity(self):
        out = matmul([[1, 0], [0, 1]], [[3, 4], [5, 6]])
        np.testing.assert_array_equal(out, [[3, 4], [5, 6]])

    def test_row_times_column(self):
        np.testing.assert_array_equal(matmul([[1, 2]], [[3], [4]]), [[11]])

    def test_against_triple_loop(self, rng):
        a = rng.standard_normal((5, 3)).astype(np.float32)
        b = rng.standard_normal((3, 2)).astype(np.float32)
        np.testing.assert_allclose(matmul(a, b), loop_matmul(a, b), atol=1e-6)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_identity_is_bit_exact(self, rng):
        a = rng.integers(-50, 50, (4, 4)).astype(np.float32) / 8
        assert np.array_equal(matmul(np.eye(4), a), a)

    def test_result_is_float32(self):
        assert matmul(np.ones((2, 2)), np.ones((2, 2))).dtype == np.float32


class TestRowSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(row_softmax([[0, 0]], 1.0), [[0.5, 0.5]])

    def test_large_logits_do_not_overflow(self):
        np.testing.assert_allclose(row_softmax([[1000, 1000]], 1.0), [[0.5, 0.5]])

    def test_direct_formula(self):
        np.testing.assert_allclose(row_softmax([[1, 2, 3]], 1.0)[0], softmax_row([1, 2, 3]), atol=1e-7)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 8)),
                  elements=st.floats(-1e4, 1e4, width=32)))
    def test_rows_sum_to_one(self, x):
        out = row_softmax(x, 1.0)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


class TestCosine:
    def test_self_similarity(self):
        a = np.array([[1.0, 2.0, 3.0]])
        assert cosine_sim_matrix(a, np.array([[0.0, 1.0, 0.0], [1.0, 2.0, 3.0]]))[0, 1] == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        assert cosine_sim_matrix([[1, 0]], [[0, 1]])[0, 0] == 0.0

    def test_zero_rows_give_zero(self):
        out = cosine_sim_matrix([[0, 0, 0], [1, 1, 1]], [[1, 2, 3]])
        assert out[0, 0] == 0.0

    def test_against_per_pair(self, rng):
        a = rng.standard_normal((4, 3)).astype(np.float32)
        b = rng.standard_normal((6, 3)).astype(np.float32)
        ref = [[cosine(x, y) for y in b] for x in a]
        np.testing.assert_allclose(cosine_sim_matrix(a, b), ref, atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 6), st.just(4)),
                  elements=st.floats(-100, 100, width=32)))
    def test_bounded_and_unit_diagonal(self, a):
        s = cosine_sim_matrix(a, a)
        assert np.all(np.abs(s) <= 1 + 1e-6)
        nz = np.linalg.norm(a.astype(np.float64), axis=1) > 1e-3
        np.testing.assert_allclose(np.diag(s)[nz], 1.0, atol=1e-6)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            cosine_sim_matrix(np.ones((2, 3)), np.ones((2, 4)))


class TestConcatRows:
    def test_empty_operand(self, rng):
        a = rng.standard_normal((2, 3)).astype(np.float32)
        assert np.array_equal(concat_rows(a, np.zeros((0, 3))), a)

    def test_order(self):
        np.testing.assert_array_equal(concat_rows([[1, 2]], [[3, 4]]), [[1, 2], [3, 4]])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            concat_rows(np.ones((1, 2)), np.ones((1, 3)))


class TestRng:
    def test_same_seed_same_matrix(self):
        assert np.array_equal(randn(Rng(7), 3, 4), randn(Rng(7), 3, 4))

    def test_different_seeds_differ(self):
        assert not np.array_equal(randn(Rng(7), 3, 4), randn(Rng(8), 3, 4))

    def test_moments(self):
        x = randn(Rng(42), 100, 100).astype(np.float64)
        assert abs(x.mean()) < 0.05
        assert abs(x.var() - 1.0) < 0.1

    def test_stream_continues(self):
        r = Rng(5)
        a, b = r.next_u64(4), r.next_u64(4)
        assert np.array_equal(np.concatenate([a, b]), Rng(5).next_u64(8))

    def test_splitmix_reference_value(self):
        # first splitmix64 output for seed 0
        assert int(Rng(0).next_u64(1)[0]) == 0xE220A8397B1DCDAF

    def test_permutation_is_a_permutation(self):
        p = Rng(3).permutation(50)
        assert sorted(p.tolist()) == list(range(50))

    def test_randn_rejects_empty(self):
        with pytest.raises(ShapeError):
            randn(Rng(0), 0, 3)


class TestBinaryFormat:
    def test_header_layout(self):
        buf = matrix_to_bytes(np.array([[1.0, 2.0, 3.0]]))
        assert buf[:4] == b"SBNK"
        assert buf[4:12] == bytes([1, 0, 0, 0, 3, 0, 0, 0])
        assert len(buf) == 12 + 3 * 4
        assert buf[12:16] == np.float32(1.0).tobytes()

    def test_round_trip(self, tmp_path, rng):
        m = rng.standard_normal((5, 7)).astype(np.float32)
        save_matrix(tmp_path / "m.sbnk", m)
        assert np.array_equal(load_matrix(tmp_path / "m.sbnk"), m)

    def test_empty_matrix(self):
        m = np.zeros((0, 4), dtype=np.float32)
        assert matrix_from_bytes(matrix_to_bytes(m)).shape == (0, 4)

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            matrix_from_bytes(b"XXXX" + bytes(8))
