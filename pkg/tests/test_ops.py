import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from sparsett import Tape, Tensor, backward, ops
from sparsett.errors import DegenerateRowError, DimensionError

NEG_INF = -np.inf


def naive_conv2d(x, w, b, stride, padding):
    """Direct-loop oracle."""
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[o, i, j] = (patch * w[o]).sum() + (b[o] if b is not None else 0.0)
    return out


def sort_oracle_topk(row, k):
    order = sorted(range(len(row)), key=lambda j: (-row[j], j))[:k]
    return [row[j] for j in order], order


class TestMatmul:
    def test_identity(self):
        out = ops.matmul(Tensor([[1.0, 0], [0, 1]]), Tensor([[3.0, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_hand_product(self):
        assert ops.matmul(Tensor([[1.0, 2]]), Tensor([[3.0], [4]])).data[0, 0] == 11

    def test_gradient_hand_case(self):
        a, b = Tensor([[1.0, 2]], requires_grad=True), Tensor([[3.0], [4]], requires_grad=True)
        with Tape():
            loss = ops.matmul(a, b).sum()
        backward(loss)
        np.testing.assert_allclose(a.grad, [[3, 4]])
        np.testing.assert_allclose(b.grad, [[1], [2]])

    def test_inner_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_batched_broadcast(self, rng):
        a, b = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(5, 6))
        np.testing.assert_allclose(ops.matmul(Tensor(a), Tensor(b)).data, a @ b)


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_array_equal(ops.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_hand_values(self):
        z = sum(math.exp(v) for v in (1, 2, 3, 4))
        expected = [math.exp(v) / z for v in (1, 2, 3, 4)]
        out = ops.softmax_rows(Tensor([[1.0, 2, 3, 4]])).data[0]
        np.testing.assert_allclose(out, expected, atol=1e-15)
        np.testing.assert_allclose(out, [0.0321, 0.0871, 0.2369, 0.6439], atol=5e-5)

    def test_masked_entry_is_exact_zero(self):
        out = ops.softmax_rows(Tensor([[NEG_INF, 0.0]])).data
        assert out[0, 0] == 0.0 and out[0, 1] == 1.0

    def test_fully_masked_row(self):
        with pytest.raises(DegenerateRowError):
            ops.softmax_rows(Tensor([[NEG_INF, NEG_INF]]))

    def test_sum_of_softmax_has_zero_gradient(self, rng):
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        with Tape():
            loss = ops.softmax_rows(x).sum()
        backward(loss)
        assert np.abs(x.grad).max() < 1e-8

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)),
                      elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, m):
        out = ops.softmax_rows(Tensor(m)).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestTopK:
    def test_descending_with_indices(self):
        top = ops.topk_rows(Tensor([[1.0, 4, 2, 3]]), 2)
        np.testing.assert_array_equal(top.values.data, [[4, 3]])
        np.testing.assert_array_equal(top.indices, [[1, 3]])

    def test_ties_prefer_smaller_index(self):
        top = ops.topk_rows(Tensor([[5.0, 5, 1]]), 2)
        np.testing.assert_array_equal(top.values.data, [[5, 5]])
        np.testing.assert_array_equal(top.indices, [[0, 1]])

    def test_k_beyond_width_sorts_everything(self):
        top = ops.topk_rows(Tensor([[2.0, 9, 4]]), 10)
        np.testing.assert_array_equal(top.values.data, [[9, 4, 2]])

    def test_short_rows_are_flagged(self):
        top = ops.topk_rows(Tensor([[NEG_INF, 1.0, NEG_INF, 2.0]]), 3)
        assert top.counts[0] == 2 and top.short[0]
        np.testing.assert_array_equal(top.indices[0, :2], [3, 1])

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            ops.topk_rows(Tensor([[1.0]]), 0)

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 12)),
                      elements=st.sampled_from([-2.0, -1.0, 0.0, 0.5, 1.0, 3.0])),
           st.integers(1, 14))
    def test_matches_sort_oracle(self, m, k):
        top = ops.topk_rows(Tensor(m), k)
        for r in range(m.shape[0]):
            vals, idx = sort_oracle_topk(list(m[r]), k)
            assert top.indices[r].tolist() == idx
            assert top.values.data[r].tolist() == vals

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 10)),
                      elements=st.floats(-5, 5)))
    def test_full_k_scatter_reconstructs(self, m):
        c = m.shape[1]
        top = ops.topk_rows(Tensor(m), c)
        back = ops.scatter_rows(top.values, top.indices, c)
        np.testing.assert_array_equal(back.data, m)


class TestScatter:
    def test_single_fill(self):
        out = ops.scatter_rows(Tensor([[7.0]]), np.array([[2]]), 4)
        np.testing.assert_array_equal(out.data, [[0, 0, 7, 0]])

    def test_pipeline_example(self):
        out = ops.scatter_rows(Tensor([[0.7311, 0.2689]]), np.array([[3, 2]]), 4)
        np.testing.assert_array_equal(out.data, [[0, 0, 0.2689, 0.7311]])

    def test_gradient_is_ones(self):
        v = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        with Tape():
            loss = ops.scatter_rows(v, np.array([[0, 3], [2, 1]]), 5).sum()
        backward(loss)
        np.testing.assert_array_equal(v.grad, np.ones((2, 2)))

    @pytest.mark.parametrize("idx", [[[0, 0]], [[1, 5]], [[-1, 2]]])
    def test_bad_indices(self, idx):
        with pytest.raises(IndexError):
            ops.scatter_rows(Tensor([[1.0, 2.0]]), np.array(idx), 5)


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = ops.layer_norm(Tensor([[3.0, 3, 3]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, [[0, 0, 0]])

    def test_two_values(self):
        out = ops.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [[-1, 1]], atol=1e-4)

    def test_zero_gain_gives_bias(self, rng):
        out = ops.layer_norm(Tensor(rng.normal(size=(4, 3))), Tensor(np.zeros(3)), Tensor([1.0, 2, 3]))
        np.testing.assert_array_equal(out.data, np.tile([1.0, 2, 3], (4, 1)))


class TestElementwiseLayers:
    def test_relu(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 2.0])).data, [0, 2])

    def test_linear_matches_numpy(self, rng):
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        np.testing.assert_allclose(ops.linear(Tensor(x), Tensor(w), Tensor(b)).data, x @ w + b)

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        assert ops.dropout(x, 0.1, False, rng) is x

    def test_dropout_scales_survivors(self):
        x = Tensor(np.ones((200, 50)))
        out = ops.dropout(x, 0.25, True, np.random.default_rng(0)).data
        kept = out[out != 0]
        np.testing.assert_allclose(kept, 1 / 0.75)
        assert abs((out == 0).mean() - 0.25) < 0.02

    def test_dropout_deterministic_under_seed(self):
        x = Tensor(np.ones((10, 10)))
        a = ops.dropout(x, 0.5, True, np.random.default_rng(3)).data
        b = ops.dropout(x, 0.5, True, np.random.default_rng(3)).data
        np.testing.assert_array_equal(a, b)


class TestConv2d:
    def test_pointwise_scaling(self):
        out = ops.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)))
        np.testing.assert_array_equal(out.data, np.full((1, 3, 3), 2.0))

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_loop_oracle(self, rng, stride, padding):
        x, w, b = rng.normal(size=(3, 7, 6)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding).data
        np.testing.assert_allclose(out, naive_conv2d(x, w, b, stride, padding), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 1, 1))))
