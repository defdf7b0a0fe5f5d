"""Tensor engine: forward values against naive oracles, backward contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convformer import tensor as T
from convformer.tensor import ConfigurationError, DimensionError, Tensor


def naive_matmul(a, b):
    """Triple-loop matrix product, the independent oracle for matmul."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def naive_conv1d_same(x, w, b):
    """Quadruple-loop same-length conv, the independent oracle for conv1d_same."""
    batch, c_in, length = x.shape
    c_out, _, kernel = w.shape
    pad = (kernel - 1) // 2
    out = np.zeros((batch, c_out, length))
    for bi in range(batch):
        for co in range(c_out):
            for pos in range(length):
                s = b[co]
                for ci in range(c_in):
                    for k in range(kernel):
                        src = pos + k - pad
                        if 0 <= src < length:
                            s += w[co, ci, k] * x[bi, ci, src]
                out[bi, co, pos] = s
    return out


class TestTensorBasics:
    def test_scalar_promotes_to_zero_dim_array(self):
        t = Tensor(3.5)
        assert t.shape == ()
        assert t.data.dtype == np.float64

    def test_data_is_contiguous_float64(self):
        t = Tensor(np.arange(6, dtype=np.int32).reshape(2, 3)[:, ::-1])
        assert t.data.flags.c_contiguous
        assert t.data.dtype == np.float64

    def test_repr_mentions_shape(self):
        assert "shape=(2, 3)" in repr(Tensor(np.zeros((2, 3))))

    def test_backward_accumulates_across_calls(self):
        x = Tensor(np.ones(4), requires_grad=True)
        loss = T.sum_(T.mul(x, x))
        loss.backward()
        first = x.grad.copy()
        loss2 = T.sum_(T.mul(x, x))
        loss2.backward()
        np.testing.assert_allclose(x.grad, 2.0 * first)

    def test_zero_grad_resets(self):
        x = Tensor(np.ones(3), requires_grad=True)
        T.sum_(x).backward()
        x.zero_grad()
        assert x.grad is None

    def test_diamond_graph_accumulates_through_both_paths(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = T.add(T.mul(x, x), T.scale(x, 3.0))  # x^2 + 3x
        T.sum_(y).backward()
        np.testing.assert_allclose(x.grad, [2 * 2.0 + 3.0])

    def test_no_grad_for_constants(self):
        x = Tensor(np.ones(3), requires_grad=True)
        c = Tensor(np.ones(3))
        T.sum_(T.mul(x, c)).backward()
        assert c.grad is None
        assert x.grad is not None


class TestMatmul:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 6))
        got = T.matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, naive_matmul(a, b), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(1, 5), k=st.integers(1, 5), m=st.integers(1, 5),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_matches_naive_oracle_random_shapes(self, n, k, m, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n, k))
        b = rng.normal(size=(k, m))
        got = T.matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, naive_matmul(a, b), atol=1e-10)

    def test_batched_times_shared_matrix_matches_generic(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 4, 5))
        b = rng.normal(size=(5, 2))
        got = T.matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, np.matmul(a, b), atol=1e-12)

    def test_batched_shared_matrix_gradients(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.normal(size=(3, 4, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
        T.sum_(T.matmul(a, b)).backward()
        # d/dA sum(AB) = ones @ B^T broadcast; d/dB = sum over batch of A^T @ ones
        np.testing.assert_allclose(a.grad, np.tile(b.data.sum(axis=1), (3, 4, 1)), atol=1e-12)
        np.testing.assert_allclose(b.grad, np.tile(a.data.sum(axis=(0, 1))[:, None], (1, 2)), atol=1e-12)

    def test_inner_extent_mismatch_raises(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_vector_operand_raises(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


class TestConv1d:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 9))
        w = rng.normal(size=(4, 3, 5))
        b = rng.normal(size=4)
        got = T.conv1d_same(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, naive_conv1d_same(x, w, b), atol=1e-12)

    def test_unbatched_input(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 7))
        w = rng.normal(size=(2, 3, 3))
        b = rng.normal(size=2)
        got = T.conv1d_same(Tensor(x), Tensor(w), Tensor(b))
        assert got.shape == (2, 7)
        np.testing.assert_allclose(
            got.data, naive_conv1d_same(x[None], w, b)[0], atol=1e-12
        )

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            T.conv1d_same(Tensor(np.zeros((1, 2, 5))), Tensor(np.zeros((2, 2, 4))), Tensor(np.zeros(2)))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            T.conv1d_same(Tensor(np.zeros((1, 3, 5))), Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros(2)))

    def test_shared_patches_match_fresh_patches(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 3, 8)))
        patches = T.ConvPatches(x.data, 5)
        w1 = Tensor(rng.normal(size=(4, 3, 5)))
        w2 = Tensor(rng.normal(size=(2, 3, 5)))
        b1, b2 = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=2))
        np.testing.assert_array_equal(
            T.conv1d_same(x, w1, b1, _patches=patches).data,
            T.conv1d_same(x, w1, b1).data,
        )
        np.testing.assert_array_equal(
            T.conv1d_same(x, w2, b2, _patches=patches).data,
            T.conv1d_same(x, w2, b2).data,
        )

    def test_mismatched_shared_patches_rejected(self):
        x = Tensor(np.zeros((1, 3, 8)))
        patches = T.ConvPatches(x.data, 3)
        with pytest.raises(DimensionError):
            T.conv1d_same(x, Tensor(np.zeros((2, 3, 5))), Tensor(np.zeros(2)), _patches=patches)


class TestPadKernelCentered:
    def test_pads_symmetrically(self):
        w = Tensor(np.arange(6.0).reshape(1, 2, 3))
        out = T.pad_kernel_centered(w, 7)
        assert out.shape == (1, 2, 7)
        np.testing.assert_array_equal(out.data[0, 0], [0, 0, 0, 1, 2, 0, 0])

    def test_same_size_is_identity(self):
        w = Tensor(np.ones((1, 1, 3)))
        assert T.pad_kernel_centered(w, 3) is w

    def test_uncentrable_pad_rejected(self):
        with pytest.raises(ConfigurationError):
            T.pad_kernel_centered(Tensor(np.ones((1, 1, 3))), 6)

    def test_padded_conv_equals_original(self):
        # Zero padding the kernel must not change the convolution output.
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(1, 2, 9)))
        w = Tensor(rng.normal(size=(2, 2, 3)))
        b = Tensor(np.zeros(2))
        small = T.conv1d_same(x, w, b).data
        big = T.conv1d_same(x, T.pad_kernel_centered(w, 7), b).data
        np.testing.assert_allclose(big, small, atol=1e-12)


class TestElementwise:
    def test_add_broadcast_gradient(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        T.sum_(T.add(a, b)).backward()
        np.testing.assert_array_equal(b.grad, 3 * np.ones(4))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        x = rng.normal(scale=5.0, size=(6, 9))
        s = T.softmax_rows(Tensor(x)).data
        np.testing.assert_allclose(s.sum(axis=-1), np.ones(6), atol=1e-12)
        assert (s >= 0).all()

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 5))
        a = T.softmax_rows(Tensor(x)).data
        b = T.softmax_rows(Tensor(x + 123.456)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_extreme_logits_finite(self):
        x = np.array([[1e4, -1e4, 0.0]])
        s = T.softmax_rows(Tensor(x)).data
        assert np.isfinite(s).all()
        np.testing.assert_allclose(s.sum(), 1.0, atol=1e-12)

    def test_layer_norm_statistics(self):
        rng = np.random.default_rng(9)
        x = rng.normal(loc=3.0, scale=2.0, size=(5, 16))
        y = T.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        np.testing.assert_allclose(y.mean(axis=-1), np.zeros(5), atol=1e-10)
        np.testing.assert_allclose(y.std(axis=-1), np.ones(5), atol=1e-3)

    def test_gelu_known_values(self):
        # GELU(0) = 0, GELU(x) -> x for large x, -> 0 for very negative x.
        y = T.gelu(Tensor(np.array([0.0, 10.0, -10.0]))).data
        np.testing.assert_allclose(y, [0.0, 10.0, 0.0], atol=1e-8)

    def test_dropout_eval_is_identity(self):
        x = Tensor(np.ones((4, 4)))
        out = T.dropout(x, 0.5, None, training=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_dropout_preserves_expectation(self):
        rng = np.random.Generator(np.random.Philox(0))
        x = Tensor(np.ones((200, 200)))
        out = T.dropout(x, 0.3, rng, training=True).data
        assert abs(out.mean() - 1.0) < 0.01

    def test_dropout_invalid_rate(self):
        with pytest.raises(ConfigurationError):
            T.dropout(Tensor(np.ones(3)), 1.0, np.random.default_rng(0), training=True)

    def test_concat_split_roundtrip(self):
        rng = np.random.default_rng(10)
        parts = [Tensor(rng.normal(size=(2, 3))) for _ in range(3)]
        joined = T.concat(parts, axis=1)
        back = T.split(joined, 3, axis=1)
        for orig, piece in zip(parts, back):
            np.testing.assert_array_equal(orig.data, piece.data)

    def test_split_uneven_rejected(self):
        with pytest.raises(DimensionError):
            T.split(Tensor(np.zeros((2, 5))), 2, axis=1)

    def test_transpose_reshape_roundtrip(self):
        x = Tensor(np.arange(24.0).reshape(2, 3, 4))
        y = T.transpose(x, (2, 0, 1))
        z = T.transpose(y, (1, 2, 0))
        np.testing.assert_array_equal(z.data, x.data)

    def test_mean_matches_numpy(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 5))
        np.testing.assert_allclose(T.mean(Tensor(x)).data, x.mean(), atol=1e-14)
        np.testing.assert_allclose(
            T.mean(Tensor(x), axis=1).data, x.mean(axis=1), atol=1e-14
        )
