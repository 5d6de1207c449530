"""Tensor/tape core: forward contracts, backward rules, accumulation laws."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgcn import autodiff as ad
from sgcn.autodiff import BatchNormState, Tape, Tensor, backward, gradcheck, segment_reduce
from sgcn.errors import ShapeError, SgcnError


def triple_loop_matmul(x, w, b):
    """Independent oracle for linear_affine."""
    n, din = x.shape
    dout = w.shape[1]
    out = np.zeros((n, dout))
    for i in range(n):
        for j in range(dout):
            acc = b[j]
            for k in range(din):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc
    return out


class TestLinearAffine:
    def test_identity(self):
        out = ad.linear_affine(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0]])

    def test_additive_bias(self):
        out = ad.linear_affine(Tensor([[1.0, 1.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]),
                               Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [[4.0, 5.0]])

    def test_matches_triple_loop_oracle(self, rng):
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 2))
        b = rng.normal(size=2)
        out = ad.linear_affine(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                               Tensor(b, dtype=np.float64))
        np.testing.assert_allclose(out.data, triple_loop_matmul(x, w, b), atol=1e-12)

    def test_shape_mismatch_reports_dimensions(self):
        with pytest.raises(ShapeError, match="Din=3"):
            ad.linear_affine(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))),
                             Tensor(np.ones(2)))


def per_segment_loop(values, ids, num, mode):
    """Independent oracle for segment_reduce."""
    out = np.zeros((num,) + values.shape[1:])
    for s in range(num):
        rows = values[ids == s]
        if len(rows) == 0:
            continue
        if mode == "sum":
            out[s] = rows.sum(axis=0)
        elif mode == "mean":
            out[s] = rows.mean(axis=0)
        else:
            out[s] = rows.max(axis=0)
    return out


class TestSegmentReduce:
    def test_two_element_mean(self):
        out = segment_reduce(Tensor([[1.0], [3.0]]), [0, 0], 1, mode="mean")
        np.testing.assert_array_equal(out.data, [[2.0]])

    def test_empty_segment_is_zero(self):
        out = segment_reduce(Tensor([[1.0], [3.0]]), [0, 1], 3, mode="sum")
        np.testing.assert_array_equal(out.data, [[1.0], [3.0], [0.0]])

    @pytest.mark.parametrize("mode", ["sum", "mean", "max"])
    def test_matches_loop_oracle(self, mode, rng):
        values = rng.normal(size=(20, 4))
        ids = rng.integers(0, 5, size=20)
        out = segment_reduce(Tensor(values, dtype=np.float64), ids, 5, mode=mode)
        np.testing.assert_allclose(out.data, per_segment_loop(values, ids, 5, mode),
                                   rtol=1e-12)

    def test_out_of_range_id_rejected(self):
        with pytest.raises(SgcnError, match="out of range"):
            segment_reduce(Tensor([[1.0]]), [5], 2, mode="sum")

    def test_max_tie_routes_to_first_row(self):
        v = Tensor([[2.0], [2.0]], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            out = segment_reduce(v, [0, 0], 1, mode="max")
            loss = ad.reduce_sum(out)
        backward(tape, loss)
        np.testing.assert_array_equal(v.grad, [[1.0], [0.0]])

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_sum_conservation(self, seed):
        r = np.random.default_rng(seed)
        values = r.normal(size=(int(r.integers(1, 30)), 3))
        ids = r.integers(0, 4, size=len(values))
        out = segment_reduce(Tensor(values, dtype=np.float64), ids, 4, mode="sum")
        np.testing.assert_allclose(out.data.sum(axis=0), values.sum(axis=0), rtol=1e-9)


class TestBatchNorm:
    def test_constant_channel_maps_to_shift(self):
        x = Tensor(np.full((4, 2), 3.0))
        gamma = Tensor(np.ones(2))
        beta = Tensor(np.array([0.5, -1.0]))
        out = ad.batch_norm(x, gamma, beta, BatchNormState(2), mode="train")
        np.testing.assert_allclose(out.data, np.broadcast_to([0.5, -1.0], (4, 2)), atol=1e-6)

    def test_eval_at_init_is_identity(self, rng):
        # scale=1 shift=0 against unit running stats; off only by the eps guard
        x = Tensor(rng.normal(size=(5, 3)))
        out = ad.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)),
                            BatchNormState(3), mode="eval")
        np.testing.assert_allclose(out.data, x.data, rtol=2e-5, atol=1e-7)

    def test_train_output_standardized(self, rng):
        x = Tensor(rng.normal(2.0, 3.0, size=(200, 4)), dtype=np.float64)
        out = ad.batch_norm(x, Tensor(np.ones(4), dtype=np.float64),
                            Tensor(np.zeros(4), dtype=np.float64),
                            BatchNormState(4, dtype=np.float64), mode="train")
        assert np.abs(out.data.mean(axis=0)).max() < 1e-5
        assert np.abs(out.data.var(axis=0) - 1.0).max() < 1e-4

    def test_eval_deterministic(self, rng):
        x = Tensor(rng.normal(size=(6, 2)))
        state = BatchNormState(2)
        g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
        a = ad.batch_norm(x, g, b, state, mode="eval").data
        bb = ad.batch_norm(x, g, b, state, mode="eval").data
        np.testing.assert_array_equal(a, bb)

    def test_refresh_pools_exact_statistics(self, rng):
        state = BatchNormState(2, dtype=np.float64)
        g, b = Tensor(np.ones(2), dtype=np.float64), Tensor(np.zeros(2), dtype=np.float64)
        chunks = [rng.normal(1.0, 2.0, size=(n, 2)) for n in (8, 5, 11)]
        state.begin_refresh()
        for c in chunks:
            ad.batch_norm(Tensor(c, dtype=np.float64), g, b, state, mode="refresh")
        state.finish_refresh()
        allx = np.concatenate(chunks)
        np.testing.assert_allclose(state.running_mean, allx.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(state.running_var, allx.var(axis=0), rtol=1e-10)


class TestPrelu:
    def test_positive_passthrough(self):
        out = ad.prelu(Tensor([[5.0]]), Tensor([0.25]))
        assert out.data[0, 0] == 5.0

    def test_negative_scaled(self):
        out = ad.prelu(Tensor([[-4.0]]), Tensor([0.25]))
        assert out.data[0, 0] == -1.0

    def test_unit_slope_is_identity(self, rng):
        x = rng.normal(size=(6, 3))
        out = ad.prelu(Tensor(x), Tensor(np.ones(3)))
        np.testing.assert_allclose(out.data, x, rtol=1e-6)

    def test_slope_gradient_accumulates_negative_side(self):
        x = Tensor([[-2.0], [3.0], [-1.0]], dtype=np.float64)
        a = Tensor([0.5], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = ad.reduce_sum(ad.prelu(x, a))
        backward(tape, loss)
        np.testing.assert_allclose(a.grad, [-3.0])


class TestDropout:
    def test_p_zero_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        out = ad.dropout(x, 0.0, mode="train", rng=rng)
        np.testing.assert_array_equal(out.data, x.data)

    def test_eval_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        out = ad.dropout(x, 0.9, mode="eval")
        np.testing.assert_array_equal(out.data, x.data)

    def test_survivor_fraction(self):
        r = np.random.default_rng(0)
        x = Tensor(np.ones((1000, 1000)))
        out = ad.dropout(x, 0.2, mode="train", rng=r)
        survivors = (out.data != 0).mean()
        assert abs(survivors - 0.8) < 0.01
        # inverted scaling: surviving entries are 1/(1-p)
        np.testing.assert_allclose(out.data[out.data != 0], 1.25, rtol=1e-6)

    def test_p_one_rejected(self):
        with pytest.raises(SgcnError):
            ad.dropout(Tensor([1.0]), 1.0, mode="train", rng=np.random.default_rng(0))


class TestBackward:
    def test_sum_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = ad.reduce_sum(x)
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_gradient(self):
        x = Tensor([3.0], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = ad.reduce_sum(ad.mul(x, x))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [6.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ad.scale(x, 2.0)
        with pytest.raises(SgcnError, match="scalar"):
            backward(tape, y)

    def test_repeated_backward_doubles_gradients(self, rng):
        x = Tensor(rng.normal(size=(3, 2)), requires_grad=True, dtype=np.float64)
        w = Tensor(rng.normal(size=(2, 2)), requires_grad=True, dtype=np.float64)
        b = Tensor(rng.normal(size=2), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = ad.reduce_sum(ad.linear_affine(x, w, b))
        backward(tape, loss)
        first = {id(t): t.grad.copy() for t in (x, w, b)}
        backward(tape, loss)
        for t in (x, w, b):
            np.testing.assert_array_equal(t.grad, 2.0 * first[id(t)])

    def test_multi_use_accumulates(self):
        x = Tensor([2.0], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = ad.reduce_sum(ad.add(ad.mul(x, x), x))  # x^2 + x -> 2x + 1
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [5.0])


class TestGradcheck:
    def test_linear_chain(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
        w1 = Tensor(rng.normal(size=(4, 5)), requires_grad=True, dtype=np.float64)
        b1 = Tensor(rng.normal(size=5), requires_grad=True, dtype=np.float64)
        w2 = Tensor(rng.normal(size=(5, 2)), requires_grad=True, dtype=np.float64)
        b2 = Tensor(rng.normal(size=2), requires_grad=True, dtype=np.float64)

        def fn(x, w1, b1, w2, b2):
            return ad.reduce_sum(ad.linear_affine(ad.linear_affine(x, w1, b1), w2, b2))

        assert gradcheck(fn, [x, w1, b1, w2, b2]) < 1e-7

    def test_tensor_invariants(self, rng):
        t = Tensor(rng.normal(size=(3, 4)))
        assert t.size == int(np.prod(t.shape))
        t2 = Tensor([1, 2, 3])
        assert t2.dtype == np.float32  # default single precision
