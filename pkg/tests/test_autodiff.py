import numpy as np
import pytest

from gcnlab import autodiff as ad
from gcnlab.autodiff import NonFiniteError, Tape, backward, grad_check
from gcnlab.graph import make_operator

from gcnlab.graph import SparseMatrix

from conftest import random_connected_graph, scalarize


def rand_shape(rng, lo=1, hi=6):
    return int(rng.integers(lo, hi)), int(rng.integers(lo, hi))


class TestForwardValues:
    def test_relu_value_and_grad(self):
        tape = Tape()
        x = tape.leaf([[-1.0, 2.0]])
        y = ad.relu(x)
        np.testing.assert_array_equal(y.value, [[0.0, 2.0]])
        g = backward(tape, ad.sum_all(y))
        np.testing.assert_array_equal(g[x.id], [[0.0, 1.0]])

    def test_relu_subgradient_at_zero(self):
        tape = Tape()
        x = tape.leaf([[0.0]])
        assert backward(tape, ad.sum_all(ad.relu(x)))[x.id][0, 0] == 0.0

    def test_mean_subtract_constant_column(self):
        x = np.full((5, 2), 3.7)
        assert np.abs(ad.col_mean_subtract(x).value).max() == 0.0
        w = np.sqrt(np.arange(1.0, 6.0))
        assert np.abs(ad.col_mean_subtract(2.5 * np.outer(w, [1.0, -2.0]), w).value).max() < 1e-15

    def test_weighted_mean_subtract_orthogonality(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(1, 3, 8)
        out = ad.col_mean_subtract(rng.standard_normal((8, 3)), w).value
        assert np.abs((1 / w) @ out).max() < 1e-13

    def test_row_l2_rescale_norm(self):
        x = np.random.default_rng(1).standard_normal((10, 3))
        out = ad.row_l2_rescale(x, 2.0, eps=0.0).value
        assert np.isclose(np.sum(out**2) / 10, 4.0, rtol=1e-12)

    def test_log_softmax_rows_normalized(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = 30 * rng.standard_normal(rand_shape(rng))
            out = ad.log_softmax_rows(x).value
            lse = np.log(np.exp(out).sum(axis=1))
            assert np.abs(lse).max() <= 1e-12

    def test_batch_norm_standardizes(self):
        x = np.random.default_rng(3).standard_normal((50, 4)) * 5 + 2
        out = ad.batch_norm(x, np.ones((1, 4)), np.zeros((1, 4))).value
        np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=0), 1, atol=1e-5)

    def test_batch_norm_zero_variance_column(self):
        x = np.ones((6, 2))
        out = ad.batch_norm(x, np.ones((1, 2)), np.zeros((1, 2))).value
        assert np.all(np.isfinite(out)) and np.abs(out).max() == 0.0

    def test_batch_norm_running_stats(self):
        x = np.random.default_rng(4).standard_normal((20, 3))
        st = ad.BatchNormState(np.zeros((1, 3)), np.ones((1, 3)))
        ad.batch_norm(x, np.ones((1, 3)), np.zeros((1, 3)), state=st, momentum=0.9)
        np.testing.assert_allclose(st.mean, 0.1 * x.mean(axis=0, keepdims=True), rtol=1e-12)
        np.testing.assert_allclose(st.var, 0.9 + 0.1 * x.var(axis=0, ddof=1, keepdims=True), rtol=1e-12)
        inf = ad.batch_norm(x, np.ones((1, 3)), np.zeros((1, 3)), state=st, training=False).value
        np.testing.assert_allclose(inf, (x - st.mean) / np.sqrt(st.var + 1e-5), rtol=1e-12)

    def test_dropout(self):
        rng = np.random.default_rng(5)
        x = np.ones((200, 10))
        assert ad.dropout(ad.constant(x), 0.0, rng).value is not None
        out = ad.dropout(x, 0.5, rng).value
        assert set(np.unique(out)) <= {0.0, 2.0}
        assert 0.4 < np.mean(out == 0) < 0.6


class TestErrors:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(ValueError):
            ad.add(np.ones((2, 3)), np.ones((3, 2)))

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            ad.row_l2_rescale(np.ones((2, 2)), 0.0)
        with pytest.raises(ValueError):
            ad.batch_norm(np.ones((2, 2)), np.ones((1, 2)), np.zeros((1, 2)), eps=0.0)

    def test_non_finite_names_node(self):
        tape = Tape()
        x = tape.leaf([[1e308, 1e308]])
        with pytest.raises(NonFiniteError, match="node"), np.errstate(over="ignore"):
            ad.scale(x, 10.0)
        with pytest.raises(NonFiniteError):
            tape.leaf([[np.nan]])

    def test_backward_needs_scalar(self):
        tape = Tape()
        x = tape.leaf(np.ones((2, 2)))
        with pytest.raises(ValueError):
            backward(tape, ad.relu(x))

    def test_mixed_tapes(self):
        a, b = Tape().leaf([[1.0]]), Tape().leaf([[2.0]])
        with pytest.raises(ValueError):
            ad.add(a, b)


class TestBackward:
    def test_sum_gives_ones(self):
        tape = Tape()
        w = tape.leaf(np.random.default_rng(0).standard_normal((2, 2)))
        np.testing.assert_array_equal(backward(tape, ad.sum_all(w))[w.id], np.ones((2, 2)))

    def test_unreached_leaf_zero(self):
        tape = Tape()
        w = tape.leaf(np.ones((3, 2)))
        u = tape.leaf(np.ones((2, 2)))
        g = backward(tape, ad.sum_all(u))
        np.testing.assert_array_equal(g[w.id], np.zeros((3, 2)))

    def test_non_trainable_leaf_excluded(self):
        tape = Tape()
        x = tape.leaf(np.ones((2, 2)), trainable=False)
        w = tape.leaf(np.ones((2, 2)))
        g = backward(tape, ad.sum_all(ad.matmul(x, w)))
        assert set(g) == {w.id}

    def test_fan_out_accumulates(self):
        tape = Tape()
        x = tape.leaf([[3.0]])
        y = ad.add(ad.scale(x, 2.0), ad.matmul(x, x))
        assert backward(tape, y)[x.id][0, 0] == 2.0 + 6.0

    def test_deterministic_replay(self):
        rng = np.random.default_rng(1)
        x0, w0 = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))

        def run():
            tape = Tape()
            x, w = tape.leaf(x0), tape.leaf(w0)
            loss = ad.sum_all(ad.log_softmax_rows(ad.relu(ad.matmul(x, w))))
            g = backward(tape, loss)
            return g[x.id].tobytes() + g[w.id].tobytes()

        assert run() == run()


class TestGradCheck:
    def test_quadratic(self):
        x = np.random.default_rng(0).standard_normal((4, 3))
        assert grad_check(lambda t: ad.trace_quadratic(t, SparseMatrix.identity(4)), [x]) < 1e-8

    def test_matmul_small(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
        assert grad_check(lambda p, q: scalarize(ad.matmul(p, q)), [a, b]) < 1e-6

    def test_dirichlet_energy_karate(self, karate):
        lap = make_operator(karate.graph, "laplacian")
        x = np.random.default_rng(2).standard_normal((34, 3))
        assert grad_check(lambda t: ad.trace_quadratic(t, lap), [x]) < 1e-6


def test_non_finite_constant_rejected():
    with pytest.raises(NonFiniteError):
        ad.constant([[np.inf]])


def test_inputs_of_records_relu_inputs():
    tape = Tape()
    x = tape.leaf([[1.0, -2.0]])
    ad.relu(x)
    (rec,) = tape.inputs_of("relu")
    np.testing.assert_array_equal(rec, [[1.0, -2.0]])


def test_spmm_op_gradient_rw():
    rng = np.random.default_rng(3)
    g = random_connected_graph(rng, 9)
    op = make_operator(g, "rw_renorm")
    x = rng.standard_normal((9, 2))
    assert grad_check(lambda t: scalarize(ad.spmm_op(op, t)), [x]) < 1e-6
