"""Tensor primitives: forward contracts, independent oracles, gradient checks."""

import numpy as np
import pytest

from promptvid import autodiff as ad
from promptvid.autodiff import AttentionWeights, Graph, Tensor, backward, gradients
from promptvid.errors import ConfigurationError, ContractError, DimensionError
from promptvid.gradcheck import check_gradients


def rand(rng, *shape, grad=True, name=None):
    return Tensor(rng.standard_normal(shape), requires_grad=grad, name=name)


def weighted_sum(out, rng):
    """Reduce any tensor to a scalar with fixed random weights."""
    w = ad.constant(rng.standard_normal(out.shape))
    return ad.tsum(ad.mul(out, w))


def random_attention_weights(rng, dim, grad=True):
    def t(*shape):
        return Tensor(rng.standard_normal(shape) * 0.5, requires_grad=grad)

    return AttentionWeights(
        wq=t(dim, dim), bq=t(dim), wk=t(dim, dim), bk=t(dim),
        wv=t(dim, dim), bv=t(dim), wo=t(dim, dim), bo=t(dim),
    )


class TestMatmul:
    def test_identity(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(Tensor(np.eye(2)), m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_hand_product(self):
        out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        expected = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(7):
                    expected[i, j] += a[i, k] * b[k, j]
        out = ad.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 3, 5))
        b = rng.standard_normal((4, 5, 2))
        out = ad.matmul(Tensor(a), Tensor(b))
        for i in range(4):
            np.testing.assert_allclose(out.data[i], a[i] @ b[i], atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
        with pytest.raises(DimensionError):
            ad.matmul(Tensor(np.ones((2, 2, 3))), Tensor(np.ones((3, 3, 2))))


class TestLayerNorm:
    def test_constant_vector_collapses_to_zero(self):
        x = Tensor(np.full((4,), 3.7))
        out = ad.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_already_normalized(self):
        x = Tensor([1.0, -1.0])
        out = ad.layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-6)

    def test_row_statistics(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((6, 9)) * 3 + 1)
        out = ad.layer_norm(x, Tensor(np.ones(9)), Tensor(np.zeros(9)), eps=1e-12)
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-10)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            ad.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_overflow_safe(self):
        out = ad.softmax(Tensor([1000.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-300)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(11)
        expected = np.exp(x) / np.exp(x).sum()
        np.testing.assert_allclose(ad.softmax(Tensor(x)).data, expected, atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        out = ad.softmax(Tensor(rng.standard_normal((5, 7)) * 10))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(9)
        a = ad.softmax(Tensor(x)).data
        b = ad.softmax(Tensor(x + 123.456)).data
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestMhsa:
    def test_zero_weights_uniform_attention(self):
        rng = np.random.default_rng(6)
        dim, n = 8, 5
        zeros = AttentionWeights(*(Tensor(np.zeros(s)) for s in
                                   [(dim, dim), (dim,)] * 4))
        out, attn = ad.mhsa(Tensor(rng.standard_normal((n, dim))), zeros, heads=2)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-15)
        np.testing.assert_allclose(attn.data, 1.0 / n, atol=1e-15)

    def test_single_token(self):
        rng = np.random.default_rng(7)
        dim = 6
        w = random_attention_weights(rng, dim)
        x = rng.standard_normal((1, dim))
        out, attn = ad.mhsa(Tensor(x), w, heads=3)
        np.testing.assert_allclose(attn.data, np.ones((3, 1, 1)))
        expected = (x @ w.wv.data + w.bv.data) @ w.wo.data + w.bo.data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_against_per_head_oracle(self):
        rng = np.random.default_rng(8)
        dim, n, heads = 12, 3, 4
        hd = dim // heads
        w = random_attention_weights(rng, dim)
        x = rng.standard_normal((n, dim))
        out, attn = ad.mhsa(Tensor(x), w, heads=heads)

        q = x @ w.wq.data + w.bq.data
        k = x @ w.wk.data + w.bk.data
        v = x @ w.wv.data + w.bv.data
        ctx = np.zeros((n, dim))
        for h in range(heads):
            sl = slice(h * hd, (h + 1) * hd)
            scores = q[:, sl] @ k[:, sl].T / np.sqrt(hd)
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            p = e / e.sum(axis=1, keepdims=True)
            np.testing.assert_allclose(attn.data[h], p, atol=1e-12)
            ctx[:, sl] = p @ v[:, sl]
        np.testing.assert_allclose(out.data, ctx @ w.wo.data + w.bo.data, atol=1e-12)

    def test_attention_rows_stochastic(self):
        rng = np.random.default_rng(9)
        w = random_attention_weights(rng, 8)
        _, attn = ad.mhsa(Tensor(rng.standard_normal((2, 6, 8))), w, heads=2)
        np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_head_mismatch(self):
        rng = np.random.default_rng(10)
        w = random_attention_weights(rng, 8)
        with pytest.raises(ConfigurationError):
            ad.mhsa(Tensor(rng.standard_normal((4, 8))), w, heads=3)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True, name="x")
        grads = backward(ad.tsum(x))
        np.testing.assert_array_equal(grads["x"].data, np.ones((2, 3)))

    def test_cosine_self_similarity_gradient_vanishes(self):
        rng = np.random.default_rng(11)
        v = Tensor(rng.standard_normal(7), requires_grad=True, name="v")
        dot = ad.tsum(ad.mul(v, v))
        cos = ad.div(dot, ad.mul(ad.tsqrt(dot), ad.tsqrt(dot)))
        grads = backward(cos)
        np.testing.assert_allclose(grads["v"].data, 0.0, atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True, name="x")
        with pytest.raises(ContractError):
            backward(ad.mul(x, 2.0))

    def test_frozen_gets_no_entry(self):
        frozen = Tensor(np.ones(4), requires_grad=False, name="frozen")
        live = Tensor(np.ones(4), requires_grad=True, name="live")
        grads = backward(ad.tsum(ad.mul(frozen, live)))
        assert set(grads) == {"live"}

    def test_gradient_accumulates_over_reuse(self):
        x = Tensor([2.0], requires_grad=True, name="x")
        loss = ad.tsum(ad.add(ad.mul(x, 3.0), ad.mul(x, 4.0)))
        np.testing.assert_allclose(backward(loss)["x"].data, [7.0])

    def test_determinism(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((4, 4))

        def run():
            t = Tensor(x, requires_grad=True, name="x")
            loss = ad.tsum(ad.gelu(ad.matmul(t, t)))
            return loss.data.copy(), backward(loss)["x"].data.copy()

        la, ga = run()
        lb, gb = run()
        assert la.tobytes() == lb.tobytes()
        assert ga.tobytes() == gb.tobytes()


class TestGraph:
    def test_topological_invariant(self):
        rng = np.random.default_rng(13)
        x = rand(rng, 3, 3, name="x")
        y = ad.matmul(ad.gelu(x), ad.softmax(x))
        graph = Graph(ad.tsum(y))
        seen = set()
        for node in graph.nodes:
            assert all(i in seen or i not in {n.output for n in graph.nodes}
                       for i in node.inputs)
            for i in node.inputs:
                seen.add(i)
            seen.add(node.output)
        outputs = [n.output for n in graph.nodes]
        assert len(outputs) == len(set(outputs)), "acyclic graphs visit each node once"

    def test_order_covers_leaves(self):
        x = Tensor(np.ones(2), requires_grad=True, name="x")
        graph = Graph(ad.tsum(ad.mul(x, x)))
        assert any(t is x for t in graph.order)


class TestCheckedMode:
    def test_rejects_non_finite(self):
        ad.set_checked(True)
        try:
            with pytest.raises(ContractError):
                Tensor([1.0, np.inf])
            with pytest.raises(ContractError):
                Tensor([np.nan])
        finally:
            ad.set_checked(False)

    def test_allows_when_off(self):
        t = Tensor([np.inf])
        assert np.isinf(t.data[0])


GRAD_CASES = {
    "add_equal": lambda rng: (lambda a, b: ad.tsum(ad.mul(ad.add(a, b), ad.add(a, b))),
                              [rand(rng, 3, 4), rand(rng, 3, 4)]),
    "add_broadcast": lambda rng: (lambda a, b: ad.tsum(ad.texp(ad.add(a, b))),
                                  [rand(rng, 2, 3, 4), rand(rng, 4)]),
    "mul": lambda rng: (lambda a, b: ad.tsum(ad.mul(a, b)), [rand(rng, 5), rand(rng, 5)]),
    "div": lambda rng: (lambda a, b: ad.tsum(ad.div(a, ad.add(ad.mul(b, b), 1.0))),
                        [rand(rng, 4), rand(rng, 4)]),
    "matmul_2d": lambda rng: (lambda a, b: ad.tsum(ad.matmul(a, b)),
                              [rand(rng, 3, 5), rand(rng, 5, 2)]),
    "matmul_batched": lambda rng: (lambda a, b: ad.tsum(ad.matmul(a, b)),
                                   [rand(rng, 2, 3, 4), rand(rng, 2, 4, 3)]),
    "matmul_mixed": lambda rng: (lambda a, b: ad.tsum(ad.matmul(a, b)),
                                 [rand(rng, 2, 3, 4), rand(rng, 4, 5)]),
    "softmax": lambda rng: (lambda a, w: ad.tsum(ad.mul(ad.softmax(a), w)),
                            [rand(rng, 4, 6), rand(rng, 4, 6, grad=False)]),
    "log_softmax": lambda rng: (lambda a, w: ad.tsum(ad.mul(ad.log_softmax(a), w)),
                                [rand(rng, 3, 5), rand(rng, 3, 5, grad=False)]),
    "layer_norm": lambda rng: (lambda x, g, b, w: ad.tsum(ad.mul(ad.layer_norm(x, g, b), w)),
                               [rand(rng, 4, 6), rand(rng, 6), rand(rng, 6),
                                rand(rng, 4, 6, grad=False)]),
    "gelu": lambda rng: (lambda a: ad.tsum(ad.gelu(a)), [rand(rng, 3, 7)]),
    "exp_log_sqrt": lambda rng: (
        lambda a: ad.tsum(ad.tlog(ad.add(ad.tsqrt(ad.texp(a)), 1.0))), [rand(rng, 6)]),
    "reductions": lambda rng: (
        lambda a: ad.add(ad.tsum(ad.tmean(a, axis=0)), ad.tmean(ad.tsum(a, axis=1))),
        [rand(rng, 4, 5)]),
    "reshape_transpose": lambda rng: (
        lambda a, w: ad.tsum(ad.mul(ad.transpose(ad.reshape(a, (3, 2, 4)), (1, 0, 2)), w)),
        [rand(rng, 6, 4), rand(rng, 2, 3, 4, grad=False)]),
    "concat_narrow": lambda rng: (
        lambda a, b: ad.tsum(ad.mul(ad.narrow(ad.concat([a, b], axis=0), 0, 1, 3),
                                    ad.narrow(ad.concat([b, a], axis=0), 0, 0, 3))),
        [rand(rng, 2, 4), rand(rng, 3, 4)]),
    "expand": lambda rng: (lambda a, w: ad.tsum(ad.mul(ad.expand(a, (5, 3, 4)), w)),
                           [rand(rng, 3, 4), rand(rng, 5, 3, 4, grad=False)]),
    "gather_rows": lambda rng: (
        lambda t, w: ad.tsum(ad.mul(ad.gather_rows(t, [0, 2, 2, 1]), w)),
        [rand(rng, 4, 5), rand(rng, 4, 5, grad=False)]),
    "select_positions": lambda rng: (
        lambda x, w: ad.tsum(ad.mul(ad.select_positions(x, [2, 0, 1]), w)),
        [rand(rng, 3, 4, 5), rand(rng, 3, 5, grad=False)]),
    "mhsa": lambda rng: (
        lambda x, *ws: ad.tsum(ad.mul(
            ad.mhsa(x, AttentionWeights(*ws), heads=2)[0],
            ad.constant(np.linspace(-1, 1, 5 * 8).reshape(5, 8)))),
        [rand(rng, 5, 8)] + [rand(rng, *s) for s in [(8, 8), (8,)] * 4]),
    "mhsa_attn_output": lambda rng: (
        lambda x, *ws: ad.tsum(ad.mul(
            ad.mhsa(x, AttentionWeights(*ws), heads=2)[1],
            ad.constant(np.linspace(0, 1, 2 * 4 * 4).reshape(2, 4, 4)))),
        [rand(rng, 4, 8)] + [rand(rng, *s) for s in [(8, 8), (8,)] * 4]),
}


@pytest.mark.parametrize("case", sorted(GRAD_CASES))
def test_gradcheck(case):
    rng = np.random.default_rng(hash(case) % 2**32)
    for trial in range(3):
        fn, tensors = GRAD_CASES[case](rng)
        err = check_gradients(fn, tensors, h=1e-5)
        assert err < 1e-4, f"{case} trial {trial}: rel err {err}"


def test_gradients_zero_for_unused_tensor():
    x = Tensor(np.ones(3), requires_grad=True)
    y = Tensor(np.ones(3), requires_grad=True)
    loss = ad.tsum(x)
    gx, gy = gradients(loss, [x, y])
    np.testing.assert_array_equal(gx, np.ones(3))
    np.testing.assert_array_equal(gy, np.zeros(3))
