import numpy as np
import pytest

from holocell import autodiff as ad
from holocell.errors import ContractError


class TestForwardOps:
    def test_sigmoid_tanh_at_zero(self):
        assert ad.sigmoid(ad.param(0.0)).value == pytest.approx(0.5)
        assert ad.tanh(ad.param(0.0)).value == pytest.approx(0.0)

    def test_uniform_cross_entropy(self):
        logits = ad.constant(np.zeros((2, 7)))
        losses = ad.softmax_cross_entropy(logits, np.array([0, 3]))
        np.testing.assert_allclose(losses.value, np.log(7))

    def test_matmul_identity(self):
        x = np.random.default_rng(0).standard_normal((4, 4))
        out = ad.matmul(ad.constant(np.eye(4)), ad.param(x))
        np.testing.assert_array_equal(out.value, x)

    def test_matmul_shape_error(self):
        with pytest.raises(ContractError):
            ad.matmul(ad.param(np.zeros((2, 3))), ad.param(np.zeros((2, 3))))

    def test_relu_shifted(self):
        x = ad.param(np.array([-2.0, 0.5]))
        out = ad.relu_shifted(x, ad.param(np.array([1.0, 1.0])))
        np.testing.assert_array_equal(out.value, [0.0, 1.5])

    def test_concat_narrow_round_trip(self):
        a = ad.param(np.arange(6.0).reshape(2, 3))
        b = ad.param(np.arange(4.0).reshape(2, 2))
        cat = ad.concat([a, b])
        np.testing.assert_array_equal(ad.narrow(cat, 3, 5).value, b.value)

    def test_gather_by_permutation(self):
        x = ad.param(np.array([[1.0, 2.0, 3.0]]))
        p = np.array([2, 0, 1])
        inv = np.array([1, 2, 0])
        out = ad.gather_last(x, p, inv)
        np.testing.assert_array_equal(out.value, [[3.0, 1.0, 2.0]])

    def test_maximum_scalar(self):
        out = ad.maximum_scalar(ad.param(np.array([0.2, 5.0])), 1.0)
        np.testing.assert_array_equal(out.value, [1.0, 5.0])

    def test_cplx_mul_matches_manual(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal(8), rng.standard_normal(8)
        out = ad.cplx_mul(ad.param(a), ad.param(b)).value
        ar, ai, br, bi = a[:4], a[4:], b[:4], b[4:]
        np.testing.assert_allclose(out[:4], ar * br - ai * bi)
        np.testing.assert_allclose(out[4:], ar * bi + ai * br)


class TestBackward:
    def test_product_rule(self):
        x, y = ad.param(2.0), ad.param(3.0)
        ad.backward(ad.mul(x, y))
        assert x.grad == pytest.approx(3.0)
        assert y.grad == pytest.approx(2.0)

    def test_fanout_accumulates(self):
        x = ad.param(3.0)
        out = ad.add(ad.mul(x, x), x)  # x^2 + x -> 2x + 1
        ad.backward(out)
        assert x.grad == pytest.approx(7.0)

    def test_bound_interior_is_identity_gradient(self):
        h = ad.param(np.array([0.1, 0.2, 0.05, -0.1]))  # moduli < 1
        ad.backward(ad.vsum(ad.cplx_bound(h)))
        np.testing.assert_allclose(h.grad, np.ones(4))

    def test_non_scalar_root_rejected(self):
        with pytest.raises(ContractError):
            ad.backward(ad.param(np.zeros(3)))

    def test_constants_get_no_grad(self):
        c = ad.constant(np.ones(2))
        x = ad.param(np.ones(2))
        ad.backward(ad.vsum(ad.mul(c, x)))
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, np.ones(2))

    def test_replay_bit_identical(self):
        rng = np.random.default_rng(2)
        w = ad.param(rng.standard_normal((5, 4)))
        x = rng.standard_normal((3, 5))

        def run():
            w.zero_grad()
            out = ad.vsum(ad.tanh(ad.matmul(ad.constant(x), w)))
            ad.backward(out)
            return w.grad.copy()

        g1, g2 = run(), run()
        np.testing.assert_array_equal(g1, g2)

    def test_no_clipping_large_gradients(self):
        x = ad.param(np.array([1e8]))
        ad.backward(ad.vsum(ad.mul(x, x)))
        assert x.grad[0] == pytest.approx(2e8)


class TestGradCheck:
    def test_quadratic_exact(self):
        w = ad.param(np.random.default_rng(3).standard_normal(6))
        err = ad.grad_check(lambda: ad.vsum(ad.mul(w, w)), [w], eps=1e-6)
        assert err < 1e-8

    @pytest.mark.parametrize("op", [
        ad.sigmoid, ad.tanh, ad.sin, ad.cos,
        lambda x: ad.sqrt(ad.add(ad.mul(x, x), 1.0)),
        lambda x: ad.cplx_bound(ad.scale(x, 2.0)),
        lambda x: ad.cplx_mul(x, ad.constant(np.arange(1.0, 9.0))),
        lambda x: ad.vmean(x, axis=0),
        lambda x: ad.expand(ad.reshape(x, (1, 8)), (3, 8)),
    ])
    def test_registered_ops(self, op):
        rng = np.random.default_rng(4)
        x = ad.param(rng.standard_normal(8) * 2)
        err = ad.grad_check(lambda: ad.vsum(ad.mul(op(x), op(x))), [x])
        assert err < 1e-4

    def test_gather_scatter_add_backward(self):
        x = ad.param(np.array([1.0, 2.0, 3.0]))
        idx = np.array([0, 0, 2])  # non-bijective gather
        err = ad.grad_check(lambda: ad.vsum(ad.mul(ad.gather_last(x, idx),
                                                   np.array([1.0, 2.0, 3.0]))),
                            [x])
        assert err < 1e-6

    def test_softmax_cross_entropy_gradient(self):
        rng = np.random.default_rng(5)
        logits = ad.param(rng.standard_normal((4, 6)))
        tgt = np.array([1, 0, 5, 2])
        err = ad.grad_check(
            lambda: ad.vsum(ad.softmax_cross_entropy(logits, tgt)), [logits])
        assert err < 1e-6

    def test_broadcast_bias_gradient(self):
        rng = np.random.default_rng(6)
        b = ad.param(rng.standard_normal(4))
        x = rng.standard_normal((3, 4))
        err = ad.grad_check(lambda: ad.vsum(ad.sigmoid(ad.add(ad.constant(x), b))),
                            [b])
        assert err < 1e-6

    def test_bound_kink_is_flagged_by_construction(self):
        # modulus exactly 1 sits on the max(1, m) branch boundary; the
        # subgradient convention picks the pass-through side
        h = ad.param(np.array([1.0, 0.0]))
        ad.backward(ad.vsum(ad.cplx_bound(h)))
        np.testing.assert_allclose(h.grad, [1.0, 1.0])
