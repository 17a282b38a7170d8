import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhan import tensor as tn
from mhan.errors import ContractError, EmptySequenceError, NonFiniteError, ShapeError
from mhan.tensor import Tensor


def param(x):
    return Tensor(x, requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = tn.matmul(np.eye(2), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_zero(self):
        out = tn.matmul(Tensor(np.eye(2)), Tensor([[0.0], [0.0]]))
        np.testing.assert_array_equal(out.data, [[0], [0]])

    def test_hand_expansion(self):
        # 1*3 + 2*4
        out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
        assert out.data.tolist() == [[11.0]]

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    def test_backward_rule(self):
        rng = np.random.default_rng(0)
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        g = rng.normal(size=(3, 2))
        tn.tsum(tn.matmul(a, b) * g).backward()
        np.testing.assert_allclose(a.grad, g @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ g)


class TestActivation:
    def test_values(self):
        assert tn.activation(Tensor(0.0), "sigmoid").item() == 0.5
        assert tn.activation(Tensor([1.0, -1.0]), "relu").data.tolist() == [1.0, 0.0]
        assert tn.activation(Tensor(0.0), "tanh").item() == 0.0

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            tn.activation(Tensor(1.0), "gelu")

    def test_sigmoid_saturates_without_overflow(self):
        y = tn.sigmoid(Tensor([-800.0, 800.0]))
        assert y.data.tolist() == [0.0, 1.0]

    def test_non_finite_input_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.nan])


class TestMaskedSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(tn.masked_softmax(Tensor([1.0, 1.0]), [True, True]).data, [0.5, 0.5])

    def test_masked_entry_excluded(self):
        y = tn.masked_softmax(Tensor([5.0, 5.0, 99.0]), [True, True, False]).data
        assert y[2] == 0.0
        np.testing.assert_allclose(y, [0.5, 0.5, 0.0])

    def test_hand_evaluation(self):
        # exp(0) : exp(ln 3) = 1 : 3
        y = tn.masked_softmax(Tensor([0.0, math.log(3.0)]), [True, True]).data
        np.testing.assert_allclose(y, [0.25, 0.75], atol=1e-15)

    def test_all_false_mask(self):
        with pytest.raises(EmptySequenceError):
            tn.masked_softmax(Tensor([1.0, 2.0]), [False, False])

    def test_large_logits_stable(self):
        y = tn.masked_softmax(Tensor([1000.0, 1000.0]), [True, True]).data
        np.testing.assert_allclose(y, [0.5, 0.5])

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-50, 50), min_size=1, max_size=8),
        st.lists(st.booleans(), min_size=8, max_size=8),
    )
    def test_is_distribution(self, logits, mask):
        mask = np.array(mask[: len(logits)])
        mask[0] = True
        y = tn.masked_softmax(Tensor(logits), mask).data
        assert np.all(y >= 0)
        assert np.all(y[~mask] == 0.0)
        assert abs(y.sum() - 1.0) <= 1e-12


class TestBackward:
    def test_sum_linearity(self):
        x = param([1.0, 2.0, 3.0])
        x.sum().backward()
        assert x.grad.tolist() == [1.0, 1.0, 1.0]

    def test_chain_rule_constant(self):
        w = param(2.0)
        (tn.sigmoid(Tensor(0.0)) * w).backward()
        assert w.grad == 0.5

    def test_non_scalar_loss(self):
        with pytest.raises(ContractError):
            tn.backward(param([1.0, 2.0]) * 2.0)

    def test_two_branches_sum(self):
        rng = np.random.default_rng(3)
        x0 = rng.uniform(-1, 1, size=4)

        def branch_a(x):
            return tn.tsum(tn.tanh(x) * 3.0)

        def branch_b(x):
            return tn.tsum(tn.sigmoid(x) * x)

        x = param(x0)
        (branch_a(x) + branch_b(x)).backward()
        xa, xb = param(x0), param(x0)
        branch_a(xa).backward()
        branch_b(xb).backward()
        np.testing.assert_allclose(x.grad, xa.grad + xb.grad, rtol=0, atol=1e-15)

    def test_each_node_visited_once(self):
        x = param(1.0)
        y = x * 2.0
        z = y + y + y
        order = tn.topological_order(z)
        assert len(order) == len({id(n) for n in order})
        z.backward()
        assert x.grad == 6.0

    def test_deep_graph_no_recursion_limit(self):
        x = param(0.5)
        y = x
        for _ in range(5000):
            y = y * 1.0
        y.backward()
        assert x.grad == 1.0

    def test_constants_build_no_graph(self):
        out = Tensor([1.0]) * Tensor([2.0])
        assert not out.requires_grad and out._parents == ()


def _unary_cases():
    return {
        "relu": tn.relu,
        "sigmoid": tn.sigmoid,
        "tanh": tn.tanh,
        "log": lambda x: tn.log(x * x + 1.0),
        "clip": lambda x: tn.clip(x, -0.5, 0.5),
        "neg": tn.neg,
        "reshape": lambda x: tn.reshape(x, (-1,)),
        "getitem": lambda x: x[1:, ::2],
        "mean": lambda x: tn.mean(x, axis=0),
        "expand": lambda x: tn.expand_dims(x, 0),
        "softmax": lambda x: tn.masked_softmax(x, np.array([[True, True, False], [True, False, False], [True, True, True]])),
        "gather": lambda x: tn.gather_rows(x, np.array([[2, -1], [0, 2]])),
        "take_along": lambda x: tn.take_along(x, np.array([[2, 1, 0], [0, 0, 1], [1, 2, 2]]), axis=1),
    }


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("op", sorted(_unary_cases()))
def test_unary_ops_match_finite_differences(op, seed):
    rng = np.random.default_rng(seed)
    x = param(rng.uniform(-1, 1, size=(3, 3)))
    w = rng.uniform(-1, 1, size=_unary_cases()[op](Tensor(x.data)).shape)
    err = tn.grad_check(lambda: tn.tsum(_unary_cases()[op](x) * w), x, eps=1e-4)
    assert err < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_binary_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = param(rng.uniform(-1, 1, size=(2, 3, 4)))
    b = param(rng.uniform(-1, 1, size=(4, 2)))
    v = param(rng.uniform(-1, 1, size=(4,)))
    c = param(rng.uniform(-1, 1, size=(3, 1)))

    def f():
        y = tn.matmul(a, b) + tn.matmul(a, v)[..., None] * c
        z = tn.concat([y, a * 0.5], axis=-1)
        z = tn.stack([z, z * c], axis=0)
        return tn.tsum(tn.tanh(z))

    assert tn.grad_check(f, [a, b, v, c], eps=1e-4) < 1e-4


class TestGradCheck:
    def test_quadratic_is_exact(self):
        w = param(3.0)
        assert tn.grad_check(lambda: w * w, w, eps=1e-4) < 1e-8

    def test_detects_wrong_gradient(self):
        w = param([0.3, -0.2])

        def broken():
            y = tn.tsum(w * w)
            y._backward = lambda g: (g * 0.0,)
            return y

        assert tn.grad_check(broken, w) > 0.1

    def test_eps_must_be_positive(self):
        with pytest.raises(ContractError):
            tn.grad_check(lambda: param(1.0), param(1.0), eps=0.0)

    def test_non_finite_reports_index(self):
        w = param([1.0, 1e-5])
        with pytest.raises(NonFiniteError, match="parameter 0 element 1"):
            tn.grad_check(lambda: tn.tsum(tn.log(w)), w, eps=1e-4)


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(11)
        a = param(rng.normal(size=(5, 4)))
        b = param(rng.normal(size=(4, 3)))
        loss = tn.tsum(tn.sigmoid(a @ b))
        loss.backward()
        return loss.data.tobytes(), a.grad.tobytes(), b.grad.tobytes()

    assert run() == run()
