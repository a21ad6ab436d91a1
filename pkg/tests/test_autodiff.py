import numpy as np
import pytest

from activemap.autodiff import (
    ContractError,
    Tensor,
    backward,
    concat,
    maximum,
    minimum,
    no_grad,
    repeat_rows,
    slice_rows,
    softmax_rows,
    tile_rows,
)


def numeric_grad(fn, x, h=1e-6):
    """Central differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2 * h)
    return g


def test_sum_of_squares_gradient():
    p = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    loss = (p * p).sum()
    backward(loss)
    np.testing.assert_allclose(p.grad, [6.0, 8.0])


def test_softmax_cross_entropy_symmetric():
    logits = Tensor(np.array([[0.0, 0.0]]), requires_grad=True)
    probs = softmax_rows(logits)
    onehot = np.array([[1.0, 0.0]])
    loss = -(probs.log() * onehot).sum()
    backward(loss)
    np.testing.assert_allclose(logits.grad, [[-0.5, 0.5]], atol=1e-12)


def test_backward_non_scalar_rejected():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with pytest.raises(ContractError):
        backward(p * 2)


def test_non_participating_parameter_gets_zero_grad():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([5.0]), requires_grad=True)
    loss = (a * a).sum()
    backward(loss, params=[a, b])
    np.testing.assert_allclose(b.grad, [0.0])


def test_reused_node_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x * 3.0
    backward(y.sum())
    np.testing.assert_allclose(x.grad, [2 * 2.0 + 3.0])


@pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (4,)), ((3, 4), (1, 4)), ((3, 1), (3, 4))])
def test_broadcast_add_gradients(shape_a, shape_b):
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=shape_a), requires_grad=True)
    b = Tensor(rng.normal(size=shape_b), requires_grad=True)
    w = rng.normal(size=np.broadcast_shapes(shape_a, shape_b))
    loss = ((a + b) * w).sum()
    backward(loss)
    ga = numeric_grad(lambda v: ((v + b.data) * w).sum(), a.data.copy())
    gb = numeric_grad(lambda v: ((a.data + v) * w).sum(), b.data.copy())
    np.testing.assert_allclose(a.grad, ga, atol=1e-8)
    np.testing.assert_allclose(b.grad, gb, atol=1e-8)


def test_matmul_div_exp_log_sqrt_grads():
    rng = np.random.default_rng(1)
    a = Tensor(rng.uniform(0.5, 2.0, size=(3, 2)), requires_grad=True)
    b = Tensor(rng.uniform(0.5, 2.0, size=(2, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))

    def fn_np(av, bv):
        m = av @ bv
        return (np.log(np.sqrt(np.exp(m / 3.0))) * w).sum()

    loss = ((a @ b / 3.0).exp().sqrt().log() * w).sum()
    backward(loss)
    ga = numeric_grad(lambda v: fn_np(v, b.data), a.data.copy())
    gb = numeric_grad(lambda v: fn_np(a.data, v), b.data.copy())
    np.testing.assert_allclose(a.grad, ga, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(b.grad, gb, rtol=1e-6, atol=1e-8)


def test_softmax_rows_masked():
    x = Tensor(np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]), requires_grad=True)
    mask = np.array([[True, False, True], [False, False, False]])
    y = softmax_rows(x, mask)
    assert y.data[0, 1] == 0.0
    np.testing.assert_allclose(y.data[0].sum(), 1.0)
    np.testing.assert_allclose(y.data[1], np.zeros(3))
    backward((y * np.array([[1.0, 5.0, -2.0], [1.0, 1.0, 1.0]])).sum())
    assert np.all(np.isfinite(x.grad))
    np.testing.assert_allclose(x.grad[1], np.zeros(3))


def test_softmax_rows_gradient_matches_fd():
    rng = np.random.default_rng(2)
    xv = rng.normal(size=(4, 5))
    w = rng.normal(size=(4, 5))
    mask = rng.uniform(size=(4, 5)) > 0.3
    mask[:, 0] = True

    def fn(v):
        z = np.where(mask, v, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
        return ((e / e.sum(axis=1, keepdims=True)) * w).sum()

    x = Tensor(xv, requires_grad=True)
    backward((softmax_rows(x, mask) * w).sum())
    np.testing.assert_allclose(x.grad, numeric_grad(fn, xv.copy()), atol=1e-7)


def test_shaping_ops_grads():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w6 = rng.normal(size=(6, 3))
    backward((repeat_rows(x, 3) * w6).sum())
    expect = w6.reshape(2, 3, 3).sum(axis=1)
    np.testing.assert_allclose(x.grad, expect)

    x.zero_grad()
    backward((tile_rows(x, 3) * w6).sum())
    np.testing.assert_allclose(x.grad, w6.reshape(3, 2, 3).sum(axis=0))

    x.zero_grad()
    backward((slice_rows(x, 1, 2) * np.array([[1.0, 2.0, 3.0]])).sum())
    np.testing.assert_allclose(x.grad, [[0, 0, 0], [1, 2, 3]])

    x.zero_grad()
    w = rng.normal(size=(3, 2))
    backward((x.T * w).sum())
    np.testing.assert_allclose(x.grad, w.T)

    x.zero_grad()
    backward((concat([x, x * 2.0], axis=1) * np.ones((2, 6))).sum())
    np.testing.assert_allclose(x.grad, np.full((2, 3), 3.0))


def test_min_max_clip_grads():
    x = Tensor(np.array([0.5, 1.5, 2.5]), requires_grad=True)
    clipped = minimum(maximum(x, 1.0), 2.0)
    np.testing.assert_allclose(clipped.data, [1.0, 1.5, 2.0])
    backward(clipped.sum())
    np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])


def test_no_grad_builds_no_graph():
    p = Tensor(np.array([1.0]), requires_grad=True)
    with no_grad():
        y = p * 3.0 + 1.0
    assert y._parents == ()
    backward(y.sum())
    assert p.grad is None


def test_forward_deterministic():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(5, 5))
    x = Tensor(a, requires_grad=True)
    y1 = softmax_rows(x @ x.T).data.copy()
    y2 = softmax_rows(Tensor(a, requires_grad=True) @ Tensor(a).T).data.copy()
    assert np.array_equal(y1, y2)
