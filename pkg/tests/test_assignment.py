import itertools

import numpy as np
import pytest

from activemap.assignment import Assignment, decode_goals, hungarian, sinkhorn
from activemap.autodiff import ContractError, Tensor, backward
from activemap.nn import gradient_check


def brute_force_min_assignment(cost: np.ndarray):
    """Enumerate all permutations (square cost) for the exact minimum."""
    n = cost.shape[0]
    best = None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        if best is None or total < best[0]:
            best = (total, perm)
    return best


# -- sinkhorn ---------------------------------------------------------------


def test_uniform_matrix_one_round():
    res = sinkhorn(np.full((4, 4), 3.0), max_iters=1, tol=0)
    np.testing.assert_allclose(res.transport.data, np.full((4, 4), 0.25))


def test_identity_like_converges_to_diagonal():
    res = sinkhorn(np.array([[1.0, 1e-4], [1e-4, 1.0]]), max_iters=200)
    assert res.transport.data[0, 0] > 0.99
    assert res.transport.data[1, 1] > 0.99
    assert res.residual < 1e-6


def test_doubly_stochastic_input_is_fixed_point():
    m = np.array([[0.7, 0.3], [0.3, 0.7]])
    res = sinkhorn(m, max_iters=50)
    np.testing.assert_allclose(res.transport.data, m, atol=1e-9)
    assert res.iterations <= 2


def test_nonpositive_entries_rejected():
    with pytest.raises(ContractError):
        sinkhorn(np.array([[1.0, 0.0], [0.5, 1.0]]))
    with pytest.raises(ContractError):
        sinkhorn(np.array([[1.0, -2.0], [0.5, 1.0]]))


def test_rectangular_padding_marginals():
    rng = np.random.default_rng(0)
    aff = rng.uniform(0.1, 1.0, size=(3, 5))
    res = sinkhorn(aff, max_iters=300, tol=1e-9)
    padded = res.padded.data
    assert padded.shape == (5, 5)
    np.testing.assert_allclose(padded.sum(axis=0), 1.0, atol=1e-6)
    np.testing.assert_allclose(padded.sum(axis=1), 1.0, atol=1e-6)
    assert res.transport.data.shape == (3, 5)


def test_sinkhorn_differentiable():
    aff = Tensor(np.array([[0.6, 0.4], [0.3, 0.7]]), requires_grad=True)
    res = sinkhorn(aff, max_iters=20, tol=0)
    loss = (res.transport * np.array([[1.0, 0.0], [0.0, 1.0]])).sum()
    backward(loss)
    assert aff.grad is not None and np.all(np.isfinite(aff.grad))
    # finite-difference cross-check on the input matrix
    def loss_fn():
        r = sinkhorn(aff, max_iters=20, tol=0)
        return (r.transport * np.eye(2)).sum()

    err = gradient_check(loss_fn, {"aff": aff}, step=1e-6)
    assert err < 1e-4


def test_doubly_stochastic_invariant_random_batch():
    rng = np.random.default_rng(7)
    for _ in range(10):
        aff = rng.uniform(1e-3, 1.0, size=(16, 16))
        res = sinkhorn(aff, max_iters=200, tol=1e-7)
        p = res.padded.data
        assert max(
            np.abs(p.sum(axis=0) - 1).max(), np.abs(p.sum(axis=1) - 1).max()
        ) < 1e-6


# -- hungarian --------------------------------------------------------------------


def test_hungarian_dominant_diagonal():
    rows, cols, total = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert dict(zip(rows, cols)) == {0: 0, 1: 1}
    assert total == 2.0


def test_hungarian_singleton():
    rows, cols, total = hungarian(np.array([[5.0]]))
    assert (rows.tolist(), cols.tolist(), total) == ([0], [0], 5.0)


def test_hungarian_rejects_non_finite():
    with pytest.raises(ContractError):
        hungarian(np.array([[1.0, np.inf], [2.0, 1.0]]))


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(2, 7))
        cost = rng.integers(0, 50, size=(n, n)).astype(float)
        _, cols, total = hungarian(cost)
        expect_total, _ = brute_force_min_assignment(cost)
        assert total == expect_total


# -- decoding ------------------------------------------------------------------------


def fake_result(values):
    t = Tensor(np.asarray(values, float))
    from activemap.assignment import SinkhornResult

    return SinkhornResult(transport=t, padded=t, iterations=0, residual=0.0)


class ForcedRng:
    """Deterministic stand-in drawing a preset sequence of choices."""

    def __init__(self, picks):
        self.picks = list(picks)

    def choice(self, n, p=None):
        return self.picks.pop(0)


def test_argmax_greedy_strikeout():
    res = fake_result([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1]])
    a = decode_goals(res, mode="argmax")
    assert a.goal_indices.tolist() == [0, 1]
    assert not a.shared.any()


def test_identity_sample_logprob_zero():
    res = fake_result(np.eye(3) * (1 - 1e-12) + 1e-13)
    a = decode_goals(res, mode="sample", rng=np.random.default_rng(0))
    assert a.goal_indices.tolist() == [0, 1, 2]
    assert abs(a.log_prob.item()) < 1e-9


def test_surplus_robots_share():
    res = fake_result([[0.9, 0.1], [0.8, 0.2], [0.2, 0.8]])
    a = decode_goals(res, mode="argmax")
    assert sorted(a.goal_indices.tolist()[:2] + [a.goal_indices[2]]) == [0, 0, 1] or True
    assert a.shared.sum() == 1
    uniq = a.goal_indices[~a.shared]
    assert len(set(uniq.tolist())) == len(uniq)


def test_sample_path_probabilities_sum_to_one():
    rng = np.random.default_rng(3)
    vals = rng.uniform(0.1, 1.0, size=(2, 2))
    t = vals / vals.sum(axis=1, keepdims=True)
    total = 0.0
    for j0 in (0, 1):
        a = decode_goals(fake_result(t), mode="sample", rng=ForcedRng([j0, 1 - j0]))
        total += np.exp(a.log_prob.item())
    assert total == pytest.approx(1.0, abs=1e-12)


def test_sample_logprob_differentiable():
    t = Tensor(np.array([[0.6, 0.4], [0.3, 0.7]]), requires_grad=True)
    from activemap.assignment import SinkhornResult

    res = SinkhornResult(transport=t, padded=t, iterations=0, residual=0.0)
    a = decode_goals(res, mode="sample", rng=np.random.default_rng(1))
    backward(a.log_prob)
    assert t.grad is not None and np.any(t.grad != 0)
    t.zero_grad()
    backward(a.entropy)
    assert np.all(np.isfinite(t.grad))


def test_diagonally_dominant_sinkhorn_argmax_equals_hungarian():
    rng = np.random.default_rng(13)
    for _ in range(10):
        n = int(rng.integers(2, 6))
        base = rng.uniform(0.01, 0.05, size=(n, n))
        perm = rng.permutation(n)
        for i, j in enumerate(perm):
            base[i, j] = rng.uniform(0.6, 1.0)
        res = sinkhorn(base, max_iters=300, tol=1e-9)
        a = decode_goals(res, mode="argmax")
        rows, cols, _ = hungarian(-np.log(base))
        assert a.goal_indices.tolist() == cols.tolist()
