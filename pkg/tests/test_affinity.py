import numpy as np
import pytest

from activemap.affinity import (
    ABLATIONS,
    AffinityConfig,
    AffinityNetwork,
    ValueHead,
    distance_encoding,
)
from activemap.autodiff import Tensor, backward, no_grad
from activemap.graphs import HistoryBuffer, MultiplexGraph
from activemap.nn import gradient_check


def make_graph(n_r, n_f, n_hist_cycles=0, seed=0, extent=(40, 40)):
    rng = np.random.default_rng(seed)
    h, w = extent

    def cells(n):
        return rng.integers(1, min(h, w) - 1, size=(n, 2)).astype(np.int64)

    r = cells(n_r)
    f = cells(n_f)
    wc = cells(n_hist_cycles * n_r)
    gc = cells(n_hist_cycles * n_r)
    d_rf = rng.uniform(1, 40, size=(n_r, n_f))
    d_rw = rng.uniform(1, 40, size=(n_r, len(wc)))
    d_fg = rng.uniform(1, 40, size=(n_f, len(gc)))
    return MultiplexGraph(
        r, f, wc, gc, d_rf, d_rw, d_fg,
        np.ones_like(d_rf, bool), np.ones_like(d_rw, bool), np.ones_like(d_fg, bool),
        extent,
    )


def manual_mlp_eval(mlp, x):
    """Independent numpy unroll of an Mlp in inference mode."""
    n_layers = len(mlp.linears)
    for i, lin in enumerate(mlp.linears):
        x = x @ lin.W.data + lin.b.data
        activated = mlp.spec.final_activation or i < n_layers - 1
        if mlp.norms[i] is not None:
            bn = mlp.norms[i]
            x = (x - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
            x = x * bn.gamma.data + bn.beta.data
        if activated:
            x = np.maximum(x, 0.0)
    return x


# -- embedding -------------------------------------------------------------


def test_embedding_shapes_and_empty_sets():
    net = AffinityNetwork(seed=0)
    g = make_graph(3, 5)
    out = net.forward(g)
    assert out.robot_features.shape == (3, 32)
    assert out.frontier_features.shape == (5, 32)
    assert out.affinity.shape == (3, 5)


def test_identical_descriptors_identical_initial_features():
    net = AffinityNetwork(seed=0)
    from activemap.affinity import COORD_SCALE

    s = np.array([[7.5, 9.5, 0.0], [7.5, 9.5, 0.0], [3.5, 2.5, 0.0]])
    s[:, :2] = s[:, :2] / 40.0 * COORD_SCALE
    v0 = net.f_init(Tensor(s)).data
    np.testing.assert_allclose(v0[0], v0[1])
    assert not np.allclose(v0[0], v0[2])


def test_distance_encoding_width_and_determinism():
    d = np.array([[0.0, 3.5], [10.0, 100.0]])
    enc = distance_encoding(d)
    assert enc.shape == (2, 2, 32)
    assert np.array_equal(enc, distance_encoding(d))
    assert not np.allclose(enc[0, 0], enc[0, 1])


# -- intra operation ----------------------------------------------------------


def test_attention_message_zero_for_lone_node():
    net = AffinityNetwork(seed=3)
    v = Tensor(np.random.default_rng(0).normal(size=(1, 32)))
    msg = net._attention_message(net.blocks[0], v)
    np.testing.assert_array_equal(msg.data, np.zeros((1, 32)))


def test_attention_message_matches_scripted_oracle():
    net = AffinityNetwork(seed=4)
    block = net.blocks[0]
    rng = np.random.default_rng(1)
    v = rng.normal(size=(4, 32))
    msg = net._attention_message(block, Tensor(v))
    # independent numpy evaluation
    q = v @ block.intra_q.W.data + block.intra_q.b.data
    k = v @ block.intra_k.W.data + block.intra_k.b.data
    u = v @ block.intra_u.W.data + block.intra_u.b.data
    logits = q @ k.T
    np.fill_diagonal(logits, -np.inf)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    e /= e.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(e.sum(axis=1), 1.0)
    np.testing.assert_allclose(msg.data, e @ u, atol=1e-9)


# -- inter operation -----------------------------------------------------------


def test_singleton_sender_gets_weight_one():
    net = AffinityNetwork(seed=5)
    g = make_graph(3, 1, seed=2)
    out = net.forward(g)
    np.testing.assert_allclose(out.affinity.data, np.ones((3, 1)))


def test_identical_senders_split_evenly():
    net = AffinityNetwork(seed=6)
    g = make_graph(2, 2, seed=3)
    g.frontier_cells[1] = g.frontier_cells[0]
    g.d_rf[:, 1] = g.d_rf[:, 0]
    out = net.forward(g)
    np.testing.assert_allclose(out.affinity.data, np.full((2, 2), 0.5), atol=1e-12)


def test_forward_matches_scripted_oracle_one_block():
    from activemap.affinity import COORD_SCALE

    cfg = AffinityConfig(blocks=1)
    net = AffinityNetwork(cfg, seed=7)
    g = make_graph(3, 5, seed=4)
    out = net.forward(g)  # inference mode

    # fully independent numpy evaluation of the one-block network
    h, w = g.extent

    def descr(cells, label):
        return np.stack(
            [(cells[:, 1] + 0.5) / w * COORD_SCALE,
             (cells[:, 0] + 0.5) / h * COORD_SCALE,
             np.full(len(cells), label)], axis=1,
        )

    v_r = manual_mlp_eval(net.f_init, descr(g.robot_cells, 0.0))
    v_f = manual_mlp_eval(net.f_init, descr(g.frontier_cells, 1.0))
    block = net.blocks[0]

    def attention(v):
        q = v @ block.intra_q.W.data + block.intra_q.b.data
        k = v @ block.intra_k.W.data + block.intra_k.b.data
        u = v @ block.intra_u.W.data + block.intra_u.b.data
        logits = q @ k.T
        np.fill_diagonal(logits, -np.inf)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        e /= e.sum(axis=1, keepdims=True)
        return e @ u

    v_r = v_r + manual_mlp_eval(
        block.intra_node, np.concatenate([v_r, attention(v_r)], axis=1)
    )
    v_f = v_f + manual_mlp_eval(
        block.intra_node, np.concatenate([v_f, attention(v_f)], axis=1)
    )
    q = v_r @ block.inter_q.W.data + block.inter_q.b.data
    k = v_f @ block.inter_k.W.data + block.inter_k.b.data
    phi = distance_encoding(g.d_rf)
    logits = np.empty((3, 5))
    for i in range(3):
        for j in range(5):
            x = np.concatenate([q[i], k[j], phi[i, j]])[None, :]
            logits[i, j] = manual_mlp_eval(block.inter_edge, x)[0, 0]
    expect = np.exp(logits - logits.max(axis=1, keepdims=True))
    expect /= expect.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out.affinity.data, expect, atol=1e-9)
    np.testing.assert_allclose(out.affinity.data.sum(axis=1), 1.0, atol=1e-12)


# -- full forward -----------------------------------------------------------------


@pytest.mark.parametrize("ablation", ABLATIONS)
def test_single_pair_affinity_is_one(ablation):
    net = AffinityNetwork(seed=8)
    g = make_graph(1, 1, n_hist_cycles=0 if ablation == "no_history" else 2, seed=5)
    out = net.forward(g, ablation=ablation)
    np.testing.assert_allclose(out.affinity.data, [[1.0]])


def test_rows_sum_to_one_full_model():
    net = AffinityNetwork(seed=9)
    g = make_graph(3, 8, n_hist_cycles=2, seed=6)
    out = net.forward(g)
    np.testing.assert_allclose(out.affinity.data.sum(axis=1), np.ones(3), atol=1e-9)
    assert np.all(out.affinity.data > 0)
    assert np.all(out.affinity.data < 1)


def test_permutation_equivariance_inference():
    net = AffinityNetwork(seed=10)
    g = make_graph(4, 7, n_hist_cycles=1, seed=7)
    with no_grad():
        base = net.forward(g).affinity.data
    rng = np.random.default_rng(8)
    perm_r = rng.permutation(4)
    perm_f = rng.permutation(7)
    g2 = MultiplexGraph(
        g.robot_cells[perm_r], g.frontier_cells[perm_f],
        g.history_robot_cells, g.history_goal_cells,
        g.d_rf[np.ix_(perm_r, perm_f)], g.d_rw[perm_r], g.d_fg[perm_f],
        g.reach_rf[np.ix_(perm_r, perm_f)], g.reach_rw[perm_r], g.reach_fg[perm_f],
        g.extent,
    )
    with no_grad():
        permuted = net.forward(g2).affinity.data
    np.testing.assert_allclose(permuted, base[np.ix_(perm_r, perm_f)], atol=1e-9)


def test_zeroed_node_mlps_freeze_features_across_blocks():
    net = AffinityNetwork(seed=11)
    for b in net.blocks:
        for mlp in (b.intra_node, b.inter_node):
            mlp.linears[-1].W.data[:] = 0.0
            mlp.linears[-1].b.data[:] = 0.0
    g = make_graph(3, 4, n_hist_cycles=1, seed=9)
    out = net.forward(g)
    h, w = g.extent
    from activemap.affinity import COORD_SCALE

    s = np.stack(
        [(g.robot_cells[:, 1] + 0.5) / w * COORD_SCALE,
         (g.robot_cells[:, 0] + 0.5) / h * COORD_SCALE,
         np.zeros(len(g.robot_cells))], axis=1
    )
    v0 = manual_mlp_eval(net.f_init, s)
    np.testing.assert_allclose(out.robot_features.data, v0, atol=1e-9)


def test_geodesic_ablation_prefers_nearest():
    net = AffinityNetwork(seed=12)
    g = make_graph(1, 4, seed=10)
    g.d_rf[0] = np.array([9.0, 3.0, 22.0, 15.0])
    out = net.forward(g, ablation="geodesic")
    assert np.argmax(out.affinity.data[0]) == 1
    np.testing.assert_allclose(out.affinity.data.sum(axis=1), 1.0)


def test_training_mode_replay_is_exact():
    net = AffinityNetwork(seed=13)
    g = make_graph(3, 5, n_hist_cycles=1, seed=11)
    a = net.forward(g, training=True).affinity.data
    b = net.forward(g, training=True).affinity.data
    assert np.array_equal(a, b)


def test_gradient_check_small_network():
    cfg = AffinityConfig(init_widths=(3, 16, 32), feature_width=32,
                         node_widths=(64, 32, 32), edge_widths=(96, 16, 1), blocks=2)
    net = AffinityNetwork(cfg, seed=14)
    g = make_graph(3, 5, n_hist_cycles=1, seed=12)
    w = np.random.default_rng(13).normal(size=(3, 5))

    def loss_fn():
        out = net.forward(g, training=True)
        return (out.affinity * w).sum()

    err = gradient_check(loss_fn, net.parameters(), step=(1e-4, 1e-5, 1e-6),
                         max_entries_per_param=4, rng=np.random.default_rng(0))
    assert err < 1e-4


def test_value_head_signed_scalar():
    vh = ValueHead(seed=0)
    feats = Tensor(np.random.default_rng(1).normal(size=(3, 32)))
    v = vh(feats)
    assert v.shape == (1, 1)
    loss = (v * v).sum()
    backward(loss, vh.parameters().values())
    assert all(p.grad is not None for p in vh.parameters().values())
