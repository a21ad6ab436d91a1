"""Graph attention network filling the robot x frontier affinity matrix.

Each node set (robots, frontiers, history robots, history goals) is
embedded from (x, y, semantic label) by a shared deep MLP. Blocks then
alternate a self-attention update within every node set and a
distance-aware cross-attention update along the three cross-graphs, with
additive residuals throughout. The affinity matrix is the final block's
robot-to-frontier attention weights: positive rows summing to one, ready
for the assignment layer. Ablated variants swap in a pure
geodesic-distance affinity, a feature dot-product affinity, or drop the
history node sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import Tensor, concat, repeat_rows, slice_rows, softmax_rows, tile_rows
from .graphs import (
    LABEL_FRONTIER,
    LABEL_HISTORY_GOAL,
    LABEL_HISTORY_ROBOT,
    LABEL_ROBOT,
    MultiplexGraph,
)
from .nn import Linear, Mlp, MlpSpec, load_checkpoint, save_checkpoint, assign_parameters

__all__ = [
    "ABLATIONS",
    "AffinityConfig",
    "AffinityResult",
    "AffinityNetwork",
    "ValueHead",
    "distance_encoding",
]

ABLATIONS = ("full", "geodesic", "correlation", "no_history")

ENC_DIM = 32
_N_FREQ = (ENC_DIM - 2) // 2
_FREQS = 2.0 * np.pi / np.geomspace(4.0, 512.0, _N_FREQ)

# node coordinates are map-extent-relative, scaled so the first layer sees
# well-spread batches (batch normalization over tiny node sets is badly
# conditioned when inputs are nearly collinear)
COORD_SCALE = 16.0


def distance_encoding(d: np.ndarray) -> np.ndarray:
    """Fixed 32-wide linear+sinusoidal encoding of distances in cell units."""
    d = np.asarray(d, np.float64)
    out = np.empty(d.shape + (ENC_DIM,))
    out[..., 0] = d * 0.1
    out[..., 1] = d * 0.01
    for i, w in enumerate(_FREQS):
        out[..., 2 + 2 * i] = np.sin(w * d)
        out[..., 3 + 2 * i] = np.cos(w * d)
    return out


@dataclass(frozen=True)
class AffinityConfig:
    feature_width: int = 32
    blocks: int = 3
    init_widths: tuple = (3, 32, 64, 128, 256, 32)
    node_widths: tuple = (64, 64, 32)
    edge_widths: tuple = (96, 32, 1)
    geodesic_temperature: float = 8.0  # cells; used by the geodesic ablation

    def __post_init__(self):
        if self.init_widths[-1] != self.feature_width:
            raise ValueError("embedding output width must match the feature width")
        if self.edge_widths[0] != 2 * self.feature_width + ENC_DIM:
            raise ValueError("edge MLP input must fit query+key+distance encoding")


class _Block:
    def __init__(self, cfg: AffinityConfig, rng: np.random.Generator, name: str):
        w = cfg.feature_width
        self.intra_q = Linear(w, w, rng, f"{name}.intra.q")
        self.intra_k = Linear(w, w, rng, f"{name}.intra.k")
        self.intra_u = Linear(w, w, rng, f"{name}.intra.u")
        self.intra_node = Mlp(MlpSpec(cfg.node_widths), rng, f"{name}.intra.node")
        self.inter_q = Linear(w, w, rng, f"{name}.inter.q")
        self.inter_k = Linear(w, w, rng, f"{name}.inter.k")
        self.inter_u = Linear(w, w, rng, f"{name}.inter.u")
        self.inter_edge = Mlp(MlpSpec(cfg.edge_widths), rng, f"{name}.inter.edge")
        self.inter_node = Mlp(MlpSpec(cfg.node_widths), rng, f"{name}.inter.node")

    def modules(self):
        return [
            self.intra_q,
            self.intra_k,
            self.intra_u,
            self.intra_node,
            self.inter_q,
            self.inter_k,
            self.inter_u,
            self.inter_edge,
            self.inter_node,
        ]


@dataclass
class AffinityResult:
    affinity: Tensor  # (n_r, n_f), rows sum to 1
    edge_logits: np.ndarray | None  # raw pre-softmax edge values, diagnostics
    robot_features: Tensor | None  # final robot node features
    frontier_features: Tensor | None


def _mlp_apply(mlp: Mlp, x: Tensor, training: bool, update_running: bool) -> Tensor:
    # batch statistics need two rows; duplicate singleton batches
    if training and x.shape[0] == 1:
        out = mlp(concat([x, x], axis=0), training=True, update_running=update_running)
        return slice_rows(out, 0, 1)
    return mlp(x, training=training, update_running=update_running)


class AffinityNetwork:
    def __init__(self, config: AffinityConfig = AffinityConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.f_init = Mlp(MlpSpec(config.init_widths), rng, "init")
        self.blocks = [_Block(config, rng, f"b{i}") for i in range(config.blocks)]

    # -- parameter plumbing -------------------------------------------------

    def _modules(self):
        mods = [self.f_init]
        for b in self.blocks:
            mods.extend(b.modules())
        return mods

    def parameters(self) -> dict:
        out = {}
        for m in self._modules():
            out.update(m.parameters())
        return out

    def state_arrays(self) -> dict:
        out = {}
        for m in self._modules():
            if hasattr(m, "state_arrays"):
                out.update(m.state_arrays())
        return out

    def checkpoint_arrays(self) -> dict:
        out = {k: p.data for k, p in self.parameters().items()}
        out.update(self.state_arrays())
        return out

    def save(self, path, meta: dict | None = None) -> None:
        info = {"config": asdict(self.config)}
        if meta:
            info.update(meta)
        save_checkpoint(path, self.checkpoint_arrays(), meta=info)

    @classmethod
    def load(cls, path) -> "AffinityNetwork":
        arrays, meta = load_checkpoint(path)
        cfg_dict = dict(meta.get("config", {}))
        for key in ("init_widths", "node_widths", "edge_widths"):
            if key in cfg_dict:
                cfg_dict[key] = tuple(cfg_dict[key])
        cfg = AffinityConfig(**cfg_dict) if cfg_dict else AffinityConfig()
        net = cls(cfg)
        assign_parameters(net.parameters(), arrays)
        for m in net._modules():
            if hasattr(m, "load_state_arrays"):
                m.load_state_arrays(arrays)
        return net

    # -- forward ------------------------------------------------------------------

    @staticmethod
    def _attention_message(block: _Block, feats: Tensor) -> Tensor:
        """Self-attention message per node: softmax over the other nodes.

        A lone node has no neighbors and receives the zero message."""
        n = feats.shape[0]
        q = block.intra_q(feats)
        k = block.intra_k(feats)
        u = block.intra_u(feats)
        mask = ~np.eye(n, dtype=bool)  # fully connected, no self-loop
        e = softmax_rows(q @ k.T, mask)
        return e @ u

    def forward(
        self,
        graph: MultiplexGraph,
        ablation: str = "full",
        training: bool = False,
        update_running: bool = False,
    ) -> AffinityResult:
        """Run all blocks and return the affinity matrix for the graph.

        Requires at least one robot and one frontier node. All node sets
        share one batch per MLP call (one graph, one batch), so batch
        statistics stay well conditioned and replaying a logged graph under
        the same parameters reproduces the output exactly. Cross updates
        read the pre-update feature snapshot, making their order
        irrelevant.
        """
        if ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {ablation!r}; pick one of {ABLATIONS}")
        if graph.n_robots < 1 or graph.n_frontiers < 1:
            raise ValueError("affinity needs at least one robot and one frontier node")

        if ablation == "geodesic":
            logits = -graph.d_rf / self.config.geodesic_temperature
            aff = softmax_rows(Tensor(logits))
            return AffinityResult(aff, logits, None, None)

        g = graph.without_history() if ablation == "no_history" else graph
        h_ext, w_ext = g.extent
        sets = [g.robot_cells, g.frontier_cells, g.history_robot_cells, g.history_goal_cells]
        labels = (LABEL_ROBOT, LABEL_FRONTIER, LABEL_HISTORY_ROBOT, LABEL_HISTORY_GOAL)
        counts = [len(c) for c in sets]
        descr = np.empty((sum(counts), 3))
        row = 0
        for cells, label in zip(sets, labels):
            if len(cells):
                descr[row : row + len(cells), 0] = (cells[:, 1] + 0.5) / w_ext * COORD_SCALE
                descr[row : row + len(cells), 1] = (cells[:, 0] + 0.5) / h_ext * COORD_SCALE
                descr[row : row + len(cells), 2] = label
                row += len(cells)
        stacked = _mlp_apply(self.f_init, Tensor(descr), training, update_running)

        def split(t: Tensor) -> list:
            out = []
            at = 0
            for n in counts:
                out.append(slice_rows(t, at, at + n) if n else None)
                at += n
            return out

        v_r, v_f, v_w, v_g = split(stacked)
        n_r, n_f, n_w, n_g = counts

        e_rf = None
        logits_rf = None
        for block in self.blocks:
            # intra: attention per set, one shared node-MLP batch for all sets
            feats = [v for v in (v_r, v_f, v_w, v_g) if v is not None]
            msgs = [self._attention_message(block, v) for v in feats]
            paired = concat(
                [concat([v, m], axis=1) for v, m in zip(feats, msgs)], axis=0
            )
            deltas = _mlp_apply(block.intra_node, paired, training, update_running)
            at = 0
            updated = []
            for v in feats:
                n = v.shape[0]
                updated.append(v + slice_rows(deltas, at, at + n))
                at += n
            v_r, v_f = updated[0], updated[1]
            if v_w is not None:
                v_w = updated[2]
            if v_g is not None:
                v_g = updated[-1]

            # inter: one shared edge-MLP batch over all cross-graph edges
            q_r = block.inter_q(v_r)
            k_f = block.inter_k(v_f)
            u_f = block.inter_u(v_f)
            edge_in = [
                concat(
                    [
                        repeat_rows(q_r, n_f),
                        tile_rows(k_f, n_r),
                        Tensor(distance_encoding(g.d_rf).reshape(n_r * n_f, ENC_DIM)),
                    ],
                    axis=1,
                )
            ]
            if v_w is not None:
                k_w = block.inter_k(v_w)
                u_w = block.inter_u(v_w)
                edge_in.append(
                    concat(
                        [
                            repeat_rows(q_r, n_w),
                            tile_rows(k_w, n_r),
                            Tensor(distance_encoding(g.d_rw).reshape(n_r * n_w, ENC_DIM)),
                        ],
                        axis=1,
                    )
                )
            if v_g is not None:
                q_f = block.inter_q(v_f)
                k_g = block.inter_k(v_g)
                u_g = block.inter_u(v_g)
                edge_in.append(
                    concat(
                        [
                            repeat_rows(q_f, n_g),
                            tile_rows(k_g, n_f),
                            Tensor(distance_encoding(g.d_fg).reshape(n_f * n_g, ENC_DIM)),
                        ],
                        axis=1,
                    )
                )
            all_logits = _mlp_apply(
                block.inter_edge, concat(edge_in, axis=0), training, update_running
            )
            logits_rf = slice_rows(all_logits, 0, n_r * n_f).reshape(n_r, n_f)
            e_rf = softmax_rows(logits_rf)
            at = n_r * n_f

            # receiver updates, all from the pre-update snapshot
            node_in = [concat([v_r, e_rf @ u_f], axis=1)]
            if v_w is not None:
                e_rw = softmax_rows(slice_rows(all_logits, at, at + n_r * n_w).reshape(n_r, n_w))
                at += n_r * n_w
                node_in.append(concat([v_r, e_rw @ u_w], axis=1))
            if v_g is not None:
                e_fg = softmax_rows(slice_rows(all_logits, at, at + n_f * n_g).reshape(n_f, n_g))
                node_in.append(concat([v_f, e_fg @ u_g], axis=1))
            node_deltas = _mlp_apply(
                block.inter_node, concat(node_in, axis=0), training, update_running
            )
            r_new = v_r + slice_rows(node_deltas, 0, n_r)
            at = n_r
            if v_w is not None:
                r_new = r_new + slice_rows(node_deltas, at, at + n_r)
                at += n_r
            if v_g is not None:
                v_f = v_f + slice_rows(node_deltas, at, at + n_f)
            v_r = r_new

        if ablation == "correlation":
            aff = softmax_rows(v_r @ v_f.T)
            return AffinityResult(aff, (v_r.data @ v_f.data.T), v_r, v_f)
        return AffinityResult(e_rf, logits_rf.data, v_r, v_f)


class ValueHead:
    """State-value head over mean-pooled final robot features.

    The pooled input is a single row, so no batch normalization; the last
    layer stays linear to allow signed values.
    """

    def __init__(self, feature_width: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.mlp = Mlp(
            MlpSpec((feature_width, 64, 1), normalize=False, final_activation=False),
            rng,
            "value",
        )

    def __call__(self, robot_features: Tensor) -> Tensor:
        pooled = robot_features.mean(axis=0, keepdims=True)
        return self.mlp(pooled)

    def parameters(self) -> dict:
        return self.mlp.parameters()

    def checkpoint_arrays(self) -> dict:
        return {k: p.data for k, p in self.parameters().items()}
