"""
Stage-1 skeletal-melody model: 3 GATv2 layers, a multi-scale feature
enhancer and a self-attention pitch predictor.

The model predicts, for every note node, the pitch class (GongQe vocabulary
index, or UNK) of the following note. Temporal edges point forward in time,
so a note only sees its own past through them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch
from ..graph import EdgeKind, HeteroGraph, NodeType, TechKind
from ..tokenizer import GONGQE_PITCHES
from .tensor import Tensor, as_tensor, concat, parameter, segment_softmax

PITCH_CLASSES: tuple[int, ...] = tuple(m for _, m in GONGQE_PITCHES)
UNK_CLASS = len(PITCH_CLASSES)
N_CLASSES = len(PITCH_CLASSES) + 1
_CLASS_OF = {p: i for i, p in enumerate(PITCH_CLASSES)}

_TECH_KINDS = list(TechKind)
FEATURE_DIM = N_CLASSES + 3 + 3 + 3 + 2 + 3 + 3


def pitch_class_index(pitch: int) -> int:
    return _CLASS_OF.get(int(pitch), UNK_CLASS)


def class_pitch(index: int) -> int | None:
    return PITCH_CLASSES[index] if index < len(PITCH_CLASSES) else None


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32
    heads: int = 4
    layers: int = 3
    windows: tuple[int, ...] = (1, 3, 5)
    negative_slope: float = 0.2
    residual: bool = True

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.layers < 1:
            raise ValueError("need at least one GATv2 layer")


# ---------------------------------------------------------------------------
# graph -> arrays


def node_features(g: HeteroGraph) -> np.ndarray:
    """Feature matrix with rows ordered notes, ornaments, techs."""
    rows = []
    for n in g.notes:
        v = np.zeros(FEATURE_DIM)
        v[pitch_class_index(n.pitch)] = 1.0
        v[N_CLASSES + 0] = 1.0
        o = N_CLASSES + 3
        v[o] = n.velocity / 127.0
        v[o + 1] = min(n.duration, 4.0) / 4.0
        v[o + 2] = (n.onset % 4.0) / 4.0
        v[o + 3:o + 6] = n.nianzhi_vec
        rows.append(v)
    for orn in g.ornaments:
        v = np.zeros(FEATURE_DIM)
        v[pitch_class_index(orn.pitch)] = 1.0
        v[N_CLASSES + 1] = 1.0
        o = N_CLASSES + 9
        v[o] = orn.weight
        v[o + 1] = np.tanh(orn.offset)
        rows.append(v)
    for t in g.techs:
        v = np.zeros(FEATURE_DIM)
        v[N_CLASSES + 2] = 1.0
        o = N_CLASSES + 11
        v[o + _TECH_KINDS.index(t.tech_kind)] = 1.0
        v[o + 3:o + 6] = np.tanh(np.asarray(t.params) / 4.0)
        rows.append(v)
    return np.array(rows).reshape(-1, FEATURE_DIM)


def _global_index(g: HeteroGraph, ref) -> int:
    if ref.type == NodeType.NOTE:
        return ref.index
    if ref.type == NodeType.ORNAMENT:
        return len(g.notes) + ref.index
    return len(g.notes) + len(g.ornaments) + ref.index


@dataclass
class Adjacency:
    """Directed message-passing edges, self-loops included."""

    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    size: int

    @classmethod
    def from_graph(cls, g: HeteroGraph) -> "Adjacency":
        size = len(g.notes) + len(g.ornaments) + len(g.techs)
        src, dst, w = [], [], []
        for e in g.edges:
            src.append(_global_index(g, e.src))
            dst.append(_global_index(g, e.dst))
            w.append(e.weight)
        return cls.build(src, dst, w, size)

    @classmethod
    def build(cls, src, dst, weight, size) -> "Adjacency":
        loops = np.arange(size)
        return cls(np.concatenate([np.asarray(src, dtype=np.int64), loops]),
                   np.concatenate([np.asarray(dst, dtype=np.int64), loops]),
                   np.concatenate([np.asarray(weight, dtype=np.float64), np.ones(size)]),
                   size)

    def permuted(self, perm: np.ndarray) -> "Adjacency":
        """Relabel node ``i`` as ``perm[i]``."""
        n = len(self.src) - self.size
        return Adjacency.build(perm[self.src[:n]], perm[self.dst[:n]], self.weight[:n], self.size)


def pooling_matrix(sequences, size: int, width: int) -> np.ndarray:
    """Mean over a centred window of ``width`` along each node sequence.

    Windows are edge-padded (indices clamp to the sequence ends). Nodes not in
    any sequence pool only themselves.
    """
    P = np.eye(size)
    half = width // 2
    for seq in sequences:
        seq = np.asarray(seq, dtype=np.int64)
        L = len(seq)
        for k, node in enumerate(seq):
            P[node] = 0.0
            for off in range(-half, half + 1):
                P[node, seq[min(max(k + off, 0), L - 1)]] += 1.0 / width
    return P


@dataclass
class GraphBatch:
    """One or more graphs merged into a disjoint union."""

    features: np.ndarray
    adjacency: Adjacency
    targets: np.ndarray  # -1 where no target
    graph_ids: np.ndarray
    sequences: list
    note_index: np.ndarray  # global indices of note nodes, graph by graph
    pools: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.features)

    def pool(self, width: int) -> np.ndarray:
        if width not in self.pools:
            self.pools[width] = pooling_matrix(self.sequences, self.size, width)
        return self.pools[width]

    def attention_mask(self) -> np.ndarray:
        same = self.graph_ids[:, None] == self.graph_ids[None, :]
        return np.where(same, 0.0, -1e9)


def next_pitch_targets(g: HeteroGraph) -> np.ndarray:
    size = len(g.notes) + len(g.ornaments) + len(g.techs)
    t = np.full(size, -1, dtype=np.int64)
    for i in range(len(g.notes) - 1):
        t[i] = pitch_class_index(g.notes[i + 1].pitch)
    return t


def make_batch(graphs, extra_edges=None) -> GraphBatch:
    """Merge graphs; ``extra_edges`` is an optional list of (src, dst, w) per graph."""
    feats, src, dst, w, targets, ids, seqs, notes = [], [], [], [], [], [], [], []
    offset = 0
    for gi, g in enumerate(graphs):
        x = node_features(g)
        adj = Adjacency.from_graph(g)
        n_edges = len(adj.src) - adj.size
        src.append(adj.src[:n_edges] + offset)
        dst.append(adj.dst[:n_edges] + offset)
        w.append(adj.weight[:n_edges])
        if extra_edges is not None and extra_edges[gi]:
            es, ed, ew = zip(*extra_edges[gi])
            src.append(np.asarray(es) + offset)
            dst.append(np.asarray(ed) + offset)
            w.append(np.asarray(ew, dtype=np.float64))
        feats.append(x)
        targets.append(next_pitch_targets(g))
        ids.append(np.full(len(x), gi))
        seqs.append(np.arange(len(g.notes)) + offset)
        notes.append(np.arange(len(g.notes)) + offset)
        offset += len(x)
    adj = Adjacency.build(np.concatenate(src), np.concatenate(dst), np.concatenate(w), offset)
    return GraphBatch(np.concatenate(feats), adj, np.concatenate(targets), np.concatenate(ids),
                      seqs, np.concatenate(notes))


# ---------------------------------------------------------------------------
# parameters


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, rng, in_dim: int = FEATURE_DIM, n_classes: int = N_CLASSES) -> dict:
    rng = np.random.default_rng(rng)
    p = {}
    dim = in_dim
    for layer in range(cfg.layers):
        last = layer == cfg.layers - 1
        out = cfg.hidden if last else cfg.hidden // cfg.heads
        for h in range(cfg.heads):
            pre = f"gat{layer}.h{h}."
            p[pre + "W_src"] = _glorot(rng, dim, out)
            p[pre + "W_dst"] = _glorot(rng, dim, out)
            p[pre + "a"] = _glorot(rng, out, 1)
            p[pre + "b"] = np.zeros((1, out))
        if cfg.residual:
            p[f"gat{layer}.res"] = _glorot(rng, dim, cfg.hidden)
        dim = cfg.hidden
    H = cfg.hidden
    for w in cfg.windows:
        p[f"enh.w{w}"] = _glorot(rng, H, H)
        p[f"enh.b{w}"] = np.zeros((1, H))
    p["enh.out"] = _glorot(rng, H * len(cfg.windows), H)
    p["enh.out_b"] = np.zeros((1, H))
    for name in ("Wq", "Wk", "Wv", "Wo"):
        p[f"pred.{name}"] = _glorot(rng, H, H)
    p["pred.head"] = _glorot(rng, H, n_classes)
    p["pred.head_b"] = np.zeros((1, n_classes))
    return p


# ---------------------------------------------------------------------------
# layers


def gatv2_forward(node_feats, graph, layer, concat_heads: bool = True, activation: str = "elu",
                  negative_slope: float = 0.2, return_attention: bool = False, residual=None):
    """One GATv2 layer.

    ``layer`` is a list of per-head ``(W_src, W_dst, a, b)``. The score of edge
    j -> i is ``a . LeakyReLU(W_src h_j + W_dst h_i)`` scaled by the edge
    weight, normalised by a softmax over the in-edges of i (self-loop
    included). Heads are concatenated or averaged; ``residual`` is an optional
    projection of the input added before the activation.
    """
    x = as_tensor(node_feats)
    adj = graph if isinstance(graph, Adjacency) else Adjacency.from_graph(graph)
    if x.shape[0] != adj.size:
        raise DimensionMismatch(f"{x.shape[0]} feature rows for a {adj.size}-node graph")
    weight = Tensor(adj.weight[:, None])
    outs, alphas = [], []
    for W_src, W_dst, a, b in layer:
        W_src, W_dst, a, b = map(as_tensor, (W_src, W_dst, a, b))
        if W_src.shape[0] != x.shape[1]:
            raise DimensionMismatch(f"layer expects {W_src.shape[0]} input features, got {x.shape[1]}")
        hs = x @ W_src
        hd = x @ W_dst
        z = hs.rows(adj.src) + hd.rows(adj.dst)
        score = (z.leaky_relu(negative_slope) @ a) * weight
        alpha = segment_softmax(score, adj.dst, adj.size)
        msg = (hs.rows(adj.src) * alpha).scatter_rows(adj.dst, adj.size) + b
        outs.append(msg)
        alphas.append(alpha.data[:, 0])
    if concat_heads:
        h = concat(outs, axis=1)
    else:
        h = outs[0]
        for o in outs[1:]:
            h = h + o
        h = h * (1.0 / len(outs))
    if residual is not None:
        h = h + x @ as_tensor(residual)
    if activation == "elu":
        h = h.elu()
    elif activation is not None:
        raise ValueError(f"unknown activation {activation}")
    return (h, alphas) if return_attention else h


def feature_enhance(node_feats, enhancer: dict, pools: dict, windows=(1, 3, 5)) -> Tensor:
    """Multi-scale enhancer: windowed means, per-scale projection, fuse, residual."""
    h = as_tensor(node_feats)
    branches = []
    for w in windows:
        P = pools[w]
        if P.shape[1] != h.shape[0]:
            raise DimensionMismatch("pooling matrix does not match the node count")
        branches.append(Tensor(P) @ h @ as_tensor(enhancer[f"w{w}"]) + as_tensor(enhancer[f"b{w}"]))
    fused = concat(branches, axis=1).elu() @ as_tensor(enhancer["out"]) + as_tensor(enhancer["out_b"])
    return h + fused


def predictor(feats, pred: dict, mask: np.ndarray):
    """Self-attention block plus linear head; returns (logits, representation)."""
    h = as_tensor(feats)
    q = h @ as_tensor(pred["Wq"])
    k = h @ as_tensor(pred["Wk"])
    v = h @ as_tensor(pred["Wv"])
    scores = (q @ k.T) * (1.0 / np.sqrt(h.shape[1])) + Tensor(mask)
    z = h + (scores.softmax(axis=1) @ v) @ as_tensor(pred["Wo"])
    logits = z @ as_tensor(pred["head"]) + as_tensor(pred["head_b"])
    return logits, z


def split_params(tensors: dict, cfg: ModelConfig):
    layers = []
    for layer in range(cfg.layers):
        heads = []
        for h in range(cfg.heads):
            pre = f"gat{layer}.h{h}."
            heads.append((tensors[pre + "W_src"], tensors[pre + "W_dst"], tensors[pre + "a"], tensors[pre + "b"]))
        layers.append((heads, tensors.get(f"gat{layer}.res")))
    enh = {k[4:]: v for k, v in tensors.items() if k.startswith("enh.")}
    pred = {k[5:]: v for k, v in tensors.items() if k.startswith("pred.")}
    return layers, enh, pred


def forward(tensors: dict, batch: GraphBatch, cfg: ModelConfig, return_attention: bool = False):
    """Full model. ``tensors`` maps parameter names to Tensors or arrays."""
    layers, enh, pred = split_params(tensors, cfg)
    h = Tensor(batch.features)
    attention = []
    for k, (heads, res) in enumerate(layers):
        last = k == len(layers) - 1
        h, alphas = gatv2_forward(h, batch.adjacency, heads, concat_heads=not last,
                                  negative_slope=cfg.negative_slope, return_attention=True, residual=res)
        attention.append(alphas)
    h = feature_enhance(h, enh, {w: batch.pool(w) for w in cfg.windows}, cfg.windows)
    logits, z = predictor(h, pred, batch.attention_mask())
    out = {"logits": logits, "feats": z}
    if return_attention:
        out["attention"] = attention
    return out


def predict_proba(params: dict, batch: GraphBatch, cfg: ModelConfig) -> np.ndarray:
    logits = forward(params, batch, cfg)["logits"].data
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)
