"""Two-layer graph attention network, split into extractor and classifier.

The extractor maps raw features to hidden embeddings (ELU output, optionally
multi-head with column concatenation); the classifier is a single attention
layer emitting raw logits. Self-loops are added at forward time only, so
stored graphs stay canonical and every attention softmax segment is
non-empty. No bias terms, single head by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import Graph

__all__ = [
    "GatLayer",
    "GnnModel",
    "build_model",
    "init_params",
    "glorot_bound",
    "message_structure",
    "gat_layer_forward",
    "extractor_forward",
    "classifier_forward",
    "model_forward",
    "get_params",
    "set_params",
    "clone_params",
    "freeze_model",
    "save_checkpoint",
    "load_checkpoint",
]

LEAKY_SLOPE = 0.2


@dataclass
class GatLayer:
    """One attention head: weight (d_in x d_out), attention vector (2*d_out x 1)."""

    weight: Tensor
    attn: Tensor
    leaky_slope: float = LEAKY_SLOPE

    @property
    def out_dim(self) -> int:
        return self.weight.data.shape[1]


@dataclass
class GnnModel:
    extractor_heads: list[GatLayer]
    classifier: GatLayer

    @property
    def feature_dim(self) -> int:
        return self.extractor_heads[0].weight.data.shape[0]

    @property
    def hidden_dim(self) -> int:
        return sum(h.out_dim for h in self.extractor_heads)

    @property
    def num_classes(self) -> int:
        return self.classifier.out_dim

    def parameters(self) -> list[Tensor]:
        out = []
        for head in self.extractor_heads:
            out.extend([head.weight, head.attn])
        out.extend([self.classifier.weight, self.classifier.attn])
        return out

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.extractor_heads)):
            names.extend([f"extractor.{i}.weight", f"extractor.{i}.attn"])
        names.extend(["classifier.weight", "classifier.attn"])
        return names


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def build_model(feature_dim: int, num_classes: int, hidden_dim: int = 128,
                heads: int = 1, seed: int = 0) -> GnnModel:
    if hidden_dim % heads != 0:
        raise ValueError(f"hidden_dim {hidden_dim} not divisible by heads {heads}")
    head_dim = hidden_dim // heads
    model = GnnModel(
        extractor_heads=[
            GatLayer(weight=Tensor(np.zeros((feature_dim, head_dim)), requires_grad=True),
                     attn=Tensor(np.zeros((2 * head_dim, 1)), requires_grad=True))
            for _ in range(heads)
        ],
        classifier=GatLayer(weight=Tensor(np.zeros((hidden_dim, num_classes)), requires_grad=True),
                            attn=Tensor(np.zeros((2 * num_classes, 1)), requires_grad=True)),
    )
    init_params(model, seed)
    return model


def init_params(model: GnnModel, seed: int) -> list[Tensor]:
    """Glorot-uniform re-initialization, deterministic per seed."""
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        fan_in, fan_out = p.data.shape
        bound = glorot_bound(fan_in, fan_out)
        p.data = rng.uniform(-bound, bound, size=p.data.shape)
        p.grad = np.zeros_like(p.data)
    return model.parameters()


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def message_structure(graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Directed message list (src -> dst) with self-loops, sorted by (dst, src)."""
    n = graph.num_nodes
    loops = np.arange(n, dtype=np.int64)
    src = np.concatenate([graph.edges[:, 0], graph.edges[:, 1], loops])
    dst = np.concatenate([graph.edges[:, 1], graph.edges[:, 0], loops])
    order = np.lexsort((src, dst))
    return src[order], dst[order]


def gat_layer_forward(layer: GatLayer, x: Tensor, msgs: tuple[np.ndarray, np.ndarray],
                      return_attention: bool = False):
    """Attention aggregation over each node's self-loop-augmented neighborhood."""
    msg_src, msg_dst = msgs
    if x.data.shape[1] != layer.weight.data.shape[0]:
        raise ValueError(f"feature width {x.data.shape[1]} does not match layer input {layer.weight.data.shape[0]}")
    d_out = layer.out_dim
    wh = ad.matmul(x, layer.weight)
    a_dst = ad.gather_rows(layer.attn, np.arange(d_out))
    a_src = ad.gather_rows(layer.attn, np.arange(d_out, 2 * d_out))
    score_dst = ad.matmul(wh, a_dst)
    score_src = ad.matmul(wh, a_src)
    e = ad.leaky_relu(
        ad.add(ad.gather_rows(score_dst, msg_dst), ad.gather_rows(score_src, msg_src)),
        layer.leaky_slope,
    )
    alpha = ad.segment_softmax(ad.reshape(e, (-1,)), msg_dst)
    _assert_normalized(alpha.data, msg_dst)
    weighted = ad.mul(ad.gather_rows(wh, msg_src), ad.reshape(alpha, (-1, 1)))
    out = ad.segment_sum(weighted, msg_dst, x.data.shape[0])
    if return_attention:
        return out, alpha.data.copy()
    return out


def _assert_normalized(alpha: np.ndarray, segments: np.ndarray) -> None:
    # alpha may underflow to +0 at extreme score gaps; negatives never happen
    starts = np.flatnonzero(np.r_[True, segments[1:] != segments[:-1]])
    sums = np.add.reduceat(alpha, starts)
    if np.any(alpha < 0) or np.abs(sums - 1.0).max() > 1e-12:
        raise ad.NumericsError("attention weights failed normalization check")


def extractor_forward(model: GnnModel, graph: Graph, msgs=None) -> Tensor:
    """Hidden embeddings H (N x hidden), ELU applied, heads concatenated."""
    if msgs is None:
        msgs = message_structure(graph)
    x = Tensor(graph.features)
    outs = [gat_layer_forward(head, x, msgs) for head in model.extractor_heads]
    combined = outs[0] if len(outs) == 1 else ad.concat_cols(outs)
    return ad.elu(combined)


def classifier_forward(model: GnnModel, h: Tensor, graph: Graph, msgs=None) -> Tensor:
    """Raw logits Z (N x C) from hidden embeddings."""
    if msgs is None:
        msgs = message_structure(graph)
    return gat_layer_forward(model.classifier, h, msgs)


def model_forward(model: GnnModel, graph: Graph) -> tuple[Tensor, Tensor]:
    """(H, Z): hidden embeddings and logits on the same graph."""
    msgs = message_structure(graph)
    h = extractor_forward(model, graph, msgs)
    z = classifier_forward(model, h, graph, msgs)
    return h, z


# ---------------------------------------------------------------------------
# parameter plumbing
# ---------------------------------------------------------------------------


def get_params(model: GnnModel) -> list[np.ndarray]:
    return [p.data.copy() for p in model.parameters()]


def set_params(model: GnnModel, arrays) -> None:
    params = model.parameters()
    if len(params) != len(arrays):
        raise ValueError(f"expected {len(params)} parameter blocks, got {len(arrays)}")
    for p, a in zip(params, arrays):
        if p.data.shape != a.shape:
            raise ValueError(f"parameter shape mismatch: {p.data.shape} vs {a.shape}")
        p.data = a.copy()
        p.grad = np.zeros_like(p.data)


def clone_params(arrays) -> list[np.ndarray]:
    return [a.copy() for a in arrays]


def freeze_model(model: GnnModel) -> GnnModel:
    """Read-only snapshot: shares no mutable state with the source model."""
    def freeze_layer(layer: GatLayer) -> GatLayer:
        w = Tensor(layer.weight.data.copy())
        a = Tensor(layer.attn.data.copy())
        w.data.flags.writeable = False
        a.data.flags.writeable = False
        return GatLayer(weight=w, attn=a, leaky_slope=layer.leaky_slope)

    return GnnModel(extractor_heads=[freeze_layer(h) for h in model.extractor_heads],
                    classifier=freeze_layer(model.classifier))


# ---------------------------------------------------------------------------
# checkpoints (plain text, bit-exact round trip)
# ---------------------------------------------------------------------------

_CKPT_MAGIC = "gat-checkpoint 1"


def save_checkpoint(model: GnnModel, path) -> None:
    lines = [_CKPT_MAGIC, f"heads {len(model.extractor_heads)}"]
    for name, p in zip(model.parameter_names(), model.parameters()):
        r, c = p.data.shape
        lines.append(f"block {name} {r} {c}")
        for row in p.data:
            lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> GnnModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a recognized checkpoint file")
    heads = int(lines[1].split()[1])
    blocks: dict[str, np.ndarray] = {}
    i = 2
    while i < len(lines):
        tag, name, r, c = lines[i].split()
        if tag != "block":
            raise ValueError(f"{path}: expected block header at line {i + 1}")
        r, c = int(r), int(c)
        rows = [[float(tok) for tok in lines[i + 1 + j].split()] for j in range(r)]
        arr = np.asarray(rows, dtype=np.float64).reshape(r, c)
        blocks[name] = arr
        i += 1 + r

    def layer(prefix: str) -> GatLayer:
        w = Tensor(blocks[f"{prefix}.weight"], requires_grad=True)
        a = Tensor(blocks[f"{prefix}.attn"], requires_grad=True)
        return GatLayer(weight=w, attn=a)

    return GnnModel(extractor_heads=[layer(f"extractor.{k}") for k in range(heads)],
                    classifier=layer("classifier"))
