"""Node-shared residual MLP forecaster with a pluggable embedding slot.

Every weight is shared across nodes; the only per-node quantity is the
embedding table. That is what lets a trained model run on a different node set
once the table is swapped, and what the optional graph step mixes over.
"""

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import build_adaptive_graph
from .pca import EmbeddingTable, zero_embedding


@dataclass
class ModelConfig:
    l1: int = 12
    l2: int = 12
    embed_dim: int = 8
    tod_dim: int = 8
    dow_dim: int = 4
    hidden_dim: int = 32
    num_blocks: int = 2
    use_graph: bool = False
    steps_per_day: int = 288

    def __post_init__(self):
        dims = (self.l1, self.l2, self.embed_dim, self.tod_dim, self.dow_dim,
                self.hidden_dim, self.num_blocks, self.steps_per_day)
        if any(d < 1 for d in dims):
            raise ValueError("all config dimensions must be >= 1")

    @property
    def mix_dim(self) -> int:
        return self.hidden_dim + self.embed_dim + self.tod_dim + self.dow_dim


@dataclass
class ModelParams:
    """All tensors of the forecaster plus the embedding slot."""

    config: ModelConfig
    w_x: np.ndarray
    b_x: np.ndarray
    embedding: EmbeddingTable
    tod: np.ndarray
    dow: np.ndarray
    blocks: list  # per block: dict with w1, b1, w2, b2
    w_o: np.ndarray
    b_o: np.ndarray

    def tensors(self):
        """Named views of every tensor, in the fixed serialization order."""
        out = {"w_x": self.w_x, "b_x": self.b_x, "embedding": self.embedding.values,
               "tod": self.tod, "dow": self.dow}
        for i, blk in enumerate(self.blocks):
            for key in ("w1", "b1", "w2", "b2"):
                out[f"{key}_{i}"] = blk[key]
        out["w_o"] = self.w_o
        out["b_o"] = self.b_o
        return out

    def trainable_names(self):
        """Embedding is a trainable tensor only under the adaptive strategy."""
        names = list(self.tensors())
        if self.embedding.strategy != "adaptive":
            names.remove("embedding")
        return names

    def clone(self) -> "ModelParams":
        return copy.deepcopy(self)

    @property
    def num_nodes(self) -> int:
        return self.embedding.num_nodes


def _xavier(rng, out_dim, in_dim):
    a = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-a, a, size=(out_dim, in_dim))


def init_params(config: ModelConfig, n: int, seed: int) -> ModelParams:
    """Deterministic initialization: Xavier-uniform weights, zero biases,
    small-normal adaptive embedding."""
    rng = np.random.default_rng(seed)
    cm = config.mix_dim
    w_x = _xavier(rng, config.hidden_dim, config.l1)
    emb = rng.normal(0.0, 0.01, size=(n, config.embed_dim))
    tod = _xavier(rng, config.steps_per_day, config.tod_dim)
    dow = _xavier(rng, 7, config.dow_dim)
    blocks = []
    for _ in range(config.num_blocks):
        blocks.append({
            "w1": _xavier(rng, cm, cm),
            "b1": np.zeros(cm),
            "w2": _xavier(rng, cm, cm),
            "b2": np.zeros(cm),
        })
    w_o = _xavier(rng, config.l2, cm)
    return ModelParams(
        config=config,
        w_x=w_x,
        b_x=np.zeros(config.hidden_dim),
        embedding=EmbeddingTable(values=emb, strategy="adaptive"),
        tod=tod,
        dow=dow,
        blocks=blocks,
        w_o=w_o,
        b_o=np.zeros(config.l2),
    )


def set_embedding(params: ModelParams, table: EmbeddingTable) -> ModelParams:
    """Return a copy of the model with the embedding slot replaced.

    A zero-strategy table always lands as exact zeros. The node count may
    change freely; no other tensor depends on it.
    """
    if table.dim != params.config.embed_dim:
        raise ValueError(
            f"embedding dim {table.dim} does not match model embed_dim "
            f"{params.config.embed_dim}"
        )
    out = params.clone()
    if table.strategy == "zero":
        out.embedding = zero_embedding(table.num_nodes, table.dim)
    else:
        out.embedding = EmbeddingTable(
            values=table.values.copy(), strategy=table.strategy,
            source=dict(table.source),
        )
    return out


def batch_arrays(windows, normalizer):
    """Stack windows into model-ready arrays.

    Returns (x, y, tod_idx, dow_idx): x is normalized history [B x N x l1],
    y the raw targets [B x N x l2].
    """
    x = np.stack([w.history for w in windows])
    y = np.stack([w.target for w in windows])
    tod_idx = np.array([w.tod for w in windows], dtype=np.intp)
    dow_idx = np.array([w.dow for w in windows], dtype=np.intp)
    return normalizer.apply(x), y, tod_idx, dow_idx


def forward(params: ModelParams, embedding: Optional[EmbeddingTable],
            x: np.ndarray, tod_idx, dow_idx, cache: bool = False):
    """Run the forecaster on a normalized batch.

    x: [B x N x l1]; returns predictions [B x N x l2] in normalized units.
    With cache=True also returns the intermediates needed for the backward
    pass. The embedding defaults to the model's own slot.
    """
    cfg = params.config
    emb = params.embedding if embedding is None else embedding
    b, n, l1 = x.shape
    if l1 != cfg.l1:
        raise ValueError(f"history length {l1} != l1 {cfg.l1}")
    if emb.num_nodes != n:
        raise ValueError(f"embedding rows {emb.num_nodes} != batch nodes {n}")
    if emb.dim != cfg.embed_dim:
        raise ValueError(f"embedding dim {emb.dim} != embed_dim {cfg.embed_dim}")

    u = x @ params.w_x.T + params.b_x
    tod_vec = params.tod[tod_idx]  # [B x Ct]
    dow_vec = params.dow[dow_idx]
    h = np.concatenate(
        [
            u,
            np.broadcast_to(emb.values, (b, n, cfg.embed_dim)),
            np.broadcast_to(tod_vec[:, None, :], (b, n, cfg.tod_dim)),
            np.broadcast_to(dow_vec[:, None, :], (b, n, cfg.dow_dim)),
        ],
        axis=2,
    )

    adp = None
    gram = None
    if cfg.use_graph:
        gram = np.maximum(emb.values @ emb.values.T, 0.0)
        adp = build_adaptive_graph(emb)

    hs, zs, rs = [h], [], []
    h_premix = None
    for i, blk in enumerate(params.blocks):
        z = hs[-1] @ blk["w1"].T + blk["b1"]
        r = np.maximum(z, 0.0)
        h_next = hs[-1] + r @ blk["w2"].T + blk["b2"]
        if cfg.use_graph and i == 0:
            h_premix = h_next
            h_next = np.einsum("uv,bvf->buf", adp.weights, h_next)
        if not np.isfinite(h_next).all():
            raise FloatingPointError(f"non-finite activations in block {i}")
        zs.append(z)
        rs.append(r)
        hs.append(h_next)

    y = hs[-1] @ params.w_o.T + params.b_o
    if not np.isfinite(y).all():
        raise FloatingPointError("non-finite output")
    if not cache:
        return y
    return y, {
        "x": x, "tod_idx": tod_idx, "dow_idx": dow_idx, "u": u,
        "hs": hs, "zs": zs, "rs": rs, "h_premix": h_premix,
        "graph": adp, "gram": gram, "embedding": emb,
    }


def predict_windows(params: ModelParams, embedding, windows, normalizer,
                    batch_size: int = 256) -> np.ndarray:
    """Forward a window list in batches; predictions stay in normalized units."""
    preds = []
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo : lo + batch_size]
        x, _, tod_idx, dow_idx = batch_arrays(chunk, normalizer)
        preds.append(forward(params, embedding, x, tod_idx, dow_idx))
    return np.concatenate(preds, axis=0)
