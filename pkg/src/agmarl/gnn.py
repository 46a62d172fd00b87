"""Shared message-passing encoder over the fully connected cluster graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cluster import RAW_FEATURE_DIM, ClusterGraph
from .diff import ParamStore, ShapeError, Tensor, concat, parameter

EMBED_DIM = 16
OBS_DIM = RAW_FEATURE_DIM + EMBED_DIM
DEFAULT_DIMS = (RAW_FEATURE_DIM, 32, EMBED_DIM)


@dataclass
class GnnLayer:
    w_self: Tensor  # [d_out, d_in]
    w_neigh: Tensor  # [d_out, d_in]

    def __post_init__(self):
        if self.w_self.shape != self.w_neigh.shape or self.w_self.ndim != 2:
            raise ShapeError("w_self and w_neigh must share a 2-D shape")

    @property
    def in_dim(self) -> int:
        return self.w_self.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w_self.shape[0]


class GnnEncoder:
    def __init__(self, layers: Sequence[GnnLayer]):
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError("gnn layer dims do not chain")
        self.layers = list(layers)

    @classmethod
    def init(cls, rng: np.random.Generator, dims: Sequence[int] = DEFAULT_DIMS) -> "GnnEncoder":
        layers = []
        for d_in, d_out in zip(dims, dims[1:]):
            bound = np.sqrt(6.0 / (2 * d_in + d_out))
            layers.append(GnnLayer(parameter(rng.uniform(-bound, bound, (d_out, d_in))),
                                   parameter(rng.uniform(-bound, bound, (d_out, d_in)))))
        return cls(layers)

    def params(self) -> ParamStore:
        store = ParamStore()
        for k, layer in enumerate(self.layers):
            store.add(f"layer{k}.w_self", layer.w_self)
            store.add(f"layer{k}.w_neigh", layer.w_neigh)
        return store

    def __call__(self, features, mask=None) -> Tensor:
        return gnn_forward_batch(features, self.layers, mask)


def neighbour_mean_matrix(mask: np.ndarray) -> np.ndarray:
    """Rows average over the other present nodes; a lone node gets a zero row.

    ``mask`` has shape [..., N] with 1 for nodes that exist.
    """
    mask = np.asarray(mask, dtype=np.float64)
    n = mask.shape[-1]
    others = mask[..., None, :] * (1.0 - np.eye(n))
    count = mask.sum(axis=-1, keepdims=True)[..., None] - 1.0
    return others / np.maximum(count, 1.0)


def gnn_forward_batch(features, layers: Sequence[GnnLayer], mask=None) -> Tensor:
    """Embeddings for a batch of graphs: features [..., N, d_in] -> [..., N, d_out]."""
    h = Tensor._wrap(features)
    if h.shape[-1] != layers[0].in_dim:
        raise ShapeError(f"gnn expects feature dim {layers[0].in_dim}, got {h.shape[-1]}")
    if mask is None:
        mask = np.ones(h.shape[:-1])
    agg = Tensor(neighbour_mean_matrix(mask))
    for layer in layers:
        if h.shape[-1] != layer.in_dim:
            raise ShapeError("gnn dimension mismatch")
        h = (h @ layer.w_self.T + (agg @ h) @ layer.w_neigh.T).relu()
    return h


def gnn_forward(g: ClusterGraph, layers: Sequence[GnnLayer]) -> dict[int, np.ndarray]:
    """Per-node embeddings keyed by node id."""
    emb = gnn_forward_batch(g.feature_matrix, layers).data
    return {n.node_id: emb[k] for k, n in enumerate(g.nodes)}


def build_observation(node_id: int, g: ClusterGraph, embeddings) -> np.ndarray:
    ids = g.node_ids
    if node_id not in ids:
        raise KeyError(f"unknown node {node_id}")
    x = g.feature_matrix[ids.index(node_id)]
    e = np.asarray(embeddings[node_id], dtype=np.float64)
    return np.concatenate([x, e])


def observations(features: Tensor, embeddings: Tensor) -> Tensor:
    return concat([features, embeddings], axis=-1)
