"""Straight-line numpy re-implementations used as independent test oracles."""

import numpy as np


def dense(layer, x):
    y = layer.weight.data @ x + layer.bias.data
    if layer.activation == "ReLU":
        return np.maximum(y, 0.0)
    if layer.activation == "Sigmoid":
        return 1.0 / (1.0 + np.exp(-y))
    return y


def gnn(layers, x):
    h = [np.asarray(row, dtype=float) for row in x]
    for l in layers:
        new = []
        for i in range(len(h)):
            others = [h[j] for j in range(len(h)) if j != i]
            msg = np.mean(others, axis=0) if others else np.zeros_like(h[i])
            new.append(np.maximum(l.w_self.data @ h[i] + l.w_neigh.data @ msg, 0.0))
        h = new
    return h


def actor(net, o):
    for l in net.layers:
        o = dense(l, o)
    return o


def critic(net, own, others):
    if others:
        zs = []
        for o, a in others:
            h = np.concatenate([o, a])
            for l in net.other:
                h = dense(l, h)
            zs.append(h)
        pooled = np.mean(zs, axis=0)
    else:
        pooled = np.zeros(128)
    h = np.concatenate([own[0], own[1], pooled])
    for l in net.main:
        h = dense(l, h)
    return float(h[0])


def observations(model, graph):
    """node_id -> 26-d observation for every node in the graph."""
    x = graph.feature_matrix
    emb = gnn(model.gnn.layers, x)
    return {n.node_id: np.concatenate([x[k], emb[k]]) for k, n in enumerate(graph.nodes)}


def pearson_two_pass(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return float("nan")
    return sxy / (sxx * syy) ** 0.5
