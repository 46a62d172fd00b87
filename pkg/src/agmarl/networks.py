"""Per-node actor and centralised critic networks, target copies and the model bundle."""

from __future__ import annotations

import copy
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diff import DenseLayer, ParamStore, ShapeError, Tensor, concat
from .gnn import OBS_DIM, GnnEncoder

ACTION_DIM = 3
POOLED_DIM = 128


class ActorNet:
    """26 -> 128 -> 64 -> 3, ReLU hidden layers and sigmoid scores."""

    def __init__(self, layers: Sequence[DenseLayer]):
        self.layers = list(layers)
        if self.layers[0].in_dim != OBS_DIM or self.layers[-1].out_dim != ACTION_DIM:
            raise ShapeError("actor must map observations to 3 scores")
        if self.layers[-1].activation != "Sigmoid":
            raise ValueError("actor output layer must be sigmoid")

    @classmethod
    def init(cls, rng: np.random.Generator, hidden=(128, 64)) -> "ActorNet":
        dims = (OBS_DIM, *hidden)
        layers = [DenseLayer.init(a, b, "ReLU", rng) for a, b in zip(dims, dims[1:])]
        layers.append(DenseLayer.init(dims[-1], ACTION_DIM, "Sigmoid", rng))
        return cls(layers)

    def params(self) -> ParamStore:
        store = ParamStore()
        for k, layer in enumerate(self.layers, start=1):
            store.add_layer(f"l{k}", layer)
        return store

    def __call__(self, obs) -> Tensor:
        h = Tensor._wrap(obs)
        for layer in self.layers:
            h = layer(h)
        return h


def actor_forward(actor: ActorNet, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != OBS_DIM:
        raise ShapeError(f"observation must have {OBS_DIM} entries, got {obs.shape}")
    return actor(obs).data


class CriticNet:
    """Q(o_i, a_i, mean_j f_other(o_j, a_j)) with a mean-pooled 128-d summary of the others."""

    def __init__(self, other: Sequence[DenseLayer], main: Sequence[DenseLayer]):
        self.other = list(other)
        self.main = list(main)
        if self.other[-1].out_dim != POOLED_DIM:
            raise ShapeError("other-agent encoder must produce 128-d embeddings")
        if self.main[0].in_dim != OBS_DIM + ACTION_DIM + POOLED_DIM or self.main[-1].out_dim != 1:
            raise ShapeError("critic head dims inconsistent")

    @classmethod
    def init(cls, rng: np.random.Generator) -> "CriticNet":
        pair = OBS_DIM + ACTION_DIM
        other = [DenseLayer.init(pair, 64, "ReLU", rng), DenseLayer.init(64, POOLED_DIM, "Identity", rng)]
        main = [DenseLayer.init(pair + POOLED_DIM, 128, "ReLU", rng),
                DenseLayer.init(128, 64, "ReLU", rng),
                DenseLayer.init(64, 1, "Identity", rng)]
        return cls(other, main)

    def params(self) -> ParamStore:
        store = ParamStore()
        for k, layer in enumerate(self.other, start=1):
            store.add_layer(f"other{k}", layer)
        for k, layer in enumerate(self.main, start=1):
            store.add_layer(f"main{k}", layer)
        return store

    def encode_others(self, obs_all, act_all) -> Tensor:
        h = concat([obs_all, act_all], axis=-1)
        for layer in self.other:
            h = layer(h)
        return h

    def batch(self, obs_own, act_own, obs_all, act_all, pool: np.ndarray) -> Tensor:
        """Batched Q values.

        obs_own [B, 26], act_own [B, 3], obs_all [B, M, 26], act_all [B, M, 3];
        ``pool`` [B, M] holds the averaging weights over the other agents
        (zero for the agent itself and for absent agents). Returns [B].
        """
        z = self.encode_others(obs_all, act_all)
        pooled = (Tensor(np.asarray(pool)[:, None, :]) @ z).reshape(z.shape[0], POOLED_DIM)
        h = concat([obs_own, act_own, pooled], axis=-1)
        for layer in self.main:
            h = layer(h)
        return h.reshape(-1)


def critic_forward(critic: CriticNet, own: tuple, others: Sequence[tuple]) -> float:
    """Single-sample Q for (obs, scores) of one agent given the other agents' pairs."""
    o, a = (np.asarray(x, dtype=np.float64) for x in own)
    if o.shape != (OBS_DIM,) or a.shape != (ACTION_DIM,):
        raise ShapeError("own observation/action has the wrong shape")
    if others:
        obs_o = np.stack([np.asarray(x[0], dtype=np.float64) for x in others])
        act_o = np.stack([np.asarray(x[1], dtype=np.float64) for x in others])
        if obs_o.shape[1] != OBS_DIM or act_o.shape[1] != ACTION_DIM:
            raise ShapeError("other-agent observation/action has the wrong shape")
        pool = np.full((1, len(others)), 1.0 / len(others))
    else:
        obs_o = np.zeros((1, OBS_DIM))
        act_o = np.zeros((1, ACTION_DIM))
        pool = np.zeros((1, 1))
    q = critic.batch(o[None], a[None], obs_o[None], act_o[None], pool)
    return float(q.data[0])


def soft_update(online: ParamStore, target: ParamStore, tau: float) -> ParamStore:
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if list(online) != list(target):
        raise ShapeError("online and target parameter sets differ")
    for name, p in online.items():
        t = target[name]
        if t.data.shape != p.data.shape:
            raise ShapeError(f"{name}: shape mismatch")
        t.data = tau * p.data + (1.0 - tau) * t.data
    return target


@dataclass
class AgentBundle:
    actor: ActorNet
    critic: CriticNet
    target_actor: ActorNet
    target_critic: CriticNet

    @classmethod
    def init(cls, rng: np.random.Generator) -> "AgentBundle":
        actor = ActorNet.init(rng)
        critic = CriticNet.init(rng)
        return cls(actor, critic, copy.deepcopy(actor), copy.deepcopy(critic))

    def params(self) -> ParamStore:
        store = ParamStore()
        store.merge("actor", self.actor.params())
        store.merge("critic", self.critic.params())
        store.merge("target_actor", self.target_actor.params())
        store.merge("target_critic", self.target_critic.params())
        return store


class MarlModel:
    """Shared GNN plus one agent bundle per node slot (agent i drives node id i)."""

    def __init__(self, gnn: GnnEncoder, agents: Sequence[AgentBundle]):
        self.gnn = gnn
        self.agents = list(agents)

    @classmethod
    def init(cls, n_agents: int, rng: np.random.Generator) -> "MarlModel":
        gnn = GnnEncoder.init(rng)
        return cls(gnn, [AgentBundle.init(rng) for _ in range(n_agents)])

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def params(self) -> ParamStore:
        store = ParamStore()
        store.merge("gnn", self.gnn.params())
        for i, agent in enumerate(self.agents):
            store.merge(f"agent{i}", agent.params())
        return store

    def arrays(self) -> OrderedDict[str, np.ndarray]:
        return self.params().arrays()

    @classmethod
    def from_arrays(cls, arrays) -> "MarlModel":
        n = 0
        while any(k.startswith(f"agent{n}.") for k in arrays):
            n += 1
        if n == 0:
            raise KeyError("weights contain no agents")
        model = cls.init(n, np.random.default_rng(0))
        expected = set(model.params())
        unexpected = set(arrays) - expected
        if unexpected:
            raise KeyError(f"unexpected tensors: {sorted(unexpected)[:3]}")
        model.params().load_arrays(arrays)
        return model

    def scores(self, graph_features: np.ndarray, node_ids: Sequence[int]) -> np.ndarray:
        """Actor scores for every node of one graph, rows aligned with ``node_ids``."""
        for i in node_ids:
            if not 0 <= i < self.n_agents:
                raise KeyError(f"no agent for node {i}")
        emb = self.gnn(graph_features).data
        obs = np.concatenate([graph_features, emb], axis=-1)
        return np.stack([self.agents[i].actor(obs[k]).data for k, i in enumerate(node_ids)])
