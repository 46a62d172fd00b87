"""MADDPG training of the per-node actors, centralised critics and the shared GNN."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cluster import (DEFAULT_COST_TABLE, RAW_FEATURE_DIM, ClusterGraph, PodSpec, metric_cost,
                      metric_ft, metric_util)
from .diff import Adam, ParamStore, Tensor, concat
from .gnn import neighbour_mean_matrix
from .lexico import SelectionConfig, lex_select
from .networks import ACTION_DIM, MarlModel, soft_update

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.99
    tau: float = 0.01
    bonus: float = 0.1
    batch_size: int = 64
    buffer_capacity: int = 50_000
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    noise_sigma: float = 0.1
    noise_decay: float = 0.999
    episodes: int = 500
    steps: int = 200
    train_every: int = 1
    lr_window: int = 20
    composite_reward: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.bonus < 0:
            raise ValueError("bonus must be non-negative")
        if self.batch_size < 1 or self.buffer_capacity < 1 or self.train_every < 1:
            raise ValueError("batch_size, buffer_capacity and train_every must be positive")


# reward --------------------------------------------------------------------

def compute_reward(winner_scores: Sequence[float], realized: Sequence[float], bonus: float) -> float:
    a = np.asarray(winner_scores, dtype=np.float64)
    m = np.asarray(realized, dtype=np.float64)
    return -float(np.mean((a - m) ** 2)) + bonus


def realized_metrics(g_next: ClusterGraph, winner: int,
                     cost_table: Mapping = DEFAULT_COST_TABLE) -> np.ndarray:
    node = g_next.node(winner)
    best_cost = max(metric_cost(n, cost_table) for n in g_next.nodes)
    return np.array([metric_ft(node), metric_util(node), metric_cost(node, cost_table) / best_cost])


# stress-regime weights for the ablation-only composite reward
COMPOSITE_WEIGHTS = {
    0: (0.2, 0.5, 0.3),
    1: (0.3, 0.4, 0.3),
    2: (0.6, 0.1, 0.3),
    3: (0.7, 0.1, 0.2),
}


def composite_reward(realized: Sequence[float], stress: float, cfg: SelectionConfig) -> float:
    from .lexico import regime_of
    w = COMPOSITE_WEIGHTS[int(regime_of(stress, cfg.thresholds))]
    return float(np.dot(w, realized))


def explore_scores(scores: Sequence[float], sigma: float, rng: np.random.Generator) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return s.copy()
    return np.clip(s + rng.normal(0.0, sigma, s.shape), 0.001, 0.999)


def adaptive_lr(base_lr: float, reward_history: Sequence[float], window: int = 20,
                min_gain: float = 1e-3, floor_div: float = 16.0) -> float:
    """Halve the rate for every window whose mean fails to beat the previous one by ``min_gain``."""
    h = np.asarray(reward_history, dtype=np.float64)
    means = [h[k * window:(k + 1) * window].mean() for k in range(len(h) // window)]
    fails = sum(1 for prev, cur in zip(means, means[1:]) if cur - prev < min_gain)
    return max(base_lr / 2.0 ** fails, base_lr / floor_div)


# replay --------------------------------------------------------------------

@dataclass
class Transition:
    state: ClusterGraph
    joint_scores: dict[int, np.ndarray]
    winner: int
    pod: PodSpec | None
    reward: float
    next_state: ClusterGraph
    stress: float
    done: bool = False

    def __post_init__(self):
        if self.winner not in self.joint_scores:
            raise ValueError("winner must be one of the scored agents")
        if not math.isfinite(self.reward):
            raise ValueError("reward must be finite")


def _pad(graph: ClusterGraph, n_slots: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.zeros((n_slots, RAW_FEATURE_DIM))
    mask = np.zeros(n_slots)
    feats = graph.feature_matrix
    for k, node in enumerate(graph.nodes):
        x[node.node_id] = feats[k]
        mask[node.node_id] = 1.0
    return x, mask


class ReplayBuffer:
    """Ring buffer; each batch is drawn uniformly without replacement."""

    def __init__(self, capacity: int, n_slots: int, seed=0):
        self.capacity = capacity
        self.n_slots = n_slots
        self.rng = np.random.default_rng(seed)
        self.items: list[Transition] = []
        self._arrays: list[tuple] = []
        self._pos = 0

    def __len__(self) -> int:
        return len(self.items)

    def add(self, tr: Transition):
        x, mask = _pad(tr.state, self.n_slots)
        x2, mask2 = _pad(tr.next_state, self.n_slots)
        acts = np.zeros((self.n_slots, ACTION_DIM))
        for i, a in tr.joint_scores.items():
            acts[i] = a
        row = (x, mask, acts, tr.reward, float(tr.done), x2, mask2)
        if len(self.items) < self.capacity:
            self.items.append(tr)
            self._arrays.append(row)
        else:
            self.items[self._pos] = tr
            self._arrays[self._pos] = row
        self._pos = (self._pos + 1) % self.capacity

    def sample_indices(self, batch_size: int) -> np.ndarray:
        return self.rng.choice(len(self.items), size=min(batch_size, len(self.items)), replace=False)

    def batch(self, idx: Sequence[int]) -> dict[str, np.ndarray]:
        rows = [self._arrays[i] for i in idx]
        names = ("x", "mask", "acts", "reward", "done", "x2", "mask2")
        return {n: np.stack([r[k] for r in rows]) if n not in ("reward", "done")
                else np.array([r[k] for r in rows]) for k, n in enumerate(names)}


# learner -------------------------------------------------------------------

def pool_weights(mask: np.ndarray, i: int) -> np.ndarray:
    """Mean-pooling weights over present agents other than ``i``: [B, M]."""
    w = mask.copy()
    w[:, i] = 0.0
    count = w.sum(axis=1, keepdims=True)
    return w / np.maximum(count, 1.0)


class Learner:
    def __init__(self, model: MarlModel, hp: Hyperparams):
        self.model = model
        self.hp = hp
        self.actor_opt = Adam()
        self.critic_opt = Adam()
        self.actor_lr = hp.actor_lr
        self.critic_lr = hp.critic_lr
        self.actor_store = model.gnn.params()
        for i, agent in enumerate(model.agents):
            self.actor_store.merge(f"agent{i}.actor", agent.actor.params())
        self.critic_store = ParamStore()
        for i, agent in enumerate(model.agents):
            self.critic_store.merge(f"agent{i}.critic", agent.critic.params())

    def observations(self, x: np.ndarray, mask: np.ndarray, grad: bool = False):
        emb = self.model.gnn(x if grad else Tensor(x), mask)
        if not grad:
            emb = emb.detach()
        return concat([Tensor(x), emb], axis=-1)

    def critic_losses(self, b: dict, obs: Tensor, obs2: Tensor) -> list[tuple[int, Tensor, Tensor]]:
        """Per-agent (index, loss, target) on a batch; observations are constants here."""
        hp, agents = self.hp, self.model.agents
        mask, mask2 = b["mask"], b["mask2"]
        target_acts = np.zeros_like(b["acts"])
        for j, agent in enumerate(agents):
            if mask2[:, j].any():
                target_acts[:, j] = agent.target_actor(obs2.data[:, j]).data * mask2[:, j:j + 1]
        out = []
        for i, agent in enumerate(agents):
            sel = mask[:, i]
            if not sel.any():
                continue
            q_next = agent.target_critic.batch(obs2.data[:, i], target_acts[:, i], obs2.data,
                                               target_acts, pool_weights(mask2, i)).data
            y = b["reward"] + hp.gamma * (1.0 - b["done"]) * mask2[:, i] * q_next
            q = agent.critic.batch(obs[:, i], Tensor(b["acts"][:, i]), obs, Tensor(b["acts"]),
                                   pool_weights(mask, i))
            loss = ((q - y).square() * sel).sum() * (1.0 / sel.sum())
            out.append((i, loss, y))
        return out

    def actor_losses(self, b: dict, obs_grad: Tensor, obs_const: Tensor) -> list[tuple[int, Tensor]]:
        mask = b["mask"]
        out = []
        for i, agent in enumerate(self.model.agents):
            sel = mask[:, i]
            if not sel.any():
                continue
            a_i = agent.actor(obs_grad[:, i])
            q = agent.critic.batch(obs_const[:, i], a_i, obs_const, Tensor(b["acts"]),
                                   pool_weights(mask, i))
            out.append((i, -(q * sel).sum() * (1.0 / sel.sum())))
        return out

    def update(self, b: dict) -> float:
        obs = self.observations(b["x"], b["mask"])
        obs2 = self.observations(b["x2"], b["mask2"])
        losses = self.critic_losses(b, obs, obs2)
        total = losses[0][1]
        for _, l, _ in losses[1:]:
            total = total + l
        critic_loss = total.item() / len(losses)
        if not math.isfinite(critic_loss):
            raise TrainingDiverged("critic loss is not finite")
        total.backward()
        self.critic_opt.step(self.critic_store, self.critic_lr)

        obs_grad = self.observations(b["x"], b["mask"], grad=True)
        a_losses = self.actor_losses(b, obs_grad, obs)
        total = a_losses[0][1]
        for _, l in a_losses[1:]:
            total = total + l
        if not math.isfinite(total.item()):
            raise TrainingDiverged("actor loss is not finite")
        total.backward()
        self.actor_opt.step(self.actor_store, self.actor_lr)
        self.critic_store.zero_grad()

        for agent in self.model.agents:
            soft_update(agent.actor.params(), agent.target_actor.params(), self.hp.tau)
            soft_update(agent.critic.params(), agent.target_critic.params(), self.hp.tau)
        return critic_loss


# episode loop ---------------------------------------------------------------

@dataclass
class EpisodeLog:
    episode: int
    mean_reward: float
    mse_term: float
    critic_loss: float
    stress_mean: float
    lr: float
    steps: int


@dataclass
class TrainResult:
    model: MarlModel
    log: list[EpisodeLog] = field(default_factory=list)

    def write_csv(self, path):
        write_training_log(path, self.log)


def write_training_log(path, rows: Sequence[EpisodeLog]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "mean_reward", "mse_term", "critic_loss", "stress_mean", "lr"])
        for r in rows:
            w.writerow([r.episode] + [repr(float(v)) for v in
                                      (r.mean_reward, r.mse_term, r.critic_loss, r.stress_mean, r.lr)])


def policy_scores(model: MarlModel, graph: ClusterGraph) -> dict[int, np.ndarray]:
    ids = graph.node_ids
    s = model.scores(graph.feature_matrix, ids)
    return {i: s[k] for k, i in enumerate(ids)}


def train(env_factory, model: MarlModel, hp: Hyperparams, sel: SelectionConfig, seed: int,
          cost_table: Mapping = DEFAULT_COST_TABLE, progress=None) -> TrainResult:
    """Run the MADDPG loop.

    ``env_factory(episode, rng)`` returns an episode source exposing
    ``next_decision()`` and ``step(node_or_None)`` in the manner of
    :class:`agmarl.sim.ClusterEnv`, already seeded with its workload.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = ss.spawn(3)
    env_rng, noise_rng, sample_rng = (np.random.default_rng(s) for s in streams)
    buffer = ReplayBuffer(hp.buffer_capacity, model.n_agents, seed=sample_rng)
    learner = Learner(model, hp)
    result = TrainResult(model)
    sigma = hp.noise_sigma
    rewards_hist: list[float] = []
    step_count = 0
    for ep in range(hp.episodes):
        lr_scale = adaptive_lr(1.0, rewards_hist, window=hp.lr_window)
        learner.actor_lr = hp.actor_lr * lr_scale
        learner.critic_lr = hp.critic_lr * lr_scale
        env = env_factory(ep, env_rng)
        rewards, mses, stresses, closs = [], [], [], []
        prev = None
        steps = 0
        while steps < hp.steps:
            d = env.next_decision()
            if d is None:
                break
            if prev is not None:
                prev.next_state = d.graph
                buffer.add(prev)
            scores = policy_scores(model, d.graph)
            noisy = {i: explore_scores(a, sigma, noise_rng) for i, a in scores.items()}
            winner = lex_select({i: noisy[i] for i in d.candidates}, d.graph.stress, sel)
            post, _ = env.step(winner)
            realized = realized_metrics(post, winner, cost_table)
            mse = float(np.mean((noisy[winner] - realized) ** 2))
            if hp.composite_reward:
                r = composite_reward(realized, d.graph.stress, sel)
            else:
                r = compute_reward(noisy[winner], realized, hp.bonus)
            prev = Transition(d.graph, noisy, winner, d.pod, r, post, d.graph.stress)
            rewards.append(r)
            mses.append(mse)
            stresses.append(d.graph.stress)
            steps += 1
            step_count += 1
            if len(buffer) >= hp.batch_size and step_count % hp.train_every == 0:
                closs.append(learner.update(buffer.batch(buffer.sample_indices(hp.batch_size))))
        if prev is not None:
            prev.done = True
            buffer.add(prev)
        row = EpisodeLog(ep, float(np.mean(rewards)) if rewards else 0.0,
                         float(np.mean(mses)) if mses else 0.0,
                         float(np.mean(closs)) if closs else 0.0,
                         float(np.mean(stresses)) if stresses else 0.0,
                         learner.actor_lr, steps)
        result.log.append(row)
        rewards_hist.append(row.mean_reward)
        sigma *= hp.noise_decay
        if progress:
            progress(row)
        log.debug("episode %d reward=%.4f mse=%.4f critic=%.4f", ep, row.mean_reward, row.mse_term,
                  row.critic_loss)
    return result


def save_training_log(result: TrainResult, path) -> Path:
    path = Path(path)
    result.write_csv(path)
    return path
