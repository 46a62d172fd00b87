import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from agmarl.cluster import CostClass, PodSpec
from agmarl.diff import grad_check
from agmarl.lexico import SelectionConfig
from agmarl.networks import MarlModel
from agmarl.training import (Hyperparams, Learner, ReplayBuffer, Transition, adaptive_lr, compute_reward,
                             explore_scores, realized_metrics, train)
from agmarl.workloads import WorkloadConfig, episode_factory, toy_cluster
from conftest import make_graph

POD = PodSpec("p", "a", 100.0, 128.0)


def test_reward_examples():
    assert compute_reward([0.3, 0.4, 0.5], [0.3, 0.4, 0.5], 0.1) == 0.1
    assert compute_reward([1, 1, 1], [0, 0, 0], 0.1) == pytest.approx(-0.9, abs=1e-15)
    assert compute_reward([0.5] * 3, [0.5, 0.0, 1.0], 0.0) == pytest.approx(-1 / 6, abs=1e-15)


def test_realized_metrics_examples():
    g = make_graph([{}, {"mem_capacity": 32768.0, "cost_class": CostClass.HIGHMEM}])
    assert realized_metrics(g, 0).tolist() == [1.0, 0.0, 1.0]
    g = make_graph([{"memory_pressure": True}])
    assert realized_metrics(g, 0)[0] == 0.0
    g = make_graph([{"cpu_allocated": 2000.0, "mem_allocated": 8192.0},
                    {"mem_capacity": 32768.0, "cost_class": CostClass.HIGHMEM}])
    m = realized_metrics(g, 0)
    assert m[1] == 0.5 and m[2] == 1.0
    assert realized_metrics(g, 1)[2] == pytest.approx(1 / 1.35)
    with pytest.raises(KeyError):
        realized_metrics(g, 9)


def test_explore_scores():
    r = np.random.default_rng(0)
    s = np.array([0.2, 0.5, 0.8])
    assert np.array_equal(explore_scores(s, 0.0, r), s)
    out = np.array([explore_scores(s, 0.05, r) for _ in range(10_000)])
    assert abs(np.std(out - s) / 0.05 - 1) < 0.05
    wild = np.array([explore_scores([0.001, 0.999, 0.5], 3.0, r) for _ in range(200)])
    assert wild.min() >= 0.001 and wild.max() <= 0.999


def test_adaptive_lr_examples():
    assert adaptive_lr(1e-3, []) == 1e-3
    assert adaptive_lr(1e-3, np.linspace(-1, 0, 100)) == 1e-3
    assert adaptive_lr(1e-3, [0.2] * 40) == 5e-4
    assert adaptive_lr(1e-3, [0.2] * 400) == 1e-3 / 16


def test_hyperparam_validation():
    for bad in ({"gamma": 1.0}, {"tau": 0.0}, {"bonus": -1.0}, {"batch_size": 0}):
        with pytest.raises(ValueError):
            Hyperparams(**bad)


def random_transition(r, n_nodes, n_next=None, reward=None):
    def graph(k):
        return make_graph([{"cpu_allocated": float(r.uniform(0, 4000)), "mem_allocated": float(r.uniform(0, 16384)),
                            "memory_pressure": bool(r.random() < 0.3), "restarts_window": int(r.integers(0, 20))}
                           for _ in range(k)])
    g, g2 = graph(n_nodes), graph(n_next or n_nodes)
    scores = {i: r.uniform(0.01, 0.99, 3) for i in range(n_nodes)}
    rew = float(r.normal()) if reward is None else reward
    return Transition(g, scores, 0, POD, rew, g2, g.stress, done=bool(r.random() < 0.2))


def test_transition_invariants():
    r = np.random.default_rng(0)
    tr = random_transition(r, 2)
    with pytest.raises(ValueError):
        Transition(tr.state, tr.joint_scores, 7, POD, 0.0, tr.next_state, 0.0)
    with pytest.raises(ValueError):
        Transition(tr.state, tr.joint_scores, 0, POD, math.nan, tr.next_state, 0.0)


def test_replay_uniformity_and_capacity():
    r = np.random.default_rng(1)
    buf = ReplayBuffer(100, 2, seed=5)
    tr = random_transition(r, 2)
    for _ in range(130):
        buf.add(tr)
    assert len(buf) == 100
    counts = np.bincount([int(buf.sample_indices(1)[0]) for _ in range(100_000)], minlength=100)
    assert counts.min() >= 850 and counts.max() <= 1150
    idx = buf.sample_indices(64)
    assert len(set(idx.tolist())) == 64


@pytest.fixture(scope="module")
def learner_setup():
    r = np.random.default_rng(3)
    model = MarlModel.init(3, np.random.default_rng(4))
    hp = Hyperparams(gamma=0.9)
    buf = ReplayBuffer(50, 3, seed=0)
    for k in range(12):
        buf.add(random_transition(r, 3 if k % 3 else 2, n_next=3 if k % 4 else 2))
    return model, hp, buf


def test_critic_loss_matches_straight_line(learner_setup):
    model, hp, buf = learner_setup
    idx = np.arange(len(buf))
    b = buf.batch(idx)
    lrn = Learner(model, hp)
    losses = {i: l.item() for i, l, _ in lrn.critic_losses(b, lrn.observations(b["x"], b["mask"]),
                                                           lrn.observations(b["x2"], b["mask2"]))}
    for i in range(3):
        errs = []
        for k in idx:
            tr = buf.items[k]
            present = {n.node_id for n in tr.state.nodes}
            if i not in present:
                continue
            obs = oracles.observations(model, tr.state)
            obs2 = oracles.observations(model, tr.next_state)
            ag = model.agents
            a2 = {j: oracles.actor(ag[j].target_actor, o) for j, o in obs2.items()}
            if i in obs2:
                q_next = oracles.critic(ag[i].target_critic, (obs2[i], a2[i]),
                                        [(obs2[j], a2[j]) for j in sorted(obs2) if j != i])
            else:
                q_next = 0.0
            y = tr.reward + hp.gamma * (1 - tr.done) * q_next
            q = oracles.critic(ag[i].critic, (obs[i], tr.joint_scores[i]),
                               [(obs[j], tr.joint_scores[j]) for j in sorted(obs) if j != i])
            errs.append((q - y) ** 2)
        assert losses[i] == pytest.approx(np.mean(errs), abs=1e-10)


def test_actor_gradient_matches_finite_differences(learner_setup):
    model, hp, buf = learner_setup
    b = buf.batch(np.arange(8))
    lrn = Learner(model, hp)
    obs = lrn.observations(b["x"], b["mask"])
    for i in range(3):
        store = model.agents[i].actor.params()
        f = lambda: dict(lrn.actor_losses(b, obs, obs))[i]
        assert grad_check(f, store, max_entries=20, rng=np.random.default_rng(i)) < 1e-4


def test_reward_is_shared_across_agents(learner_setup):
    model, _, buf = learner_setup
    b = buf.batch(np.arange(len(buf)))
    lrn = Learner(model, Hyperparams(gamma=0.0))
    for i, _, y in lrn.critic_losses(b, lrn.observations(b["x"], b["mask"]),
                                     lrn.observations(b["x2"], b["mask2"])):
        assert np.array_equal(y, b["reward"])


def test_update_soft_updates_targets_by_tau(learner_setup):
    model, hp, buf = learner_setup
    model = MarlModel.from_arrays(model.arrays())
    for a in model.agents:  # pull targets apart from online weights
        for _, t in a.target_actor.params().items():
            t.data = t.data + 0.5
    old = {i: a.target_actor.params().arrays() for i, a in enumerate(model.agents)}
    Learner(model, Hyperparams(tau=0.25)).update(buf.batch(np.arange(10)))
    for i, a in enumerate(model.agents):
        on, tg = a.actor.params(), a.target_actor.params()
        for name in on:
            gap_before = np.abs(old[i][name] - on[name].data)
            gap_after = np.abs(tg[name].data - on[name].data)
            assert np.allclose(gap_after, 0.75 * gap_before, atol=1e-12)


def toy_factory():
    wl = WorkloadConfig(horizon_s=600.0)
    return episode_factory(toy_cluster(3), wl)


def test_no_updates_when_buffer_never_fills():
    model = MarlModel.init(3, np.random.default_rng(0))
    before = model.arrays()
    hp = Hyperparams(episodes=2, steps=10, batch_size=1000)
    res = train(toy_factory(), model, hp, SelectionConfig(), seed=1)
    after = model.arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert len(res.log) == 2 and all(r.critic_loss == 0.0 for r in res.log)


def test_train_is_deterministic():
    hp = Hyperparams(episodes=3, steps=12, batch_size=8)
    outs = []
    for _ in range(2):
        model = MarlModel.init(3, np.random.default_rng(0))
        res = train(toy_factory(), model, hp, SelectionConfig(), seed=9)
        outs.append((model.arrays(), [r.mean_reward for r in res.log]))
    a, b = outs
    assert a[1] == b[1]
    assert all(np.array_equal(a[0][k], b[0][k]) for k in a[0])


def test_training_log_csv(tmp_path):
    model = MarlModel.init(3, np.random.default_rng(0))
    res = train(toy_factory(), model, Hyperparams(episodes=2, steps=5, batch_size=4), SelectionConfig(), seed=0)
    res.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "episode,mean_reward,mse_term,critic_loss,stress_mean,lr"
    assert len(lines) == 3
