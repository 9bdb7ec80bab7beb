import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsprl.rl import (
    MASK_VALUE, DDQNTrainer, Experience, QNetwork, ReplayBuffer, TrainerConfig, ddqn_targets,
    epsilon_for_episode, forward, mask_invalid, push_experience, select_action,
    train_end_of_episode,
)


def _rng(seed=0):
    return np.random.default_rng(seed)


# ------------------------------------------------------------- forward

def test_zero_network_outputs_zero():
    net = QNetwork.zeros([14, 64, 128, 4])
    s = _rng().normal(size=14) * 50
    assert forward(net, s).tolist() == [0.0, 0.0, 0.0, 0.0]


def test_handcrafted_network():
    # 2 inputs -> 1 relu unit -> 4 outputs.
    W1 = np.array([[1.0], [-2.0]])
    b1 = np.array([0.5])
    W2 = np.array([[1.0, -1.0, 0.25, 3.0]])
    b2 = np.array([0.0, 1.0, -1.0, 0.125])
    net = QNetwork([W1, W2], [b1, b2])
    h = max(0.0, 3.0 * 1.0 + 1.0 * -2.0 + 0.5)  # 1.5
    expected = [h * 1.0, -h + 1.0, 0.25 * h - 1.0, 3.0 * h + 0.125]
    assert np.allclose(forward(net, [3.0, 1.0]), expected, rtol=0, atol=1e-12)
    # Negative pre-activation is cut.
    assert np.allclose(forward(net, [0.0, 1.0]), b2, rtol=0, atol=1e-12)


def test_forward_is_deterministic_and_checks_dimension():
    net = QNetwork.init([78, 64, 128, 4], _rng(1))
    s = _rng(2).normal(size=78)
    assert np.array_equal(forward(net, s), forward(net, s))
    assert net.sizes == [78, 64, 128, 4]
    with pytest.raises(ValueError):
        forward(net, np.zeros(14))


def test_glorot_bounds():
    net = QNetwork.init([14, 64, 128, 4], _rng(3))
    for W in net.weights:
        lim = math.sqrt(6.0 / sum(W.shape))
        assert np.abs(W).max() <= lim
    assert all(not b.any() for b in net.biases)


# ------------------------------------------------------------ gradients

def _numeric_check(net, x, a, y, n_samples, rng, h=1e-5):
    _, grads = net.td_loss_and_grads(x, a, y)
    params = net.params()
    worst = 0.0
    for _ in range(n_samples):
        k = rng.integers(len(params))
        idx = tuple(rng.integers(d) for d in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + h
        lp, _ = net.td_loss_and_grads(x, a, y)
        params[k][idx] = old - h
        lm, _ = net.td_loss_and_grads(x, a, y)
        params[k][idx] = old
        num = (lp - lm) / (2 * h)
        ana = grads[k][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-7))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    rng = _rng(seed)
    sizes = [int(rng.integers(2, 8)), int(rng.integers(3, 10)), int(rng.integers(3, 10)), 4]
    net = QNetwork.init(sizes, rng)
    for b in net.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    x = rng.normal(size=(6, sizes[0]))
    a = rng.integers(0, 4, size=6)
    y = rng.normal(size=6)
    assert _numeric_check(net, x, a, y, 40, rng) < 1e-4


# ----------------------------------------------------------- targets

def _linear_net(W, b):
    return QNetwork([np.asarray(W, float)], [np.asarray(b, float)])


def test_ddqn_target_example():
    # One-input linear nets with s' = 1 give the listed Q-values directly.
    main = _linear_net([[1.0, 2.0, 0.0, 0.0]], [0, 0, 0, 0])
    target = _linear_net([[0.5, 1.5, 0.0, 0.0]], [0, 0, 0, 0])
    y = ddqn_targets([-5.0], np.array([[1.0]]), main, target, TrainerConfig())
    assert y[0] == pytest.approx(-3.515, abs=1e-12)


def test_ddqn_target_edge_cases():
    rng = _rng(4)
    main = QNetwork.init([3, 5, 4], rng)
    target = QNetwork.init([3, 5, 4], rng)
    s2 = rng.normal(size=(7, 3))
    r = rng.normal(size=7)
    cfg0 = TrainerConfig(gamma=0.5)
    assert np.allclose(ddqn_targets(r, s2, main, QNetwork.zeros([3, 5, 4]), cfg0), r, atol=0)
    with pytest.raises(ValueError):
        TrainerConfig(gamma=0.0)
    # Terminal transitions, when flagged, do not bootstrap.
    done = np.ones(7, dtype=bool)
    assert np.array_equal(ddqn_targets(r, s2, main, target, TrainerConfig(), done), r)


def test_decoupled_and_coupled_rules_differ():
    main = _linear_net([[0.0, 0.0, 1.0, 0.0]], [0, 0, 0, 0])
    target = _linear_net([[3.0, 0.0, 1.0, 0.0]], [0, 0, 0, 0])
    s2 = np.array([[1.0]])
    dec = ddqn_targets([0.0], s2, main, target, TrainerConfig(gamma=0.5))
    cou = ddqn_targets([0.0], s2, main, target, TrainerConfig(gamma=0.5, target_rule="coupled"))
    assert dec[0] == 0.5 and cou[0] == 1.5


# ------------------------------------------------------------- masking

def test_mask_examples():
    q = [0.4, 0.1, 0.2, 0.3]
    masked = mask_invalid(q, 0, 35.7, 35.7)
    assert int(np.argmax(masked)) == 3 and masked[0] == MASK_VALUE
    assert mask_invalid(q, 0, 20.0, 35.7).tolist() == q


def test_mask_all_equal_never_selects_masked():
    rng = _rng(5)
    for _ in range(10_000):
        q = mask_invalid(np.full(4, rng.normal()), 2, 50.0, 50.0)
        assert select_action(q, float(rng.random()), rng) != 2


@given(q=st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4), phase=st.integers(0, 3),
       eps=st.floats(0, 1), seed=st.integers(0, 2**32 - 1))
def test_masked_action_never_selected(q, phase, eps, seed):
    rng = _rng(seed)
    qm = mask_invalid(q, phase, 10.0, 10.0)
    for _ in range(20):
        assert select_action(qm, eps, rng) != phase


def test_select_action_greedy():
    assert select_action([1.0, 1.0, 2.0, 0.0], 0.0, _rng()) == 2
    assert select_action([1.0, 1.0, 0.0, 0.0], 0.0, _rng()) == 0


def test_select_action_uniform_over_unmasked():
    rng = _rng(6)
    q = [0.0, MASK_VALUE, 5.0, 1.0]
    n = 100_000
    counts = np.bincount([select_action(q, 1.0, rng) for _ in range(n)], minlength=4)
    assert counts[1] == 0
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    for k in (0, 2, 3):
        assert abs(counts[k] - n / 3) <= 3 * sigma


def test_select_action_rejects_bad_input():
    with pytest.raises(ValueError):
        select_action([0, 0, 0, 0], 1.5, _rng())
    with pytest.raises(ValueError):
        select_action([MASK_VALUE] * 4, 0.0, _rng())


# ------------------------------------------------------------- epsilon

def test_epsilon_schedule():
    cfg = TrainerConfig()
    assert epsilon_for_episode(0, cfg) == 1.0
    assert epsilon_for_episode(100, cfg) == pytest.approx(0.01 + 0.99 * math.exp(-1), abs=1e-12)
    assert epsilon_for_episode(100, cfg) == pytest.approx(0.3742, abs=1e-4)
    assert epsilon_for_episode(100_000, cfg) == pytest.approx(0.01, abs=1e-12)
    with pytest.raises(ValueError):
        epsilon_for_episode(-1, cfg)


# -------------------------------------------------------------- buffer

def _exp(i, dim=3, a=None):
    s = np.full(dim, float(i))
    return Experience(s, i % 4 if a is None else a, s + 1, float(-i))


def test_buffer_push_and_evict():
    buf = ReplayBuffer(2000)
    push_experience(buf, _exp(0))
    assert len(buf) == 1
    for i in range(1, 2001):
        push_experience(buf, _exp(i))
    assert len(buf) == 2000
    assert buf[0].r == -1.0 and all(e.r != 0.0 for e in buf)


@given(st.lists(st.integers(0, 10**6), max_size=300), st.integers(1, 50))
def test_buffer_fifo_matches_reference(items, cap):
    buf = ReplayBuffer(cap)
    ref = deque()
    for i in items:
        buf.push(_exp(i))
        ref.append(i)
        if len(ref) > cap:
            ref.popleft()
        assert [int(e.s[0]) for e in buf] == list(ref)


def test_buffer_rejects_bad_experience():
    buf = ReplayBuffer(4)
    with pytest.raises(ValueError):
        buf.push(_exp(1, a=4))
    with pytest.raises(ValueError):
        buf.push(Experience(np.zeros(3), 0, np.zeros(4), 0.0))


# ------------------------------------------------------------- training

def _trainer(seed=0, n_in=5, **kw):
    cfg = TrainerConfig(hidden=(6, 7), **kw)
    return DDQNTrainer(n_in, cfg, _rng(seed))


def test_zero_error_fixed_point():
    tr = _trainer()
    s = np.linspace(0.1, 0.5, 5)
    s2 = s[::-1].copy()
    a = 2
    q_s = forward(tr.main, s)[a]
    a_star = int(np.argmax(forward(tr.main, s2)))
    r = q_s - tr.cfg.gamma * forward(tr.target, s2)[a_star]
    for _ in range(50):
        tr.buffer.push(Experience(s, a, s2, r))
    before = [p.copy() for p in tr.main.params()]
    train_end_of_episode(tr)
    for p, q in zip(before, tr.main.params()):
        assert np.allclose(p, q, rtol=0, atol=1e-12)


def test_single_step_reduces_loss():
    tr = _trainer(seed=1, learning_rate=0.001, max_minibatches=1)
    e = Experience(np.array([1.0, -0.5, 0.2, 0.3, 2.0]), 1, np.zeros(5), 3.0)
    tr.buffer.push(e)
    y = ddqn_targets([e.r], e.s_next[None], tr.main, tr.target, tr.cfg)
    before, _ = tr.main.td_loss_and_grads(e.s[None], np.array([1]), y)
    train_end_of_episode(tr)
    after, _ = tr.main.td_loss_and_grads(e.s[None], np.array([1]), y)
    assert after < before


def test_target_sync_every_ten_episodes():
    tr = _trainer(seed=2)
    for i in range(20):
        tr.buffer.push(_exp(i, dim=5))
    probes = _rng(9).normal(size=(30, 5))
    for ep in range(1, 31):
        train_end_of_episode(tr)
        same = np.array_equal(forward(tr.target, probes), forward(tr.main, probes))
        assert same == (ep % 10 == 0)


def test_empty_buffer_is_a_noop(caplog):
    tr = _trainer()
    before = [p.copy() for p in tr.main.params()]
    assert train_end_of_episode(tr) is None
    assert all(np.array_equal(p, q) for p, q in zip(before, tr.main.params()))
    assert "empty" in caplog.text


def test_minibatch_count():
    tr = _trainer(seed=3)
    calls = []
    orig = tr.buffer.sample_indices

    def spy(k, rng):
        calls.append(k)
        return orig(k, rng)
    tr.buffer.sample_indices = spy
    for i in range(65):
        tr.buffer.push(_exp(i, dim=5))
    train_end_of_episode(tr)
    assert calls == [32, 32, 32]


@pytest.mark.parametrize("optimizer", ["sgd", "momentum", "adam"])
def test_seeded_training_is_reproducible(optimizer):
    def run():
        tr = _trainer(seed=7, optimizer=optimizer)
        rng = _rng(8)
        for ep in range(12):
            for _ in range(10):
                tr.buffer.push(Experience(rng.normal(size=5), int(rng.integers(4)),
                                          rng.normal(size=5), float(rng.normal())))
            train_end_of_episode(tr)
        return tr.main.params()
    assert all(np.array_equal(p, q) for p, q in zip(run(), run()))
