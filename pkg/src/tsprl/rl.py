"""Numpy Q-network, replay memory and the double-DQN update.

Networks are plain multilayer perceptrons with ReLU hidden layers and a linear
head, one output per signal phase. Gradients are written out by hand.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

MASK_VALUE = -1e9


class QNetwork:
    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases):
            raise ValueError("one bias per weight matrix")
        for W, b in zip(weights, biases):
            if W.shape[1] != b.shape[0]:
                raise ValueError("bias length must match layer width")
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "QNetwork":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes) -> "QNetwork":
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "QNetwork":
        return QNetwork([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def load_from(self, other: "QNetwork") -> None:
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def _forward(self, x: np.ndarray):
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            pre.append(z)
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return pre, acts

    def __call__(self, s) -> np.ndarray:
        return forward(self, s)

    def td_loss_and_grads(self, x: np.ndarray, actions: np.ndarray, y: np.ndarray,
                          loss: str = "mse"):
        """Mean squared (or Huber) TD error over a batch and its parameter gradients.

        Only the Q-value of the taken action contributes.
        """
        pre, acts = self._forward(x)
        q = acts[-1]
        B = x.shape[0]
        rows = np.arange(B)
        err = q[rows, actions] - y
        if loss == "mse":
            value = float(np.mean(err ** 2))
            derr = 2.0 * err / B
        elif loss == "huber":
            a = np.abs(err)
            value = float(np.mean(np.where(a <= 1.0, 0.5 * err ** 2, a - 0.5)))
            derr = np.clip(err, -1.0, 1.0) / B
        else:
            raise ValueError(f"unknown loss {loss!r}")
        delta = np.zeros_like(q)
        delta[rows, actions] = derr
        grads_W = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_W[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * (pre[i - 1] > 0)
        grads = []
        for gW, gb in zip(grads_W, grads_b):
            grads += [gW, gb]
        return value, grads


def forward(net: QNetwork, s) -> np.ndarray:
    """Q-values for one observation (shape ``(n_in,)``) or a batch ``(B, n_in)``."""
    x = np.asarray(s, dtype=np.float64)
    if x.shape[-1] != net.n_in:
        raise ValueError(f"observation has {x.shape[-1]} entries, network expects {net.n_in}")
    h = x
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W + b
        if i != last:
            h = np.maximum(h, 0.0)
    return h


# ---------------------------------------------------------------- replay


class Experience(NamedTuple):
    s: np.ndarray
    a: int
    s_next: np.ndarray
    r: float
    done: bool = False


class ReplayBuffer:
    """FIFO experience store; pushing at capacity drops the oldest entry."""

    def __init__(self, capacity: int = 2000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque[Experience] = deque(maxlen=capacity)

    def push(self, e: Experience) -> "ReplayBuffer":
        if not 0 <= e.a < 4:
            raise ValueError(f"action {e.a} out of range")
        if np.shape(e.s) != np.shape(e.s_next):
            raise ValueError("s and s_next must have the same dimension")
        self._items.append(e)
        return self

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i: int) -> Experience:
        return self._items[i]

    def sample_indices(self, k: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, len(self._items), size=k)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        items = [self._items[i] for i in idx]
        s = np.stack([e.s for e in items])
        a = np.array([e.a for e in items], dtype=np.int64)
        s2 = np.stack([e.s_next for e in items])
        r = np.array([e.r for e in items], dtype=np.float64)
        done = np.array([e.done for e in items], dtype=bool)
        return s, a, s2, r, done


def push_experience(buffer: ReplayBuffer, e: Experience) -> ReplayBuffer:
    return buffer.push(e)


# ------------------------------------------------------------ acting


def mask_invalid(q, active_phase: int, green_elapsed_s: float, max_green_s: float) -> np.ndarray:
    """Forbid extending the active phase once it has reached max green."""
    q = np.array(q, dtype=np.float64)
    if green_elapsed_s >= max_green_s - 1e-9:
        q[active_phase] = MASK_VALUE
    return q


def select_action(q_masked, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the unmasked actions; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    q = np.asarray(q_masked)
    allowed = np.nonzero(q > MASK_VALUE / 2)[0]
    if allowed.size == 0:
        raise ValueError("every action is masked")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(allowed[rng.integers(allowed.size)])
    return int(np.argmax(q))


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.01
    gamma: float = 0.99
    epsilon_decay_rate: float = 0.01
    epsilon_min: float = 0.01
    minibatch_size: int = 32
    max_minibatches: int = 64
    buffer_capacity: int = 2000
    target_sync_every: int = 10
    target_rule: str = "decoupled"  # or "coupled"
    optimizer: str = "sgd"  # "sgd", "momentum" or "adam"
    momentum: float = 0.9
    loss: str = "mse"  # or "huber"
    grad_clip: float = 0.0  # global-norm clip; 0 disables
    reward_scale: float = 1.0
    normalize_obs: bool = False
    hidden: tuple[int, ...] = (64, 128)
    # The TSP transition that ends at bus check-out does not bootstrap.
    terminal_on_checkout: bool = True

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.target_sync_every < 1:
            raise ValueError("target_sync_every must be >= 1")
        if self.target_rule not in ("decoupled", "coupled"):
            raise ValueError(f"unknown target_rule {self.target_rule!r}")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def epsilon_for_episode(e: int, cfg: TrainerConfig = TrainerConfig()) -> float:
    if e < 0:
        raise ValueError("episode index must be >= 0")
    return cfg.epsilon_min + (1.0 - cfg.epsilon_min) * math.exp(-cfg.epsilon_decay_rate * e)


def ddqn_targets(r, s_next, main: QNetwork, target: QNetwork, cfg: TrainerConfig,
                 done=None) -> np.ndarray:
    """Bootstrapped regression targets for a batch.

    ``decoupled``: the main net picks the next action and the target net
    scores it. ``coupled``: the target net's own maximum.
    """
    r = np.asarray(r, dtype=np.float64)
    q_t = forward(target, s_next)
    if cfg.target_rule == "decoupled":
        a_star = np.argmax(forward(main, s_next), axis=-1)
        boot = np.take_along_axis(q_t, a_star[..., None], axis=-1)[..., 0]
    else:
        boot = q_t.max(axis=-1)
    if done is not None:
        boot = np.where(np.asarray(done, dtype=bool), 0.0, boot)
    return r + cfg.gamma * boot


# -------------------------------------------------------------- optimisers


class Optimizer:
    def __init__(self, cfg: TrainerConfig, params: list[np.ndarray]):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params] if cfg.optimizer != "sgd" else []
        self.v = [np.zeros_like(p) for p in params] if cfg.optimizer == "adam" else []

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        lr = cfg.learning_rate
        if cfg.grad_clip > 0:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > cfg.grad_clip:
                grads = [g * (cfg.grad_clip / norm) for g in grads]
        self.t += 1
        if cfg.optimizer == "sgd":
            for p, g in zip(params, grads):
                p -= lr * g
        elif cfg.optimizer == "momentum":
            for p, g, m in zip(params, grads, self.m):
                m *= cfg.momentum
                m += g
                p -= lr * m
        else:
            b1, b2, eps = 0.9, 0.999, 1e-8
            c1 = 1.0 - b1 ** self.t
            c2 = 1.0 - b2 ** self.t
            for p, g, m, v in zip(params, grads, self.m, self.v):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)

    def state(self) -> list[np.ndarray]:
        return [np.array([float(self.t)])] + self.m + self.v

    def load_state(self, arrays: list[np.ndarray]) -> None:
        self.t = int(arrays[0][0])
        n = len(self.m)
        for dst, src in zip(self.m + self.v, arrays[1:]):
            dst[...] = src
        if len(arrays) - 1 != n + len(self.v):
            raise ValueError("optimizer state does not match the configuration")


# ----------------------------------------------------------------- trainer


class DDQNTrainer:
    """Owns the main/target pair, the replay memory and the learning RNG."""

    def __init__(self, n_in: int, cfg: TrainerConfig, rng: np.random.Generator,
                 obs_scale: np.ndarray | None = None):
        self.cfg = cfg
        self.rng = rng
        self.main = QNetwork.init([n_in, *cfg.hidden, 4], rng)
        self.target = self.main.copy()
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.optimizer = Optimizer(cfg, self.main.params())
        self.episodes_trained = 0
        self.obs_scale = obs_scale if obs_scale is not None else np.ones(n_in)

    def preprocess(self, s: np.ndarray) -> np.ndarray:
        return s * self.obs_scale if self.cfg.normalize_obs else s

    def q_values(self, s: np.ndarray) -> np.ndarray:
        return forward(self.main, self.preprocess(s))

    def sync_target(self) -> None:
        self.target.load_from(self.main)

    def train_end_of_episode(self) -> float | None:
        """Minibatch updates after an episode; returns the mean loss."""
        return train_end_of_episode(self)


def train_end_of_episode(trainer: DDQNTrainer) -> float | None:
    cfg = trainer.cfg
    buf = trainer.buffer
    losses = []
    if len(buf) == 0:
        log.warning("replay buffer is empty; skipping training")
    else:
        k = min(math.ceil(len(buf) / cfg.minibatch_size), cfg.max_minibatches)
        params = trainer.main.params()
        for _ in range(k):
            idx = buf.sample_indices(cfg.minibatch_size, trainer.rng)
            s, a, s2, r, done = buf.batch(idx)
            s, s2 = trainer.preprocess(s), trainer.preprocess(s2)
            y = ddqn_targets(r * cfg.reward_scale, s2, trainer.main, trainer.target, cfg, done)
            value, grads = trainer.main.td_loss_and_grads(s, a, y, cfg.loss)
            trainer.optimizer.step(params, grads)
            losses.append(value)
    trainer.episodes_trained += 1
    if trainer.episodes_trained % cfg.target_sync_every == 0:
        trainer.sync_target()
    return float(np.mean(losses)) if losses else None
