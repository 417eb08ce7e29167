"""Small Soft Actor-Critic with pluggable reward sources.

The policy sees 9 low-dimensional features (gripper pose, velocity, latest
wrench). Each decision holds the action for ``action_repeat`` physics steps.
Rewards come from one of three sources evaluated on the post-decision state:

* ``dense``: learned task progress p(s') from a RewardModel
* ``handcrafted``: negative distance to the goal in task coordinates
* ``sparse``: 1 on success, else 0 (the episode ends on success)
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradnet as gn
from .errors import ConfigError, NumericError, TunnelingError, ValidationError
from .physim import Env, EnvState
from .physim import world

log = logging.getLogger(__name__)

SOURCES = ("dense", "handcrafted", "sparse")
FEATURE_DIM = 9
ACTION_DIM = 3
LOG_STD_MIN, LOG_STD_MAX = -10.0, 2.0
LOG_2PI = math.log(2.0 * math.pi)
_FEATURE_SCALE = np.array([1 / 0.3, 1 / 0.3, 1.0, 4.0, 4.0, 1.0, 0.1, 0.1, 1.0])


@dataclass(frozen=True)
class SacHyper:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    lr: float = 3e-4
    batch_size: int = 64
    warmup: int = 1000
    updates_per_step: int = 1
    hidden: int = 64
    buffer_size: int = 100_000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.lr <= 0 or self.batch_size < 1 or self.warmup < 0 or self.updates_per_step < 0:
            raise ConfigError("lr, batch_size, warmup and updates_per_step out of range")
        if self.hidden < 1 or self.buffer_size < 1:
            raise ConfigError("hidden and buffer_size must be positive")


def features(state: EnvState, wrench) -> np.ndarray:
    raw = np.concatenate([state.gripper_pose, state.gripper_vel, np.asarray(wrench, dtype=np.float64)[:3]])
    return raw * _FEATURE_SCALE


# ------------------------------------------------------------------ rewards


def goal_coordinates(kind: str) -> np.ndarray:
    g = world.goal_state(kind, eps=0.0)
    if kind == world.BLOCK:
        return np.array(g.poses[0, :2])
    return np.array(world.door_angles(g))


def task_coordinates(state: EnvState) -> np.ndarray:
    if state.kind == world.BLOCK:
        return np.array(state.poses[0, :2])
    return np.array(world.door_angles(state))


def handcrafted_reward(state: EnvState, goal: np.ndarray | None = None) -> float:
    """-||x_t - x_g||: block centre vs. its inserted position, or (door, handle) angle error."""
    goal = goal_coordinates(state.kind) if goal is None else goal
    return -float(np.linalg.norm(task_coordinates(state) - goal))


def sparse_reward(state: EnvState) -> float:
    return 1.0 if world.success(state) else 0.0


# ------------------------------------------------------------------ replay


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool

    def __post_init__(self):
        ok = (np.all(np.isfinite(self.state)) and np.all(np.isfinite(self.action))
              and math.isfinite(self.reward) and np.all(np.isfinite(self.next_state)))
        if not ok:
            raise ValidationError("transition contains non-finite values")


class ReplayBuffer:
    """Fixed-capacity ring buffer with its own sampling stream."""

    def __init__(self, capacity: int, seed: int = 0, dim: int = FEATURE_DIM):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self.s = np.zeros((capacity, dim))
        self.a = np.zeros((capacity, ACTION_DIM))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, dim))
        self.d = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i] = t.state, t.action, t.reward, t.next_state, t.done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int) -> np.ndarray:
        if self.size == 0:
            raise ValidationError("cannot sample from an empty buffer")
        return self.rng.integers(0, self.size, size=n)

    def sample(self, n: int) -> dict[str, np.ndarray]:
        idx = self.sample_indices(n)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "s2": self.s2[idx], "d": self.d[idx]}


# ------------------------------------------------------------------ networks


class MLP:
    def __init__(self, sizes: list[int], rng: np.random.Generator, zero_last: bool = False):
        n = len(sizes) - 1
        self.layers = [gn.Dense(a, b, rng, zero=zero_last and i == n - 1)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def __call__(self, x: gn.Tensor) -> gn.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = gn.relu(x)
        return x

    def parameters(self, prefix: str) -> dict[str, gn.Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.parameters(f"{prefix}.{i}"))
        return out


def squashed_sample(mean: gn.Tensor, log_std: gn.Tensor, eps: np.ndarray) -> tuple[gn.Tensor, gn.Tensor]:
    """Reparameterised tanh-Gaussian sample and its log-density (summed over actions)."""
    std = gn.exp(log_std)
    u = mean + std * eps
    a = gn.tanh(u)
    gauss = gn.sum(-0.5 * (eps * eps) - log_std - 0.5 * LOG_2PI, axis=1)
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
    correction = gn.sum((math.log(2.0) - u - gn.softplus(u * -2.0)) * 2.0, axis=1)
    return a, gauss - correction


class SacNets:
    def __init__(self, hyper: SacHyper, seed: int = 0, zero_critics: bool = False):
        rng = np.random.default_rng(seed)
        h = hyper.hidden
        self.actor = MLP([FEATURE_DIM, h, h, 2 * ACTION_DIM], rng)
        self.q1 = MLP([FEATURE_DIM + ACTION_DIM, h, h, 1], rng, zero_last=zero_critics)
        self.q2 = MLP([FEATURE_DIM + ACTION_DIM, h, h, 1], rng, zero_last=zero_critics)
        self.q1_target = MLP([FEATURE_DIM + ACTION_DIM, h, h, 1], rng)
        self.q2_target = MLP([FEATURE_DIM + ACTION_DIM, h, h, 1], rng)
        for live, tgt in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for (_, p), (_, t) in zip(live.parameters("").items(), tgt.parameters("").items()):
                t.data = p.data.copy()
        self.actor_opt = gn.OptimState(lr=hyper.lr)
        self.critic_opt = gn.OptimState(lr=hyper.lr)

    def actor_params(self) -> dict[str, gn.Tensor]:
        return self.actor.parameters("actor")

    def critic_params(self) -> dict[str, gn.Tensor]:
        return {**self.q1.parameters("q1"), **self.q2.parameters("q2")}

    def target_params(self) -> dict[str, gn.Tensor]:
        return {**self.q1_target.parameters("q1"), **self.q2_target.parameters("q2")}

    def all_params(self) -> dict[str, gn.Tensor]:
        return {**self.actor_params(), **self.critic_params(),
                **{f"target.{k}": v for k, v in self.target_params().items()}}

    def policy_head(self, s: np.ndarray) -> tuple[gn.Tensor, gn.Tensor]:
        out = self.actor(gn.as_tensor(s))
        return out[:, :ACTION_DIM], gn.clip(out[:, ACTION_DIM:], LOG_STD_MIN, LOG_STD_MAX)

    def act(self, feat: np.ndarray, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
        mean, log_std = self.policy_head(feat[None])
        if deterministic:
            return np.tanh(mean.data[0])
        eps = rng.standard_normal((1, ACTION_DIM))
        a, _ = squashed_sample(mean, log_std, eps)
        return a.data[0]


def _q(net: MLP, s, a) -> gn.Tensor:
    return net(gn.concat([gn.as_tensor(s), gn.as_tensor(a)], axis=1))[:, 0]


def critic_target(r, d, min_q_next, logp_next, gamma: float, alpha: float) -> np.ndarray:
    """y = r + gamma (1 - done) (min Q'(s', a') - alpha log pi(a'|s'))."""
    return np.asarray(r) + gamma * (1.0 - np.asarray(d)) * (np.asarray(min_q_next) - alpha * np.asarray(logp_next))


def polyak(live: dict[str, gn.Tensor], target: dict[str, gn.Tensor], tau: float) -> None:
    for (_, p), (_, t) in zip(live.items(), target.items()):
        t.data = tau * p.data + (1.0 - tau) * t.data


@dataclass
class UpdateReport:
    critic_loss: float
    actor_loss: float
    target_mean: float


def sac_update(nets: SacNets, batch: dict[str, np.ndarray], hyper: SacHyper,
               rng: np.random.Generator) -> UpdateReport:
    s, a, r, s2, d = batch["s"], batch["a"], batch["r"], batch["s2"], batch["d"]
    if len(s) < 1:
        raise ValidationError("empty batch")
    n = len(s)
    # critic target, no gradient
    mean2, log_std2 = nets.policy_head(s2)
    a2, logp2 = squashed_sample(mean2, log_std2, rng.standard_normal((n, ACTION_DIM)))
    qt = np.minimum(_q(nets.q1_target, s2, a2.data).data, _q(nets.q2_target, s2, a2.data).data)
    y = critic_target(r, d, qt, logp2.data, hyper.gamma, hyper.alpha)

    critic_loss = gn.mse(_q(nets.q1, s, a), gn.as_tensor(y)) + gn.mse(_q(nets.q2, s, a), gn.as_tensor(y))
    cparams = nets.critic_params()
    grads = gn.backward(critic_loss, accumulate=False)
    gn.adam_step(cparams, {k: grads.get(id(p), np.zeros_like(p.data)) for k, p in cparams.items()}, nets.critic_opt)

    mean, log_std = nets.policy_head(s)
    a_new, logp = squashed_sample(mean, log_std, rng.standard_normal((n, ACTION_DIM)))
    q_new = gn.minimum(_q(nets.q1, s, a_new), _q(nets.q2, s, a_new))
    actor_loss = gn.mean(logp * hyper.alpha - q_new)
    aparams = nets.actor_params()
    grads = gn.backward(actor_loss, accumulate=False)
    gn.adam_step(aparams, {k: grads.get(id(p), np.zeros_like(p.data)) for k, p in aparams.items()}, nets.actor_opt)

    polyak(cparams, nets.target_params(), hyper.tau)
    return UpdateReport(critic_loss.item(), actor_loss.item(), float(np.mean(y)))


# ------------------------------------------------------------------ episodes


@dataclass
class EpisodeStats:
    ret: float
    success: bool
    length: int
    truncated: bool = False  # physics failure
    rewards: list[float] = field(default_factory=list)


class RewardSource:
    """Computes the per-decision reward and whether success ends the episode."""

    def __init__(self, name: str, reward_model=None):
        if name not in SOURCES:
            raise ValidationError(f"unknown reward source {name!r}")
        if name == "dense" and reward_model is None:
            raise ValidationError("dense reward needs a reward model")
        self.name = name
        self.rm = reward_model
        self.terminal_on_success = name == "sparse"

    def __call__(self, state: EnvState, env: Env) -> float:
        if self.name == "sparse":
            return sparse_reward(state)
        if self.name == "handcrafted":
            return handcrafted_reward(state)
        return self.rm.progress_state(state)


def rollout_episode(
    env: Env,
    policy,
    source: RewardSource,
    horizon: int,
    action_repeat: int = 10,
    on_transition=None,
) -> EpisodeStats:
    """Run one episode from ``env``'s current state.

    ``policy(features) -> action``. Every transition is handed to
    ``on_transition(transition)`` before the next decision, which is where
    the learner inserts and updates.
    """
    if horizon < 1 or action_repeat < 1:
        raise ValidationError("horizon and action_repeat must be >= 1")
    wrench = np.zeros(3)
    feat = features(env.state, wrench)
    stats = EpisodeStats(0.0, False, 0)
    for _ in range(horizon):
        action = np.clip(np.asarray(policy(feat), dtype=np.float64), -1.0, 1.0)
        try:
            for _ in range(action_repeat):
                wrench = env.step_state(action)
        except (TunnelingError, ValidationError, NumericError) as exc:
            log.warning("episode truncated by physics failure: %s", exc)
            stats.truncated = True
            stats.length += 1
            if on_transition is not None:
                on_transition(Transition(feat, action, 0.0, feat, True))
            break
        reward = source(env.state, env)
        hit = bool(world.success(env.state))
        stats.success |= hit
        stats.ret += reward
        stats.rewards.append(reward)
        stats.length += 1
        nxt = features(env.state, wrench)
        done = hit and source.terminal_on_success
        if on_transition is not None:
            on_transition(Transition(feat, action, reward, nxt, done))
        feat = nxt
        if done:
            break
    return stats


# ------------------------------------------------------------------ training loop


@dataclass(frozen=True)
class RunSpec:
    kind: str = world.BLOCK
    source: str = "dense"
    seed: int = 0
    episodes: int = 500
    horizon: int = 50
    action_repeat: int = 10


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    success: bool
    length: int
    source: str
    seed: int


def episode_seed(seed: int, episode: int) -> int:
    """Environment seed for one episode; shared by every reward source."""
    ss = np.random.SeedSequence(seed, spawn_key=(episode,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def train_sac(spec: RunSpec, hyper: SacHyper, reward_model=None, progress=None) -> list[EpisodeRecord]:
    source = RewardSource(spec.source, reward_model)
    nets = SacNets(hyper, seed=spec.seed)
    buffer = ReplayBuffer(hyper.buffer_size, seed=spec.seed + 1)
    act_rng = np.random.default_rng([spec.seed, 2])
    upd_rng = np.random.default_rng([spec.seed, 3])
    env = Env(spec.kind)
    steps = 0
    records = []

    def policy(feat):
        if steps < hyper.warmup:
            return act_rng.uniform(-1.0, 1.0, ACTION_DIM)
        return nets.act(feat, act_rng)

    def learn(t: Transition):
        nonlocal steps
        buffer.add(t)
        steps += 1
        if steps >= hyper.warmup and len(buffer) >= hyper.batch_size:
            for _ in range(hyper.updates_per_step):
                sac_update(nets, buffer.sample(hyper.batch_size), hyper, upd_rng)

    for ep in range(spec.episodes):
        env.reset(episode_seed(spec.seed, ep))
        stats = rollout_episode(env, policy, source, spec.horizon, spec.action_repeat, learn)
        rec = EpisodeRecord(ep + 1, stats.ret, stats.success, stats.length, spec.source, spec.seed)
        records.append(rec)
        if progress is not None:
            progress(rec)
    return records


LOG_FIELDS = ("episode", "return", "success", "length", "source", "seed")


def write_log(path: str | Path, records: list[EpisodeRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in records:
            w.writerow([r.episode, repr(float(r.ret)), int(r.success), r.length, r.source, r.seed])


def read_log(path: str | Path) -> list[EpisodeRecord]:
    with open(path, newline="") as fh:
        return [EpisodeRecord(int(row["episode"]), float(row["return"]), row["success"] == "1",
                              int(row["length"]), row["source"], int(row["seed"]))
                for row in csv.DictReader(fh)]
