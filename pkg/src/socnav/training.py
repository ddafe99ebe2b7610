"""Two-phase value learning: imitation warm start from ORCA demonstrations,
then temporal-difference refinement with experience replay, an epsilon-greedy
lookahead policy, and a periodically synchronized target network.

All randomness flows from numpy SeedSequence streams derived from one run
seed, so a (seed, config) pair reproduces training bitwise in single-threaded
mode, and a checkpoint (parameters, optimizer moments, replay contents, RNG
state) resumes it bitwise.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .errors import CheckpointError, TrainingError, UsageError
from .model import ValueNetConfig, ValueNetwork
from .nn import AdamState, adam_step
from .policies import OrcaPolicy
from .serialize import read_blocks, write_blocks
from .sim import CrowdSim, FullState, JointState, ObservableState, ScenarioConfig

# seed-stream tags: one master seed fans out into independent generators
STREAM_DEMO = 1      # demonstration episode scenarios
STREAM_IL = 2        # imitation-learning shuffling
STREAM_ACT = 3       # epsilon-greedy draws and replay sampling
STREAM_RL_EP = 4     # per-episode training scenarios

DEMO_FORMAT = "socnav-demos"
DEMO_VERSION = 1
TRAINSTATE_FORMAT = "socnav-train-state"
TRAINSTATE_VERSION = 1
TRAIN_LOG_FORMAT = "socnav-train-log"
TRAIN_LOG_VERSION = 1


@dataclass
class TrainConfig:
    gamma: float = 0.9
    il_episodes: int = 3000
    il_epochs: int = 50
    il_lr: float = 0.01
    rl_episodes: int = 10000
    rl_lr: float = 0.001
    eps_start: float = 0.5
    eps_end: float = 0.1
    eps_decay_episodes: int = 5000
    batch_size: int = 100
    target_update_interval: int = 50
    replay_capacity: int = 100_000
    checkpoint_interval: int = 500
    demo_margin: float = 0.1  # ORCA demonstrator comfort margin

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise UsageError("gamma must be in (0, 1)")
        if not (0.0 <= self.eps_end <= self.eps_start <= 1.0):
            raise UsageError("need 0 <= eps_end <= eps_start <= 1")


def epsilon_at(episode: int, cfg: TrainConfig) -> float:
    """Piecewise-linear exploration schedule (exact arithmetic)."""
    if episode >= cfg.eps_decay_episodes:
        return cfg.eps_end
    frac = episode / cfg.eps_decay_episodes
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def build_action_space(v_pref: float) -> np.ndarray:
    """80 velocities: 5 speeds exponentially spaced over (0, v_pref] times 16
    evenly spaced headings; speed-major, heading-minor order."""
    if v_pref <= 0:
        raise UsageError("v_pref must be positive")
    speeds = [v_pref * (math.exp(k / 5.0) - 1.0) / (math.e - 1.0)
              for k in range(1, 6)]
    headings = [2.0 * math.pi * j / 16.0 for j in range(16)]
    return np.array([(s * math.cos(t), s * math.sin(t))
                     for s in speeds for t in headings])


@dataclass(frozen=True)
class Experience:
    """Replay entry: either a regression pair from demonstrations (kind "il",
    value target precomputed from the realized return) or a transition tuple
    from interaction (kind "rl")."""

    kind: str
    state: JointState
    target: float = 0.0            # il only
    reward: float = 0.0            # rl only
    next_state: JointState | None = None
    terminal: bool = False

    def __post_init__(self):
        if self.kind not in ("il", "rl"):
            raise UsageError(f"unknown experience kind {self.kind!r}")
        if self.kind == "rl" and not self.terminal and self.next_state is None:
            raise UsageError("non-terminal transition needs a next state")


class ReplayMemory:
    """Bounded FIFO with uniform sampling (without replacement)."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise UsageError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Experience] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, exp: Experience) -> None:
        self._items.append(exp)

    def extend(self, exps) -> None:
        for e in exps:
            self.push(e)

    def sample(self, k: int, rng: np.random.Generator) -> list[Experience]:
        k = min(k, len(self._items))
        if k == 0:
            raise UsageError("cannot sample from an empty replay memory")
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[int(i)] for i in idx]

    def __iter__(self):
        return iter(self._items)


def discounted_return(rewards: list[float], gamma: float, delta: float) -> float:
    """Return accumulated from episode start; the reward of step k is received
    at time (k+1)*dt and discounted by gamma^((k+1)*dt*v_pref)."""
    return sum(r * gamma ** ((k + 1) * delta) for k, r in enumerate(rewards))


def episode_value_targets(rewards: list[float], gamma: float, delta: float
                          ) -> list[float]:
    """Realized discounted return seen from every visited (non-terminal)
    state: G_k = gamma^delta * (r_k + G_{k+1})."""
    targets = [0.0] * len(rewards)
    g = 0.0
    for k in range(len(rewards) - 1, -1, -1):
        g = gamma ** delta * (rewards[k] + g)
        targets[k] = g
    return targets


def collect_demonstrations(scenario: ScenarioConfig, n_episodes: int, seed: int,
                           gamma: float = 0.9, margin: float = 0.1,
                           ) -> tuple[list[Experience], list[dict]]:
    """Roll out the ORCA demonstrator in the visible setting and annotate every
    visited state with its realized discounted return."""
    if n_episodes <= 0:
        raise UsageError("n_episodes must be positive")
    cfg = replace(scenario, robot_visible=True)
    policy = OrcaPolicy(margin=margin)
    experiences: list[Experience] = []
    stats: list[dict] = []
    for ep in range(n_episodes):
        env = CrowdSim(cfg)
        env.reset(np.random.SeedSequence((seed, STREAM_DEMO, ep)))
        delta = env.dt * env.joint_state().robot.v_pref
        states, rewards = [], []
        while not env.done:
            states.append(env.joint_state())
            rewards.append(env.step(policy.act(env)).reward)
        targets = episode_value_targets(rewards, gamma, delta)
        experiences.extend(
            Experience("il", s, target=t) for s, t in zip(states, targets))
        stats.append({"episode": ep, "steps": len(rewards), "outcome": env.event,
                      "return": discounted_return(rewards, gamma, delta)})
    return experiences, stats


# -- batched loss/gradient plumbing -------------------------------------------


def _batch_forward(net: ValueNetwork, joints: list[JointState]):
    """Grouped forward pass; returns (values, [(indices, cache), ...])."""
    groups: dict[int, list[int]] = {}
    feats = []
    for i, j in enumerate(joints):
        feats.append(net.featurize(j))
        groups.setdefault(j.n_humans, []).append(i)
    values = np.empty(len(joints))
    caches = []
    for n, idx in groups.items():
        S = np.stack([feats[i][0] for i in idx])
        W = np.stack([feats[i][1] for i in idx])
        M = np.stack([feats[i][2] for i in idx]) if net.config.use_local_maps else None
        v, _, cache = net.forward_group(S, W, M)
        values[idx] = v
        caches.append((idx, cache))
    return values, caches


def mse_step(net: ValueNetwork, joints: list[JointState], targets: np.ndarray,
             adam: AdamState, lr: float) -> tuple[float, AdamState]:
    """One Adam step on the mean squared error of V(joints) vs targets."""
    values, caches = _batch_forward(net, joints)
    diff = values - targets
    loss = float(np.mean(diff ** 2))
    if not math.isfinite(loss):
        raise TrainingError("non-finite training loss")
    dv = 2.0 * diff / len(joints)
    total = None
    for idx, cache in caches:
        grads, _ = net.backward_group(cache, dv[idx])
        total = grads if total is None else [a + b for a, b in zip(total, grads)]
    params, adam = adam_step(net.param_arrays(), total, adam, lr)
    net.set_param_arrays(params)
    return loss, adam


def td_targets(target_net: ValueNetwork, batch: list[Experience],
               gamma: float) -> np.ndarray:
    """Regression target per experience: the stored return for demonstration
    entries; r + gamma^(dt*v_pref) * V_target(s') for transitions (r alone at
    terminals)."""
    y = np.empty(len(batch))
    boot_idx, boot_states, boot_disc = [], [], []
    for i, exp in enumerate(batch):
        if exp.kind == "il":
            y[i] = exp.target
        elif exp.terminal:
            y[i] = exp.reward
        else:
            y[i] = exp.reward
            dt = exp.next_state.time - exp.state.time
            boot_idx.append(i)
            boot_states.append(exp.next_state)
            boot_disc.append(gamma ** (dt * exp.state.robot.v_pref))
    if boot_idx:
        next_v = target_net.values(boot_states)
        for j, i in enumerate(boot_idx):
            y[i] += boot_disc[j] * next_v[j]
    return y


def td_update(net: ValueNetwork, target_net: ValueNetwork,
              batch: list[Experience], gamma: float, adam: AdamState,
              lr: float) -> tuple[float, AdamState]:
    """One TD regression step on a replay minibatch."""
    if not batch:
        raise UsageError("empty minibatch")
    y = td_targets(target_net, batch, gamma)
    return mse_step(net, [e.state for e in batch], y, adam, lr)


def imitation_learning(net: ValueNetwork, demos: list[Experience],
                       cfg: TrainConfig, seed: int) -> list[float]:
    """Regress V onto demonstration returns; returns per-epoch mean loss."""
    if not demos:
        raise UsageError("empty demonstration set")
    if any(d.kind != "il" for d in demos):
        raise UsageError("demonstration set must contain il experiences only")
    adam = AdamState.for_params(net.param_arrays())
    rng = np.random.default_rng(np.random.SeedSequence((seed, STREAM_IL)))
    targets = np.array([d.target for d in demos])
    losses = []
    for _ in range(cfg.il_epochs):
        order = rng.permutation(len(demos))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss, adam = mse_step(net, [demos[i].state for i in idx],
                                  targets[idx], adam, cfg.il_lr)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
    return losses


def select_action(net: ValueNetwork, env, actions: np.ndarray, epsilon: float,
                  rng: np.random.Generator | None, gamma: float
                  ) -> tuple[int, tuple[float, float]]:
    """Epsilon-greedy one-step-lookahead argmax over the action set.

    Ties break toward the lowest action index (np.argmax takes the first
    maximum), which keeps greedy evaluation deterministic.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise UsageError("epsilon must be in [0, 1]")
    if epsilon > 0.0:
        if rng is None:
            raise UsageError("exploration needs an rng")
        if rng.random() < epsilon:
            i = int(rng.integers(len(actions)))
            return i, (float(actions[i, 0]), float(actions[i, 1]))
    values = net.values_of_actions(env, actions, gamma)
    i = int(np.argmax(values))
    return i, (float(actions[i, 0]), float(actions[i, 1]))


# -- the RL phase --------------------------------------------------------------


class RLTrainer:
    """Owns the full mutable training state so runs can checkpoint and resume
    bitwise: online and target networks, Adam moments, replay memory, RNG."""

    def __init__(self, net: ValueNetwork, scenario: ScenarioConfig,
                 cfg: TrainConfig, seed: int):
        self.net = net
        self.scenario = scenario
        self.cfg = cfg
        self.seed = seed
        self.target = net.copy()
        self.adam = AdamState.for_params(net.param_arrays())
        self.replay = ReplayMemory(cfg.replay_capacity)
        self.rng = np.random.default_rng(np.random.SeedSequence((seed, STREAM_ACT)))
        self.episode = 0

    def seed_replay(self, demos: list[Experience]) -> None:
        self.replay.extend(demos)

    def run_episode(self) -> dict:
        """One training episode; returns its log record."""
        e = self.episode
        cfg = self.cfg
        eps = epsilon_at(e, cfg)
        env = CrowdSim(self.scenario)
        env.reset(np.random.SeedSequence((self.seed, STREAM_RL_EP, e)))
        robot = env.joint_state().robot
        actions = build_action_space(robot.v_pref)
        delta = env.dt * robot.v_pref
        rewards, losses = [], []
        while not env.done:
            state = env.joint_state()
            _, action = select_action(self.net, env, actions, eps, self.rng,
                                      cfg.gamma)
            out = env.step(action)
            rewards.append(out.reward)
            self.replay.push(Experience(
                "rl", state, reward=out.reward,
                next_state=None if out.terminal else out.next_state,
                terminal=out.terminal))
            if e >= 1 and len(self.replay) > 0:  # one-episode warm-up
                batch = self.replay.sample(cfg.batch_size, self.rng)
                loss, self.adam = td_update(self.net, self.target, batch,
                                            cfg.gamma, self.adam, cfg.rl_lr)
                losses.append(loss)
        self.episode += 1
        if self.episode % cfg.target_update_interval == 0:
            self.target = self.net.copy()
        return {
            "episode": e,
            "return": discounted_return(rewards, cfg.gamma, delta),
            "outcome": env.event,
            "steps": len(rewards),
            "epsilon": eps,
            "loss_mean": float(np.mean(losses)) if losses else None,
        }

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "format": TRAINSTATE_FORMAT,
            "version": TRAINSTATE_VERSION,
            "episode": self.episode,
            "seed": self.seed,
            "adam_t": self.adam.t,
            "rng_state": self.rng.bit_generator.state,
            "net_config": json.loads(json.dumps(vars_config(self.net.config))),
            "scenario": vars_config(self.scenario),
            "train": vars_config(self.cfg),
        }
        blocks = []
        for i, arr in enumerate(self.net.param_arrays()):
            blocks.append((f"net/{i}", arr))
        for i, arr in enumerate(self.target.param_arrays()):
            blocks.append((f"target/{i}", arr))
        for i, arr in enumerate(self.adam.m):
            blocks.append((f"adam_m/{i}", arr))
        for i, arr in enumerate(self.adam.v):
            blocks.append((f"adam_v/{i}", arr))
        kinds, scalars, flat, offsets = pack_experiences(list(self.replay))
        blocks += [("replay/kinds", kinds), ("replay/scalars", scalars),
                   ("replay/states", flat), ("replay/offsets", offsets)]
        write_blocks(path, meta, blocks)

    @classmethod
    def load(cls, path, expect_scenario: ScenarioConfig | None = None,
             expect_train: TrainConfig | None = None) -> "RLTrainer":
        meta, arrays = read_blocks(path)
        if meta.get("format") != TRAINSTATE_FORMAT:
            raise CheckpointError(f"{path}: not a training checkpoint")
        if meta.get("version") != TRAINSTATE_VERSION:
            raise CheckpointError(f"{path}: unsupported training-state version")
        scenario = ScenarioConfig(**_detuple(meta["scenario"]))
        cfg = TrainConfig(**_detuple(meta["train"]))
        for expect, got, what in ((expect_scenario, scenario, "scenario"),
                                  (expect_train, cfg, "train")):
            if expect is not None and vars_config(expect) != vars_config(got):
                raise CheckpointError(f"{path}: {what} config does not match")
        net_cfg = ValueNetConfig(**_detuple(meta["net_config"]))
        net = ValueNetwork.init(net_cfg, seed=0)
        n_params = len(net.param_arrays())
        net.set_param_arrays([arrays[f"net/{i}"] for i in range(n_params)])
        trainer = cls(net, scenario, cfg, meta["seed"])
        trainer.target.set_param_arrays(
            [arrays[f"target/{i}"] for i in range(n_params)])
        trainer.adam = AdamState(
            m=[arrays[f"adam_m/{i}"] for i in range(n_params)],
            v=[arrays[f"adam_v/{i}"] for i in range(n_params)],
            t=meta["adam_t"])
        state = meta["rng_state"]
        state["state"] = {k: int(v) for k, v in state["state"].items()}
        trainer.rng.bit_generator.state = state
        trainer.episode = meta["episode"]
        trainer.replay = ReplayMemory(cfg.replay_capacity)
        trainer.replay.extend(unpack_experiences(
            arrays["replay/kinds"], arrays["replay/scalars"],
            arrays["replay/states"], arrays["replay/offsets"]))
        return trainer


def vars_config(cfg) -> dict:
    d = dict(vars(cfg))
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def _detuple(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


# -- experience (de)serialization ----------------------------------------------


def _state_vector(js: JointState) -> list[float]:
    r = js.robot
    out = [js.time, r.px, r.py, r.vx, r.vy, r.radius, r.gx, r.gy, r.v_pref]
    for h in js.humans:
        out += [h.px, h.py, h.vx, h.vy, h.radius]
    return out


def _state_from_vector(vec: np.ndarray) -> JointState:
    t = float(vec[0])
    robot = FullState(*map(float, vec[1:9]))
    humans = tuple(ObservableState(*map(float, vec[9 + 5 * i:14 + 5 * i]))
                   for i in range((len(vec) - 9) // 5))
    return JointState(robot, humans, t)


def pack_experiences(exps: list[Experience]):
    kinds = np.array([0 if e.kind == "il" else 1 for e in exps], dtype=np.int64)
    scalars = np.array([[e.target, e.reward, float(e.terminal)] for e in exps]
                       if exps else np.zeros((0, 3)))
    offsets = [0]
    flat: list[float] = []
    for e in exps:
        flat += _state_vector(e.state)
        if e.kind == "rl" and e.next_state is not None:
            flat += _state_vector(e.next_state)
        offsets.append(len(flat))
    return (kinds, scalars.reshape(len(exps), 3),
            np.array(flat), np.array(offsets, dtype=np.int64))


def unpack_experiences(kinds, scalars, flat, offsets) -> list[Experience]:
    out = []
    for i, kind in enumerate(kinds):
        chunk = flat[offsets[i]:offsets[i + 1]]
        if kind == 0:
            out.append(Experience("il", _state_from_vector(chunk),
                                  target=float(scalars[i, 0])))
        else:
            terminal = bool(scalars[i, 2])
            if terminal:
                state, nxt = _state_from_vector(chunk), None
            else:
                half = len(chunk) // 2
                state = _state_from_vector(chunk[:half])
                nxt = _state_from_vector(chunk[half:])
            out.append(Experience("rl", state, reward=float(scalars[i, 1]),
                                  next_state=nxt, terminal=terminal))
    return out


# -- demonstration file I/O ------------------------------------------------------


def save_demonstrations(path, exps: list[Experience], seed: int,
                        n_episodes: int, scenario: ScenarioConfig) -> dict:
    """Write a demonstration set; returns the manifest (also embedded)."""
    kinds, scalars, flat, offsets = pack_experiences(exps)
    digest = hashlib.sha256()
    for arr in (kinds, scalars, flat, offsets):
        digest.update(np.ascontiguousarray(arr).tobytes("C"))
    manifest = {"episodes": n_episodes, "seed": seed, "samples": len(exps),
                "content_sha256": digest.hexdigest()}
    meta = {"format": DEMO_FORMAT, "version": DEMO_VERSION,
            "manifest": manifest, "scenario": vars_config(scenario)}
    write_blocks(path, meta, [("kinds", kinds), ("scalars", scalars),
                              ("states", flat), ("offsets", offsets)])
    return manifest


def load_demonstrations(path) -> tuple[list[Experience], dict]:
    meta, arrays = read_blocks(path)
    if meta.get("format") != DEMO_FORMAT:
        raise CheckpointError(f"{path}: not a demonstration file")
    if meta.get("version") != DEMO_VERSION:
        raise CheckpointError(f"{path}: unsupported demonstration version")
    exps = unpack_experiences(arrays["kinds"], arrays["scalars"],
                              arrays["states"], arrays["offsets"])
    return exps, meta["manifest"]
