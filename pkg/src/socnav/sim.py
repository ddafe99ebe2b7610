"""Crowd navigation episode engine.

Circle-crossing scenarios: simulated humans driven by ORCA, a holonomic robot
driven by an external policy. Supports the invisible setting (humans ignore
the robot and the discomfort reward band is disabled) and the visible setting
(humans avoid the robot too). `peek` gives the exact one-step lookahead the
value-learning planner queries, without touching the live episode.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ScenarioError, UsageError
from .orca import OrcaAgent, goal_velocity, orca_lines, solve_velocity

SPEED_TOL = 1e-9
EPISODE_LOG_FORMAT = "socnav-episode-log"
EPISODE_LOG_VERSION = 1


@dataclass(frozen=True)
class ObservableState:
    """What other agents can see of an agent."""

    px: float
    py: float
    vx: float
    vy: float
    radius: float


@dataclass(frozen=True)
class FullState(ObservableState):
    """Robot's own state: adds the goal and preferred speed."""

    gx: float = 0.0
    gy: float = 0.0
    v_pref: float = 1.0


@dataclass(frozen=True)
class JointState:
    """Robot full state plus all human observable states at one time step."""

    robot: FullState
    humans: tuple[ObservableState, ...]
    time: float = 0.0

    @property
    def n_humans(self) -> int:
        return len(self.humans)


@dataclass
class ScenarioConfig:
    n_humans: int = 5
    circle_radius: float = 4.0
    dt: float = 0.25
    t_max: float = 25.0
    robot_visible: bool = False
    robot_radius: float = 0.3
    robot_v_pref: float = 1.0
    v_pref_mean: float = 1.0
    v_pref_std: float = 0.2
    v_pref_bounds: tuple[float, float] = (0.5, 1.5)
    radius_mean: float = 0.3
    radius_std: float = 0.05
    radius_bounds: tuple[float, float] = (0.2, 0.5)
    perturbation_scale: float = 0.5
    start_margin: float = 0.1
    discomfort_dist: float = 0.2
    neighbor_dist: float = 10.0
    time_horizon: float = 5.0
    max_place_attempts: int = 1000

    def __post_init__(self) -> None:
        if self.circle_radius <= 0 or self.dt <= 0 or self.t_max <= self.dt:
            raise UsageError("need circle_radius > 0, dt > 0, t_max > dt")
        if self.n_humans < 0:
            raise UsageError("n_humans must be >= 0")


@dataclass
class _Human:
    """Full (hidden) human state: the robot never observes gx/gy/v_pref."""

    px: float
    py: float
    vx: float
    vy: float
    radius: float
    gx: float
    gy: float
    v_pref: float

    def observable(self) -> ObservableState:
        return ObservableState(self.px, self.py, self.vx, self.vy, self.radius)


EVENT_NONE = "none"
EVENT_COLLISION = "collision"
EVENT_GOAL = "reached_goal"
EVENT_TIMEOUT = "timeout"


@dataclass(frozen=True)
class StepOutcome:
    next_state: JointState
    reward: float
    event: str
    d_min: float

    @property
    def terminal(self) -> bool:
        return self.event in (EVENT_COLLISION, EVENT_GOAL, EVENT_TIMEOUT)


def moving_point_min_distance(p0: tuple[float, float], v0: tuple[float, float],
                              p1: tuple[float, float], v1: tuple[float, float],
                              dt: float) -> float:
    """Closest approach of two constant-velocity points over [0, dt]
    (closed form via the quadratic in t)."""
    rx, ry = p1[0] - p0[0], p1[1] - p0[1]
    dvx, dvy = v1[0] - v0[0], v1[1] - v0[1]
    dv2 = dvx * dvx + dvy * dvy
    if dv2 == 0.0:
        t = 0.0
    else:
        t = min(max(-(rx * dvx + ry * dvy) / dv2, 0.0), dt)
    return math.hypot(rx + t * dvx, ry + t * dvy)


def min_separation(robot_p: tuple[float, float], robot_v: tuple[float, float],
                   robot_radius: float, humans: list[tuple], dt: float) -> float:
    """Minimum robot-human surface separation over one step; negative means
    the discs overlapped at some instant. humans entries: (p, v, radius)."""
    d = math.inf
    for hp, hv, hr in humans:
        d = min(d, moving_point_min_distance(robot_p, robot_v, hp, hv, dt)
                - robot_radius - hr)
    return d


def compute_reward(d_min: float, reached: bool, discomfort_active: bool,
                   discomfort_dist: float = 0.2) -> tuple[float, str]:
    """Reward branches in fixed precedence; returns (reward, branch).

    branch is one of collision/discomfort/goal/free. The discomfort band only
    exists in the visible setting; it takes precedence over the goal branch,
    so a goal touch during a discomfort step does not count as success.
    """
    if d_min < 0.0:
        return -0.25, "collision"
    if discomfort_active and d_min < discomfort_dist:
        return -0.1 + d_min / 2.0, "discomfort"
    if reached:
        return 1.0, "goal"
    return 0.0, "free"


class CrowdSim:
    """One episode instance. Deterministic given (config, seed, actions)."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.robot: FullState | None = None
        self.humans: list[_Human] = []
        self._steps = 0
        self.event = EVENT_NONE
        self.records: list[dict] = []

    # -- scenario generation -------------------------------------------------

    def reset(self, seed) -> JointState:
        """Generate a circle-crossing scenario.

        Humans sit on the circle at rejection-sampled angles (no two agents
        closer than the start margin), goals antipodal; both ends perturbed
        per-coordinate. The robot crosses bottom to top, unperturbed.
        """
        cfg = self.config
        rng = np.random.default_rng(seed)
        self.robot = FullState(0.0, -cfg.circle_radius, 0.0, 0.0, cfg.robot_radius,
                               0.0, cfg.circle_radius, cfg.robot_v_pref)
        self.humans = []
        placed: list[tuple[float, float, float]] = [
            (self.robot.px, self.robot.py, self.robot.radius)]
        for _ in range(cfg.n_humans):
            v_pref = float(np.clip(rng.normal(cfg.v_pref_mean, cfg.v_pref_std),
                                   *cfg.v_pref_bounds))
            radius = float(np.clip(rng.normal(cfg.radius_mean, cfg.radius_std),
                                   *cfg.radius_bounds))
            for attempt in range(cfg.max_place_attempts + 1):
                if attempt == cfg.max_place_attempts:
                    raise ScenarioError(
                        f"could not place {cfg.n_humans} humans after "
                        f"{cfg.max_place_attempts} attempts (overcrowded config)")
                angle = rng.uniform(0.0, 2.0 * math.pi)
                px = cfg.circle_radius * math.cos(angle) \
                    + rng.uniform(-cfg.perturbation_scale, cfg.perturbation_scale)
                py = cfg.circle_radius * math.sin(angle) \
                    + rng.uniform(-cfg.perturbation_scale, cfg.perturbation_scale)
                if all(math.hypot(px - ox, py - oy) - radius - orad > cfg.start_margin
                       for ox, oy, orad in placed):
                    break
            gx = -cfg.circle_radius * math.cos(angle) \
                + rng.uniform(-cfg.perturbation_scale, cfg.perturbation_scale)
            gy = -cfg.circle_radius * math.sin(angle) \
                + rng.uniform(-cfg.perturbation_scale, cfg.perturbation_scale)
            placed.append((px, py, radius))
            self.humans.append(_Human(px, py, 0.0, 0.0, radius, gx, gy, v_pref))
        self._steps = 0
        self.event = EVENT_NONE
        self.records = []
        return self.joint_state()

    # -- views ---------------------------------------------------------------

    @property
    def time(self) -> float:
        return self._steps * self.config.dt

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def done(self) -> bool:
        return self.event != EVENT_NONE

    def joint_state(self) -> JointState:
        if self.robot is None:
            raise UsageError("reset() the simulation before using it")
        return JointState(self.robot, tuple(h.observable() for h in self.humans),
                          self.time)

    # -- dynamics ------------------------------------------------------------

    def _human_agent(self, h: _Human) -> OrcaAgent:
        cfg = self.config
        if math.hypot(h.gx - h.px, h.gy - h.py) < h.radius:
            pref = (0.0, 0.0)  # arrived: hold position (still avoids others)
        else:
            pref = goal_velocity(h.px, h.py, h.gx, h.gy, h.v_pref, cfg.dt)
        return OrcaAgent(h.px, h.py, h.vx, h.vy, h.radius, pref[0], pref[1],
                         max_speed=h.v_pref, neighbor_dist=cfg.neighbor_dist,
                         time_horizon=cfg.time_horizon)

    def _human_velocities(self, robot_action: tuple[float, float] | None
                          ) -> list[tuple[float, float]]:
        """ORCA responses for all humans from the current snapshot.

        In the visible setting humans see the robot at its current position
        with its new velocity (the command takes effect instantly); in the
        invisible setting (robot_action None) they react to humans only.
        """
        cfg = self.config
        agents = [self._human_agent(h) for h in self.humans]
        robot_agent = None
        if robot_action is not None:
            r = self.robot
            robot_agent = OrcaAgent(r.px, r.py, robot_action[0], robot_action[1],
                                    r.radius, 0.0, 0.0, max(r.v_pref, 1e-6),
                                    neighbor_dist=cfg.neighbor_dist,
                                    time_horizon=cfg.time_horizon)
        velocities = []
        for k, me in enumerate(agents):
            neighbors = [a for i, a in enumerate(agents)
                         if i != k and math.hypot(a.px - me.px, a.py - me.py)
                         < me.neighbor_dist]
            if robot_agent is not None and math.hypot(
                    robot_agent.px - me.px, robot_agent.py - me.py) < me.neighbor_dist:
                neighbors.append(robot_agent)
            lines = orca_lines(me, neighbors, cfg.dt)
            velocities.append(solve_velocity(lines, (me.pref_vx, me.pref_vy),
                                             me.max_speed))
        return velocities

    def _propagate(self, action: tuple[float, float]) -> tuple[StepOutcome, list]:
        """Pure one-step transition from the current snapshot."""
        cfg = self.config
        if self.robot is None:
            raise UsageError("reset() the simulation before stepping")
        if self.done:
            raise UsageError(f"episode already ended with event={self.event}")
        ax, ay = float(action[0]), float(action[1])
        if math.hypot(ax, ay) > self.robot.v_pref + SPEED_TOL:
            raise UsageError(
                f"action speed {math.hypot(ax, ay):.6f} exceeds v_pref "
                f"{self.robot.v_pref:.6f}")
        human_vels = self._human_velocities((ax, ay) if cfg.robot_visible else None)
        d_min = min_separation((self.robot.px, self.robot.py), (ax, ay),
                               self.robot.radius,
                               [((h.px, h.py), v, h.radius)
                                for h, v in zip(self.humans, human_vels)], cfg.dt)
        new_rx = self.robot.px + ax * cfg.dt
        new_ry = self.robot.py + ay * cfg.dt
        reached = math.hypot(new_rx - self.robot.gx, new_ry - self.robot.gy) \
            < self.robot.radius
        reward, branch = compute_reward(d_min, reached, cfg.robot_visible,
                                        cfg.discomfort_dist)
        new_time = (self._steps + 1) * cfg.dt
        if branch == "collision":
            event = EVENT_COLLISION
        elif branch == "goal":
            event = EVENT_GOAL
        elif new_time >= cfg.t_max:
            event = EVENT_TIMEOUT
        else:
            event = EVENT_NONE
        new_robot = replace(self.robot, px=new_rx, py=new_ry, vx=ax, vy=ay)
        new_humans = [
            replace(h, px=h.px + v[0] * cfg.dt, py=h.py + v[1] * cfg.dt,
                    vx=v[0], vy=v[1])
            for h, v in zip(self.humans, human_vels)
        ]
        next_state = JointState(new_robot,
                                tuple(h.observable() for h in new_humans), new_time)
        return StepOutcome(next_state, reward, event, d_min), new_humans

    def peek(self, action) -> StepOutcome:
        """One-step lookahead: exactly what step() would produce, no commit."""
        outcome, _ = self._propagate(action)
        return outcome

    def lookahead(self, action) -> JointState:
        return self.peek(action).next_state

    def peek_batch(self, actions) -> list[StepOutcome]:
        """Lookahead for many candidate actions.

        In the invisible setting the human responses do not depend on the
        robot's action, so they are computed once and shared.
        """
        if self.config.robot_visible:
            return [self.peek(a) for a in actions]
        cfg = self.config
        if self.robot is None:
            raise UsageError("reset() the simulation before stepping")
        if self.done:
            raise UsageError(f"episode already ended with event={self.event}")
        human_vels = self._human_velocities(None)
        moved = [(h.px + v[0] * cfg.dt, h.py + v[1] * cfg.dt, v, h.radius)
                 for h, v in zip(self.humans, human_vels)]
        new_time = (self._steps + 1) * cfg.dt
        segs = [((h.px, h.py), v, h.radius)
                for h, v in zip(self.humans, human_vels)]
        outcomes = []
        for action in actions:
            ax, ay = float(action[0]), float(action[1])
            if math.hypot(ax, ay) > self.robot.v_pref + SPEED_TOL:
                raise UsageError("action speed exceeds v_pref")
            d_min = min_separation((self.robot.px, self.robot.py), (ax, ay),
                                   self.robot.radius, segs, cfg.dt)
            new_rx = self.robot.px + ax * cfg.dt
            new_ry = self.robot.py + ay * cfg.dt
            reached = math.hypot(new_rx - self.robot.gx,
                                 new_ry - self.robot.gy) < self.robot.radius
            reward, branch = compute_reward(d_min, reached, False,
                                            cfg.discomfort_dist)
            if branch == "collision":
                event = EVENT_COLLISION
            elif branch == "goal":
                event = EVENT_GOAL
            elif new_time >= cfg.t_max:
                event = EVENT_TIMEOUT
            else:
                event = EVENT_NONE
            new_robot = replace(self.robot, px=new_rx, py=new_ry, vx=ax, vy=ay)
            next_state = JointState(
                new_robot,
                tuple(ObservableState(mx, my, v[0], v[1], hr)
                      for mx, my, v, hr in moved),
                new_time)
            outcomes.append(StepOutcome(next_state, reward, event, d_min))
        return outcomes

    def step(self, action) -> StepOutcome:
        """Advance the live episode by one step and log it."""
        outcome, new_humans = self._propagate(action)
        state_before = self.joint_state()
        self.robot = outcome.next_state.robot
        self.humans = new_humans
        self._steps += 1
        self.event = outcome.event
        self.records.append(step_record(state_before, action, outcome))
        return outcome


# -- episode logs -----------------------------------------------------------


def step_record(state: JointState, action, outcome: StepOutcome) -> dict:
    """One log line per step; field order is fixed and documented in README."""
    return {
        "t": state.time,
        "robot": [state.robot.px, state.robot.py, state.robot.vx, state.robot.vy,
                  state.robot.radius, state.robot.gx, state.robot.gy,
                  state.robot.v_pref],
        "humans": [[h.px, h.py, h.vx, h.vy, h.radius] for h in state.humans],
        "action": [float(action[0]), float(action[1])],
        "reward": outcome.reward,
        "event": outcome.event,
        "d_min": outcome.d_min if math.isfinite(outcome.d_min) else None,
    }


def write_episode_log(path, records: list[dict], meta: dict | None = None) -> None:
    header = {"format": EPISODE_LOG_FORMAT, "version": EPISODE_LOG_VERSION,
              "fields": ["t", "robot", "humans", "action", "reward", "event",
                         "d_min"]}
    if meta:
        header["meta"] = meta
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def read_episode_log(path) -> tuple[dict, list[dict]]:
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise UsageError(f"{path}: empty episode log")
    header = json.loads(lines[0])
    if header.get("format") != EPISODE_LOG_FORMAT:
        raise UsageError(f"{path}: not an episode log")
    if header.get("version") != EPISODE_LOG_VERSION:
        raise UsageError(f"{path}: unsupported episode log version")
    return header, [json.loads(ln) for ln in lines[1:]]


def discomfort_stats(records: list[dict], dt: float,
                     threshold: float = 0.2) -> tuple[float, float]:
    """(t_disc, frequency): time spent with separation below the threshold,
    as an absolute duration and as a fraction of the episode duration."""
    if not records:
        return 0.0, 0.0
    t_disc = sum(dt for rec in records
                 if rec["d_min"] is not None and rec["d_min"] < threshold)
    total = len(records) * dt
    return t_disc, t_disc / total
