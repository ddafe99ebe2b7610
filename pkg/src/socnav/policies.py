"""Robot policies: goal-directed baseline, ORCA baseline, and the learned
value-lookahead policy. A policy maps the live environment (which exposes the
one-step lookahead) to a velocity command."""
from __future__ import annotations

import math

import numpy as np

from .errors import UsageError
from .model import ValueNetwork
from .orca import OrcaAgent, goal_velocity, orca_lines, solve_velocity


class StraightPolicy:
    """Head straight for the goal at preferred speed; ignores everyone."""

    name = "straight"

    def act(self, env) -> tuple[float, float]:
        r = env.joint_state().robot
        return goal_velocity(r.px, r.py, r.gx, r.gy, r.v_pref, env.dt)


class OrcaPolicy:
    """ORCA-driven robot. The virtual radius margin keeps extra clearance to
    humans (0.1 m mirrors the comfort margin used for fair baseline runs)."""

    def __init__(self, margin: float = 0.1):
        if margin < 0:
            raise UsageError("margin must be >= 0")
        self.margin = margin

    @property
    def name(self) -> str:
        return f"orca(margin={self.margin:g})"

    def act(self, env) -> tuple[float, float]:
        state = env.joint_state()
        r = state.robot
        cfg = env.config
        pref = goal_velocity(r.px, r.py, r.gx, r.gy, r.v_pref, env.dt)
        me = OrcaAgent(r.px, r.py, r.vx, r.vy, r.radius + self.margin,
                       pref[0], pref[1], max_speed=r.v_pref,
                       neighbor_dist=cfg.neighbor_dist,
                       time_horizon=cfg.time_horizon)
        neighbors = [
            OrcaAgent(h.px, h.py, h.vx, h.vy, h.radius, 0.0, 0.0, 1.0)
            for h in state.humans
            if math.hypot(h.px - r.px, h.py - r.py) < cfg.neighbor_dist
        ]
        v = solve_velocity(orca_lines(me, neighbors, env.dt), pref, r.v_pref)
        # the LP can sit a hair above the cap after projections; the sim's
        # speed check is strict
        speed = math.hypot(*v)
        if speed > r.v_pref:
            v = (v[0] / speed * r.v_pref, v[1] / speed * r.v_pref)
        return v


class ValuePolicy:
    """One-step lookahead argmax over the discrete action set, optionally
    epsilon-greedy (training exploration)."""

    def __init__(self, net: ValueNetwork, gamma: float = 0.9,
                 epsilon: float = 0.0, rng: np.random.Generator | None = None):
        if not 0.0 <= epsilon <= 1.0:
            raise UsageError("epsilon must be in [0, 1]")
        if epsilon > 0 and rng is None:
            raise UsageError("exploration needs an rng")
        self.net = net
        self.gamma = gamma
        self.epsilon = epsilon
        self.rng = rng
        self.name = "value-lm" if net.config.use_local_maps else "value"

    def act(self, env) -> tuple[float, float]:
        from .training import build_action_space, select_action
        actions = build_action_space(env.joint_state().robot.v_pref)
        _, action = select_action(self.net, env, actions, self.epsilon,
                                  self.rng, self.gamma)
        return action

    def attention(self, joint) -> np.ndarray:
        return self.net.evaluate(joint).attention
