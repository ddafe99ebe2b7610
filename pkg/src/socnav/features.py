"""Robot-centric parameterization and local occupancy-velocity maps.

All network inputs are expressed in a frame with the robot at the origin and
+x pointing at its goal, which makes the whole pipeline invariant to rigid
transforms of the scene. Humans get a 7-vector each, the robot a 5-vector:

    robot  = [d_goal, v_pref, vx, vy, radius]
    human  = [px, py, vx, vy, radius, dist_to_robot, radius + robot_radius]

The local map of human i is an L x L x 3 grid centred on that human
accumulating (vx, vy, occupancy) of the other humans per cell; cell indices
use the floor convention a = floor(dx / cell + L/2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .sim import JointState

ROBOT_DIM = 5
HUMAN_DIM = 7


@dataclass(frozen=True)
class RobotCentricState:
    """Frame-invariant network input for one joint state."""

    robot: np.ndarray          # (5,)
    humans: np.ndarray         # (n, 7)
    degenerate: bool = False   # robot exactly at its goal: rotation undefined

    @property
    def n_humans(self) -> int:
        return self.humans.shape[0]


def robot_centric(joint: JointState) -> RobotCentricState:
    """Rotate and translate a joint state into the robot-centric frame."""
    r = joint.robot
    if r.v_pref <= 0:
        raise UsageError("robot v_pref must be positive")
    dx, dy = r.gx - r.px, r.gy - r.py
    d_goal = float(np.hypot(dx, dy))
    degenerate = d_goal < 1e-12
    if degenerate:
        cos_a, sin_a = 1.0, 0.0  # fall back to the world frame orientation
    else:
        cos_a, sin_a = dx / d_goal, dy / d_goal

    def rot(x, y):
        return cos_a * x + sin_a * y, -sin_a * x + cos_a * y

    rvx, rvy = rot(r.vx, r.vy)
    robot_vec = np.array([d_goal, r.v_pref, rvx, rvy, r.radius])
    humans = np.empty((len(joint.humans), HUMAN_DIM))
    for i, h in enumerate(joint.humans):
        hx, hy = rot(h.px - r.px, h.py - r.py)
        hvx, hvy = rot(h.vx, h.vy)
        d_i = float(np.hypot(hx, hy))
        humans[i] = (hx, hy, hvx, hvy, h.radius, d_i, h.radius + r.radius)
    return RobotCentricState(robot_vec, humans, degenerate)


def build_local_map(humans: np.ndarray, index: int, grid_size: int = 4,
                    cell_size: float = 1.0) -> np.ndarray:
    """L x L x 3 neighborhood tensor around humans[index].

    Channels accumulate (vx, vy, 1) of every other human whose offset falls
    inside the grid; neighbors outside are ignored. Positions/velocities must
    already share one frame (here: the robot-centric one).
    """
    n = humans.shape[0]
    if not 0 <= index < n:
        raise UsageError(f"human index {index} out of range 0..{n - 1}")
    grid = np.zeros((grid_size, grid_size, 3))
    cx, cy = humans[index, 0], humans[index, 1]
    for j in range(n):
        if j == index:
            continue
        a = int(np.floor((humans[j, 0] - cx) / cell_size + grid_size / 2.0))
        b = int(np.floor((humans[j, 1] - cy) / cell_size + grid_size / 2.0))
        if 0 <= a < grid_size and 0 <= b < grid_size:
            grid[a, b, 0] += humans[j, 2]
            grid[a, b, 1] += humans[j, 3]
            grid[a, b, 2] += 1.0
    return grid


def build_local_maps(humans: np.ndarray, grid_size: int = 4,
                     cell_size: float = 1.0) -> np.ndarray:
    """Flattened local maps for all humans at once: (n, L*L*3), C order.

    Vectorized over pairs; the per-human result is bitwise identical to
    build_local_map(...).reshape(-1).
    """
    n = humans.shape[0]
    flat = np.zeros((n, grid_size * grid_size * 3))
    if n <= 1:
        return flat
    pos = humans[:, 0:2]
    vel = humans[:, 2:4]
    delta = pos[None, :, :] - pos[:, None, :]          # delta[i, j] = p_j - p_i
    cells = np.floor(delta / cell_size + grid_size / 2.0).astype(np.int64)
    inside = ((cells[:, :, 0] >= 0) & (cells[:, :, 0] < grid_size)
              & (cells[:, :, 1] >= 0) & (cells[:, :, 1] < grid_size))
    inside &= ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(inside)
    base = (cells[ii, jj, 0] * grid_size + cells[ii, jj, 1]) * 3
    np.add.at(flat, (ii, base), vel[jj, 0])
    np.add.at(flat, (ii, base + 1), vel[jj, 1])
    np.add.at(flat, (ii, base + 2), 1.0)
    return flat
