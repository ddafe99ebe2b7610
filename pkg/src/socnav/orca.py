"""Optimal Reciprocal Collision Avoidance for holonomic disc agents.

Each agent builds one half-plane constraint in velocity space per neighbor
(taking half of the avoidance responsibility) and picks the feasible velocity
closest to its preferred velocity with an incremental 2D linear program. When
the constraints are jointly infeasible, a projective fallback LP minimizes the
largest violation. Plain floats throughout: the hot loop is tiny and numpy
per-pair overhead would dominate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

_EPS = 1e-5  # parallel-line tolerance inside the LPs

Vec = tuple[float, float]


@dataclass
class OrcaAgent:
    """Snapshot of one disc agent for a single planning step."""

    px: float
    py: float
    vx: float
    vy: float
    radius: float
    pref_vx: float
    pref_vy: float
    max_speed: float
    neighbor_dist: float = 10.0
    time_horizon: float = 5.0

    def __post_init__(self) -> None:
        assert self.radius > 0 and self.max_speed > 0 and self.time_horizon > 0


@dataclass
class HalfPlane:
    """Permitted velocity half-plane: v is allowed iff (v - point)·normal >= 0.

    The boundary line passes through `point`; `normal` is the unit normal of
    the permitted side. The line direction used by the LP is the normal
    rotated clockwise by 90°.
    """

    point: Vec
    normal: Vec

    @property
    def direction(self) -> Vec:
        return (self.normal[1], -self.normal[0])

    def permits(self, v: Vec, tol: float = 1e-9) -> bool:
        return (v[0] - self.point[0]) * self.normal[0] \
            + (v[1] - self.point[1]) * self.normal[1] >= -tol


def _det(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def goal_velocity(px: float, py: float, gx: float, gy: float, speed: float,
                  dt: float) -> Vec:
    """Preferred velocity toward a goal: straight line, capped so one step
    never overshoots, with a tiny fixed left-normal nudge that deterministically
    breaks exactly mirror-symmetric encounters."""
    dx, dy = gx - px, gy - py
    dist = math.hypot(dx, dy)
    if dist < 1e-12 or speed <= 0.0:
        return (0.0, 0.0)
    s = min(speed, dist / dt)
    vx, vy = dx / dist * s, dy / dist * s
    return (vx - 1e-6 * vy / s, vy + 1e-6 * vx / s)


def orca_lines(agent: OrcaAgent, neighbors: list[OrcaAgent], dt: float) -> list[HalfPlane]:
    """One half-plane per neighbor; agent takes half the correction (u/2).

    Non-colliding pairs use the time_horizon cutoff cone; already-overlapping
    discs use the dt-horizon cutoff circle so they separate within one step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    lines: list[HalfPlane] = []
    inv_horizon = 1.0 / agent.time_horizon
    inv_dt = 1.0 / dt
    for other in neighbors:
        rel_x = other.px - agent.px
        rel_y = other.py - agent.py
        dvx = agent.vx - other.vx
        dvy = agent.vy - other.vy
        dist_sq = rel_x * rel_x + rel_y * rel_y
        r = agent.radius + other.radius
        r_sq = r * r
        if dist_sq > r_sq:
            # no current overlap: velocity obstacle truncated at time_horizon
            wx = dvx - inv_horizon * rel_x
            wy = dvy - inv_horizon * rel_y
            w_len_sq = wx * wx + wy * wy
            dot = wx * rel_x + wy * rel_y
            if dot < 0.0 and dot * dot > r_sq * w_len_sq:
                # relative velocity projects onto the cutoff circle
                w_len = math.sqrt(w_len_sq)
                ux, uy = wx / w_len, wy / w_len
                dir_x, dir_y = uy, -ux
                u_x = (r * inv_horizon - w_len) * ux
                u_y = (r * inv_horizon - w_len) * uy
            else:
                # projects onto one of the cone legs
                leg = math.sqrt(dist_sq - r_sq)
                if _det(rel_x, rel_y, wx, wy) > 0.0:
                    dir_x = (rel_x * leg - rel_y * r) / dist_sq
                    dir_y = (rel_x * r + rel_y * leg) / dist_sq
                else:
                    dir_x = -(rel_x * leg + rel_y * r) / dist_sq
                    dir_y = -(-rel_x * r + rel_y * leg) / dist_sq
                dot2 = dvx * dir_x + dvy * dir_y
                u_x = dot2 * dir_x - dvx
                u_y = dot2 * dir_y - dvy
        else:
            # overlapping discs: separate within dt
            if dist_sq == 0.0:
                log.warning("coincident agents at (%.3f, %.3f); separating along +x",
                            agent.px, agent.py)
            wx = dvx - inv_dt * rel_x
            wy = dvy - inv_dt * rel_y
            w_len = math.hypot(wx, wy)
            if w_len > 1e-12:
                ux, uy = wx / w_len, wy / w_len
            else:
                ux, uy = 1.0, 0.0  # fully degenerate pair: fixed +x separation
            dir_x, dir_y = uy, -ux
            u_x = (r * inv_dt - w_len) * ux
            u_y = (r * inv_dt - w_len) * uy
        lines.append(HalfPlane(point=(agent.vx + 0.5 * u_x, agent.vy + 0.5 * u_y),
                               normal=(-dir_y, dir_x)))
    return lines


def _lp1(lines: list[HalfPlane], line_no: int, radius: float, opt: Vec,
         direction_opt: bool) -> Vec | None:
    """Optimize along the boundary of lines[line_no] subject to lines[:line_no]
    and the speed circle. None when infeasible."""
    px, py = lines[line_no].point
    dx, dy = lines[line_no].direction
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        return None
    sqrt_disc = math.sqrt(disc)
    t_left = -dot - sqrt_disc
    t_right = -dot + sqrt_disc
    for i in range(line_no):
        qx, qy = lines[i].point
        ex, ey = lines[i].direction
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= _EPS:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    if direction_opt:
        t = t_right if (opt[0] * dx + opt[1] * dy) > 0.0 else t_left
    else:
        t = dx * (opt[0] - px) + dy * (opt[1] - py)
        t = min(max(t, t_left), t_right)
    return (px + t * dx, py + t * dy)


def _lp2(lines: list[HalfPlane], radius: float, opt: Vec, direction_opt: bool
         ) -> tuple[int, Vec]:
    """Incremental 2D LP. Returns (len(lines), v) on success, or the index of
    the first infeasible constraint and the best velocity found before it."""
    if direction_opt:
        result = (opt[0] * radius, opt[1] * radius)
    elif opt[0] * opt[0] + opt[1] * opt[1] > radius * radius:
        norm = math.hypot(opt[0], opt[1])
        result = (opt[0] / norm * radius, opt[1] / norm * radius)
    else:
        result = opt
    for i, line in enumerate(lines):
        dx, dy = line.direction
        if _det(dx, dy, line.point[0] - result[0], line.point[1] - result[1]) > 0.0:
            new = _lp1(lines, i, radius, opt, direction_opt)
            if new is None:
                return i, result
            result = new
    return len(lines), result


def _lp3(lines: list[HalfPlane], begin: int, radius: float, result: Vec) -> Vec:
    """Infeasible fallback: minimize the maximum constraint violation."""
    distance = 0.0
    for i in range(begin, len(lines)):
        dx, dy = lines[i].direction
        px, py = lines[i].point
        if _det(dx, dy, px - result[0], py - result[1]) > distance:
            projected: list[HalfPlane] = []
            for j in range(i):
                ex, ey = lines[j].direction
                qx, qy = lines[j].point
                denom = _det(dx, dy, ex, ey)
                if abs(denom) <= _EPS:
                    if dx * ex + dy * ey > 0.0:
                        continue  # parallel, same direction: redundant
                    cx, cy = 0.5 * (px + qx), 0.5 * (py + qy)
                else:
                    t = _det(ex, ey, px - qx, py - qy) / denom
                    cx, cy = px + t * dx, py + t * dy
                ndx, ndy = ex - dx, ey - dy
                norm = math.hypot(ndx, ndy)
                projected.append(HalfPlane(point=(cx, cy),
                                           normal=(-ndy / norm, ndx / norm)))
            fail, new = _lp2(projected, radius, (-dy, dx), True)
            if fail >= len(projected):
                # by construction result is feasible here; keep it only if the
                # re-optimization succeeded (it can fail on rounding)
                result = new
            distance = _det(dx, dy, px - result[0], py - result[1])
    return result


def solve_velocity(lines: list[HalfPlane], preferred: Vec, max_speed: float) -> Vec:
    """Velocity closest to `preferred` within the speed disc satisfying all
    half-planes; when infeasible, the max-violation-minimizing velocity."""
    v, _ = solve_velocity_ex(lines, preferred, max_speed)
    return v


def solve_velocity_ex(lines: list[HalfPlane], preferred: Vec, max_speed: float
                      ) -> tuple[Vec, bool]:
    """Like solve_velocity but also reports whether the LP was feasible
    (False means the fallback ran and constraints may be mildly violated)."""
    if max_speed <= 0:
        raise ValueError("max_speed must be positive")
    fail, result = _lp2(lines, max_speed, preferred, False)
    if fail < len(lines):
        return _lp3(lines, fail, max_speed, result), False
    return result, True


def orca_step(agents: list[OrcaAgent], dt: float) -> list[Vec]:
    """New velocity for every agent, all computed from the same snapshot."""
    velocities: list[Vec] = []
    for k, agent in enumerate(agents):
        neighbors = [
            other for i, other in enumerate(agents)
            if i != k and math.hypot(other.px - agent.px, other.py - agent.py)
            < agent.neighbor_dist
        ]
        lines = orca_lines(agent, neighbors, dt)
        velocities.append(solve_velocity(lines, (agent.pref_vx, agent.pref_vy),
                                         agent.max_speed))
    return velocities
