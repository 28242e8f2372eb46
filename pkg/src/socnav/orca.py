"""Optimal reciprocal collision avoidance.

Per neighbor, a truncated velocity-obstacle cone for the configured time
horizon yields one half-plane of permitted velocities (taking half the
needed velocity change, so paired agents share the avoidance effort). The
new velocity is the feasible point closest to the preferred velocity,
found by an incremental two-constraint linear program over the max-speed
disc; when the constraints admit no common point a fallback program
minimizes the largest violation instead.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import OrcaConfig
from .core import AgentState

_EPS = 1e-5  # parallel-line threshold in the linear programs


@dataclass
class HalfPlane:
    """Permitted-velocity half-plane.

    Feasible velocities v satisfy normal . (v - point) >= 0: the unit
    normal points from the boundary into the allowed side, along the
    velocity adjustment u that exits the obstacle cone.
    """

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        n = float(np.hypot(self.normal[0], self.normal[1]))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"half-plane normal must be unit length, got {n}")

    def violation(self, v: np.ndarray) -> float:
        """Positive when v lies outside the permitted side."""
        return float(self.normal @ (self.point - v))


def orca_halfplanes(agent: AgentState, neighbors: list[AgentState],
                    cfg: OrcaConfig, dt: float = 0.25) -> list[HalfPlane]:
    """One permitted-velocity half-plane per in-range neighbor.

    The agent's own radius is inflated by cfg.safety_space. Neighbors
    beyond cfg.neighbor_dist (center distance) are ignored. Agents already
    in contact fall back to a cone truncated at the step time dt.
    """
    inv_horizon = 1.0 / cfg.time_horizon
    planes = []
    for other in neighbors:
        rel_pos = np.array([other.px - agent.px, other.py - agent.py])
        dist_sq = float(rel_pos @ rel_pos)
        if dist_sq > cfg.neighbor_dist ** 2:
            continue
        rel_vel = np.array([agent.vx - other.vx, agent.vy - other.vy])
        combined = agent.radius + cfg.safety_space + other.radius
        combined_sq = combined * combined

        if dist_sq > combined_sq:
            # w points from the cone's cutoff-circle center to the relative velocity
            w = rel_vel - inv_horizon * rel_pos
            w_len_sq = float(w @ w)
            dot1 = float(w @ rel_pos)
            if dot1 < 0.0 and dot1 * dot1 > combined_sq * w_len_sq:
                # closest exit is through the cutoff circle
                w_len = math.sqrt(w_len_sq)
                unit_w = w / w_len if w_len > 1e-12 else _fallback_dir(rel_pos)
                u = (combined * inv_horizon - w_len) * unit_w
                normal = unit_w
            else:
                # closest exit is through one of the cone legs
                leg = math.sqrt(dist_sq - combined_sq)
                if _det(rel_pos, w) > 0.0:
                    direction = np.array([rel_pos[0] * leg - rel_pos[1] * combined,
                                          rel_pos[0] * combined + rel_pos[1] * leg]) / dist_sq
                else:
                    direction = -np.array([rel_pos[0] * leg + rel_pos[1] * combined,
                                           -rel_pos[0] * combined + rel_pos[1] * leg]) / dist_sq
                dot2 = float(rel_vel @ direction)
                u = dot2 * direction - rel_vel
                normal = np.array([-direction[1], direction[0]])
        else:
            # already overlapping: push apart within one step
            inv_dt = 1.0 / dt
            w = rel_vel - inv_dt * rel_pos
            w_len = float(np.hypot(w[0], w[1]))
            unit_w = w / w_len if w_len > 1e-12 else _fallback_dir(rel_pos)
            u = (combined * inv_dt - w_len) * unit_w
            normal = unit_w

        planes.append(HalfPlane(point=np.array([agent.vx, agent.vy]) + 0.5 * u,
                                normal=normal))
    return planes


def _fallback_dir(rel_pos: np.ndarray) -> np.ndarray:
    # relative velocity exactly at the cone center: escape straight back
    n = float(np.hypot(rel_pos[0], rel_pos[1]))
    if n < 1e-12:
        return np.array([1.0, 0.0])
    return -rel_pos / n


def _det(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _direction(plane: HalfPlane) -> np.ndarray:
    # boundary direction such that the feasible side lies to its left
    return np.array([plane.normal[1], -plane.normal[0]])


def solve_velocity(planes: list[HalfPlane], v_pref: np.ndarray,
                   max_speed: float) -> np.ndarray:
    """Velocity closest to v_pref satisfying all half-planes and the speed disc.

    If the constraints are jointly infeasible within the disc, returns the
    velocity minimizing the maximum constraint violation instead (always
    defined).
    """
    if max_speed <= 0:
        raise ValueError("max_speed must be > 0")
    v_pref = np.asarray(v_pref, dtype=float)
    result, fail = _lp2(planes, max_speed, v_pref, direction_opt=False)
    if fail < len(planes):
        result = _lp3(planes, fail, max_speed, result)
    return result


def orca_action(agent_index: int, world: list[AgentState], cfg: OrcaConfig,
                dt: float = 0.25) -> np.ndarray:
    """Full controller: half-planes against all other agents, then the LP.

    The preferred velocity is v_pref toward the goal, rotated by
    agent_index * cfg.symmetry_bias radians so exactly symmetric scenarios
    resolve deterministically.
    """
    agent = world[agent_index]
    neighbors = [a for i, a in enumerate(world) if i != agent_index]
    planes = orca_halfplanes(agent, neighbors, cfg, dt=dt)
    to_goal = np.array([agent.gx - agent.px, agent.gy - agent.py])
    dist = float(np.hypot(to_goal[0], to_goal[1]))
    if dist > 1e-12:
        pref = agent.v_pref * to_goal / dist
    else:
        pref = np.zeros(2)
    bias = cfg.symmetry_bias * agent_index
    if bias != 0.0:
        c, s = math.cos(bias), math.sin(bias)
        pref = np.array([c * pref[0] - s * pref[1], s * pref[0] + c * pref[1]])
    return solve_velocity(planes, pref, cfg.max_speed)


def _lp1(planes, index, radius, opt, direction_opt):
    """Optimize along the boundary of plane `index` subject to planes < index.

    Returns None when that boundary has no feasible interval.
    """
    plane = planes[index]
    d = _direction(plane)
    p = plane.point
    pd = float(p @ d)
    disc = pd * pd + radius * radius - float(p @ p)
    if disc < 0.0:
        return None  # boundary entirely outside the speed disc
    sqrt_disc = math.sqrt(disc)
    t_left, t_right = -pd - sqrt_disc, -pd + sqrt_disc

    for j in range(index):
        other = planes[j]
        # feasibility along the line: b + t*a >= 0
        a = float(other.normal @ d)
        b = float(other.normal @ (p - other.point))
        if abs(a) <= _EPS:
            if b < 0.0:
                return None
            continue
        t = -b / a
        if a > 0.0:
            t_left = max(t_left, t)
        else:
            t_right = min(t_right, t)
        if t_left > t_right:
            return None

    if direction_opt:
        t = t_right if float(opt @ d) > 0.0 else t_left
    else:
        t = float(d @ (opt - p))
        t = min(t_right, max(t_left, t))
    return p + t * d


def _lp2(planes, radius, opt, direction_opt):
    """Incremental LP over the disc. Returns (result, first failing index)."""
    if direction_opt:
        result = opt * radius  # opt is a unit direction here
    elif float(opt @ opt) > radius * radius:
        result = opt / float(np.hypot(opt[0], opt[1])) * radius
    else:
        result = opt.copy()

    for i, plane in enumerate(planes):
        if plane.violation(result) > 0.0:
            candidate = _lp1(planes, i, radius, opt, direction_opt)
            if candidate is None:
                return result, i
            result = candidate
    return result, len(planes)


def _lp3(planes, begin, radius, result):
    """Fallback: progressively minimize the largest constraint violation."""
    distance = 0.0
    for i in range(begin, len(planes)):
        if planes[i].violation(result) > distance:
            d_i = _direction(planes[i])
            proj = []
            for j in range(i):
                d_j = _direction(planes[j])
                det = _det(d_i, d_j)
                if abs(det) <= _EPS:
                    if float(d_i @ d_j) > 0.0:
                        continue  # same direction: j is dominated by i
                    point = 0.5 * (planes[i].point + planes[j].point)
                else:
                    point = planes[i].point + (
                        _det(d_j, planes[i].point - planes[j].point) / det) * d_i
                direction = d_j - d_i
                direction = direction / float(np.hypot(direction[0], direction[1]))
                proj.append(HalfPlane(point=point,
                                      normal=np.array([-direction[1], direction[0]])))
            temp = result
            result, fail = _lp2(proj, radius, planes[i].normal, direction_opt=True)
            if fail < len(proj):
                result = temp
            distance = planes[i].violation(result)
    return result
