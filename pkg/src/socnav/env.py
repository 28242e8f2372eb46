"""Crowd-navigation environment.

One instance simulates a single episode at a time: pedestrians run the
reciprocal-avoidance controller (blind to the robot unless
`robot_visible`), the robot applies externally chosen velocity actions,
and all agents advance simultaneously by dt. Distances for collision and
discomfort are measured over the motion segment of each step, so grazing
passes between sampling instants are not missed.

A single instance is not thread-safe; run independent instances in
parallel instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import orca
from .config import SimConfig
from .core import (AgentState, RobotFrameState, Scenario, Status, StepOutcome,
                   point_to_segment_dist, reward, sample_scenario, to_robot_frame)


class ActionBoundsError(ValueError):
    """Robot action exceeded the configured speed limit."""


@dataclass
class EpisodeRecord:
    """Raw rollout log: per-step joint observations, actions and rewards.

    `states[t]` is the observation the action `actions[t]` was chosen from;
    `world_log`, when recorded, holds (robot_xy, peds_xy) world positions
    per step including the initial placement.
    """

    states: list
    actions: list
    rewards: list
    status: Status
    duration: float
    seed: int
    world_log: list = field(default_factory=list)

    @property
    def num_steps(self) -> int:
        return len(self.actions)

    def episode_return(self, gamma: float) -> float:
        g = 0.0
        for r in reversed(self.rewards):
            g = r + gamma * g
        return g


class CrowdEnv:
    """Circle-crossing crowd simulation with an externally controlled robot."""

    def __init__(self, cfg: SimConfig):
        cfg.validate()
        self.cfg = cfg
        self.robot: AgentState | None = None
        self.peds: list[AgentState] = []
        self.time = 0.0
        self.status = Status.RUNNING
        self.min_ped_ped_clearance = math.inf
        self._regoal_rng: np.random.Generator | None = None
        self._scenario: Scenario | None = None

    def reset(self, seed: int) -> RobotFrameState:
        scenario = sample_scenario(seed, self.cfg.num_peds,
                                   arena_radius=self.cfg.arena_radius,
                                   perturbation=self.cfg.perturbation)
        return self.reset_to(scenario)

    def reset_to(self, scenario: Scenario) -> RobotFrameState:
        cfg = self.cfg
        self._scenario = scenario
        self.robot = AgentState(px=scenario.robot_start[0], py=scenario.robot_start[1],
                                vx=0.0, vy=0.0, radius=cfg.robot_radius,
                                gx=scenario.robot_goal[0], gy=scenario.robot_goal[1],
                                v_pref=cfg.v_pref, heading=0.0)
        self.peds = [AgentState(px=s[0], py=s[1], vx=0.0, vy=0.0,
                                radius=cfg.ped_radius, gx=g[0], gy=g[1],
                                v_pref=cfg.ped_v_pref, heading=0.0)
                     for s, g in zip(scenario.ped_starts, scenario.ped_goals)]
        self.time = 0.0
        self.status = Status.RUNNING
        self.min_ped_ped_clearance = math.inf
        self._regoal_rng = np.random.default_rng([scenario.seed, 0x5E60])
        return self.observe()

    def observe(self) -> RobotFrameState:
        return to_robot_frame(self.peds, self.robot)

    def world_positions(self):
        """(robot_xy, peds_xy) snapshot in world coordinates."""
        peds = np.array([[p.px, p.py] for p in self.peds]).reshape(len(self.peds), 2)
        return np.array([self.robot.px, self.robot.py]), peds

    def ped_action(self, index: int) -> np.ndarray:
        """Controller of pedestrian `index`; sees the robot only if visible."""
        world = list(self.peds)
        if self.cfg.robot_visible:
            world = world + [self.robot]
        return orca.orca_action(index, world, self.cfg.ped_orca, dt=self.cfg.dt)

    def robot_orca_action(self) -> np.ndarray:
        """Reference controller for the robot (used as the behavior policy)."""
        world = [self.robot] + list(self.peds)
        return orca.orca_action(0, world, self.cfg.robot_orca, dt=self.cfg.dt)

    def step(self, action) -> StepOutcome:
        if self.status is not Status.RUNNING:
            raise RuntimeError("step() called on a finished episode")
        action = np.asarray(action, dtype=float)
        speed = float(np.hypot(action[0], action[1]))
        if speed > self.cfg.v_max + 1e-9:
            raise ActionBoundsError(
                f"action speed {speed:.6f} exceeds v_max {self.cfg.v_max}")

        cfg = self.cfg
        ped_vels = [self.ped_action(i) for i in range(len(self.peds))]

        # clearance to each pedestrian over this step's motion segment
        d_min = math.inf
        robot_new = AgentState(px=self.robot.px, py=self.robot.py, vx=action[0],
                               vy=action[1], radius=self.robot.radius,
                               gx=self.robot.gx, gy=self.robot.gy,
                               v_pref=self.robot.v_pref, heading=self.robot.heading)
        for ped, vel in zip(self.peds, ped_vels):
            rel0 = np.array([ped.px - robot_new.px, ped.py - robot_new.py])
            rel1 = rel0 + (np.array([vel[0], vel[1]]) - action) * cfg.dt
            gap = point_to_segment_dist(rel0, rel1) - ped.radius - robot_new.radius
            d_min = min(d_min, gap)

        self._track_ped_clearances(ped_vels)

        # simultaneous holonomic update
        self.robot = robot_new.moved(cfg.dt)
        new_peds = []
        for ped, vel in zip(self.peds, ped_vels):
            moved = AgentState(px=ped.px, py=ped.py, vx=float(vel[0]), vy=float(vel[1]),
                               radius=ped.radius, gx=ped.gx, gy=ped.gy,
                               v_pref=ped.v_pref, heading=ped.heading).moved(cfg.dt)
            new_peds.append(moved)
        self.peds = new_peds
        self.time += cfg.dt
        self._reassign_reached_goals()

        d_goal = self.robot.dist_to_goal()
        r = reward(d_min, d_goal, self.robot.radius)
        if d_min <= 0.0:
            self.status = Status.COLLISION
        elif d_goal <= self.robot.radius:
            self.status = Status.GOAL
        elif self.time >= cfg.timeout - 1e-12:
            self.status = Status.TIMEOUT
        return StepOutcome(observation=self.observe(), reward=r,
                           status=self.status, d_min=d_min, d_goal=d_goal)

    def _track_ped_clearances(self, ped_vels):
        dt = self.cfg.dt
        for i in range(len(self.peds)):
            for j in range(i + 1, len(self.peds)):
                a, b = self.peds[i], self.peds[j]
                rel0 = np.array([b.px - a.px, b.py - a.py])
                rel1 = rel0 + (ped_vels[j] - ped_vels[i]) * dt
                gap = point_to_segment_dist(rel0, rel1) - a.radius - b.radius
                self.min_ped_ped_clearance = min(self.min_ped_ped_clearance, gap)

    def _reassign_reached_goals(self):
        """Pedestrians at their goal get a fresh destination on the arena circle,
        rejected while closer than 2 m to their current position."""
        for i, ped in enumerate(self.peds):
            if ped.dist_to_goal() > ped.radius:
                continue
            while True:
                theta = self._regoal_rng.uniform(0.0, 2.0 * math.pi)
                g = self.cfg.arena_radius * np.array([math.cos(theta), math.sin(theta)])
                if math.hypot(g[0] - ped.px, g[1] - ped.py) >= 2.0:
                    break
            self.peds[i] = AgentState(px=ped.px, py=ped.py, vx=ped.vx, vy=ped.vy,
                                      radius=ped.radius, gx=float(g[0]), gy=float(g[1]),
                                      v_pref=ped.v_pref, heading=ped.heading)


def rollout(env: CrowdEnv, act_fn, seed: int, record_world: bool = False) -> EpisodeRecord:
    """Run one episode; act_fn maps (env, observation) -> action array."""
    obs = env.reset(seed)
    states, actions, rewards = [], [], []
    world_log = []
    if record_world:
        world_log.append(env.world_positions())
    while env.status is Status.RUNNING:
        action = np.asarray(act_fn(env, obs), dtype=float)
        states.append(obs.joint.copy())
        outcome = env.step(action)
        actions.append(action.copy())
        rewards.append(outcome.reward)
        obs = outcome.observation
        if record_world:
            world_log.append(env.world_positions())
    return EpisodeRecord(states=states, actions=actions, rewards=rewards,
                         status=env.status, duration=env.time, seed=seed,
                         world_log=world_log)
