"""Offline dataset: rollout collection, return-to-go labels, persistence.

Trajectories are stored as JSON Lines: a header line carrying the schema
version, config hash and discount factor, then one trajectory per line.
Floats are written with 17 significant digits so that load(save(T))
reproduces every value bit for bit.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .core import Status
from .env import CrowdEnv, EpisodeRecord, rollout

SCHEMA_VERSION = 1
OUTCOMES = ("success", "collision", "timeout")
_STATUS_TO_OUTCOME = {Status.GOAL: "success", Status.COLLISION: "collision",
                      Status.TIMEOUT: "timeout"}


class DatasetFormatError(ValueError):
    """A dataset file failed to parse; the message names the line."""


def compute_rtg(rewards, gamma: float) -> np.ndarray:
    """Discounted suffix sums: G_t = r_t + gamma * G_{t+1}, G_last = r_last."""
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must be in (0, 1]")
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


@dataclass
class Trajectory:
    """One finished episode with return-to-go labels."""

    states: np.ndarray    # (T, joint_dim)
    actions: np.ndarray   # (T, 2)
    rewards: np.ndarray   # (T,)
    rtg: np.ndarray       # (T,)
    outcome: str
    duration: float
    seed: int

    def __post_init__(self):
        T = len(self.states)
        if not (len(self.actions) == len(self.rewards) == len(self.rtg) == T):
            raise ValueError("trajectory arrays must share one length")
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")

    @property
    def num_steps(self) -> int:
        return len(self.rewards)

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    @property
    def episode_return(self) -> float:
        return float(self.rtg[0]) if self.num_steps else 0.0

    @classmethod
    def from_record(cls, record: EpisodeRecord, gamma: float) -> "Trajectory":
        if record.status is Status.RUNNING:
            raise ValueError("cannot label an unfinished episode")
        rewards = np.asarray(record.rewards, dtype=np.float64)
        return cls(states=np.asarray(record.states, dtype=np.float64),
                   actions=np.asarray(record.actions, dtype=np.float64),
                   rewards=rewards, rtg=compute_rtg(rewards, gamma),
                   outcome=_STATUS_TO_OUTCOME[record.status],
                   duration=record.duration, seed=record.seed)


@dataclass
class DatasetStats:
    """Aggregate metrics of a trajectory file."""

    success_rate: float
    collision_rate: float
    timeout_rate: float
    mean_nav_time: float | None   # successful episodes only; None without successes
    mean_return: float            # mean discounted episode return, all episodes
    capacity: int                 # stored trajectory count

    def to_dict(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "timeout_rate": self.timeout_rate,
            "mean_nav_time": self.mean_nav_time,
            "mean_return": self.mean_return,
            "capacity": self.capacity,
        }


# -- lossless JSON --------------------------------------------------------


def dumps_lossless(x) -> str:
    """Serialize to JSON with 17-significant-digit floats (round-trip exact)."""
    if x is None:
        return "null"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            raise ValueError("cannot serialize non-finite float")
        return format(float(x), ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, dict):
        items = (f"{json.dumps(k)}:{dumps_lossless(v)}" for k, v in x.items())
        return "{" + ",".join(items) + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ",".join(dumps_lossless(v) for v in x) + "]"
    raise TypeError(f"cannot serialize {type(x)!r}")


def _traj_to_obj(t: Trajectory) -> dict:
    return {"seed": t.seed, "outcome": t.outcome, "duration": t.duration,
            "states": t.states, "actions": t.actions,
            "rewards": t.rewards, "rtg": t.rtg}


def _traj_from_obj(obj: dict, line_no: int) -> Trajectory:
    try:
        return Trajectory(states=np.asarray(obj["states"], dtype=np.float64),
                          actions=np.asarray(obj["actions"], dtype=np.float64),
                          rewards=np.asarray(obj["rewards"], dtype=np.float64),
                          rtg=np.asarray(obj["rtg"], dtype=np.float64),
                          outcome=obj["outcome"], duration=float(obj["duration"]),
                          seed=int(obj["seed"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {line_no}: bad trajectory record ({exc})") from exc


def save_trajectories(path, trajectories, gamma: float, config_hash: str = ""):
    header = {"schema": SCHEMA_VERSION, "kind": "trajectories",
              "config_hash": config_hash, "gamma": gamma,
              "count": len(trajectories)}
    with open(path, "w") as fh:
        fh.write(dumps_lossless(header) + "\n")
        for t in trajectories:
            fh.write(dumps_lossless(_traj_to_obj(t)) + "\n")


def load_trajectories(path):
    """Returns (trajectories, header). Raises DatasetFormatError with the
    offending line number on corrupt input."""
    trajectories = []
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise DatasetFormatError("line 1: empty dataset file")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line 1: bad header ({exc})") from exc
        if header.get("schema") != SCHEMA_VERSION or header.get("kind") != "trajectories":
            raise DatasetFormatError("line 1: unsupported schema")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {line_no}: bad JSON ({exc})") from exc
            trajectories.append(_traj_from_obj(obj, line_no))
    return trajectories, header


# -- generation ------------------------------------------------------------


def generate_dataset(num_episodes: int, seed: int, sim_cfg: SimConfig,
                     gamma: float, out_path, config_hash: str = "",
                     max_capacity: int = 100_000):
    """Roll out the reference controller with an invisible robot and write
    the labelled trajectories plus a `.stats.json` sidecar.

    Episode i uses scenario seed `seed + i`; the file is a pure function
    of (num_episodes, seed, sim_cfg, gamma).
    """
    if sim_cfg.robot_visible:
        raise ValueError("dataset generation requires an invisible robot")
    if num_episodes > max_capacity:
        raise ValueError(f"num_episodes {num_episodes} exceeds replay capacity "
                         f"{max_capacity}")
    env = CrowdEnv(sim_cfg)
    trajectories = []
    for i in range(num_episodes):
        record = rollout(env, lambda e, o: e.robot_orca_action(), seed=seed + i)
        trajectories.append(Trajectory.from_record(record, gamma))

    tmp_path = str(out_path) + ".tmp"
    try:
        save_trajectories(tmp_path, trajectories, gamma=gamma,
                          config_hash=config_hash)
        os.replace(tmp_path, out_path)
    except OSError:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    stats = stats_of(trajectories)
    with open(str(out_path) + ".stats.json", "w") as fh:
        fh.write(dumps_lossless(stats.to_dict()) + "\n")
    return trajectories, stats


def stats_of(trajectories) -> DatasetStats:
    if not trajectories:
        raise ValueError("no trajectories to summarize")
    n = len(trajectories)
    n_success = sum(t.outcome == "success" for t in trajectories)
    n_collision = sum(t.outcome == "collision" for t in trajectories)
    n_timeout = n - n_success - n_collision
    times = [t.duration for t in trajectories if t.outcome == "success"]
    mean_time = float(np.mean(times)) if times else None
    mean_return = float(np.mean([t.episode_return for t in trajectories]))
    return DatasetStats(success_rate=n_success / n, collision_rate=n_collision / n,
                        timeout_rate=n_timeout / n, mean_nav_time=mean_time,
                        mean_return=mean_return, capacity=n)


def dataset_stats(path) -> DatasetStats:
    trajectories, _ = load_trajectories(path)
    if not trajectories:
        raise DatasetFormatError("line 2: dataset has a header but no trajectories")
    return stats_of(trajectories)
