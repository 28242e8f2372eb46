"""Featurization shared by the return predictor and the policy.

Joint observations are canonicalized by sorting the pedestrian blocks by
distance to the robot (nearest first, stable order on ties) before any
network consumes them. This makes every model output exactly invariant
to pedestrian labelling while the spatial attention still treats the
blocks as a set.

History windows are front-padded to a fixed length with a validity mask;
the step token at time u carries the previous transition's action and
reward (zeros at the episode start), which keeps training and rollout
inputs identically distributed: the current step's action does not exist
yet when the return estimate is needed.
"""

from __future__ import annotations

import numpy as np

from .core import PED_PART_DIM, ROBOT_PART_DIM

SPATIAL_TOKEN_DIM = ROBOT_PART_DIM + 3          # robot part + prev action + prev reward


def temporal_token_dim(num_peds: int) -> int:
    return ROBOT_PART_DIM + PED_PART_DIM * num_peds + 3


def canonicalize_joint(joint: np.ndarray, num_peds: int) -> np.ndarray:
    """Sort pedestrian blocks of joint vectors by distance, nearest first.

    joint: (..., 6 + 7m). The distance field is column 5 of each block.
    """
    if num_peds == 0:
        return joint
    lead = joint[..., :ROBOT_PART_DIM]
    peds = joint[..., ROBOT_PART_DIM:].reshape(*joint.shape[:-1], num_peds, PED_PART_DIM)
    order = np.argsort(peds[..., 5], axis=-1, kind="stable")
    peds = np.take_along_axis(peds, order[..., None], axis=-2)
    return np.concatenate([lead, peds.reshape(*joint.shape[:-1],
                                              num_peds * PED_PART_DIM)], axis=-1)


def split_joint(joint: np.ndarray, num_peds: int):
    """(robot_part, ped_blocks) views of a canonical joint vector batch."""
    robot = joint[..., :ROBOT_PART_DIM]
    peds = joint[..., ROBOT_PART_DIM:].reshape(*joint.shape[:-1], num_peds, PED_PART_DIM)
    return robot, peds


def history_window(states, actions, rewards, end: int, width: int, num_peds: int):
    """Fixed-width history ending at step `end` (inclusive).

    states/actions/rewards are per-episode arrays; entries before the
    episode start are front-padding. Returns:
      spatial:  (width, m+1, SPATIAL_TOKEN_DIM) one robot + m ped tokens per step
      temporal: (width, temporal_token_dim)     flat step tokens
      valid:    (width,) bool
      current:  (joint_dim,) canonical joint state at `end`
    """
    states = np.asarray(states, dtype=np.float64)
    joint = canonicalize_joint(states, num_peds)
    lo = max(0, end - width + 1)
    steps = list(range(lo, end + 1))
    pad = width - len(steps)

    spatial = np.zeros((width, num_peds + 1, SPATIAL_TOKEN_DIM))
    temporal = np.zeros((width, temporal_token_dim(num_peds)))
    valid = np.zeros(width, dtype=bool)
    for slot, u in enumerate(steps, start=pad):
        prev_a = actions[u - 1] if u > 0 else (0.0, 0.0)
        prev_r = rewards[u - 1] if u > 0 else 0.0
        robot, peds = split_joint(joint[u], num_peds)
        spatial[slot, 0, :ROBOT_PART_DIM] = robot
        spatial[slot, 0, ROBOT_PART_DIM:ROBOT_PART_DIM + 2] = prev_a
        spatial[slot, 0, ROBOT_PART_DIM + 2] = prev_r
        spatial[slot, 1:, :PED_PART_DIM] = peds
        temporal[slot, :joint.shape[-1]] = joint[u]
        temporal[slot, joint.shape[-1]:joint.shape[-1] + 2] = prev_a
        temporal[slot, joint.shape[-1] + 2] = prev_r
        valid[slot] = True
    return spatial, temporal, valid, joint[end]


def clip_action_norm(actions: np.ndarray, v_max: float, frac: float = 0.999):
    """Radially clip actions to frac * v_max (regression targets must stay
    strictly inside the squashed policy's range)."""
    actions = np.asarray(actions, dtype=np.float64)
    norm = np.linalg.norm(actions, axis=-1, keepdims=True)
    limit = frac * v_max
    scale = np.where(norm > limit, limit / np.maximum(norm, 1e-12), 1.0)
    return actions * scale
