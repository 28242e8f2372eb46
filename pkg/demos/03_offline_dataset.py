"""Collecting the offline dataset: suboptimal reference rollouts with an
invisible robot, labelled with discounted returns-to-go."""

import tempfile
from pathlib import Path

import numpy as np

from socnav.config import SimConfig
from socnav.dataset import compute_rtg, dataset_stats, generate_dataset

out = Path(tempfile.mkdtemp()) / "demo.jsonl"
trajs, stats = generate_dataset(40, seed=1_000_000, sim_cfg=SimConfig(),
                                gamma=0.99, out_path=out)

print(f"wrote {out} ({stats.capacity} trajectories)")
print(f"  success {stats.success_rate:.2f}  collision {stats.collision_rate:.2f}"
      f"  timeout {stats.timeout_rate:.2f}")
print(f"  mean nav time {stats.mean_nav_time:.2f} s, "
      f"mean return {stats.mean_return:+.4f}")

t = trajs[0]
print(f"\nfirst trajectory: {t.outcome} in {t.num_steps} steps")
print("  rewards tail:", np.round(t.rewards[-4:], 4).tolist())
print("  labels  tail:", np.round(t.rtg[-4:], 4).tolist())
check = compute_rtg(t.rewards, 0.99)
print("  labels reproduce the suffix recursion exactly:",
      bool(np.array_equal(check, t.rtg)))

print("\nreloading the file gives identical statistics:")
print(" ", dataset_stats(out))
