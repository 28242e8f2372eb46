"""The return-conditioned policy's token windows, the hybrid prioritized
buffer, and the dual-timescale schedule."""

import tempfile
from pathlib import Path

import numpy as np

from socnav.config import SimConfig
from socnav.dataset import generate_dataset
from socnav.policy import DtPolicy, tokenize
from socnav.replay import HybridBuffer, TimescaleSchedule

out = Path(tempfile.mkdtemp()) / "demo.jsonl"
trajs, _ = generate_dataset(30, seed=1_000_000, sim_cfg=SimConfig(), gamma=0.99,
                            out_path=out)
traj = trajs[0]

print("== conditioning modes for the same window ==")
for source in ("labels", "fixed"):
    seq = tokenize(traj.states, traj.actions, traj.rewards,
                   end=min(5, traj.num_steps - 1), context=4, num_peds=5,
                   rtg_source=source, rtg_labels=traj.rtg, fixed_target=2.0)
    print(f"  {source:>6}: rtg slots {np.round(seq.rtg, 3).tolist()}")

print("\n== hybrid buffer with return-based priorities ==")
buf = HybridBuffer(trajs, capacity=100_000)
probs = buf.probabilities()
by_outcome = {}
for t, p in zip(trajs, probs):
    by_outcome.setdefault(t.outcome, []).append(p)
for outcome, ps in sorted(by_outcome.items()):
    print(f"  {outcome:>9}: {len(ps):2d} trajectories, "
          f"mean sampling probability {np.mean(ps):.4f}")

rng = np.random.default_rng(0)
draws = buf.sample_trajectories(5000, rng)
frac = sum(1 for t in draws if t.outcome == "success") / len(draws)
succ = sum(1 for t in trajs if t.outcome == "success") / len(trajs)
print(f"  successes are {succ:.0%} of the data but {frac:.0%} of the draws")

print("\n== dual-timescale schedule ==")
sched = TimescaleSchedule(fast_per_episode=4)
fast = slow = 0
for episode in range(5):
    f, s = sched.tick(episode)
    fast += f
    slow += s
    print(f"  episode {episode}: {f} predictor updates, {s} policy update "
          f"(cumulative {fast} > {slow})")

print("\n== deterministic bounded actions ==")
policy = DtPolicy(num_peds=5, context=4, hidden_dim=32, num_heads=2,
                  ffn_dim=32, num_blocks=1)
store = policy.init_store(0)
from socnav.policy import stack_sequences
seq = tokenize(traj.states, traj.actions, traj.rewards, end=3, context=4,
               num_peds=5, rtg_source="labels", rtg_labels=traj.rtg)
a_hat, _ = policy.forward(store, *stack_sequences([seq]))
print(f"  action at the last step {a_hat[0, -1]}, "
      f"speed {np.linalg.norm(a_hat[0, -1]):.3f} <= 1.0")
