"""The spatio-temporal return predictor: regressing discounted
returns-to-go from recent history, with exact pedestrian-order
invariance."""

import tempfile
from pathlib import Path

import numpy as np

from socnav.config import SimConfig
from socnav.core import PED_PART_DIM, ROBOT_PART_DIM
from socnav.dataset import generate_dataset
from socnav.nn import lamb_step
from socnav.rtgp import RtgPredictor

out = Path(tempfile.mkdtemp()) / "demo.jsonl"
trajs, _ = generate_dataset(12, seed=1_000_000, sim_cfg=SimConfig(), gamma=0.99,
                            out_path=out)

net = RtgPredictor(num_peds=5, window=8, hidden_dim=32, num_heads=2,
                   ffn_dim=32, head_hidden=16)
store = net.init_store(seed=0)
print(f"predictor with {store.num_params():,} parameters, history window "
      f"{net.window} steps")

rng = np.random.default_rng(1)
print("\n== regression onto Monte-Carlo returns ==")
for it in range(301):
    picks = rng.integers(0, len(trajs), size=24)
    ends = [int(rng.integers(0, trajs[i].num_steps)) for i in picks]
    episodes = [(trajs[i].states, trajs[i].actions, trajs[i].rewards)
                for i in picks]
    batch = net.window_batch(episodes, ends)
    targets = [trajs[i].rtg[e] for i, e in zip(picks, ends)]
    loss, _ = net.loss_and_grad(store, batch, targets)
    lamb_step(store, 5e-4)
    if it % 75 == 0:
        print(f"  iter {it:3d}: squared error {loss:.4f}")

print("\n== estimates along one successful episode ==")
success = next(t for t in trajs if t.outcome == "success")
seq = net.predict_sequence(store, success.states, success.actions,
                           success.rewards)
for t in range(0, success.num_steps, max(1, success.num_steps // 6)):
    print(f"  step {t:3d}: predicted {seq[t]:+.3f}, label {success.rtg[t]:+.3f}")

print("\n== relabelling pedestrians does not move the estimate ==")
states = success.states.copy()
blocks = states[:, ROBOT_PART_DIM:].reshape(len(states), 5, PED_PART_DIM)
states[:, ROBOT_PART_DIM:] = blocks[:, ::-1, :].reshape(len(states), -1)
flipped = net.predict_sequence(store, states, success.actions, success.rewards)
print("  max difference:", float(np.abs(flipped - seq).max()))
