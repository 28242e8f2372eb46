"""The network building blocks: masked attention, encoder blocks, the
layer-wise adaptive optimizer, and finite-difference verification."""

import numpy as np

from socnav import nn
from socnav.gradcheck import grad_check

rng = np.random.default_rng(0)

print("== causal attention ==")
store = nn.ParamStore(dtype=np.float64)
nn.add_attention(store, "att", 8, rng)
x = rng.normal(size=(1, 5, 8))
out, cache = nn.attention_fwd(store, "att", x, x, x, num_heads=2, causal=True)
probs = cache[4]
print("attention rows sum to one:", bool(np.allclose(probs.sum(-1), 1.0)))
x2 = x.copy()
x2[:, -1] += 100.0
out2, _ = nn.attention_fwd(store, "att", x2, x2, x2, num_heads=2, causal=True)
print("perturbing the future leaves earlier outputs bit-identical:",
      bool(np.array_equal(out[:, :-1], out2[:, :-1])))

print("\n== finite-difference check of a full encoder block ==")
blk = nn.ParamStore(dtype=np.float64)
nn.add_encoder_block(blk, "blk", 8, 16, rng)
t = rng.normal(size=(2, 5, 8))
inp = rng.normal(size=(2, 5, 8))


def loss(s):
    s.zero_grads()
    y, c = nn.encoder_block_fwd(s, "blk", inp, num_heads=2, causal=True)
    L, dy = nn.mse_loss(y, t)
    nn.encoder_block_bwd(s, c, dy)
    return L


print(grad_check(loss, blk, max_coords=200))

print("\n== layer-wise adaptive optimizer on a quadratic bowl ==")
opt = nn.ParamStore(dtype=np.float64)
opt.add("w", rng.normal(size=32) * 3)
for step in range(201):
    opt.zero_grads()
    opt.grads["w"][...] = 2 * opt["w"]
    nn.lamb_step(opt, lr=5e-4)
    if step % 50 == 0:
        print(f"  step {step:3d}: |w| = {np.linalg.norm(opt['w']):.4f}")
