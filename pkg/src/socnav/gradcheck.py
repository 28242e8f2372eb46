"""Finite-difference verification of analytic gradients.

Central differences on every parameter coordinate (or a seeded sample
when a network has more than `max_coords`), run in float64. The reported
relative error uses a small floor so near-zero coordinates do not blow up
the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ParamStore


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_block: str
    num_checked: int
    per_block: dict

    def __str__(self):
        return (f"grad check: {self.num_checked} coords, max rel err "
                f"{self.max_rel_err:.3e} in {self.worst_block!r}")


def grad_check(loss_fn, store: ParamStore, max_coords: int = 200,
               h: float = 1e-5, rel_floor: float = 1e-6,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    loss_fn(store) must zero the store's gradients, run forward plus
    backward, and return the scalar loss. The store must be float64;
    float32 is rejected because the difference quotient would drown in
    rounding noise.
    """
    if store.dtype != np.float64:
        raise ValueError("grad_check requires a float64 store (use store.astype)")
    rng = rng or np.random.default_rng(0)

    loss_fn(store)
    analytic = {name: g.copy() for name, g in store.grads.items()}

    coords = [(name, idx) for name, b in store.blocks.items()
              for idx in range(b.size)]
    if len(coords) > max_coords:
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    max_err, worst = 0.0, ""
    per_block: dict[str, float] = {}
    for name, idx in coords:
        flat = store.blocks[name].reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + h
        up = loss_fn(store)
        flat[idx] = orig - h
        down = loss_fn(store)
        flat[idx] = orig
        numeric = (up - down) / (2.0 * h)
        a = float(analytic[name].reshape(-1)[idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
        per_block[name] = max(per_block.get(name, 0.0), err)
        if err > max_err:
            max_err, worst = err, name

    return GradCheckReport(max_rel_err=max_err, worst_block=worst,
                           num_checked=len(coords), per_block=per_block)
