from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    """Adam moments for a named set of leaves (Kingma & Ba, with bias correction)."""

    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(state: AdamState, leaves: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """One Adam update. Returns ``(new_leaves, state)``; ``state`` is advanced in place."""
    if leaves.keys() != grads.keys():
        raise ValueError(f"gradient keys {sorted(grads)} do not match leaves {sorted(leaves)}")
    for name, g in grads.items():
        if np.shape(g) != np.shape(leaves[name]):
            raise ValueError(f"gradient for {name!r} has shape {np.shape(g)}, leaf has {np.shape(leaves[name])}")
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name!r} at step {state.t + 1}")

    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    out = {}
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        out[name] = leaves[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, state
