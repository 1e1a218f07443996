"""Adam with per-parameter-group learning rates and post-step projections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class AdamState:
    lr: dict[str, float]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    clamps: dict[str, Callable[[np.ndarray], np.ndarray]] | None = None,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays.

    ``state`` is advanced in place. ``clamps`` maps parameter names to
    projections applied after the step (e.g. clipping to [0, 1]).
    """
    for k, p in params.items():
        if k not in grads:
            raise ValueError(f"missing gradient for {k!r}")
        if np.shape(grads[k]) != np.shape(p):
            raise ValueError(f"shape mismatch for {k!r}: {np.shape(grads[k])} vs {np.shape(p)}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    out = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if k not in state.m:
            state.m[k] = np.zeros_like(p, dtype=np.float64)
            state.v[k] = np.zeros_like(p, dtype=np.float64)
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        new = p - state.lr.get(k, 0.0) * m_hat / (np.sqrt(v_hat) + state.eps)
        if clamps and k in clamps:
            new = clamps[k](new)
        out[k] = new
    return out
