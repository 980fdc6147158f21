"""Adam with bias correction, operating on named parameter dicts."""

from __future__ import annotations

import numpy as np

from .errors import ContractError

__all__ = ["AdamState", "adam_step"]


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, step_size: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """Update `params` in place from `grads`. Missing grads are an error:
    callers should pass explicit zeros for off-path parameters so the
    moment estimates stay aligned with the step counter."""
    missing = set(params) - set(grads)
    if missing:
        raise ContractError(f"adam_step missing grads for {sorted(missing)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"grad shape {g.shape} != param shape {p.shape} for '{name}'")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.step_size * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
