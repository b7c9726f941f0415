"""Adam and minibatch helpers shared by dense training and SLR."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2 * np.pi


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list, grads: list, state: AdamState, lr: float, frozen: list | None = None,
              wrap: bool = False) -> list:
    """Bias-corrected Adam update, applied in place; returns ``params``.

    ``frozen`` optionally holds one boolean array per parameter whose True
    entries are never moved (their moments stay zero). With ``wrap`` the
    updated values are folded back into [0, 2*pi).
    """
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes differ")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if frozen is not None and frozen[i] is not None:
            g = np.where(frozen[i], 0.0, g)
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if wrap:
            np.mod(p, TWO_PI, out=p)
    return params


def minibatches(count: int, batch_size: int, rng: np.random.Generator):
    """Yield index arrays covering a fresh permutation of ``range(count)``."""
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]
