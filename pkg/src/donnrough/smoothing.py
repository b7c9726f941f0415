"""Roughness reduction by adding 0 or 2*pi to each phase pixel.

exp(i(phi + 2 pi)) = exp(i phi), so any offset assignment leaves the optical
forward model untouched while changing the roughness score. The assignment is
searched with a Gumbel-Softmax relaxation; ``brute_force_offsets`` enumerates
every assignment of tiny masks as a reference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optics import PhaseMask
from .optim import AdamState, adam_step
from .roughness import OFFSETS, mask_roughness, roughness_grad

TWO_PI = 2 * np.pi
MAX_BRUTE_FORCE_N = 4


class SizeGuardError(ValueError):
    pass


@dataclass
class GsConfig:
    steps: int = 1000
    logit_lr: float = 0.01
    tau_start: float = 5.0
    tau_end: float = 0.5

    def __post_init__(self):
        if self.steps < 1 or not self.logit_lr > 0:
            raise ValueError("steps and logit_lr must be positive")
        if not (self.tau_start > 0 and self.tau_end > 0):
            raise ValueError("temperatures must be positive")


def _phase(mask) -> np.ndarray:
    return mask.phase if isinstance(mask, PhaseMask) else np.asarray(mask, dtype=np.float64)


def apply_offsets(mask: PhaseMask, bits) -> PhaseMask:
    bits = np.asarray(bits, dtype=bool)
    if bits.shape != mask.phase.shape:
        raise ValueError(f"offset bits {bits.shape} do not match mask {mask.phase.shape}")
    block = None if mask.block_mask is None else mask.block_mask.copy()
    return PhaseMask(mask.phase + TWO_PI * bits, block)


def batch_roughness(phases: np.ndarray, k: int = 8) -> np.ndarray:
    """Roughness of a stack of masks with shape (..., r, c)."""
    rows, cols = phases.shape[-2:]
    pad = [(0, 0)] * (phases.ndim - 2) + [(1, 1), (1, 1)]
    padded = np.pad(phases, pad)
    total = np.zeros(phases.shape[:-2])
    for di, dj in OFFSETS[k]:
        nb = padded[..., 1 + di:1 + di + rows, 1 + dj:1 + dj + cols]
        total += np.abs(nb - phases).sum(axis=(-2, -1))
    return total / k


def brute_force_offsets(mask, k: int = 8) -> tuple[np.ndarray, float]:
    """Exhaustive minimum over all 2**(n*n) assignments.

    Pixel j (row-major) is bit j of the assignment code; ties go to the
    smallest code.
    """
    phase = _phase(mask)
    n = phase.shape[0]
    if n > MAX_BRUTE_FORCE_N:
        raise SizeGuardError(f"exhaustive search limited to n <= {MAX_BRUTE_FORCE_N}, got {n}")
    count = phase.size
    codes = np.arange(2 ** count, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(count)) & 1).astype(bool).reshape(-1, *phase.shape)
    values = batch_roughness(phase + TWO_PI * bits, k)
    best = int(np.argmin(values))  # first occurrence = smallest code
    assert np.all(values[best] <= values)
    return bits[best], float(values[best])


def gs_optimize(mask, k: int = 8, config: GsConfig | None = None, rng=None) -> tuple[np.ndarray, float, float]:
    """Search {0, 2*pi} offsets with a Gumbel-Softmax relaxation.

    Returns (bits, roughness before, roughness after). The result never has
    higher roughness than the input: a worse assignment is replaced by all-False.
    """
    config = config or GsConfig()
    rng = np.random.default_rng(rng)
    phase = _phase(mask)
    before = mask_roughness(phase, k)
    logits = [np.zeros(phase.shape + (2,))]
    adam = AdamState()
    ratio = config.tau_end / config.tau_start
    for t in range(config.steps):
        tau = config.tau_start * ratio ** (t / max(config.steps - 1, 1))
        y = (logits[0] + rng.gumbel(size=logits[0].shape)) / tau
        y -= y.max(axis=-1, keepdims=True)
        e = np.exp(y)
        prob = e[..., 1] / e.sum(axis=-1)
        d_offset = TWO_PI * roughness_grad(phase + TWO_PI * prob, k)
        d_y1 = d_offset * prob * (1 - prob) / tau
        adam_step(logits, [np.stack([-d_y1, d_y1], axis=-1)], adam, config.logit_lr)
    bits = logits[0][..., 1] > logits[0][..., 0]
    after = mask_roughness(phase + TWO_PI * bits, k)
    if after > before:
        bits = np.zeros(phase.shape, dtype=bool)
        after = before
    return bits, before, after
