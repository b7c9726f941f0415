"""Block sparsification of phase masks by surrogate Lagrangian relaxation.

Each layer W_i gets a duplicate Z_i restricted to masks with a fixed number of
all-zero b x b blocks. The W-subproblem is solved approximately by Adam on the
augmented Lagrangian, the Z-subproblem exactly by Euclidean projection.
Multipliers move only when the matching surrogate optimality test passes.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .adjoint import loss_and_grad, objective, regularizer_grad
from .optics import DonnModel, forward, predict
from .optim import AdamState, adam_step, minibatches
from .roughness import mask_roughness

log = logging.getLogger(__name__)

STEP_MIN, STEP_MAX = 1e-12, 1e3


class SlrDivergenceError(RuntimeError):
    pass


@dataclass
class SlrConfig:
    rho: float = 0.1
    M: float = 300.0
    r: float = 0.1
    s0: float = 0.01
    sparsity_ratio: float = 0.1
    block_size: int = 8
    inner_steps: Optional[int] = None  # None: one pass over the training set
    outer_iters: int = 10
    learning_rate: float = 0.001
    finetune_epochs: Optional[int] = None  # None: 10% of the dense epochs, at least 1
    tol: float = 1e-3
    surrogate_samples: int = 1000

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.M > 1:
            raise ValueError("M must exceed 1")
        if not 0 < self.r < 1:
            raise ValueError("r must lie in (0, 1)")
        if not self.s0 > 0:
            raise ValueError("s0 must be positive")
        if not 0 <= self.sparsity_ratio <= 1:
            raise ValueError("sparsity ratio must lie in [0, 1]")
        if self.block_size < 1 or self.outer_iters < 0 or not self.learning_rate > 0:
            raise ValueError("block size, outer iterations and learning rate must be positive")


@dataclass
class SlrState:
    Z: list
    Lam: list
    s_primal: float
    s_dual: float
    k: int = 1
    surrogate: float = math.nan
    W_prev: list = field(default_factory=list)
    history: list = field(default_factory=list)


# ------------------------------------------------------------------ projection

def block_count(n: int, b: int) -> int:
    if b < 1 or n % b:
        raise ValueError(f"block size {b} does not divide {n}")
    return (n // b) ** 2


def zeroed_blocks(ratio: float, total: int) -> int:
    if not 0 <= ratio <= 1:
        raise ValueError(f"sparsity ratio must lie in [0, 1], got {ratio}")
    # tolerance keeps e.g. 0.3 * 10 from rounding up to 4
    return min(total, math.ceil(ratio * total - 1e-9))


def block_norms(w: np.ndarray, b: int) -> np.ndarray:
    n = w.shape[0]
    block_count(n, b)
    return np.sqrt((w.reshape(n // b, b, n // b, b) ** 2).sum(axis=(1, 3)))


def select_blocks(w: np.ndarray, b: int, ratio: float) -> np.ndarray:
    """Boolean (n/b, n/b) grid, True for the blocks with the smallest L2 norms."""
    norms = block_norms(w, b)
    m = zeroed_blocks(ratio, norms.size)
    chosen = np.zeros(norms.size, dtype=bool)
    chosen[np.argsort(norms.ravel(), kind="stable")[:m]] = True
    return chosen.reshape(norms.shape)


def expand_blocks(block_mask: np.ndarray, b: int) -> np.ndarray:
    return np.kron(block_mask, np.ones((b, b), dtype=bool)).astype(bool)


def block_project(w: np.ndarray, b: int, ratio: float) -> np.ndarray:
    """Nearest matrix (Frobenius) with ceil(ratio * #blocks) all-zero blocks."""
    w = np.asarray(w, dtype=np.float64)
    out = w.copy()
    out[expand_blocks(select_blocks(w, b, ratio), b)] = 0.0
    return out


def alt_sparsify(w, ratio: float, scheme: str = "block", block_size: int = 10, bank_size: int = 15) -> np.ndarray:
    """Zero a ``ratio`` share of ``w`` using one of three sparsity patterns.

    unstructured: smallest-magnitude entries anywhere; bank_balanced: the same
    within every ``bank_size`` run of each row; block: smallest-norm blocks.
    """
    w = np.asarray(w, dtype=np.float64)
    if scheme == "block":
        return block_project(w, block_size, ratio)
    out = w.copy()
    if scheme == "unstructured":
        m = zeroed_blocks(ratio, w.size)
        flat = out.reshape(-1)
        flat[np.argsort(np.abs(w).reshape(-1), kind="stable")[:m]] = 0.0
        return out
    if scheme == "bank_balanced":
        rows, cols = w.shape
        if bank_size < 1 or cols % bank_size:
            raise ValueError(f"bank size {bank_size} does not divide row length {cols}")
        banks = out.reshape(rows, cols // bank_size, bank_size)
        m = zeroed_blocks(ratio, bank_size)
        idx = np.argsort(np.abs(banks), axis=-1, kind="stable")[..., :m]
        np.put_along_axis(banks, idx, 0.0, axis=-1)
        return out
    raise ValueError(f"unknown sparsity scheme {scheme!r}")


# ------------------------------------------------------------- lagrangian

def penalty(W: list, Z: list, Lam: list, rho: float) -> float:
    total = 0.0
    for w, z, lam in zip(W, Z, Lam):
        d = w - z
        total += float(np.sum(lam * d)) + 0.5 * rho * float(np.sum(d * d))
    return total


def augmented_lagrangian(model: DonnModel, inp, target, Z, Lam, rho, p=0.0, q=0.0, k=8, block=1) -> float:
    """Loss + roughness terms + sum tr(Lam^T (W - Z)) + rho/2 ||W - Z||_F^2."""
    return objective(model, inp, target, p, q, k, block) + penalty(model.phases(), Z, Lam, rho)


def _gap(W, Z) -> float:
    return math.sqrt(sum(float(np.sum((w - z) ** 2)) for w, z in zip(W, Z)))


# --------------------------------------------------------------- stepsizes

def slr_alpha(k: int, M: float, r: float) -> float:
    if k < 1:
        raise ValueError("iteration counter starts at 1")
    pk = 1.0 - 1.0 / k ** r
    return 1.0 - 1.0 / (M * k ** pk)


def _scaled(prev: float, alpha: float, num: float, den: float) -> float:
    if den == 0:
        return prev
    return float(np.clip(alpha * prev * num / den, STEP_MIN, STEP_MAX))


def primal_stepsize(prev_s, k, M, r, gap_prev, gap_now) -> float:
    """s'^k = alpha_k s^{k-1} ||W^{k-1} - Z^{k-1}|| / ||W^k - Z^{k-1}||."""
    return _scaled(prev_s, slr_alpha(k, M, r), gap_prev, gap_now)


def dual_stepsize(s_primal, k, M, r, gap_before, gap_after) -> float:
    """s^k = alpha_k s'^k ||W^k - Z^{k-1}|| / ||W^k - Z^k||."""
    return _scaled(s_primal, slr_alpha(k, M, r), gap_before, gap_after)


def slr_stepsizes(state: SlrState, W, Z_prev, Z_new, k, M, r) -> tuple[float, float]:
    s1 = primal_stepsize(state.s_dual, k, M, r, _gap(state.W_prev, Z_prev), _gap(W, Z_prev))
    s2 = dual_stepsize(s1, k, M, r, _gap(W, Z_prev), _gap(W, Z_new))
    return s1, s2


# ------------------------------------------------------------------ driver

def _accuracy(model, X, y) -> float:
    return float(np.mean(predict(forward(model, X)[1]) == y))


def _epoch(model, X, y, rng, batch_size, lr, adam, extra_grad, steps=None, frozen=None, wrap=False):
    done = 0
    while True:
        for idx in minibatches(len(y), batch_size, rng):
            _, grads = loss_and_grad(model, X[idx], y[idx])
            grads = [g + e for g, e in zip(grads, extra_grad())]
            adam_step(model.phases(), grads, adam, lr, frozen, wrap)
            done += 1
            if steps is not None and done >= steps:
                return
        if steps is None:
            return


def slr_sparsify(
    model: DonnModel,
    X: np.ndarray,
    y: np.ndarray,
    config: SlrConfig,
    p: float = 0.0,
    q: float = 0.0,
    k: int = 8,
    batch_size: int = 200,
    rng=None,
    finetune_epochs: int = 1,
    on_iter: Optional[Callable] = None,
    wrap: bool = False,
) -> tuple[DonnModel, SlrState]:
    """Sparsify a copy of ``model`` and return it with the SLR trace."""
    rng = np.random.default_rng(rng)
    model = model.copy()
    b, ratio, rho = config.block_size, config.sparsity_ratio, config.rho
    for m in model.masks:
        block_count(m.n, b)
    Xs, ys = X[:config.surrogate_samples], y[:config.surrogate_samples]
    W = model.phases()
    state = SlrState(
        Z=[block_project(w, b, ratio) for w in W],
        Lam=[np.zeros_like(w) for w in W],
        s_primal=config.s0,
        s_dual=config.s0,
    )
    adam = AdamState()

    def reg_grad():
        return regularizer_grad(model, p, q, k, b)

    def penalty_grad():
        return [lam + rho * (w - z) for w, z, lam in zip(model.phases(), state.Z, state.Lam)]

    def al_value():
        return augmented_lagrangian(model, Xs, ys, state.Z, state.Lam, rho, p, q, k, b)

    initial = al_value()
    state.surrogate = initial
    for it in range(1, config.outer_iters + 1):
        state.k = it
        state.W_prev = [w.copy() for w in model.phases()]
        Z_prev = state.Z
        before = al_value()

        _epoch(model, X, y, rng, batch_size, config.learning_rate, adam,
               lambda: [a + c for a, c in zip(reg_grad(), penalty_grad())], steps=config.inner_steps, wrap=wrap)
        W = model.phases()
        after = al_value()
        state.surrogate = after
        if not np.isfinite(after) or after > 10 * abs(initial):
            raise SlrDivergenceError(
                f"surrogate {after:.6g} exceeds 10x its initial value {initial:.6g} at iteration {it}"
            )

        cond1 = after < before
        lam_mid = state.Lam
        if cond1:
            state.s_primal = primal_stepsize(state.s_dual, it, config.M, config.r,
                                             _gap(state.W_prev, Z_prev), _gap(W, Z_prev))
            lam_mid = [lam + state.s_primal * (w - z) for lam, w, z in zip(state.Lam, W, Z_prev)]

        Z_new = [block_project(w + lam / rho, b, ratio) for w, lam in zip(W, lam_mid)]
        cond2 = penalty(W, Z_new, lam_mid, rho) < penalty(W, Z_prev, lam_mid, rho)
        if cond2:
            state.s_dual = dual_stepsize(state.s_primal, it, config.M, config.r, _gap(W, Z_prev), _gap(W, Z_new))
            lam_mid = [lam + state.s_dual * (w - z) for lam, w, z in zip(lam_mid, W, Z_new)]
        state.Z, state.Lam = Z_new, lam_mid

        gap = _gap(W, state.Z)
        rel = gap / max(_gap(W, [np.zeros_like(w) for w in W]), 1e-300)
        row = {
            "k": it,
            "surrogate": after,
            "gap": gap,
            "s_primal": state.s_primal,
            "s_dual": state.s_dual,
            "cond1": int(cond1),
            "cond2": int(cond2),
            "lam_norm": _gap(state.Lam, [np.zeros_like(w) for w in W]),
            "accuracy": _accuracy(model, Xs, ys),
        }
        state.history.append(row)
        log.info("slr k=%d L=%.6g |W-Z|=%.4g s'=%.3g s=%.3g", it, after, gap, state.s_primal, state.s_dual)
        if on_iter is not None:
            on_iter(row)
        if rel < config.tol:
            break

    harden(model, b, ratio)
    frozen = [m.pixel_mask() for m in model.masks]
    ft = AdamState()
    for _ in range(finetune_epochs):
        _epoch(model, X, y, rng, batch_size, config.learning_rate, ft, reg_grad, frozen=frozen, wrap=wrap)
    return model, state


def harden(model: DonnModel, b: int, ratio: float) -> DonnModel:
    """Zero the smallest-norm blocks of every layer in place and pin them."""
    for m in model.masks:
        chosen = select_blocks(m.phase, b, ratio)
        m.phase[expand_blocks(chosen, b)] = 0.0
        m.block_mask = chosen
    return model


def zero_block_count(mask, b: int) -> int:
    phase = mask.phase if hasattr(mask, "phase") else np.asarray(mask)
    return int(np.sum(block_norms(phase, b) == 0))


def trace_csv(history: list) -> str:
    buf = io.StringIO()
    cols = ["k", "surrogate", "gap", "s_primal", "s_dual", "cond1", "cond2", "lam_norm", "accuracy"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in history:
        w.writerow({c: repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols})
    return buf.getvalue()


def layer_roughness(model: DonnModel, k: int = 8) -> list:
    return [mask_roughness(m, k) for m in model.masks]
