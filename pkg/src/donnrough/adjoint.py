"""Reverse-mode gradients of the detector loss with respect to every phase.

The network is a fixed linear chain, so the adjoint is written out by hand.
Complex cotangents follow the convention G = dL/dRe(u) + i dL/dIm(u); with it
the adjoint of a linear map A is A^H and for v = exp(i phi) * w we get
dL/dphi = Im(conj(v) * G_v).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .optics import (
    ComplexField,
    DonnModel,
    _as_array,
    adjoint_propagate_array,
    data_loss,
    forward,
    one_hot,
    propagate_array,
    softmax,
)
from .roughness import intra_block_grad, intra_block_variance, mask_roughness, roughness_grad


class TapeInvalidError(RuntimeError):
    pass


def model_fingerprint(model: DonnModel) -> str:
    h = hashlib.blake2b(digest_size=16)
    for m in model.masks:
        h.update(m.phase.tobytes())
    return h.hexdigest()


@dataclass
class ForwardTape:
    pre_modulation: list  # field arriving at each layer, before its mask
    detector_field: np.ndarray
    sums: np.ndarray
    probs: np.ndarray
    fingerprint: str

    @property
    def depth(self) -> int:
        return len(self.pre_modulation)


def forward_with_tape(model: DonnModel, inp) -> tuple[np.ndarray, ForwardTape]:
    u = _as_array(model, inp)
    kernel = model.kernel
    cached = []
    for mask in model.masks:
        u = propagate_array(u, kernel)
        cached.append(u)
        u = u * mask.transmission()
    u = propagate_array(u, kernel)
    sums = model.layout.sums(np.abs(u) ** 2)
    tape = ForwardTape(cached, u, sums, softmax(sums), model_fingerprint(model))
    return sums, tape


def backward(tape: ForwardTape, model: DonnModel, target) -> list:
    """Gradient of the mean data loss over the batch, one n x n array per layer."""
    if tape.depth != model.depth or tape.fingerprint != model_fingerprint(model):
        raise TapeInvalidError("model changed since the forward tape was recorded")
    probs = tape.probs
    t = one_hot(target, probs.shape[-1])
    batch = probs.shape[0] if probs.ndim > 1 else 1
    d_probs = 2.0 * (probs - t) / probs.shape[-1] / batch
    d_sums = probs * (d_probs - np.sum(probs * d_probs, axis=-1, keepdims=True))

    n = model.geometry.n
    labels = model.layout.label_map(n)
    on_detector = labels >= 0
    d_int = np.zeros(tape.detector_field.shape)
    d_int[..., on_detector] = d_sums[..., labels[on_detector]]

    kernel = model.kernel
    g = adjoint_propagate_array(2.0 * tape.detector_field * d_int, kernel)
    grads = [None] * model.depth
    for layer in range(model.depth - 1, -1, -1):
        w = tape.pre_modulation[layer]
        tr = model.masks[layer].transmission()
        v = w * tr
        gp = np.imag(np.conj(v) * g)
        grads[layer] = gp.reshape(-1, n, n).sum(axis=0) if gp.ndim > 2 else gp
        if layer:
            g = adjoint_propagate_array(np.conj(tr) * g, kernel)
    return grads


def loss_and_grad(model: DonnModel, inp, target) -> tuple[float, list]:
    sums, tape = forward_with_tape(model, inp)
    loss = float(np.mean(data_loss(sums, target)))
    return loss, backward(tape, model, target)


def regularizer(model: DonnModel, p: float = 0.0, q: float = 0.0, k: int = 8, block: int = 1) -> float:
    total = 0.0
    if p:
        total += p * sum(mask_roughness(m, k) for m in model.masks)
    if q:
        total += q * sum(intra_block_variance(m, block) for m in model.masks)
    return total


def regularizer_grad(model: DonnModel, p: float = 0.0, q: float = 0.0, k: int = 8, block: int = 1) -> list:
    out = []
    for m in model.masks:
        g = np.zeros_like(m.phase)
        if p:
            g += p * roughness_grad(m, k)
        if q:
            g += q * intra_block_grad(m, block)
        out.append(g)
    return out


def objective(model: DonnModel, inp, target, p=0.0, q=0.0, k=8, block=1) -> float:
    """Mean data loss plus p * sum R(W_l) plus q * sum R_intra(W_l)."""
    _, sums = forward(model, inp)
    return float(np.mean(data_loss(sums, target))) + regularizer(model, p, q, k, block)


def objective_grad(model: DonnModel, inp, target, p=0.0, q=0.0, k=8, block=1) -> tuple[float, list]:
    loss, grads = loss_and_grad(model, inp, target)
    reg = regularizer_grad(model, p, q, k, block)
    return loss + regularizer(model, p, q, k, block), [g + r for g, r in zip(grads, reg)]


def finite_diff_grad(model: DonnModel, inp, target, eps: float = 1e-6, p=0.0, q=0.0, k=8, block=1) -> list:
    """Central differences of ``objective``, one full forward per evaluation."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if isinstance(inp, ComplexField):
        inp = inp.data
    probe = model.copy()
    grads = []
    for layer, mask in enumerate(probe.masks):
        g = np.zeros_like(mask.phase)
        for idx in np.ndindex(mask.phase.shape):
            orig = mask.phase[idx]
            mask.phase[idx] = orig + eps
            up = objective(probe, inp, target, p, q, k, block)
            mask.phase[idx] = orig - eps
            down = objective(probe, inp, target, p, q, k, block)
            mask.phase[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_err(analytic, reference) -> float:
    """Largest absolute deviation relative to the largest reference entry."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    r = np.concatenate([np.ravel(x) for x in reference])
    scale = np.max(np.abs(r))
    return float(np.max(np.abs(a - r)) / scale) if scale > 0 else float(np.max(np.abs(a - r)))
