"""Phase-mask roughness metrics and their (sub)gradients.

Pixel roughness is the mean absolute phase difference to the k = 4 or 8
neighbours, with out-of-grid neighbours read as 0 (one pixel of zero padding).
The divisor is always k, including at the border.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .optics import DonnModel, PhaseMask

OFFSETS = {
    4: ((-1, 0), (0, -1), (0, 1), (1, 0)),
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


class PartitionError(ValueError):
    pass


def _phase(mask) -> np.ndarray:
    return mask.phase if isinstance(mask, PhaseMask) else np.asarray(mask, dtype=np.float64)


def _offsets(k: int):
    try:
        return OFFSETS[k]
    except KeyError:
        raise ValueError(f"neighbour mode must be 4 or 8, got {k}") from None


def pixel_roughness(mask, i: int, j: int, k: int = 8) -> float:
    p = _phase(mask)
    rows, cols = p.shape
    if not (0 <= i < rows and 0 <= j < cols):
        raise IndexError(f"pixel ({i}, {j}) outside a {rows}x{cols} mask")
    total = 0.0
    for di, dj in _offsets(k):
        a, b = i + di, j + dj
        nb = p[a, b] if 0 <= a < rows and 0 <= b < cols else 0.0
        total += abs(nb - p[i, j])
    return total / k


def _neighbour_diffs(p: np.ndarray, k: int):
    rows, cols = p.shape
    padded = np.pad(p, 1)
    for di, dj in _offsets(k):
        yield (di, dj), padded[1 + di:1 + di + rows, 1 + dj:1 + dj + cols] - p


def roughness_map(mask, k: int = 8) -> np.ndarray:
    """Per-pixel roughness for the whole mask."""
    p = _phase(mask)
    out = np.zeros_like(p)
    for _, d in _neighbour_diffs(p, k):
        out += np.abs(d)
    return out / k


def mask_roughness(mask, k: int = 8) -> float:
    return float(roughness_map(mask, k).sum())


def roughness_grad(mask, k: int = 8) -> np.ndarray:
    """Subgradient of ``mask_roughness``; exact ties contribute 0."""
    p = _phase(mask)
    rows, cols = p.shape
    acc = np.zeros((rows + 2, cols + 2))
    for (di, dj), d in _neighbour_diffs(p, k):
        s = np.sign(d)
        acc[1:-1, 1:-1] -= s
        # the neighbour's own value moves the same term the other way; padded cells are dropped below
        acc[1 + di:1 + di + rows, 1 + dj:1 + dj + cols] += s
    return acc[1:-1, 1:-1] / k


def _blocks(p: np.ndarray, b: int) -> np.ndarray:
    n = p.shape[0]
    if b < 1 or n % b or p.shape[1] % b:
        raise PartitionError(f"block size {b} does not divide mask shape {p.shape}")
    return p.reshape(n // b, b, p.shape[1] // b, b)


def intra_block_variance(mask, b: int) -> float:
    """Sum over b x b blocks of the population variance inside each block."""
    blk = _blocks(_phase(mask), b)
    return float(blk.var(axis=(1, 3)).sum())


def intra_block_grad(mask, b: int) -> np.ndarray:
    p = _phase(mask)
    blk = _blocks(p, b)
    mean = blk.mean(axis=(1, 3), keepdims=True)
    return ((2.0 / (b * b)) * (blk - mean)).reshape(p.shape)


@dataclass
class RoughnessReport:
    per_layer: list
    mode: int
    overall: float = field(init=False)

    def __post_init__(self):
        self.per_layer = [float(v) for v in self.per_layer]
        self.overall = float(np.mean(self.per_layer))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "roughness", "mode"])
        for i, r in enumerate(self.per_layer):
            w.writerow([i, repr(r), self.mode])
        w.writerow(["overall", repr(self.overall), self.mode])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> list:
        """Parse one or more reports (grouped by mode) written by ``to_csv``."""
        by_mode: dict = {}
        for row in csv.DictReader(io.StringIO(text)):
            if row["layer"] == "layer":
                continue
            if row["layer"] != "overall":
                by_mode.setdefault(int(row["mode"]), []).append(float(row["roughness"]))
        return [cls(v, m) for m, v in by_mode.items()]


def overall_roughness(model: DonnModel, k: int = 8) -> RoughnessReport:
    return RoughnessReport([mask_roughness(m, k) for m in model.masks], k)
