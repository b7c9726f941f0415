"""Scalar free-space optics for a phase-only diffractive network.

Fields are complex numpy arrays whose last two axes are the n x n grid; any
leading axes are treated as a batch. Propagation uses the band-limited
angular spectrum transfer function evaluated on the FFT frequency grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NUM_CLASSES = 10


class OpticsError(ValueError):
    pass


class InvalidGeometryError(OpticsError):
    pass


class DimensionError(OpticsError):
    pass


class InvalidIntensityError(OpticsError):
    pass


@dataclass(frozen=True)
class Geometry:
    n: int
    pixel_pitch: float
    wavelength: float
    distance: float

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise InvalidGeometryError(f"grid size must be even and >= 2, got {self.n}")
        if not self.pixel_pitch > 0:
            raise InvalidGeometryError(f"pixel pitch must be positive, got {self.pixel_pitch}")
        if not self.wavelength > 0:
            raise InvalidGeometryError(f"wavelength must be positive, got {self.wavelength}")
        if not self.distance >= 0:
            raise InvalidGeometryError(f"distance must be non-negative, got {self.distance}")

    @property
    def extent(self) -> float:
        """Physical side length of the grid in meters."""
        return self.n * self.pixel_pitch

    def fresnel_number(self) -> float:
        half = self.extent / 2
        return half * half / (self.wavelength * self.distance) if self.distance else math.inf


@dataclass
class ComplexField:
    geometry: Geometry
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.shape[-2:] != (self.geometry.n, self.geometry.n):
            raise DimensionError(
                f"field grid {self.data.shape[-2:]} does not match geometry n={self.geometry.n}"
            )
        if not np.all(np.isfinite(self.data)):
            raise OpticsError("field contains non-finite values")

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.data) ** 2

    def power(self) -> np.ndarray:
        return self.intensity.sum(axis=(-2, -1))


@dataclass(frozen=True)
class PropagationKernel:
    geometry: Geometry
    z: float
    h_spectral: np.ndarray

    def conjugate(self) -> "PropagationKernel":
        """Kernel of the exact inverse (back-)propagation over the same distance."""
        return PropagationKernel(self.geometry, -self.z, np.conj(self.h_spectral))


@dataclass
class PhaseMask:
    """One diffractive layer; the transmission is exp(i * phase).

    ``block_mask`` marks b x b blocks that are pinned (sparsified). Pixels of a
    pinned block hold phase 0, or exactly 2*pi after periodic smoothing.
    """

    phase: np.ndarray
    block_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.phase = np.array(self.phase, dtype=np.float64)
        if self.phase.ndim != 2 or self.phase.shape[0] != self.phase.shape[1]:
            raise DimensionError(f"phase mask must be square 2-D, got shape {self.phase.shape}")
        if not np.all(np.isfinite(self.phase)):
            raise OpticsError("phase mask contains non-finite values")
        if self.block_mask is not None:
            self.block_mask = np.array(self.block_mask, dtype=bool)
            nb = self.block_mask.shape[0]
            if self.block_mask.shape != (nb, nb) or self.n % nb:
                raise DimensionError(
                    f"block mask {self.block_mask.shape} does not tile a {self.n}x{self.n} mask"
                )
            pinned = self.phase[self.pixel_mask()]
            if not np.all((pinned == 0.0) | (pinned == 2 * np.pi)):
                raise OpticsError("pinned blocks must hold phase 0 (or exactly 2*pi)")

    @property
    def n(self) -> int:
        return self.phase.shape[0]

    def pixel_mask(self) -> np.ndarray:
        """Boolean n x n array, True where the pixel belongs to a pinned block."""
        if self.block_mask is None:
            return np.zeros(self.phase.shape, dtype=bool)
        b = self.n // self.block_mask.shape[0]
        return np.kron(self.block_mask, np.ones((b, b), dtype=bool)).astype(bool)

    def transmission(self) -> np.ndarray:
        return np.exp(1j * self.phase)

    def copy(self) -> "PhaseMask":
        return PhaseMask(self.phase.copy(), None if self.block_mask is None else self.block_mask.copy())


@dataclass(frozen=True)
class DetectorLayout:
    regions: tuple  # of (row0, col0, height, width)

    def validate(self, n: int) -> None:
        if len(self.regions) != NUM_CLASSES:
            raise DimensionError(f"need {NUM_CLASSES} detector regions, got {len(self.regions)}")
        cover = np.zeros((n, n), dtype=int)
        for r0, c0, h, w in self.regions:
            if h < 1 or w < 1 or r0 < 0 or c0 < 0 or r0 + h > n or c0 + w > n:
                raise DimensionError(f"detector region {(r0, c0, h, w)} outside the {n}x{n} grid")
            cover[r0:r0 + h, c0:c0 + w] += 1
        if cover.max() > 1:
            raise DimensionError("detector regions overlap")

    @classmethod
    def evenly(cls, n: int) -> "DetectorLayout":
        """Two rows of five square regions of side n // 10.

        Row centers sit at n/3 and 2n/3, column centers at n(2k+1)/10.
        """
        s = max(1, n // 10)
        rows = [n // 3, 2 * n // 3]
        cols = [n * (2 * k + 1) // 10 for k in range(5)]
        regions = tuple((r - s // 2, c - s // 2, s, s) for r in rows for c in cols)
        layout = cls(regions)
        layout.validate(n)
        return layout

    def label_map(self, n: int) -> np.ndarray:
        """n x n int array holding the class of each detector pixel, -1 elsewhere."""
        out = np.full((n, n), -1, dtype=np.int64)
        for c, (r0, c0, h, w) in enumerate(self.regions):
            out[r0:r0 + h, c0:c0 + w] = c
        return out

    def sums(self, intensity: np.ndarray) -> np.ndarray:
        return np.stack(
            [intensity[..., r0:r0 + h, c0:c0 + w].sum(axis=(-2, -1)) for r0, c0, h, w in self.regions],
            axis=-1,
        )


@dataclass
class DonnModel:
    geometry: Geometry
    masks: list
    layout: DetectorLayout = None
    pad: bool = False
    _kernel: Optional[PropagationKernel] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.masks:
            raise DimensionError("a model needs at least one phase mask")
        for m in self.masks:
            if m.n != self.geometry.n:
                raise DimensionError(f"mask size {m.n} does not match geometry n={self.geometry.n}")
        if self.layout is None:
            self.layout = DetectorLayout.evenly(self.geometry.n)
        self.layout.validate(self.geometry.n)

    @classmethod
    def init(cls, geometry: Geometry, depth: int = 3, rng=None, how: str = "uniform", **kw) -> "DonnModel":
        rng = np.random.default_rng(rng)
        n = geometry.n
        if how == "uniform":
            masks = [PhaseMask(rng.uniform(0, 2 * np.pi, (n, n))) for _ in range(depth)]
        elif how == "zeros":
            masks = [PhaseMask(np.zeros((n, n))) for _ in range(depth)]
        else:
            raise ValueError(f"unknown init {how!r}")
        return cls(geometry, masks, **kw)

    @property
    def depth(self) -> int:
        return len(self.masks)

    @property
    def kernel(self) -> PropagationKernel:
        if self._kernel is None:
            self._kernel = build_kernel(self.geometry, self.geometry.distance, pad=self.pad)
        return self._kernel

    def phases(self) -> list:
        return [m.phase for m in self.masks]

    def copy(self) -> "DonnModel":
        clone = DonnModel(self.geometry, [m.copy() for m in self.masks], self.layout, self.pad)
        clone._kernel = self._kernel
        return clone


def build_kernel(geometry: Geometry, z: float, pad: bool = False) -> PropagationKernel:
    """Band-limited angular spectrum transfer function for distance ``z``.

    With ``pad`` the kernel lives on a 2n grid so that ``propagate`` performs a
    linear rather than circular convolution.
    """
    if not z >= 0:
        raise InvalidGeometryError(f"propagation distance must be non-negative, got {z}")
    m = 2 * geometry.n if pad else geometry.n
    f = np.fft.fftfreq(m, d=geometry.pixel_pitch)
    fx, fy = np.meshgrid(f, f, indexing="ij")
    arg = geometry.wavelength ** -2 - fx ** 2 - fy ** 2
    propagating = arg >= 0
    h = np.zeros((m, m), dtype=np.complex128)
    h[propagating] = np.exp(1j * 2 * np.pi * z * np.sqrt(arg[propagating]))
    return PropagationKernel(geometry, z, h)


def _check_kernel(u: np.ndarray, kernel: PropagationKernel) -> None:
    n = kernel.geometry.n
    if u.shape[-2:] != (n, n):
        raise DimensionError(f"field grid {u.shape[-2:]} does not match kernel grid {n}")


def propagate_array(u: np.ndarray, kernel: PropagationKernel) -> np.ndarray:
    _check_kernel(u, kernel)
    n = kernel.geometry.n
    h = kernel.h_spectral
    if h.shape[-1] == n:
        return np.fft.ifft2(np.fft.fft2(u) * h)
    padded = np.zeros(u.shape[:-2] + h.shape, dtype=np.complex128)
    padded[..., :n, :n] = u
    return np.fft.ifft2(np.fft.fft2(padded) * h)[..., :n, :n]


def adjoint_propagate_array(g: np.ndarray, kernel: PropagationKernel) -> np.ndarray:
    """Hermitian adjoint of ``propagate_array``."""
    _check_kernel(g, kernel)
    n = kernel.geometry.n
    h = np.conj(kernel.h_spectral)
    if h.shape[-1] == n:
        return np.fft.ifft2(np.fft.fft2(g) * h)
    padded = np.zeros(g.shape[:-2] + h.shape, dtype=np.complex128)
    padded[..., :n, :n] = g
    return np.fft.ifft2(np.fft.fft2(padded) * h)[..., :n, :n]


def propagate(field: ComplexField, kernel: PropagationKernel) -> ComplexField:
    if field.geometry.n != kernel.geometry.n:
        raise DimensionError("field and kernel geometries differ")
    return ComplexField(field.geometry, propagate_array(field.data, kernel))


def modulate(field: ComplexField, mask: PhaseMask) -> ComplexField:
    if field.data.shape[-2:] != mask.phase.shape:
        raise DimensionError(f"field grid {field.data.shape[-2:]} vs mask {mask.phase.shape}")
    return ComplexField(field.geometry, field.data * mask.transmission())


def diff_mod(field: ComplexField, mask: PhaseMask, kernel: PropagationKernel) -> ComplexField:
    return modulate(propagate(field, kernel), mask)


def _as_array(model: DonnModel, inp) -> np.ndarray:
    if isinstance(inp, ComplexField):
        if inp.geometry.n != model.geometry.n:
            raise DimensionError("input geometry does not match the model")
        return inp.data
    u = np.asarray(inp, dtype=np.complex128)
    if u.shape[-2:] != (model.geometry.n, model.geometry.n):
        raise DimensionError(f"input grid {u.shape[-2:]} does not match model n={model.geometry.n}")
    return u


def forward(model: DonnModel, inp) -> tuple[np.ndarray, np.ndarray]:
    """Return (detector intensity, per-class region sums).

    ``inp`` is a ComplexField or a complex array of shape (..., n, n).
    """
    u = _as_array(model, inp)
    kernel = model.kernel
    for mask in model.masks:
        u = propagate_array(u, kernel) * mask.transmission()
    u = propagate_array(u, kernel)
    intensity = np.abs(u) ** 2
    return intensity, model.layout.sums(intensity)


def predict(sums) -> np.ndarray | int:
    s = np.asarray(sums, dtype=np.float64)
    if np.isnan(s).any():
        raise InvalidIntensityError("detector sums contain NaN")
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    out = np.argmax(s, axis=-1)
    return int(out) if out.ndim == 0 else out


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(target, classes: int = NUM_CLASSES) -> np.ndarray:
    t = np.asarray(target)
    if np.any((t < 0) | (t >= classes)):
        raise ValueError(f"class index out of range [0, {classes})")
    return np.eye(classes)[t]


def data_loss(sums, target) -> np.ndarray | float:
    """Mean squared error between softmax(sums) and the one-hot target.

    Batched inputs return one loss per sample.
    """
    s = softmax(np.asarray(sums, dtype=np.float64))
    t = one_hot(target, s.shape[-1])
    loss = np.mean((s - t) ** 2, axis=-1)
    return float(loss) if loss.ndim == 0 else loss


def fold_forward(model: DonnModel, field: ComplexField) -> ComplexField:
    """Explicit DiffMod chain followed by the final hop to the detector plane."""
    k = model.kernel
    for mask in model.masks:
        field = diff_mod(field, mask, k)
    return propagate(field, k)


__all__: Sequence[str] = [
    "Geometry", "ComplexField", "PropagationKernel", "PhaseMask", "DetectorLayout", "DonnModel",
    "build_kernel", "propagate", "modulate", "diff_mod", "forward", "predict", "data_loss",
    "softmax", "one_hot", "fold_forward", "propagate_array", "adjoint_propagate_array",
    "OpticsError", "InvalidGeometryError", "DimensionError", "InvalidIntensityError", "NUM_CLASSES",
]
