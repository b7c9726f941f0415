"""Dataset ingestion, input encoding, checkpoints and mask export."""
from __future__ import annotations

import gzip
import io
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .optics import ComplexField, DetectorLayout, DonnModel, Geometry, PhaseMask

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
CHECKPOINT_FORMAT = "donnrough-checkpoint"
CHECKPOINT_VERSION = 1


class DataError(Exception):
    pass


class IdxMagicError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class ZeroPowerError(DataError):
    pass


class CheckpointError(DataError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (N, 28, 28) uint8
    labels: np.ndarray  # (N,) int64
    class_count: int = 10

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, start: int = 0, stop: int | None = None) -> "LabeledImageSet":
        return LabeledImageSet(self.images[start:stop], self.labels[start:stop], self.class_count)


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise IdxTruncatedError(f"{what} file too short for an IDX header ({len(raw)} bytes)")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxMagicError(f"{what} file has magic {got:#010x}, expected {magic:#010x}")
    if len(raw) < 4 + 4 * ndim:
        raise IdxTruncatedError(f"{what} file too short for an IDX header ({len(raw)} bytes)")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    header = 4 + 4 * ndim
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise IdxTruncatedError(f"{what} file holds {len(raw) - header} of {size} payload bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_count: int = 10) -> LabeledImageSet:
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, "image")
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, "label")
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images vs {len(labels)} labels")
    return LabeledImageSet(images.copy(), labels.astype(np.int64), class_count)


def write_idx(images, labels, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    # corner-aligned: output pixel 0 and dst-1 sit exactly on input pixels 0 and src-1
    pos = np.arange(dst) * (src - 1) / (dst - 1)
    lo = np.minimum(np.floor(pos).astype(int), src - 2)
    frac = pos - lo
    a = np.zeros((dst, src))
    a[np.arange(dst), lo] = 1 - frac
    a[np.arange(dst), lo + 1] = frac
    return a


def resize_bilinear(image, n: int) -> np.ndarray:
    """Upsample 28x28 byte images (optionally batched) to n x n values in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    src = img.shape[-1]
    if n < src:
        raise ValueError(f"downscaling from {src} to {n} is not supported")
    a = _interp_matrix(src, n)
    out = np.einsum("ij,...jk,lk->...il", a, img, a) / 255.0
    return np.clip(out, 0.0, 1.0)


def encode_input(image, geometry: Geometry | None = None):
    """Amplitude-encode an image with zero phase and unit total power.

    Batched input (..., n, n) is normalized per sample and returned as an array;
    a single image with a geometry comes back as a ComplexField.
    """
    amp = np.asarray(image, dtype=np.float64)
    power = np.sum(amp * amp, axis=(-2, -1), keepdims=True)
    if np.any(power <= 0):
        raise ZeroPowerError("image has no non-zero pixel")
    u = (amp / np.sqrt(power)).astype(np.complex128)
    if geometry is not None and amp.ndim == 2:
        return ComplexField(geometry, u)
    return u


def encode_dataset(data: LabeledImageSet, n: int) -> np.ndarray:
    return encode_input(resize_bilinear(data.images, n))


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: DonnModel, path, config_hash: str = "", extra: dict | None = None) -> None:
    """Write a JSON manifest line followed by little-endian float64 phase blobs."""
    blobs = []
    layers = []
    for m in model.masks:
        ph = m.phase.astype("<f8").tobytes()
        entry = {"shape": list(m.phase.shape), "phase_bytes": len(ph)}
        blobs.append(ph)
        if m.block_mask is not None:
            bm = m.block_mask.astype(np.uint8).tobytes()
            entry["block_shape"] = list(m.block_mask.shape)
            entry["block_bytes"] = len(bm)
            blobs.append(bm)
        layers.append(entry)
    g = model.geometry
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "geometry": {"n": g.n, "pixel_pitch": g.pixel_pitch, "wavelength": g.wavelength, "distance": g.distance},
        "depth": model.depth,
        "pad": model.pad,
        "layout": [list(r) for r in model.layout.regions],
        "config_hash": config_hash,
        "layers": layers,
        "extra": extra or {},
    }
    header = json.dumps(manifest, sort_keys=True).encode() + b"\n"
    Path(path).write_bytes(header + b"".join(blobs))


def read_manifest(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    head, sep, body = raw.partition(b"\n")
    if not sep:
        raise CorruptCheckpointError("checkpoint has no manifest line")
    try:
        manifest = json.loads(head)
    except (ValueError, UnicodeDecodeError) as e:
        raise CorruptCheckpointError(f"unreadable manifest: {e}") from None
    if not isinstance(manifest, dict) or manifest.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpointError("not a donnrough checkpoint")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {manifest.get('version')} != supported {CHECKPOINT_VERSION}"
        )
    return manifest, body


def load_checkpoint(path) -> DonnModel:
    manifest, body = read_manifest(path)
    try:
        geometry = Geometry(**manifest["geometry"])
        layers = manifest["layers"]
        layout = DetectorLayout(tuple(tuple(r) for r in manifest["layout"]))
        pad = bool(manifest.get("pad", False))
    except (KeyError, TypeError) as e:
        raise CorruptCheckpointError(f"incomplete manifest: {e}") from None
    if len(layers) != manifest.get("depth"):
        raise CorruptCheckpointError("layer table does not match depth")
    expected = sum(e["phase_bytes"] + e.get("block_bytes", 0) for e in layers)
    if len(body) != expected:
        raise CorruptCheckpointError(f"blob section holds {len(body)} bytes, manifest promises {expected}")
    masks = []
    pos = 0
    for e in layers:
        shape = tuple(e["shape"])
        if shape != (geometry.n, geometry.n) or 8 * shape[0] * shape[1] != e["phase_bytes"]:
            raise ShapeMismatchError(f"layer of shape {shape} in a checkpoint with n={geometry.n}")
        phase = np.frombuffer(body, dtype="<f8", count=shape[0] * shape[1], offset=pos).reshape(shape)
        pos += e["phase_bytes"]
        block = None
        if "block_shape" in e:
            bshape = tuple(e["block_shape"])
            block = np.frombuffer(body, dtype=np.uint8, count=e["block_bytes"], offset=pos)
            block = block.reshape(bshape).astype(bool)
            pos += e["block_bytes"]
        masks.append(PhaseMask(phase.astype(np.float64), block))
    return DonnModel(geometry, masks, layout, pad)


# ---------------------------------------------------------------- mask export

def export_mask(mask, path, fmt: str = "csv") -> None:
    phase = mask.phase if isinstance(mask, PhaseMask) else np.asarray(mask, dtype=np.float64)
    if fmt == "csv":
        lines = [",".join(repr(float(v)) for v in row) for row in phase]
        Path(path).write_text("\n".join(lines) + "\n")
    elif fmt == "pgm":
        lo, hi = float(phase.min()), float(phase.max())
        if hi > lo:
            scaled = np.round((phase - lo) / (hi - lo) * 65535)
        else:
            scaled = np.zeros_like(phase)
        rows, cols = phase.shape
        buf = io.BytesIO()
        buf.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        buf.write(scaled.astype(">u2").tobytes())
        Path(path).write_bytes(buf.getvalue())
    else:
        raise ValueError(f"unknown export format {fmt!r}")


def read_mask_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise DataError("not a binary PGM")
    cols, rows, maxval = (int(v) for v in m.groups())
    dtype = ">u2" if maxval > 255 else np.uint8
    return np.frombuffer(raw, dtype=dtype, count=rows * cols, offset=m.end()).reshape(rows, cols)
