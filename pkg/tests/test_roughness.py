import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from donnrough.optics import DonnModel, Geometry, PhaseMask
from donnrough.roughness import (
    PartitionError,
    RoughnessReport,
    intra_block_grad,
    intra_block_variance,
    mask_roughness,
    overall_roughness,
    pixel_roughness,
    roughness_grad,
    roughness_map,
)

from conftest import tiny_layout

EXAMPLE = np.array([[1.0, 0.0], [0.0, 0.0]])


def naive_roughness(p, k):
    """Per-pixel double loop with explicit bounds checks."""
    rows, cols = p.shape
    if k == 4:
        nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        nbrs = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)]
    total = 0.0
    for i in range(rows):
        for j in range(cols):
            s = 0.0
            for a, b in nbrs:
                x, y = i + a, j + b
                v = p[x][y] if 0 <= x < rows and 0 <= y < cols else 0.0
                s += abs(v - p[i][j])
            total += s / k
    return total


def naive_block_variance(p, b):
    total = 0.0
    for bi in range(0, p.shape[0], b):
        for bj in range(0, p.shape[1], b):
            vals = [p[i][j] for i in range(bi, bi + b) for j in range(bj, bj + b)]
            mean = sum(vals) / len(vals)
            total += sum((v - mean) ** 2 for v in vals) / len(vals)
    return total


masks = st.integers(1, 12).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-10, 10, allow_nan=False)))


def test_pixel_examples():
    assert pixel_roughness(np.zeros((5, 5)), 2, 2, 8) == 0.0
    assert pixel_roughness(EXAMPLE, 0, 0, 4) == 1.0
    assert pixel_roughness(EXAMPLE, 1, 1, 8) == 0.125
    with pytest.raises(IndexError):
        pixel_roughness(EXAMPLE, 2, 0)
    with pytest.raises(ValueError):
        pixel_roughness(EXAMPLE, 0, 0, 6)


def test_mask_examples():
    assert mask_roughness(np.zeros((6, 6))) == 0.0
    assert mask_roughness(EXAMPLE, 4) == 1.5
    # k=8: corner pixel 8/8, the three zeros each see the single 1 once, 3/8
    assert mask_roughness(EXAMPLE, 8) == 1.375
    assert mask_roughness(PhaseMask(EXAMPLE), 8) == naive_roughness(EXAMPLE, 8)


@pytest.mark.parametrize("k", [4, 8])
def test_matches_naive_oracle_on_large_mask(k, rng):
    p = rng.uniform(-7, 7, (64, 64))
    assert abs(mask_roughness(p, k) - naive_roughness(p, k)) <= 1e-12 * naive_roughness(p, k)
    per_pixel = np.array([[pixel_roughness(p, i, j, k) for j in range(64)] for i in range(64)])
    assert np.allclose(roughness_map(p, k), per_pixel, rtol=0, atol=1e-12)


@given(masks, st.sampled_from([4, 8]))
def test_matches_naive_oracle(p, k):
    ref = naive_roughness(p, k)
    assert abs(mask_roughness(p, k) - ref) <= 1e-12 * max(1.0, ref)


@given(masks, st.sampled_from([4, 8]), st.floats(-5, 5))
def test_nonnegative_scaling_and_transpose(p, k, c):
    r = mask_roughness(p, k)
    assert r >= 0
    assert (r == 0) == (not p.any())
    assert np.isclose(mask_roughness(c * p, k), abs(c) * r, rtol=1e-12, atol=1e-12)
    assert np.isclose(mask_roughness(p.T, k), r, rtol=1e-12, atol=1e-12)


def test_overall_examples():
    g = Geometry(4, 36e-6, 532e-9, 0.01)
    zero = DonnModel(g, [PhaseMask(np.zeros((4, 4))) for _ in range(3)], tiny_layout())
    assert overall_roughness(zero).overall == 0.0
    single = DonnModel(g, [PhaseMask(np.arange(16.0).reshape(4, 4))], tiny_layout())
    rep = overall_roughness(single, 4)
    assert rep.overall == rep.per_layer[0] == mask_roughness(single.masks[0], 4)
    assert RoughnessReport([300, 400, 500], 8).overall == 400.0


def test_report_csv_round_trip():
    rep = RoughnessReport([1.0 / 3, 2.5, 7.125], 8)
    text = rep.to_csv()
    assert text.splitlines()[0] == "layer,roughness,mode"
    assert text.splitlines()[-1].startswith("overall,")
    (back,) = RoughnessReport.from_csv(text)
    assert back.per_layer == rep.per_layer and back.mode == 8


def test_grad_zero_mask():
    assert not roughness_grad(np.zeros((5, 5))).any()


@pytest.mark.parametrize("k", [4, 8])
def test_grad_matches_finite_differences(k, rng):
    p = rng.uniform(-3, 3, (7, 7))
    g = roughness_grad(p, k)
    eps = 1e-7
    fd = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        hi, lo = p.copy(), p.copy()
        hi[idx] += eps
        lo[idx] -= eps
        fd[idx] = (mask_roughness(hi, k) - mask_roughness(lo, k)) / (2 * eps)
    assert np.max(np.abs(g - fd)) <= 1e-6


def test_grad_tie_contributes_zero():
    p = np.ones((3, 3))
    g = roughness_grad(p, 4)
    # interior pixel ties with all four neighbours
    assert g[1, 1] == 0.0
    # boundary pixels see only the padded zeros, which push them down
    assert g[0, 1] == pytest.approx(1 / 4)
    assert g[0, 0] == pytest.approx(2 / 4)


@pytest.mark.parametrize("k", [4, 8])
def test_constant_shift_changes_boundary_terms_only(k, rng):
    p = rng.uniform(0, 2 * np.pi, (9, 9))
    diff = roughness_map(p + 2 * np.pi, k) - roughness_map(p, k)
    assert np.max(np.abs(diff[1:-1, 1:-1])) <= 1e-12
    assert np.abs(diff).sum() > 0


def test_block_variance_examples():
    assert intra_block_variance(np.full((4, 4), 3.3), 2) == 0.0
    block = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert intra_block_variance(block, 2) == 1.0
    mask = np.block([[np.full((2, 2), 1.0), block], [block, np.full((2, 2), -4.0)]])
    assert intra_block_variance(mask, 2) == 2.0
    with pytest.raises(PartitionError):
        intra_block_variance(np.zeros((6, 6)), 4)
    with pytest.raises(PartitionError):
        intra_block_grad(np.zeros((6, 6)), 4)


def test_block_grad_examples(rng):
    assert not intra_block_grad(np.full((4, 4), 2.0), 2).any()
    g = intra_block_grad(np.array([[0.0, 2.0], [2.0, 0.0]]), 2)
    assert np.array_equal(g, [[-0.5, 0.5], [0.5, -0.5]])
    p = rng.normal(size=(8, 8))
    eps = 1e-6
    fd = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        hi, lo = p.copy(), p.copy()
        hi[idx] += eps
        lo[idx] -= eps
        fd[idx] = (intra_block_variance(hi, 4) - intra_block_variance(lo, 4)) / (2 * eps)
    assert np.max(np.abs(intra_block_grad(p, 4) - fd)) <= 1e-8


@given(st.sampled_from([(4, 2), (6, 3), (6, 2), (8, 4)]), st.integers(0, 2 ** 32 - 1), st.floats(-4, 4))
@settings(max_examples=50)
def test_block_variance_properties(shape, seed, c):
    n, b = shape
    p = np.random.default_rng(seed).normal(size=(n, n))
    v = intra_block_variance(p, b)
    assert v >= 0
    assert np.isclose(v, naive_block_variance(p, b), rtol=1e-12)
    assert np.isclose(intra_block_variance(c * p, b), c * c * v, rtol=1e-10, atol=1e-12)
    assert np.isclose(intra_block_variance(p.T, b), v, rtol=1e-12)
    constant_blocks = np.kron(p[: n // b, : n // b], np.ones((b, b)))
    assert intra_block_variance(constant_blocks, b) == pytest.approx(0.0, abs=1e-24)
