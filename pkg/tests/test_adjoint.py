import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from donnrough.adjoint import (
    TapeInvalidError,
    backward,
    finite_diff_grad,
    forward_with_tape,
    loss_and_grad,
    max_rel_err,
    objective,
    objective_grad,
    regularizer_grad,
)
from donnrough.optics import forward
from donnrough.roughness import intra_block_grad, roughness_grad

from conftest import random_field, random_model


def test_tape_matches_forward():
    m = random_model(8, 3, seed=1)
    u = random_field(8, 1)
    sums, tape = forward_with_tape(m, u)
    assert np.array_equal(sums, forward(m, u)[1])
    assert tape.depth == 3
    assert all(f.shape == (8, 8) for f in tape.pre_modulation)
    _, zero_tape = forward_with_tape(m, np.zeros((8, 8)))
    assert not any(f.any() for f in zero_tape.pre_modulation)


def test_stale_tape_rejected():
    m = random_model(8, 2)
    _, tape = forward_with_tape(m, random_field(8))
    m.masks[0].phase[0, 0] += 0.1
    with pytest.raises(TapeInvalidError):
        backward(tape, m, 3)


@pytest.mark.parametrize("seed", range(4))
def test_data_gradient_matches_finite_differences(seed):
    m = random_model(8, 2, seed=seed)
    u = random_field(8, seed + 100)
    _, g = loss_and_grad(m, u, seed % 10)
    fd = finite_diff_grad(m, u, seed % 10)
    assert max_rel_err(g, fd) <= 1e-5


def test_batched_gradient_is_mean_of_singles():
    m = random_model(8, 2, seed=3)
    u = random_field(8, 4, batch=(3,))
    y = np.array([1, 5, 9])
    _, g = loss_and_grad(m, u, y)
    singles = [loss_and_grad(m, u[i], y[i])[1] for i in range(3)]
    for layer in range(2):
        ref = sum(s[layer] for s in singles) / 3
        assert np.allclose(g[layer], ref, rtol=1e-12, atol=1e-18)
    fd = finite_diff_grad(m, u, y)
    assert max_rel_err(g, fd) <= 1e-5


def test_4x4_single_layer(rng):
    from conftest import tiny_layout

    m = random_model(4, 1, seed=7, layout=tiny_layout())
    u = random_field(4, 2)
    _, g = loss_and_grad(m, u, 2)
    assert max_rel_err(g, finite_diff_grad(m, u, 2)) <= 1e-5


def test_full_objective_gradient():
    m = random_model(8, 2, seed=11)
    u = random_field(8, 12)
    kw = dict(p=0.1, q=0.05, k=8, block=4)
    _, g = objective_grad(m, u, 6, **kw)
    _, data = loss_and_grad(m, u, 6)
    reg = regularizer_grad(m, **kw)
    for layer, mask in enumerate(m.masks):
        expected = data[layer] + 0.1 * roughness_grad(mask, 8) + 0.05 * intra_block_grad(mask, 4)
        assert np.allclose(g[layer], expected, rtol=1e-14, atol=0)
        assert np.allclose(g[layer] - data[layer], reg[layer], rtol=1e-12, atol=1e-15)
    assert max_rel_err(g, finite_diff_grad(m, u, 6, **kw)) <= 1e-5


def test_saturated_softmax_gives_vanishing_gradient():
    m = random_model(8, 2, seed=5)
    u = random_field(8, 5)
    _, sums = forward(m, u)
    # scale so the winning detector dominates by a huge margin
    gap = np.sort(sums)[-1] - np.sort(sums)[-2]
    u = u * np.sqrt(200.0 / gap)
    _, sums = forward(m, u)
    _, g = loss_and_grad(m, u, int(np.argmax(sums)))
    assert max(np.linalg.norm(x) for x in g) <= 1e-9


def test_zero_input_gives_zero_fd_gradient():
    m = random_model(8, 1)
    fd = finite_diff_grad(m, np.zeros((8, 8)), 0)
    assert not np.any(fd[0])
    with pytest.raises(ValueError):
        finite_diff_grad(m, np.zeros((8, 8)), 0, eps=0)


def test_finite_difference_error_is_second_order():
    m = random_model(8, 1, seed=2)
    u = random_field(8, 2)
    _, g = loss_and_grad(m, u, 4)
    e1 = max_rel_err(g, finite_diff_grad(m, u, 4, eps=2e-2))
    e2 = max_rel_err(g, finite_diff_grad(m, u, 4, eps=1e-2))
    assert 3.0 <= e1 / e2 <= 5.0


def test_global_two_pi_shift_keeps_gradient():
    m = random_model(8, 2, seed=9)
    shifted = m.copy()
    for mask in shifted.masks:
        mask.phase += 2 * np.pi
    u = random_field(8, 9)
    _, a = loss_and_grad(m, u, 1)
    _, b = loss_and_grad(shifted, u, 1)
    scale = max(np.max(np.abs(x)) for x in a)
    assert max(np.max(np.abs(x - y)) for x, y in zip(a, b)) <= 1e-10 * scale


def test_backward_is_deterministic():
    m = random_model(8, 2, seed=4)
    u = random_field(8, 4, batch=(5,))
    _, tape = forward_with_tape(m, u)
    a = backward(tape, m, np.arange(5))
    b = backward(tape, m, np.arange(5))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_max_rel_err_scaling():
    assert max_rel_err([np.array([1.0, 2.0])], [np.array([1.0, 2.0])]) == 0.0
    assert max_rel_err([np.array([1.0, 2.5])], [np.array([1.0, 2.0])]) == 0.25


@given(st.integers(0, 2 ** 31), st.floats(0.0, 0.2), st.floats(0.0, 0.2))
@settings(max_examples=6, deadline=None)
def test_objective_gradient_property(seed, p, q):
    m = random_model(8, 2, seed=seed)
    u = random_field(8, seed + 1)
    kw = dict(p=p, q=q, k=4, block=2)
    value, g = objective_grad(m, u, seed % 10, **kw)
    assert value == pytest.approx(objective(m, u, seed % 10, **kw), rel=1e-13)
    assert max_rel_err(g, finite_diff_grad(m, u, seed % 10, **kw)) <= 1e-5
