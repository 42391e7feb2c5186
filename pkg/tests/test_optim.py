import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffnlab.autograd import Tensor
from ffnlab.optim import (AdamWState, NonFiniteGradientError, TrainSchedule, adamw_step,
                          global_grad_norm, lr_at_step)

F64 = np.float64


def sched(**kw):
    base = dict(total_steps=1000)
    base.update(kw)
    return TrainSchedule(**base)


def scalar_adamw(theta, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook AdamW on one float, written out step by step."""
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
    return theta


# --- schedule -------------------------------------------------------------------

def test_schedule_examples():
    s = sched(total_steps=9053)
    assert lr_at_step(s, 300) == 1.5e-4
    assert lr_at_step(s, 150) == pytest.approx(0.75e-4, rel=1e-15)
    assert abs(lr_at_step(s, 9053)) <= 1e-9 * 1.5e-4
    # an even decay span puts the cosine midpoint on an integer step
    assert lr_at_step(sched(total_steps=1300), 800) == pytest.approx(1.5e-4 / 2, rel=1e-12)


def test_schedule_continuity_and_monotonicity():
    s = sched(total_steps=2000)
    left = lr_at_step(s, 300)
    right = lr_at_step(s, 301)
    assert abs(right - left) / left < 1e-4  # one-step cosine drop is O(1/span^2)
    lrs = [lr_at_step(s, k) for k in range(300, 2001)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    warm = [lr_at_step(s, k) for k in range(1, 301)]
    assert all(a < b for a, b in zip(warm, warm[1:]))


@pytest.mark.parametrize("step", [0, 1001, -3])
def test_schedule_step_out_of_range(step):
    with pytest.raises(ValueError):
        lr_at_step(sched(), step)


def test_schedule_validation():
    with pytest.raises(ValueError):
        sched(warmup_steps=2000).validate()
    with pytest.raises(ValueError):
        sched(max_lr=0).validate()
    with pytest.raises(ValueError):
        sched(warmup_steps=0).validate()
    with pytest.raises(ValueError):
        lr_at_step(TrainSchedule(), 1)


# --- adamw ----------------------------------------------------------------------

def test_zero_grad_zero_decay_is_identity():
    p = {"w": Tensor(np.ones((2, 2)), dtype=F64)}
    adamw_step(p, {"w": np.zeros((2, 2))}, AdamWState(), 1e-3, sched(weight_decay=0.0))
    np.testing.assert_array_equal(p["w"].data, 1.0)


def test_first_step_is_minus_lr():
    p = {"x": Tensor(np.zeros((1, 1)), dtype=F64)}
    adamw_step(p, {"x": np.ones((1, 1))}, AdamWState(), 1e-3, sched(weight_decay=0.0))
    assert p["x"].data[0, 0] == pytest.approx(-1e-3, rel=1e-7)


def test_pure_decay_shrinks_geometrically():
    p = {"w": Tensor(np.full((2, 3), 2.0), dtype=F64)}
    st_ = AdamWState()
    for _ in range(5):
        adamw_step(p, {"w": np.zeros((2, 3))}, st_, 0.1, sched(weight_decay=0.5))
    np.testing.assert_allclose(p["w"].data, 2.0 * (1 - 0.05) ** 5, rtol=1e-12)


def test_biases_and_gains_are_not_decayed():
    p = {"b": Tensor(np.full(3, 2.0), dtype=F64), "w": Tensor(np.full((3, 3), 2.0), dtype=F64)}
    adamw_step(p, {"b": np.zeros(3), "w": np.zeros((3, 3))}, AdamWState(), 0.1,
               sched(weight_decay=0.5))
    np.testing.assert_array_equal(p["b"].data, 2.0)
    assert np.all(p["w"].data < 2.0)


@settings(max_examples=50, deadline=None)
@given(theta=st.floats(-3, 3), grads=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
       lr=st.floats(1e-5, 1e-1), wd=st.floats(0, 0.2))
def test_matches_scalar_reference(theta, grads, lr, wd):
    p = {"w": Tensor(np.full((1, 1), theta), dtype=F64)}
    state = AdamWState()
    for g in grads:
        adamw_step(p, {"w": np.full((1, 1), g)}, state, lr, sched(weight_decay=wd))
    assert p["w"].data[0, 0] == pytest.approx(scalar_adamw(theta, grads, lr, wd), rel=1e-9,
                                              abs=1e-12)
    assert state.step == len(grads)


@settings(max_examples=30, deadline=None)
@given(g=st.lists(st.floats(-2, 2).filter(lambda x: abs(x) > 1e-3), min_size=3, max_size=3),
       c=st.floats(0.1, 100))
def test_direction_sign_is_scale_equivariant(g, c):
    deltas = []
    for k in (1.0, c):
        p = {"w": Tensor(np.zeros((1, 3)), dtype=F64)}
        adamw_step(p, {"w": k * np.array([g])}, AdamWState(), 1e-3, sched(weight_decay=0.0))
        deltas.append(np.sign(p["w"].data))
    np.testing.assert_array_equal(*deltas)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_gradient_rejected_without_mutation(bad):
    p = {"w": Tensor(np.ones((2, 2)), dtype=F64), "b": Tensor(np.ones(2), dtype=F64)}
    state = AdamWState()
    g = np.zeros((2, 2))
    g[1, 0] = bad
    with pytest.raises(NonFiniteGradientError, match="non-finite"):
        adamw_step(p, {"w": g, "b": np.ones(2)}, state, 1e-3, sched())
    np.testing.assert_array_equal(p["b"].data, 1.0)
    assert state.step == 0 and not state.m


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        adamw_step({"w": Tensor(np.ones((2, 2)))}, {"w": np.ones(3)}, AdamWState(), 1e-3, sched())


def test_moment_shapes_mirror_params():
    p = {"w": Tensor(np.ones((2, 5))), "b": Tensor(np.ones(5))}
    state = AdamWState()
    adamw_step(p, {"w": np.ones((2, 5), np.float32), "b": np.ones(5, np.float32)}, state, 1e-3,
               sched())
    assert {k: v.shape for k, v in state.m.items()} == {"w": (2, 5), "b": (5,)}
    assert state.v["w"].dtype == np.float32


def test_clipping_bounds_the_update():
    g = {"w": np.full((1, 4), 100.0)}
    assert global_grad_norm(g) == pytest.approx(200.0)
    a = {"w": Tensor(np.zeros((1, 4)), dtype=F64)}
    b = {"w": Tensor(np.zeros((1, 4)), dtype=F64)}
    adamw_step(a, g, AdamWState(), 1e-3, sched(weight_decay=0.0, clip_norm=1.0))
    adamw_step(b, g, AdamWState(), 1e-3, sched(weight_decay=0.0))
    # Adam normalizes magnitude, so a single clipped step moves the same distance
    np.testing.assert_allclose(a["w"].data, b["w"].data, rtol=1e-6)
