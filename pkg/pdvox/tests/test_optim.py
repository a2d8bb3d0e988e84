import math

import numpy as np
import pytest

from pdvox.errors import NumericalError, ShapeError
from pdvox.models.config import ModelConfig, TrainConfig, Variant
from pdvox.net import build_model
from pdvox.optim import AdamState, adam_step, l2_penalty, lr_schedule
from pdvox.tensor.gradcheck import finite_difference_grad


def test_lr_schedule_no_decay_is_constant():
    assert all(lr_schedule(0.00005, 0, step, 10) == 0.00005 for step in range(100))


def test_lr_schedule_halving():
    assert lr_schedule(1.0, math.log(2), 7, 7) == pytest.approx(0.5)


def test_lr_schedule_step_zero():
    assert lr_schedule(3e-4, 0.5, 0, 1) == 3e-4


def test_lr_schedule_staircase():
    assert lr_schedule(1.0, 1.0, 9, 10) == 1.0
    assert lr_schedule(1.0, 1.0, 10, 10) == pytest.approx(math.exp(-1))
    assert lr_schedule(1.0, 1.0, 25, 10) == pytest.approx(math.exp(-2))


def test_lr_schedule_non_increasing():
    lrs = [lr_schedule(1e-3, 0.05, step, 3) for step in range(200)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert all(lr > 0 for lr in lrs)


def test_lr_schedule_matches_closed_form(rng):
    for _ in range(1000):
        lr0 = float(10 ** rng.uniform(-6, -2))
        k = float(rng.uniform(0, 0.1))
        decay_steps = int(rng.integers(1, 50))
        step = int(rng.integers(0, 2000))
        decays = step // decay_steps
        lr = lr_schedule(lr0, k, step, decay_steps)
        assert lr == pytest.approx(lr0 * math.exp(-k) ** decays, rel=1e-9)
        assert lr == lr_schedule(lr0, k, decays * decay_steps, decay_steps)


@pytest.mark.parametrize(
    "lr0, k, decay_steps",
    [(0.0, 0.1, 1), (-1.0, 0.1, 1), (1e-3, -0.1, 1), (1e-3, 0.1, 0)],
)
def test_lr_schedule_invalid_arguments(lr0, k, decay_steps):
    with pytest.raises(ValueError):
        lr_schedule(lr0, k, 1, decay_steps)


def test_adam_first_step_moves_by_lr():
    params = {"x": np.array([1.0])}
    state = AdamState.create(params)
    adam_step(params, {"x": np.array([2.0])}, state, 0.1, TrainConfig())
    assert params["x"][0] == pytest.approx(0.9, abs=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_is_a_fixed_point():
    params = {"w": np.array([[1.5, -2.0]]), "b": np.array([0.25])}
    before = {name: p.copy() for name, p in params.items()}
    state = AdamState.create(params)
    for _ in range(3):
        adam_step(params, {n: np.zeros_like(p) for n, p in params.items()}, state, 0.1, TrainConfig())
    for name in params:
        np.testing.assert_array_equal(params[name], before[name])
    assert state.step == 3


def test_adam_minimizes_quadratic():
    params = {"x": np.array([5.0])}
    state = AdamState.create(params)
    for _ in range(500):
        adam_step(params, {"x": 2 * params["x"]}, state, 0.1, TrainConfig())
    assert abs(params["x"][0]) < 0.01


def test_adam_deterministic(rng):
    grads = [rng.standard_normal((3, 2)) for _ in range(5)]

    def run():
        params = {"w": np.ones((3, 2))}
        state = AdamState.create(params)
        for g in grads:
            adam_step(params, {"w": g}, state, 0.01, TrainConfig())
        return params["w"]

    np.testing.assert_array_equal(run(), run())


def test_adam_second_moment_non_negative(rng):
    params = {"w": np.zeros(10)}
    state = AdamState.create(params)
    for _ in range(4):
        adam_step(params, {"w": rng.standard_normal(10)}, state, 0.01, TrainConfig())
    assert np.all(state.v["w"] >= 0)
    assert state.m["w"].shape == state.v["w"].shape == (10,)


def test_adam_missing_gradient():
    params = {"a": np.zeros(2), "b": np.zeros(2)}
    with pytest.raises(ValueError, match="'b'"):
        adam_step(params, {"a": np.zeros(2)}, AdamState.create(params), 0.1, TrainConfig())


def test_adam_shape_mismatch():
    params = {"a": np.zeros(2)}
    with pytest.raises(ShapeError):
        adam_step(params, {"a": np.zeros(3)}, AdamState.create(params), 0.1, TrainConfig())


def test_adam_non_finite_gradient_names_parameter():
    params = {"a": np.zeros(2), "fc1.weight": np.ones(2)}
    state = AdamState.create(params)
    with pytest.raises(NumericalError, match="fc1.weight"):
        adam_step(params, {"a": np.ones(2), "fc1.weight": np.array([1.0, np.inf])}, state, 0.1, TrainConfig())
    # nothing moved
    np.testing.assert_array_equal(params["a"], np.zeros(2))
    assert state.step == 0


def test_l2_penalty_zero_coefficient():
    model = build_model(ModelConfig(), (8, 8, 8))
    assert l2_penalty(model, 0.0) == (0.0, {})


def test_l2_penalty_all_ones_kernel():
    model = build_model(ModelConfig(), (8, 8, 8))
    for p in model.params.values():
        p[...] = 0
    model.params["conv1.kernel"][..., 0, 0] = 1
    loss, grads = l2_penalty(model, 0.001)
    assert loss == pytest.approx(0.001 * 27)
    np.testing.assert_allclose(grads["conv1.kernel"][..., 0, 0], 0.002)
    assert not grads["conv1.kernel"][..., 1:].any()


def test_l2_penalty_only_conv_parameters():
    model = build_model(ModelConfig(variant=Variant.ORIGINAL), (8, 8, 8))
    _, grads = l2_penalty(model, 0.01)
    assert set(grads) == {f"conv{i}.{kind}" for i in range(1, 7) for kind in ("kernel", "bias")}


def test_l2_penalty_fc_weights_do_not_contribute():
    model = build_model(ModelConfig(), (8, 8, 8))
    before, _ = l2_penalty(model, 0.01)
    model.params["fc1.weight"] *= 10
    after, _ = l2_penalty(model, 0.01)
    assert after == before


def test_l2_penalty_gradient_matches_finite_differences():
    model = build_model(ModelConfig(), (8, 8, 8)).astype(np.float64)
    for name in ("conv1.kernel", "conv3.bias"):
        param = model.params[name]
        param += np.random.default_rng(1).standard_normal(param.shape) * 0.1
        _, grads = l2_penalty(model, 0.003)
        numeric = finite_difference_grad(lambda _: l2_penalty(model, 0.003)[0], param, h=1e-2)
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-6, atol=1e-10)


def test_l2_penalty_negative_coefficient():
    with pytest.raises(ValueError):
        l2_penalty(build_model(ModelConfig(), (8, 8, 8)), -1.0)
