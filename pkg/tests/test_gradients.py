import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qru.cell import QRUArchitecture, init_params, param_count, preset
from qru.errors import ConfigError, InputError
from qru.gradients import (
    Batch,
    batch_loss,
    central_difference,
    finite_difference_gradient,
    gradient,
    loss_and_gradient,
    max_relative_error,
    reference_loss,
)
from qru.losses import LossSpec, compute_loss, loss_and_grad_outputs, predict_proba


def test_loss_reference_values():
    assert compute_loss(LossSpec("bce"), np.array([[0.0]]), 1.0, np.array([1.0])) == pytest.approx(np.log(2))
    assert compute_loss(LossSpec("ce"), np.array([[0.3, 0.3]]), 2.0, np.array([[0.0, 1.0]])) == pytest.approx(np.log(2))
    y = np.array([[0.1], [-0.4]])
    assert compute_loss(LossSpec("mse"), y, 1.0, y) == 0.0


def test_loss_spec_validation():
    with pytest.raises(ConfigError):
        LossSpec("hinge")
    with pytest.raises(ConfigError):
        LossSpec("bce", clamp_epsilon=0.1)
    with pytest.raises(InputError):
        compute_loss(LossSpec("mse"), np.zeros((2, 1)), 1.0, np.zeros((3, 1)))


def test_bce_clamps_saturated_outputs():
    loss = compute_loss(LossSpec("bce"), np.array([[1.0]]), 1e4, np.array([0.0]))
    assert np.isfinite(loss) and loss == pytest.approx(-np.log(1e-12), rel=1e-6)


@pytest.mark.parametrize("kind", ["mse", "bce", "ce"])
def test_output_gradients_match_differences(kind, rng):
    spec = LossSpec(kind)
    if kind == "mse":
        raw, labels = rng.uniform(-1, 1, (4, 3, 1)), rng.uniform(-1, 1, (4, 3, 1))
    elif kind == "bce":
        raw, labels = rng.uniform(-1, 1, (4, 1)), rng.integers(0, 2, 4).astype(float)
    else:
        raw, labels = rng.uniform(-1, 1, (4, 2)), np.eye(2)[rng.integers(0, 2, 4)]
    scale = 1.7
    _, d_raw, d_scale = loss_and_grad_outputs(spec, raw, scale, labels)
    f = lambda r: compute_loss(spec, r.reshape(raw.shape), scale, labels)
    np.testing.assert_allclose(d_raw.ravel(), central_difference(f, raw.ravel(), 1e-6), atol=1e-8)
    g = lambda s: compute_loss(spec, raw, s[0], labels)
    assert d_scale == pytest.approx(central_difference(g, np.array([scale]), 1e-6)[0], abs=1e-8)


def test_predict_proba_uses_scale():
    p = predict_proba(LossSpec("ce"), np.array([[0.2, 0.1]]), -5.0)
    assert p[0, 1] > p[0, 0]


def single_qubit():
    return QRUArchitecture(n_data=1, n_hidden=0, data_axes=(("rx",),))


def test_cos_cell_gradient_closed_form():
    # loss = <Z> itself: MSE against target t gives d/dw1 = 2 (y - t) dy/dw1
    arch = single_qubit()
    batch = Batch([[[0.5]]], [[[0.0]]], "all")
    grad = gradient(arch, [0.8, -0.3], batch, LossSpec("mse"))
    y, dy = 0.9950041652780257661, -0.049916708323414076153
    assert grad[0] == pytest.approx(2 * y * dy, abs=1e-14)


def test_zero_residual_gives_zero_gradient(rng):
    arch = preset("s1")
    params = init_params(arch, rng)
    x = rng.uniform(-1, 1, (2, 5, 1))
    from qru.engine import compiled
    y, _ = compiled(arch).forward(params, x)
    grad = gradient(arch, params, Batch(x, y, "all"), LossSpec("mse"))
    np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_central_difference_on_quadratic():
    a = np.array([1.0, -2.0, 0.5])
    f = lambda x: float(np.sum(a * x ** 2) + 3 * x[0])
    x = np.array([0.3, 0.1, -0.7])
    np.testing.assert_allclose(central_difference(f, x, 1e-3), 2 * a * x + [3, 0, 0], atol=1e-10)
    np.testing.assert_array_equal(central_difference(lambda x: 1.0, x, 1e-5), 0.0)
    with pytest.raises(InputError):
        central_difference(f, x, 0.0)


def test_max_relative_error_floor():
    assert max_relative_error([0.0], [1e-12]) == pytest.approx(1e-4)
    assert max_relative_error([2.0], [2.002]) == pytest.approx(1e-3)


def _random_case(name, rng, batch_size=3, steps=3):
    arch = preset(name)
    params = init_params(arch, rng, spread=np.pi)
    x = rng.uniform(-1, 1, (batch_size, steps, arch.input_dim))
    if name.startswith("s1"):
        return arch, params, Batch(x, rng.uniform(-1, 1, (batch_size, steps, 1)), "all"), LossSpec("mse")
    if name.startswith("s2"):
        return arch, params, Batch(x, rng.integers(0, 2, batch_size), "final"), LossSpec("bce")
    return arch, params, Batch(x, np.eye(2)[rng.integers(0, 2, batch_size)], "final"), LossSpec("ce")


@pytest.mark.parametrize("name", ["s1", "s2", "s3", "s1-ref", "s2-ref", "s3-ref"])
def test_gradient_matches_finite_differences(name, rng):
    arch, params, batch, spec = _random_case(name, rng, steps=2 if name.startswith("s3") else 3)
    loss, grad = loss_and_gradient(arch, params, batch, spec)
    assert loss == pytest.approx(float(reference_loss(arch, params, batch, spec)), abs=1e-12)
    fd = finite_difference_gradient(arch, params, batch, spec, step=1e-5)
    assert max_relative_error(grad, fd) < 1e-5


def test_s2_batch_of_three(rng):
    arch, params, batch, spec = _random_case("s2", rng, batch_size=3, steps=30)
    fd = finite_difference_gradient(arch, params, batch, spec)
    assert max_relative_error(gradient(arch, params, batch, spec), fd) < 1e-5


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_batch_loss_is_mean_of_singletons(seed):
    rng = np.random.default_rng(seed)
    arch, params, batch, spec = _random_case("s2", rng, batch_size=4, steps=5)
    total = batch_loss(arch, params, batch, spec)
    singles = [batch_loss(arch, params, batch.subset([i]), spec) for i in range(4)]
    assert total == pytest.approx(np.mean(singles), abs=1e-13)
    g = gradient(arch, params, batch, spec)
    gs = np.mean([gradient(arch, params, batch.subset([i]), spec) for i in range(4)], axis=0)
    np.testing.assert_allclose(g, gs, atol=1e-13)


def test_batch_validation():
    with pytest.raises(InputError):
        Batch(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(InputError):
        Batch(np.zeros((2, 3, 1)), np.zeros(2), "middle")
    arch = preset("s2")
    with pytest.raises(InputError):
        gradient(arch, np.zeros(param_count(arch)), Batch(np.zeros((2, 3, 2)), np.zeros(2)), LossSpec("bce"))
