import numpy as np
import pytest

from app.core.errors import ConfigurationError
from app.schemas.solver import FidelityConfig, FitNorm
from app.services.datasets import Dataset, make_dataset
from app.services.fidelity import (
    Certificate,
    adjoint_certificate,
    adjoint_gradient,
    adjoint_values,
    fidelity,
    forward,
    objective,
    residual_dual,
    smoothed_fit,
)
from app.services.measures import DiscreteOperatorMeasure, empty_measure, evaluate, lift
from app.services.operators import sample_matrix


@pytest.fixture
def noisy(two_atom, gaussian, rng):
    return make_dataset(two_atom, gaussian, 40, 0.1, rng=rng)


def test_forward_examples(space, single_atom):
    x = np.array([[0.4, -1.2]])
    data = Dataset(space, x, np.zeros((1, 2)))
    np.testing.assert_array_equal(forward(empty_measure(space), data), np.zeros((1, 2)))
    expected = 1.5 * np.maximum(single_atom.matrices[0] @ lift(x[0], space), 0.0)
    np.testing.assert_allclose(forward(single_atom, data)[0], expected, rtol=1e-15)


def test_forward_rejects_foreign_space(single_atom, space):
    other = Dataset(space.model_copy(update={"k": 3}), np.zeros((1, 2)), np.zeros((1, 3)))
    with pytest.raises(ConfigurationError):
        forward(single_atom, other)


def test_fidelity_examples(space, single_atom, gaussian, rng):
    data = Dataset(space, [[0.3, 0.4]], [[1.0, 0.0]])
    assert fidelity(empty_measure(space), data, FidelityConfig(p=2)) == 0.125
    assert fidelity(empty_measure(space), data, FidelityConfig(p=1)) == 0.5

    exact = make_dataset(single_atom, gaussian, 20, 0.0, rng=rng)
    assert fidelity(single_atom, exact, FidelityConfig()) == 0.0


def test_objective_adds_radon_penalty(two_atom, noisy):
    fc = FidelityConfig()
    assert objective(two_atom, noisy, fc, 0.3) == pytest.approx(
        fidelity(two_atom, noisy, fc) + 0.3 * float(np.sum(np.abs(two_atom.weights)))
    )


def test_residual_dual_examples(space):
    fc = FidelityConfig(p=1, huber_mu=0.0)
    data = Dataset(space, [[0.3, 0.4]], [[-1.0, 0.0]])
    np.testing.assert_array_equal(residual_dual(empty_measure(space), data, fc), [[-0.5, 0.0]])

    fitted = Dataset(space, [[0.3, 0.4]], [[0.0, 0.0]])
    for p in (1, 2):
        dual = residual_dual(empty_measure(space), fitted, FidelityConfig(p=p, huber_mu=0.0))
        np.testing.assert_array_equal(dual, np.zeros((1, 2)))


def test_smoothing_agrees_outside_band(rng):
    residuals = rng.uniform(0.5, 2.0, size=(10, 3)) * rng.choice([-1.0, 1.0], size=(10, 3))
    for p in (1, 2):
        smooth, g_smooth = smoothed_fit(residuals, FidelityConfig(p=p, huber_mu=1e-3))
        exact, g_exact = smoothed_fit(residuals, FidelityConfig(p=p, huber_mu=0.0))
        assert smooth == pytest.approx(exact, rel=1e-15)
        np.testing.assert_allclose(g_smooth, g_exact, rtol=1e-15)


def test_euclidean_fit_gradient_is_residual(rng):
    residuals = rng.standard_normal((6, 2))
    value, gradient = smoothed_fit(residuals, FidelityConfig(fit_norm=FitNorm.EUCLIDEAN))
    assert value == pytest.approx(np.sum(residuals ** 2) / 12.0)
    np.testing.assert_array_equal(gradient, residuals)


@pytest.mark.parametrize("fit_norm", [FitNorm.YSTAR, FitNorm.EUCLIDEAN])
@pytest.mark.parametrize("p", [1, 2])
def test_weight_derivative_matches_adjoint(two_atom, noisy, fit_norm, p):
    fc = FidelityConfig(p=p, fit_norm=fit_norm, huber_mu=0.0)
    v = residual_dual(two_atom, noisy, fc)
    h = 1e-6
    for j in range(len(two_atom)):
        step = np.zeros(len(two_atom))
        step[j] = h
        upper = fidelity(two_atom.with_weights(two_atom.weights + step), noisy, fc)
        lower = fidelity(two_atom.with_weights(two_atom.weights - step), noisy, fc)
        derivative = (upper - lower) / (2 * h)
        assert derivative == pytest.approx(-adjoint_values(v, noisy.lifted, two_atom.matrices[j]), rel=1e-5, abs=1e-8)


def test_adjoint_examples(space, rng):
    lifted = lift(np.array([[2.0, 0.0]]), space)
    K = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert adjoint_values(np.array([[1.0, 0.0]]), lifted, K) == 2.0
    assert adjoint_values(np.zeros((1, 2)), lifted, K) == 0.0
    assert adjoint_values(np.array([[1.0, 0.0]]), lifted, np.zeros((2, 3))) == 0.0


def test_adjoint_is_mean_pairing(space, noisy, rng):
    v = rng.standard_normal((noisy.m, 2))
    K = sample_matrix(rng, space)
    expected = np.mean(np.sum(np.maximum(noisy.lifted @ K.T, 0.0) * v, axis=1))
    assert adjoint_values(v, noisy.lifted, K) == pytest.approx(expected, rel=1e-12)

    stack = np.stack([sample_matrix(rng, space) for _ in range(5)])
    values = adjoint_values(v, noisy.lifted, stack)
    assert values.shape == (5,)
    assert values[3] == pytest.approx(adjoint_values(v, noisy.lifted, stack[3]), rel=1e-12)


def test_adjoint_gradient_finite_difference(space, noisy, rng):
    v = rng.standard_normal((noisy.m, 2))
    K = 0.8 * sample_matrix(rng, space)
    values, grads = adjoint_gradient(v, noisy.lifted, K[None])
    assert values[0] == pytest.approx(adjoint_values(v, noisy.lifted, K), rel=1e-12)
    direction = rng.standard_normal(K.shape)
    h = 1e-7
    numeric = (
        adjoint_values(v, noisy.lifted, K + h * direction) - adjoint_values(v, noisy.lifted, K - h * direction)
    ) / (2 * h)
    assert numeric == pytest.approx(np.sum(grads[0] * direction), rel=1e-4, abs=1e-7)


def test_certificate_norm_and_pairing(space, single_atom, gaussian, rng):
    cert = Certificate([[0.5, 0.0], [0.0, -0.5]], lift(np.array([[1.0, 0.0], [0.0, 1.0]]), space))
    assert cert.m == 2
    assert cert.norm_q == pytest.approx(np.sqrt((1.0 + 4.0) / 2.0))
    assert cert.scaled(2.0).norm_q == pytest.approx(2.0 * cert.norm_q)
    K = single_atom.matrices[0]
    assert adjoint_certificate(cert, K) == cert.evaluate(K)
    assert Certificate(np.zeros((0, 2)), np.zeros((0, 3))).norm_q == 0.0


def test_certificate_validation():
    with pytest.raises(ConfigurationError):
        Certificate(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ConfigurationError):
        Certificate([[np.nan, 0.0]], [[0.0, 0.0, 1.0]])


def test_predictions_match_evaluate(two_atom, noisy):
    np.testing.assert_allclose(forward(two_atom, noisy), evaluate(two_atom, noisy.inputs), rtol=1e-15)
    assert isinstance(two_atom, DiscreteOperatorMeasure)
