import numpy as np
import pytest

from app.core.errors import EmptyMeasureError, PreconditionError
from app.schemas.reports import ErrorKind
from app.schemas.space import InputDistribution, SpaceConfig
from app.services.approximation import (
    bochner_error,
    direct_sample,
    empirical_gap,
    fit_loglog,
    inverse_check,
    rate_experiment,
    sampling_deviation_bound,
    sphere_probes,
    sup_dstar_error,
)
from app.services.lattice import ystar_norm
from app.services.measures import (
    DiscreteOperatorMeasure,
    empty_measure,
    evaluate,
    radon_norm,
    random_measure,
    scale,
)
from app.services.operators import sample_matrix


@pytest.fixture
def five_atom(space, rng):
    return random_measure(space, 5, rng)


def test_direct_sample_preserves_mass_and_support(five_atom, rng):
    for n in (1, 3, 50):
        sample = direct_sample(five_atom, n, rng)
        assert len(sample) <= 2 * n
        assert radon_norm(sample) == pytest.approx(radon_norm(five_atom), rel=1e-14)
        for matrix in sample.matrices:
            assert any(np.array_equal(matrix, original) for original in five_atom.matrices)


def test_direct_sample_of_point_mass_is_exact(single_atom, rng):
    sample = direct_sample(single_atom, 17, rng)
    assert sample == single_atom
    assert sup_dstar_error(single_atom, sample, 64, rng) == 0.0


def test_direct_sample_frequencies(space, rng):
    matrices = np.stack([sample_matrix(rng, space) for _ in range(2)])
    a = DiscreteOperatorMeasure(space, [1.0, 1.0], matrices)
    n = 10_000
    sample = direct_sample(a, n, rng)
    frequencies = sample.weights / radon_norm(a)
    assert np.all(np.abs(frequencies - 0.5) <= 3.0 * np.sqrt(0.25 / n))


def test_direct_sample_preconditions(space, single_atom, rng):
    with pytest.raises(EmptyMeasureError):
        direct_sample(empty_measure(space), 5, rng)
    with pytest.raises(PreconditionError):
        direct_sample(single_atom, 0, rng)


def test_sup_dstar_error_examples(five_atom, rng):
    assert sup_dstar_error(five_atom, five_atom, 128, rng) == 0.0
    order = np.array([3, 0, 4, 1, 2])
    permuted = DiscreteOperatorMeasure(five_atom.space, five_atom.weights[order], five_atom.matrices[order])
    assert sup_dstar_error(five_atom, permuted, 128, rng) <= 1e-12
    assert sup_dstar_error(five_atom, empty_measure(five_atom.space), 128, rng) > 0.0
    with pytest.raises(PreconditionError):
        sup_dstar_error(five_atom, five_atom, -1, rng)


def test_sup_dstar_error_grows_with_nested_probes(five_atom, single_atom, rng):
    probes = sphere_probes(five_atom, 200, rng)
    small = sup_dstar_error(five_atom, single_atom, probes=probes[:20])
    large = sup_dstar_error(five_atom, single_atom, probes=probes)
    assert small <= large


def test_bochner_error_examples(five_atom, gaussian, rng):
    assert bochner_error(five_atom, five_atom, gaussian, 2.0, 500, rng) == 0.0
    with pytest.raises(PreconditionError):
        bochner_error(five_atom, five_atom, gaussian, 0.5, 10, rng)
    with pytest.raises(PreconditionError):
        bochner_error(five_atom, five_atom, gaussian, 2.0, 0, rng)


def test_bochner_error_is_homogeneous(rng):
    space = SpaceConfig(d=3, k=2, bias=False)
    a = random_measure(space, 3, rng)
    b = random_measure(space, 2, rng)
    base = bochner_error(a, b, InputDistribution(scale=1.0), 2.0, 400, np.random.default_rng(7))
    stretched = bochner_error(a, b, InputDistribution(scale=2.5), 2.0, 400, np.random.default_rng(7))
    assert stretched == pytest.approx(2.5 * base, rel=1e-10)


def test_bochner_error_matches_quadrature(two_atom, single_atom, gaussian, rng):
    p = 2.0
    estimate = bochner_error(two_atom, single_atom, gaussian, p, 100_000, rng)

    nodes = np.linspace(-6.0, 6.0, 601)
    step = nodes[1] - nodes[0]
    grid = np.stack(np.meshgrid(nodes, nodes, indexing="ij"), axis=-1).reshape(-1, 2)
    density = np.exp(-0.5 * np.sum(grid * grid, axis=1)) / (2.0 * np.pi)
    integrand = ystar_norm(evaluate(two_atom, grid) - evaluate(single_atom, grid)) ** p
    quadrature = float(np.sum(integrand * density) * step * step) ** (1.0 / p)
    assert estimate == pytest.approx(quadrature, rel=1e-2)


def test_sampling_deviation_bound(two_atom, single_atom, gaussian, rng):
    p = 2.0
    reference = empirical_gap(two_atom, single_atom, rng.standard_normal((200_000, 2)), p)
    for m in (100, 1000):
        deviations = [
            abs(empirical_gap(two_atom, single_atom, rng.standard_normal((m, 2)), p) - reference)
            for _ in range(100)
        ]
        assert np.mean(deviations) <= sampling_deviation_bound(two_atom, single_atom, gaussian, p, m)


@pytest.mark.slow
def test_sampling_deviation_against_quadrature(two_atom, single_atom, gaussian, rng):
    p = 2.0
    nodes = np.linspace(-6.0, 6.0, 601)
    step = nodes[1] - nodes[0]
    grid = np.stack(np.meshgrid(nodes, nodes, indexing="ij"), axis=-1).reshape(-1, 2)
    density = np.exp(-0.5 * np.sum(grid * grid, axis=1)) / (2.0 * np.pi)
    integrand = ystar_norm(evaluate(two_atom, grid) - evaluate(single_atom, grid)) ** p
    integral = float(np.sum(integrand * density) * step * step)
    for m in (100, 1_000, 10_000):
        deviations = [
            abs(empirical_gap(two_atom, single_atom, rng.standard_normal((m, 2)), p) - integral)
            for _ in range(200)
        ]
        assert np.mean(deviations) <= sampling_deviation_bound(two_atom, single_atom, gaussian, p, m)


def test_fit_loglog():
    xs = np.array([1.0, 10.0, 100.0])
    slope, intercept = fit_loglog(xs, 3.0 * xs ** -0.5)
    assert slope == pytest.approx(-0.5)
    assert intercept == pytest.approx(np.log(3.0))
    assert fit_loglog(xs, np.zeros(3)) == (None, None)


@pytest.mark.parametrize(
    "grid, trials",
    [([16, 64], 5), ([16, 16, 64], 5), ([1, 4, 16], 5), ([16, 64, 256], 4)],
)
def test_rate_experiment_rejects_degenerate_grids(five_atom, grid, trials):
    with pytest.raises(PreconditionError, match="grid|trials"):
        rate_experiment(five_atom, grid, trials)


def test_rate_experiment_single_atom_has_no_slope(single_atom):
    report = rate_experiment(single_atom, [2, 4, 8], 5, seed=3, probe_count=32)
    assert all(row.mean_error == 0.0 for row in report.grid)
    assert not report.slope_defined
    assert report.fitted_slope is None


def test_rate_experiment_ignores_thread_count(five_atom):
    serial = rate_experiment(five_atom, [2, 4, 8], 5, seed=11, probe_count=32, threads=1)
    parallel = rate_experiment(five_atom, [2, 4, 8], 5, seed=11, probe_count=32, threads=3)
    assert serial.model_dump() == parallel.model_dump()


def test_rate_experiment_bochner_kind(five_atom):
    report = rate_experiment(five_atom, [2, 4, 8], 5, ErrorKind.BOCHNER, seed=2, m=500)
    assert report.error_kind == ErrorKind.BOCHNER
    assert all(row.mean_error > 0 for row in report.grid)


@pytest.mark.slow
def test_direct_approximation_rate(rng):
    a = random_measure(SpaceConfig(d=6, k=8), 50, rng)
    grid = [16, 64, 256, 1024, 4096]
    report = rate_experiment(a, grid, 20, seed=5, probe_count=512, threads=4)
    assert -0.65 <= report.fitted_slope <= -0.35
    for row in report.grid:
        assert row.mean_error <= 4.0 * radon_norm(a) / np.sqrt(row.n)


def test_inverse_check_examples(five_atom, rng):
    constant = inverse_check([five_atom] * 4, radon_norm(five_atom), 64, rng)
    assert constant.residuals == [0.0, 0.0, 0.0]
    assert constant.converged

    with pytest.raises(PreconditionError):
        inverse_check([five_atom, scale(five_atom, 10.0)], radon_norm(five_atom), 64, rng)
    with pytest.raises(PreconditionError):
        inverse_check([five_atom], radon_norm(five_atom))


def test_inverse_check_on_sampled_sequence(five_atom, rng):
    sequence = [direct_sample(five_atom, 2 ** t, np.random.default_rng(t)) for t in range(2, 12)]
    report = inverse_check(sequence, radon_norm(five_atom) * (1 + 1e-12), 128, rng)
    residuals = np.array(report.residuals)
    assert np.mean(residuals[5:]) < np.mean(residuals[:4])


def test_sup_dstar_error_without_rng_is_reproducible(five_atom, single_atom):
    first = sup_dstar_error(five_atom, single_atom, 64)
    assert sup_dstar_error(five_atom, single_atom, 64) == first
    assert first > 0.0
