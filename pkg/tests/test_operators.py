import numpy as np
import pytest

from app.core.errors import ConfigurationError, NumericError
from app.schemas.solver import OperatorScheme
from app.schemas.space import SpaceConfig
from app.services.lattice import dstar
from app.services.operators import (
    FiniteRankOperator,
    apply,
    dstar_op,
    op_norm,
    operator_distance,
    project_unit_ball,
    random_ball_grid,
    sample_operator,
    spectral_norm,
)


def jacobi_singular_values(matrix: np.ndarray, sweeps: int = 100) -> np.ndarray:
    """One-sided Jacobi SVD, independent of the power iteration under test"""
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[1]
    for _ in range(sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = a[:, p] @ a[:, p]
                beta = a[:, q] @ a[:, q]
                gamma = a[:, p] @ a[:, q]
                if abs(gamma) <= 1e-15 * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                col_p = a[:, p].copy()
                a[:, p] = c * col_p - s * a[:, q]
                a[:, q] = s * col_p + c * a[:, q]
        if not rotated:
            break
    return np.sort(np.linalg.norm(a, axis=0))[::-1]


def test_op_norm_examples():
    assert op_norm(FiniteRankOperator(np.diag([3.0, 1.0]))) == pytest.approx(3.0, rel=1e-9)
    assert op_norm(FiniteRankOperator(np.array([[3.0, 4.0]]), "inf")) == 5.0
    assert op_norm(FiniteRankOperator(np.zeros((2, 3)))) == 0.0


def test_op_norm_matches_jacobi_oracle(rng):
    for _ in range(20):
        matrix = rng.standard_normal((4, 5))
        assert spectral_norm(matrix) == pytest.approx(jacobi_singular_values(matrix)[0], rel=1e-8)


def test_power_iteration_reports_iterations():
    matrix = np.diag([1.0, 0.999999])
    with pytest.raises(NumericError, match="after 1 iterations"):
        spectral_norm(matrix, tol=0.0, max_iter=1)


def test_project_unit_ball(rng):
    K = FiniteRankOperator(0.5 * np.diag([1.0, 0.2]))
    assert project_unit_ball(K) is K
    big = FiniteRankOperator(np.diag([2.0, 1.0]))
    np.testing.assert_allclose(project_unit_ball(big).matrix, big.matrix / 2.0, rtol=1e-9)
    for _ in range(10):
        L = FiniteRankOperator(3.0 * rng.standard_normal((3, 4)))
        once = project_unit_ball(L)
        assert once.norm <= 1.0 + 1e-9
        np.testing.assert_allclose(project_unit_ball(once).matrix, once.matrix, atol=1e-12)


def test_dstar_op_examples(rng):
    K = FiniteRankOperator(rng.standard_normal((2, 3)))
    assert dstar_op(K, K) == 0.0
    single = np.zeros((2, 3))
    single[0, 0] = 1.0
    assert dstar_op(FiniteRankOperator(single), FiniteRankOperator(np.zeros((2, 3)))) == 0.25


def test_dstar_op_below_operator_norm(rng):
    for _ in range(200):
        K = FiniteRankOperator(rng.standard_normal((3, 3)))
        L = FiniteRankOperator(rng.standard_normal((3, 3)))
        assert dstar_op(K, L) <= operator_distance(K, L) + 1e-12


def test_dstar_op_metric_axioms(rng):
    for _ in range(200):
        K, L, M = (FiniteRankOperator(rng.standard_normal((2, 4))) for _ in range(3))
        assert dstar_op(K, L) == dstar_op(L, K)
        assert dstar_op(K, M) <= dstar_op(K, L) + dstar_op(L, M) + 1e-12


def test_dstar_op_shape_mismatch():
    with pytest.raises(ConfigurationError):
        dstar_op(FiniteRankOperator(np.zeros((2, 3))), FiniteRankOperator(np.zeros((3, 2))))


def test_apply_examples(rng):
    x = rng.standard_normal(3)
    np.testing.assert_array_equal(apply(FiniteRankOperator(np.zeros((2, 3))), x), np.zeros(2))
    np.testing.assert_array_equal(apply(FiniteRankOperator(np.eye(3)), x), x)
    K = FiniteRankOperator(rng.standard_normal((2, 3)))
    scaled = FiniteRankOperator(2.5 * K.matrix)
    np.testing.assert_allclose(apply(scaled, x), 2.5 * apply(K, x), rtol=1e-14)
    with pytest.raises(ConfigurationError):
        apply(K, np.ones(4))


def test_apply_bounded_by_norm(rng):
    for _ in range(100):
        K = FiniteRankOperator(rng.standard_normal((3, 4)))
        x = rng.standard_normal(4)
        assert np.linalg.norm(apply(K, x)) <= jacobi_singular_values(K.matrix)[0] * np.linalg.norm(x) + 1e-12


def test_weak_contraction(rng):
    for _ in range(100):
        K = FiniteRankOperator(rng.standard_normal((3, 3)))
        L = FiniteRankOperator(rng.standard_normal((3, 3)))
        x = rng.standard_normal(3)
        gap = jacobi_singular_values(K.matrix - L.matrix)[0] * np.linalg.norm(x)
        assert dstar(apply(K, x), apply(L, x)) <= gap + 1e-12


def test_weak_star_continuity_surrogate(rng):
    K = FiniteRankOperator(rng.standard_normal((2, 3)))
    E = rng.standard_normal((2, 3))
    x = rng.standard_normal(3)
    gaps = [dstar(apply(FiniteRankOperator(K.matrix + E / n), x), apply(K, x)) for n in (1, 10, 100, 1000)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-2


@pytest.mark.parametrize("scheme", list(OperatorScheme))
@pytest.mark.parametrize("p_Y", ["2", "inf"])
def test_sample_operator_in_ball(scheme, p_Y):
    space = SpaceConfig(d=3, k=2, p_Y=p_Y)
    for seed in range(50):
        K = sample_operator(np.random.default_rng(seed), space, scheme)
        assert K.conforms(space)
        assert K.norm <= 1.0 + 1e-9


def test_sample_operator_deterministic(space):
    a = sample_operator(np.random.default_rng(7), space)
    b = sample_operator(np.random.default_rng(7), space)
    assert a == b
    assert a.matrix.tobytes() == b.matrix.tobytes()


def test_distinct_seeds_give_distinct_operators(space):
    for seed in range(100):
        a = sample_operator(np.random.default_rng(2 * seed), space)
        b = sample_operator(np.random.default_rng(2 * seed + 1), space)
        assert dstar_op(a, b) > 0.0


def test_random_ball_grid_shape(space, rng):
    grid = random_ball_grid(space, 16, rng)
    assert grid.shape == (16, space.k, space.lifted_dim)
    assert random_ball_grid(space, 0, rng).shape == (0, space.k, space.lifted_dim)
