"""Finite-rank operators K: lifted X -> Y and the unit ball they live in."""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Union

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigurationError, NumericError
from app.schemas.solver import OperatorScheme
from app.schemas.space import NormExponent, SpaceConfig
from app.services.lattice import dstar_weights, norm_exponent

logger = logging.getLogger(__name__)


@lru_cache(maxsize=64)
def _start_vector(n: int) -> np.ndarray:
    # Fixed start so norms are reproducible bit for bit
    x = np.random.default_rng(0).standard_normal(n)
    x /= np.linalg.norm(x)
    x.setflags(write=False)
    return x


def spectral_norm(
    matrix: np.ndarray,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> float:
    """Largest singular value by power iteration on the Gram matrix.

    The iteration matrix is squared (and renormalised) after every step, so
    step t applies the Gram matrix 2^t times; the Rayleigh quotient of the
    original Gram matrix is the eigenvalue estimate.
    """
    tol = settings.NORM_TOL if tol is None else tol
    max_iter = settings.NORM_MAX_ITER if max_iter is None else max_iter
    a = np.asarray(matrix, dtype=np.float64)
    if a.size == 0 or not np.any(a):
        return 0.0
    gram = a.T @ a if a.shape[1] <= a.shape[0] else a @ a.T
    scale = np.max(np.abs(gram))
    power = gram / scale
    x = _start_vector(gram.shape[0]).copy()
    estimate = 0.0
    for it in range(1, max_iter + 1):
        y = power @ x
        y_norm = np.linalg.norm(y)
        if y_norm == 0.0:
            # start vector orthogonal to the range; perturb deterministically
            y = x + _start_vector(gram.shape[0])[::-1]
            y_norm = np.linalg.norm(y)
        x = y / y_norm
        previous, estimate = estimate, float(x @ gram @ x)
        if it > 1 and abs(estimate - previous) <= tol * abs(estimate):
            return float(np.sqrt(max(estimate, 0.0)))
        power = power @ power
        power_scale = np.max(np.abs(power))
        if power_scale > 0:
            power /= power_scale
    raise NumericError("spectral norm power iteration did not converge", max_iter)


def matrix_norm(matrix: np.ndarray, p_Y: Union[NormExponent, str]) -> float:
    """Operator norm from Euclidean lifted inputs into (Y, ||.||_{p_Y})"""
    if norm_exponent(p_Y) == NormExponent.TWO:
        return spectral_norm(matrix)
    a = np.asarray(matrix, dtype=np.float64)
    return float(np.max(np.linalg.norm(a, axis=1))) if a.size else 0.0


@dataclass(frozen=True)
class FiniteRankOperator:
    """A k x (d+1) matrix with its operator norm cached at construction"""
    matrix: np.ndarray
    p_Y: NormExponent = NormExponent.TWO
    cached_norm: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ConfigurationError(f"operator must be a matrix, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ConfigurationError("operator entries must be finite")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "p_Y", norm_exponent(self.p_Y))
        if self.cached_norm is None:
            object.__setattr__(self, "cached_norm", matrix_norm(matrix, self.p_Y))

    @classmethod
    def zeros(cls, space: SpaceConfig) -> "FiniteRankOperator":
        return cls(np.zeros((space.k, space.lifted_dim)), space.p_Y, 0.0)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def norm(self) -> float:
        return float(self.cached_norm)

    def conforms(self, space: SpaceConfig) -> bool:
        return self.matrix.shape == (space.k, space.lifted_dim)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FiniteRankOperator):
            return NotImplemented
        return self.p_Y == other.p_Y and np.array_equal(self.matrix, other.matrix)

    def __hash__(self) -> int:
        return hash((self.p_Y, self.matrix.tobytes()))


def apply(K: FiniteRankOperator, x: np.ndarray) -> np.ndarray:
    """Kx for one lifted input or a batch of them (last axis)"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != K.matrix.shape[1]:
        raise ConfigurationError(
            f"input of length {arr.shape[-1]} does not match operator with {K.matrix.shape[1]} columns"
        )
    return arr @ K.matrix.T


def op_norm(K: FiniteRankOperator) -> float:
    return K.norm


def project_unit_ball(K: FiniteRankOperator) -> FiniteRankOperator:
    """Radial projection K / max(1, ||K||)"""
    scale = max(1.0, K.norm)
    if scale == 1.0:
        return K
    return FiniteRankOperator(K.matrix / scale, K.p_Y, K.norm / scale)


def project_matrix(matrix: np.ndarray, p_Y: Union[NormExponent, str]) -> np.ndarray:
    """Array-level radial projection used in the solver's inner loops"""
    norm = matrix_norm(matrix, p_Y)
    return matrix / norm if norm > 1.0 else matrix


def dstar_op_matrices(a: np.ndarray, b: np.ndarray) -> Union[float, np.ndarray]:
    """Product-weighted entrywise l1 distance; broadcasts over leading axes"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-2:] != b.shape[-2:]:
        raise ConfigurationError(f"operator shape mismatch: {a.shape} vs {b.shape}")
    rows, cols = a.shape[-2:]
    weights = np.outer(dstar_weights(rows), dstar_weights(cols))
    result = np.sum(np.abs(a - b) * weights, axis=(-2, -1))
    return float(result) if np.ndim(result) == 0 else result


def dstar_op(K: FiniteRankOperator, L: FiniteRankOperator) -> float:
    """Weak* metric on the operator ball via the rank-one pairing system"""
    return dstar_op_matrices(K.matrix, L.matrix)


def operator_distance(K: FiniteRankOperator, L: FiniteRankOperator) -> float:
    """Strong (norm-based) distance ||K - L||"""
    if K.shape != L.shape:
        raise ConfigurationError(f"operator shape mismatch: {K.shape} vs {L.shape}")
    return matrix_norm(K.matrix - L.matrix, K.p_Y)


def sample_matrix(
    rng: np.random.Generator,
    space: SpaceConfig,
    scheme: OperatorScheme = OperatorScheme.GAUSSIAN_PROJECTED,
) -> np.ndarray:
    shape = (space.k, space.lifted_dim)
    if scheme == OperatorScheme.GAUSSIAN_PROJECTED:
        matrix = rng.standard_normal(shape)
    elif scheme == OperatorScheme.SPHERE_UNIFORM_ROWS:
        matrix = rng.standard_normal(shape)
        matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    else:
        raise ConfigurationError(f"unknown operator scheme {scheme!r}")
    return project_matrix(matrix, space.p_Y)


def sample_operator(
    rng: np.random.Generator,
    space: SpaceConfig,
    scheme: OperatorScheme = OperatorScheme.GAUSSIAN_PROJECTED,
) -> FiniteRankOperator:
    """Draw a random operator in the unit ball"""
    return FiniteRankOperator(sample_matrix(rng, space, scheme), space.p_Y)


def random_ball_grid(
    space: SpaceConfig,
    count: int,
    rng: np.random.Generator,
    scheme: OperatorScheme = OperatorScheme.GAUSSIAN_PROJECTED,
) -> np.ndarray:
    """A stack (count, k, d+bias) of random unit-ball operators"""
    if count <= 0:
        return np.zeros((0, space.k, space.lifted_dim))
    return np.stack([sample_matrix(rng, space, scheme) for _ in range(count)])
