"""Sample operator T, the data term and its dual side.

Residuals are r_i = Ta(x_i) - y_i. Dual vectors v_i are stored without the
1/m factor; the adjoint (T*v)(K) = (1/m) sum_i <(K x_i)_+, v_i> carries it,
so that d fidelity / d alpha_j = -(T*v)(K_j) and a solution of the
variational problem has |T*v / lambda| <= 1 on the ball.
"""
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from app.core.errors import ConfigurationError
from app.schemas.solver import FidelityConfig, FitNorm
from app.services.lattice import dstar_weights, dual_norm, ystar_norm
from app.services.measures import DiscreteOperatorMeasure, evaluate_lifted, features
from app.services.operators import FiniteRankOperator

# Upper bound on m * n * k floats materialised per feature block
_BLOCK = 4_000_000


def _conforms(a: DiscreteOperatorMeasure, dataset) -> None:
    if a.space.k != dataset.space.k or a.space.lifted_dim != dataset.space.lifted_dim:
        raise ConfigurationError(
            f"measure with k={a.space.k}, c={a.space.lifted_dim} does not match dataset "
            f"with k={dataset.space.k}, c={dataset.space.lifted_dim}"
        )


def forward(a: DiscreteOperatorMeasure, dataset) -> np.ndarray:
    """Predictions Ta(x_i), shape (m, k)"""
    _conforms(a, dataset)
    return evaluate_lifted(a, dataset.lifted)


def fit_norms(residuals: np.ndarray, fit_norm: FitNorm) -> np.ndarray:
    if FitNorm(fit_norm) == FitNorm.YSTAR:
        return np.asarray(ystar_norm(residuals))
    return np.linalg.norm(residuals, axis=-1)


def fidelity_of_residuals(residuals: np.ndarray, fc: FidelityConfig) -> float:
    """(1/(p m)) sum ||r_i||^p with the exact configured norm"""
    if residuals.shape[0] == 0:
        return 0.0
    norms = fit_norms(residuals, fc.fit_norm)
    return float(np.sum(norms ** fc.p) / (fc.p * residuals.shape[0]))


def fidelity(a: DiscreteOperatorMeasure, dataset, fc: FidelityConfig) -> float:
    return fidelity_of_residuals(forward(a, dataset) - dataset.outputs, fc)


def objective(a: DiscreteOperatorMeasure, dataset, fc: FidelityConfig, lam: float) -> float:
    """Exact variational objective fidelity(a) + lambda ||a||_M"""
    return fidelity(a, dataset, fc) + lam * float(np.sum(np.abs(a.weights)))


def smoothed_fit(residuals: np.ndarray, fc: FidelityConfig) -> Tuple[float, np.ndarray]:
    """Huber-smoothed data term and g_i = d/dr_i N(r_i)^p / p.

    With huber_mu = 0 the exact norm is used and g_i is the subgradient
    taking sign(0) = 0. Outside the smoothing band both agree with the
    exact norm.
    """
    m = residuals.shape[0]
    if m == 0:
        return 0.0, np.zeros_like(residuals)
    mu = fc.huber_mu
    if FitNorm(fc.fit_norm) == FitNorm.EUCLIDEAN and fc.p == 2:
        return float(np.sum(residuals * residuals) / (2.0 * m)), residuals.copy()

    if FitNorm(fc.fit_norm) == FitNorm.YSTAR:
        weights = dstar_weights(residuals.shape[-1])
        magnitude = np.abs(residuals)
        if mu > 0:
            smoothed = np.where(magnitude >= mu, magnitude, (residuals * residuals / mu + mu) / 2.0)
            slope = np.clip(residuals / mu, -1.0, 1.0)
        else:
            smoothed, slope = magnitude, np.sign(residuals)
        norms = smoothed @ weights
        direction = slope * weights
    else:
        raw = np.linalg.norm(residuals, axis=-1)
        if mu > 0:
            norms = np.where(raw >= mu, raw, (raw * raw / mu + mu) / 2.0)
            direction = residuals / np.maximum(raw, mu)[:, None]
        else:
            norms = raw
            direction = residuals / np.where(raw > 0, raw, 1.0)[:, None]

    if fc.p == 2:
        return float(np.sum(norms * norms) / (2.0 * m)), norms[:, None] * direction
    return float(np.sum(norms) / m), direction


def residual_dual(a: DiscreteOperatorMeasure, dataset, fc: FidelityConfig) -> np.ndarray:
    """Dual vectors v_i = -N(r_i)^(p-1) dN(r_i), shape (m, k)"""
    _, gradient = smoothed_fit(forward(a, dataset) - dataset.outputs, fc)
    return -gradient


def _as_stack(matrices) -> Tuple[np.ndarray, bool]:
    if isinstance(matrices, FiniteRankOperator):
        matrices = matrices.matrix
    stack = np.asarray(matrices, dtype=np.float64)
    single = stack.ndim == 2
    return (stack[None] if single else stack), single


def _blocks(n: int, m: int, k: int):
    size = max(1, _BLOCK // max(1, m * k))
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def adjoint_values(vectors: np.ndarray, lifted: np.ndarray, matrices) -> Union[float, np.ndarray]:
    """(T*v)(K) for one operator or a stack of them"""
    stack, single = _as_stack(matrices)
    m, k = vectors.shape
    if stack.shape[1:] != (k, lifted.shape[1]):
        raise ConfigurationError(f"operator shape {stack.shape[1:]} does not match ({k}, {lifted.shape[1]})")
    out = np.zeros(stack.shape[0])
    if m > 0:
        for block in _blocks(stack.shape[0], m, k):
            out[block] = np.einsum("mbk,mk->b", features(stack[block], lifted), vectors) / m
    return float(out[0]) if single else out


def adjoint_gradient(vectors: np.ndarray, lifted: np.ndarray, matrices: np.ndarray):
    """Values (n,) and gradients (n, k, c) of K -> (T*v)(K) over a stack.

    The ReLU derivative is taken as 0 at 0.
    """
    stack, _ = _as_stack(matrices)
    m, k = vectors.shape
    values = np.zeros(stack.shape[0])
    grads = np.zeros_like(stack)
    if m == 0:
        return values, grads
    for block in _blocks(stack.shape[0], m, k):
        z = np.einsum("mc,nkc->mnk", lifted, stack[block])
        active = z > 0
        values[block] = np.einsum("mnk,mk->n", np.where(active, z, 0.0), vectors) / m
        grads[block] = np.einsum("mnk,mc->nkc", active * vectors[:, None, :], lifted) / m
    return values, grads


@dataclass(frozen=True)
class Certificate:
    """Empirical dual element: per-sample vectors v_i paired with lifted inputs"""
    vectors: np.ndarray
    lifted_inputs: np.ndarray
    q: float = 2.0

    def __post_init__(self):
        lifted = np.array(self.lifted_inputs, dtype=np.float64)
        vectors = np.array(self.vectors, dtype=np.float64)
        if lifted.ndim != 2 or vectors.ndim != 2 or lifted.shape[0] != vectors.shape[0]:
            raise ConfigurationError(
                f"certificate needs (m, k) vectors and (m, c) inputs, got {vectors.shape} and {lifted.shape}"
            )
        if not (np.all(np.isfinite(vectors)) and np.all(np.isfinite(lifted))):
            raise ConfigurationError("certificate entries must be finite")
        vectors.setflags(write=False)
        lifted.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "lifted_inputs", lifted)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def norm_q(self) -> float:
        """((1/m) sum ||v_i||^q) ^ (1/q) with the norm dual to Y_*"""
        if self.m == 0:
            return 0.0
        norms = np.asarray(dual_norm(self.vectors))
        return float(np.mean(norms ** self.q) ** (1.0 / self.q))

    def evaluate(self, K) -> Union[float, np.ndarray]:
        return adjoint_values(self.vectors, self.lifted_inputs, K)

    def scaled(self, factor: float) -> "Certificate":
        return Certificate(self.vectors * factor, self.lifted_inputs, self.q)


def adjoint_certificate(cert: Certificate, K) -> Union[float, np.ndarray]:
    """(T*v)(K) = (1/m) sum_i <(K x_i)_+, v_i>"""
    return cert.evaluate(K)
