"""Training networks from samples by conditional gradient over measures.

solve_variational minimises fidelity(a) + lambda ||a||_M by alternating a
linear-minimisation oracle over the operator ball (atom_select), a fully
corrective solve of the weights and a sliding step that moves weights and
operators jointly on the unit sphere. solve_least_error drives lambda to 0
with warm starts until the samples are interpolated.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import cvxpy as cp
import numpy as np
from scipy import optimize

from app.core.config import settings
from app.core.errors import ConfigurationError, NumericError, PreconditionError
from app.schemas.reports import ContinuationStep, SolverFlag
from app.schemas.solver import FidelityConfig, FitNorm, SolverConfig, WeightSolver
from app.schemas.space import NormExponent, SpaceConfig
from app.services.fidelity import (
    adjoint_gradient,
    fidelity_of_residuals,
    forward,
    objective,
    residual_dual,
    smoothed_fit,
)
from app.services.lattice import dstar_weights, norm_exponent, ystar_norm
from app.services.measures import (
    DiscreteOperatorMeasure,
    empty_measure,
    features,
    merge_atoms,
    prune,
    radon_norm,
)
from app.services.operators import FiniteRankOperator, matrix_norm, sample_matrix

logger = logging.getLogger(__name__)


@dataclass
class AtomSelection:
    """Best operator found by the linear-minimisation oracle"""
    matrix: np.ndarray
    value: float
    stagnation: bool = False

    @property
    def magnitude(self) -> float:
        return abs(self.value)

    def operator(self, space: SpaceConfig) -> FiniteRankOperator:
        return FiniteRankOperator(self.matrix, space.p_Y)


@dataclass
class CorrectiveResult:
    weights: np.ndarray
    objective: float
    converged: bool
    iterations: int
    # exact dual vectors (m, k) at `weights`, when the conic solver produced them
    dual: Optional[np.ndarray] = None


@dataclass
class TrainingResult:
    """Solution of the variational problem with its diagnostics"""
    measure: DiscreteOperatorMeasure
    lam: float
    objective: float
    objective_trace: List[float] = field(default_factory=list)
    certificate_value: float = 0.0
    iterations: int = 0
    flags: List[SolverFlag] = field(default_factory=list)
    dual: Optional[np.ndarray] = None

    @property
    def certified(self) -> bool:
        return SolverFlag.SUBOPTIMAL not in self.flags


@dataclass
class LeastErrorResult:
    measure: DiscreteOperatorMeasure
    trace: List[ContinuationStep] = field(default_factory=list)
    flags: List[SolverFlag] = field(default_factory=list)
    lam: float = 0.0
    # last variational solve of the continuation, before any polishing
    variational: Optional[TrainingResult] = None


def _flag(flags: List[SolverFlag], flag: SolverFlag) -> None:
    if flag not in flags:
        flags.append(flag)


def stack_norms(stack: np.ndarray, p_Y) -> np.ndarray:
    """Operator norms of every matrix in a (n, k, c) stack"""
    if norm_exponent(p_Y) == NormExponent.INF:
        return np.max(np.linalg.norm(stack, axis=-1), axis=-1)
    return np.array([matrix_norm(matrix, p_Y) for matrix in stack])


def project_stack(stack: np.ndarray, p_Y) -> np.ndarray:
    """Radial projection of every operator in a (n, k, c) stack onto the unit ball"""
    return stack / np.maximum(stack_norms(stack, p_Y), 1.0)[:, None, None]


def norm_gradients(stack: np.ndarray, p_Y) -> Tuple[np.ndarray, np.ndarray]:
    """Norms (n,) and their gradients (n, k, c) at every matrix of a stack.

    The spectral norm has gradient u1 v1^T; the max-row norm has the
    normalised top row, placed in that row. Ties take the first maximiser.
    """
    if norm_exponent(p_Y) == NormExponent.INF:
        rows = np.linalg.norm(stack, axis=-1)
        top = np.argmax(rows, axis=-1)
        norms = rows[np.arange(len(stack)), top]
        grads = np.zeros_like(stack)
        safe = np.maximum(norms, 1e-300)
        grads[np.arange(len(stack)), top] = stack[np.arange(len(stack)), top] / safe[:, None]
        return norms, grads
    u, s, vt = np.linalg.svd(stack)
    return s[:, 0], u[:, :, 0][:, :, None] * vt[:, 0, :][:, None, :]


def soft_threshold(x: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def ascend(
    v: np.ndarray,
    lifted: np.ndarray,
    space: SpaceConfig,
    sc: SolverConfig,
    rng: np.random.Generator,
    current: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Multistart projected-gradient ascent of |(T*v)(K)| over the unit ball.

    Starts are `sc.multistarts` random operators plus every operator in
    `current`. Each start ascends on s (T*v)(K) with s the sign of its
    initial value; steps double on success and halve on failure. Returns
    the end points (n, k, c) and their signed values (n,).
    """
    vectors = np.asarray(v, dtype=np.float64)
    starts = [sample_matrix(rng, space) for _ in range(sc.multistarts)]
    if current is not None and len(current):
        starts.extend(np.asarray(current, dtype=np.float64))
    if not starts:
        starts.append(sample_matrix(rng, space))

    K = np.stack(starts)
    values, grads = adjoint_gradient(vectors, lifted, K)
    signs = np.where(values >= 0, 1.0, -1.0)
    score = signs * values
    grad_norms = np.sqrt(np.sum(grads ** 2, axis=(1, 2)))
    steps = 1.0 / np.maximum(grad_norms, 1e-12)
    active = grad_norms > 0

    for _ in range(sc.ascent_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        moved = K[idx] + (steps[idx] * signs[idx])[:, None, None] * grads[idx]
        trial = project_stack(moved, space.p_Y)
        trial_values, trial_grads = adjoint_gradient(vectors, lifted, trial)
        trial_score = signs[idx] * trial_values
        gain = trial_score - score[idx]
        improved = gain > 0

        accepted = idx[improved]
        K[accepted] = trial[improved]
        score[accepted] = trial_score[improved]
        grads[accepted] = trial_grads[improved]
        steps[accepted] *= 2.0
        rejected = idx[~improved]
        steps[rejected] *= 0.5

        flat = improved & (gain <= sc.ascent_tol * np.maximum(1.0, np.abs(trial_score)))
        active[idx[flat]] = False
        if rejected.size:
            norms = np.sqrt(np.sum(grads[rejected] ** 2, axis=(1, 2)))
            active[rejected[steps[rejected] * norms < 1e-14]] = False

    return K, signs * score


def atom_select(
    v: np.ndarray,
    lifted: np.ndarray,
    space: SpaceConfig,
    sc: SolverConfig,
    rng: np.random.Generator,
    current: Optional[np.ndarray] = None,
) -> AtomSelection:
    """Maximise |(T*v)(K)| over the unit ball; see `ascend` for the search"""
    vectors = np.asarray(v, dtype=np.float64)
    if not vectors.size or not np.any(vectors):
        return AtomSelection(np.zeros((space.k, space.lifted_dim)), 0.0, stagnation=True)
    K, values = ascend(vectors, lifted, space, sc, rng, current)
    best = int(np.argmax(np.abs(values)))
    return AtomSelection(K[best].copy(), float(values[best]), stagnation=bool(values[best] == 0.0))


def lambda_max(
    dataset,
    fc: Optional[FidelityConfig] = None,
    sc: Optional[SolverConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Dual threshold max |(T*v0)(K)| with v0 the dual at a = 0; above it 0 is optimal"""
    fc = fc or FidelityConfig()
    sc = sc or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(sc.seed)
    v0 = residual_dual(empty_measure(dataset.space), dataset, fc)
    return atom_select(v0, dataset.lifted, dataset.space, sc, rng).magnitude


class WeightProblem:
    """Data term over weights for a fixed operator stack"""

    def __init__(self, matrices: np.ndarray, dataset, fc: FidelityConfig):
        self.phi = features(matrices, dataset.lifted)
        self.outputs = dataset.outputs
        self.fc = fc
        self.m = dataset.m

    def residuals(self, alpha: np.ndarray) -> np.ndarray:
        return np.einsum("mnk,n->mk", self.phi, alpha) - self.outputs

    def smooth(self, alpha: np.ndarray) -> Tuple[float, np.ndarray]:
        value, g = smoothed_fit(self.residuals(alpha), self.fc)
        return value, np.einsum("mnk,mk->n", self.phi, g) / self.m

    def exact(self, alpha: np.ndarray) -> float:
        return fidelity_of_residuals(self.residuals(alpha), self.fc)

    def curvature(self) -> float:
        flat = self.phi.transpose(0, 2, 1).reshape(-1, self.phi.shape[1])
        if not flat.size:
            return 1.0
        return max(float(np.linalg.norm(flat, 2)) ** 2 / self.m, 1e-12)

    def conic(
        self, lam: float, cone: Optional[np.ndarray] = None, scale: float = 1.0
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Exact minimiser of the data term + lam ||alpha||_1 as a cone program.

        The fit norm enters through an epigraph t_i >= N(r_i) and the
        objective is divided by `scale`. Returns the weights and the dual
        vectors v (m, k) read off the residual constraints, oriented so that
        sum_i <v_i, y_i> >= 0.
        """
        m, n, k = self.phi.shape
        alpha = cp.Variable(n)
        residual = cp.Variable((m, k))
        t = cp.Variable(m)
        links = [residual[:, j] == self.phi[:, :, j] @ alpha - self.outputs[:, j] for j in range(k)]
        if FitNorm(self.fc.fit_norm) == FitNorm.YSTAR:
            bound = t >= cp.abs(residual) @ dstar_weights(k)
        else:
            bound = t >= cp.norm(residual, 2, axis=1)
        data = cp.sum_squares(t) / (2.0 * m) if self.fc.p == 2 else cp.sum(t) / m
        constraints = links + [bound]
        if cone is not None:
            constraints.append(cp.multiply(cone, alpha) >= 0)
        problem = cp.Problem(cp.Minimize((data + lam * cp.norm1(alpha)) / scale), constraints)
        problem.solve()
        if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or alpha.value is None:
            iterations = problem.solver_stats.num_iters if problem.solver_stats else 0
            raise NumericError(f"weight program ended with status {problem.status}", iterations or 0)

        dual = m * scale * np.stack([np.asarray(link.dual_value, dtype=np.float64) for link in links], axis=1)
        if float(np.sum(dual * self.outputs)) < 0:
            dual = -dual
        return np.asarray(alpha.value, dtype=np.float64), dual


def prox_descent(
    problem: WeightProblem,
    init: np.ndarray,
    prox,
    penalty,
    tol: float,
    max_iter: int,
) -> CorrectiveResult:
    """Monotone accelerated proximal gradient with backtracking and adaptive restart.

    The smoothed composite objective never increases between accepted
    iterates; the returned point is the best iterate by the exact objective.
    Stops after 10 consecutive iterations whose decrease is below
    tol * |objective|.
    """
    x = np.array(init, dtype=np.float64)
    y = x.copy()
    t = 1.0
    L = problem.curvature()
    fx, _ = problem.smooth(x)
    Fx = fx + penalty(x)
    best, best_exact = x.copy(), problem.exact(x) + penalty(x)
    stalled = 0
    converged = False
    iteration = 0

    for iteration in range(1, max_iter + 1):
        fy, gy = problem.smooth(y)
        while True:
            z = prox(y - gy / L, 1.0 / L)
            fz, _ = problem.smooth(z)
            d = z - y
            if fz <= fy + gy @ d + 0.5 * L * (d @ d) + 1e-15 * abs(fy):
                break
            L *= 2.0
            if L > 1e300:
                break
        Fz = fz + penalty(z)
        x_prev, F_prev = x, Fx
        if Fz <= Fx:
            x, Fx = z, Fz
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = x + ((t - 1.0) / t_next) * (x - x_prev)
            t = t_next
        else:
            # restart momentum
            y, t = x.copy(), 1.0

        exact = problem.exact(x) + penalty(x)
        if exact < best_exact:
            best, best_exact = x.copy(), exact

        if F_prev - Fx <= tol * abs(Fx):
            stalled += 1
            if stalled >= 10:
                converged = True
                break
        else:
            stalled = 0

    return CorrectiveResult(best, best_exact, converged, iteration)


def _use_conic(sc: SolverConfig, dataset) -> bool:
    solver = WeightSolver(sc.weight_solver)
    if solver == WeightSolver.CONIC:
        return True
    if solver == WeightSolver.PROXIMAL:
        return False
    return dataset.m * dataset.space.k <= settings.CONIC_SIZE_LIMIT


def corrective_step(
    matrices: np.ndarray,
    dataset,
    fc: FidelityConfig,
    lam: float,
    sc: Optional[SolverConfig] = None,
    init: Optional[np.ndarray] = None,
    cone: Optional[np.ndarray] = None,
) -> CorrectiveResult:
    """Minimise fidelity(sum alpha_i delta_K_i) + lambda ||alpha||_1 over the weights.

    With `cone` given the weights are further restricted to
    cone_i * alpha_i >= 0. The returned objective never exceeds the one at
    `init`.
    """
    sc = sc or SolverConfig()
    matrices = np.asarray(matrices, dtype=np.float64)
    if matrices.ndim != 3 or len(matrices) == 0:
        raise PreconditionError("corrective step needs a nonempty operator stack")
    if lam < 0:
        raise PreconditionError(f"lambda must be nonnegative, got {lam}")
    init = np.zeros(len(matrices)) if init is None else np.asarray(init, dtype=np.float64)
    if cone is not None:
        cone = np.sign(np.asarray(cone, dtype=np.float64))
        init = np.where(cone * init >= 0, init, 0.0)
    problem = WeightProblem(matrices, dataset, fc)

    def penalty(x: np.ndarray) -> float:
        return lam * float(np.sum(np.abs(x)))

    start = problem.exact(init) + penalty(init)

    if _use_conic(sc, dataset):
        try:
            weights, dual = problem.conic(lam, cone, scale=max(start, 1e-12))
            largest = float(np.max(np.abs(weights))) if weights.size else 0.0
            weights = np.where(np.abs(weights) > sc.weight_zero_tol * max(largest, 1.0), weights, 0.0)
            if cone is not None:
                weights = np.where(cone * weights >= 0, weights, 0.0)
            value = problem.exact(weights) + penalty(weights)
            if value <= start:
                return CorrectiveResult(weights, value, True, 1, dual)
            logger.debug(f"Conic weights did not improve on the start ({value:.12g} > {start:.12g})")
            # start optimal to solver accuracy: reuse the solved dual
            near = value <= start * (1.0 + 1e-9) + 1e-15
            return CorrectiveResult(init.copy(), start, True, 1, dual if near else None)
        except (cp.SolverError, NumericError) as exc:
            logger.warning(f"Conic weight solve failed, falling back to proximal descent: {exc}")

    def prox(x: np.ndarray, step: float) -> np.ndarray:
        shrunk = soft_threshold(x, lam * step)
        if cone is not None:
            shrunk = np.where(cone * shrunk >= 0, shrunk, 0.0)
        return shrunk

    result = prox_descent(
        problem,
        init,
        prox=prox,
        penalty=penalty,
        tol=sc.corrective_tol,
        max_iter=sc.corrective_iters,
    )
    if not result.converged:
        logger.debug(f"Corrective step stopped at the iteration cap ({result.iterations})")
    return result


def sliding_step(
    weights: np.ndarray,
    matrices: np.ndarray,
    dataset,
    fc: FidelityConfig,
    lam: float,
    sc: SolverConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Joint refinement of weights and operators, operators kept on the unit sphere.

    Atom l is written s_l beta_l (U_l x / ||U_l||)_+ with beta_l >= 0 and
    its sign s_l fixed. The smoothed objective is minimised over (beta, U)
    by L-BFGS-B; the result is kept only when the exact objective
    decreases. Zero-weight atoms are dropped.
    """
    alpha = np.asarray(weights, dtype=np.float64)
    keep = alpha != 0
    alpha, K = alpha[keep], np.asarray(matrices, dtype=np.float64)[keep]
    if not len(alpha) or sc.sliding_iters == 0:
        return alpha, K

    p_Y = dataset.space.p_Y
    lifted, outputs = dataset.lifted, dataset.outputs
    signs = np.sign(alpha)
    n, k, c = K.shape
    rho0 = stack_norms(K, p_Y)
    beta0 = np.abs(alpha) * rho0
    U0 = K / rho0[:, None, None]

    def exact(alpha_: np.ndarray, K_: np.ndarray) -> float:
        residuals = np.einsum("mnk,n->mk", features(K_, lifted), alpha_) - outputs
        return fidelity_of_residuals(residuals, fc) + lam * float(np.sum(np.abs(alpha_)))

    def smoothed(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        beta, U = theta[:n], theta[n:].reshape(n, k, c)
        rho, drho = norm_gradients(U, p_Y)
        rho = np.maximum(rho, 1e-300)
        unit = U / rho[:, None, None]
        coefficients = signs * beta
        residuals = np.einsum("mnk,n->mk", features(unit, lifted), coefficients) - outputs
        value, g = smoothed_fit(residuals, fc)
        values, grads = adjoint_gradient(g, lifted, unit)
        d_beta = signs * values + lam
        G = coefficients[:, None, None] * grads
        radial = np.sum(G * U, axis=(1, 2)) / rho ** 2
        d_U = G / rho[:, None, None] - radial[:, None, None] * drho
        return value + lam * float(np.sum(beta)), np.concatenate([d_beta, d_U.ravel()])

    theta0 = np.concatenate([beta0, U0.ravel()])
    scale = max(smoothed(theta0)[0], 1e-300)

    def scaled(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = smoothed(theta)
        return value / scale, grad / scale

    bounds = [(0.0, None)] * n + [(None, None)] * (n * k * c)
    fit = optimize.minimize(
        scaled,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": sc.sliding_iters, "ftol": 1e-14, "gtol": 1e-12},
    )
    beta, U = fit.x[:n], fit.x[n:].reshape(n, k, c)
    rho = stack_norms(U, p_Y)
    usable = (beta > 0) & (rho > 0)
    alpha_new = signs[usable] * beta[usable]
    K_new = U[usable] / rho[usable][:, None, None]
    if exact(alpha_new, K_new) < exact(alpha, K):
        logger.debug(f"Sliding accepted after {fit.nit} L-BFGS-B iterations")
        return alpha_new, K_new
    return alpha, K


def _canonical(space: SpaceConfig, weights: np.ndarray, matrices: np.ndarray) -> DiscreteOperatorMeasure:
    return prune(DiscreteOperatorMeasure(space, weights, matrices))


def _within_budget(
    corrective: CorrectiveResult,
    matrices: np.ndarray,
    dataset,
    fc: FidelityConfig,
    lam: float,
    sc: SolverConfig,
) -> Tuple[CorrectiveResult, np.ndarray]:
    """Keep the max_atoms largest weights and re-solve when the support is too large"""
    support = np.flatnonzero(corrective.weights)
    if len(support) <= sc.max_atoms:
        return corrective, matrices
    keep = support[np.argsort(-np.abs(corrective.weights[support]), kind="stable")[: sc.max_atoms]]
    keep = np.sort(keep)
    logger.debug(f"Support of {len(support)} atoms trimmed to the budget of {sc.max_atoms}")
    refit = corrective_step(matrices[keep], dataset, fc, lam, sc, corrective.weights[keep])
    return refit, matrices[keep]


def solve_variational(
    dataset,
    lam: float,
    sc: Optional[SolverConfig] = None,
    fc: Optional[FidelityConfig] = None,
    warm_start: Optional[DiscreteOperatorMeasure] = None,
    rng: Optional[np.random.Generator] = None,
) -> TrainingResult:
    """Generalised conditional gradient for min fidelity(a) + lambda ||a||_M.

    Stops once the certificate test max |(T*v)(K)| / lambda <= 1 + cert_tol
    holds at the oracle's candidate; otherwise the result is flagged
    suboptimal. v is the exact dual of the last weight solve when the conic
    solver ran, the smoothed residual dual otherwise. The exact objective is
    nonincreasing across outer iterations.
    """
    if lam <= 0:
        raise PreconditionError(f"lambda must be positive, got {lam}")
    sc = sc or SolverConfig()
    fc = fc or FidelityConfig()
    rng = rng if rng is not None else np.random.default_rng(sc.seed)
    space = dataset.space

    a = empty_measure(space) if warm_start is None else warm_start
    if a.space.k != space.k or a.space.lifted_dim != space.lifted_dim:
        raise ConfigurationError("warm start does not conform to the dataset space")
    if dataset.m == 0:
        return TrainingResult(empty_measure(space), lam, 0.0, [0.0])

    value = objective(a, dataset, fc, lam)
    trace = [value]
    flags: List[SolverFlag] = []
    certified = False
    eta = math.inf
    iteration = 0
    dual: Optional[np.ndarray] = None
    v = np.zeros((dataset.m, space.k))

    for iteration in range(1, sc.outer_iters + 1):
        v = dual if dual is not None else residual_dual(a, dataset, fc)
        selection = atom_select(v, dataset.lifted, space, sc, rng, a.matrices)
        eta = selection.magnitude / lam
        logger.debug(f"iteration {iteration}: atoms={len(a)} objective={value:.10g} eta={eta:.6g}")
        if selection.stagnation or eta <= 1.0 + sc.cert_tol:
            certified = True
            break

        matrices = np.concatenate([a.matrices, selection.matrix[None]])
        corrective = corrective_step(matrices, dataset, fc, lam, sc, np.append(a.weights, 0.0))
        if not corrective.converged:
            _flag(flags, SolverFlag.NON_CONVERGED)
        corrective, matrices = _within_budget(corrective, matrices, dataset, fc, lam, sc)
        fallback = (_canonical(space, corrective.weights, matrices), corrective.objective, corrective.dual)

        candidate = fallback[0]
        if sc.merge_tol > 0 and len(candidate) > 1:
            candidate = merge_atoms(candidate, sc.merge_tol)
        weights, stack = candidate.weights, candidate.matrices
        if sc.sliding and sc.sliding_iters > 0 and len(weights):
            weights, stack = sliding_step(weights, stack, dataset, fc, lam, sc)
        if len(weights):
            refit = corrective_step(stack, dataset, fc, lam, sc, weights)
            if not refit.converged:
                _flag(flags, SolverFlag.NON_CONVERGED)
            refined = (_canonical(space, refit.weights, stack), refit.objective, refit.dual)
        else:
            refined = (empty_measure(space), objective(empty_measure(space), dataset, fc, lam), None)
        if refined[1] > fallback[1]:
            refined = fallback
        candidate, candidate_value, candidate_dual = refined

        if candidate_value > value + 1e-12 * max(abs(value), 1e-300):
            logger.warning(f"Outer iteration {iteration} did not decrease the objective; stopping")
            _flag(flags, SolverFlag.STAGNATION)
            break
        a, value, dual = candidate, candidate_value, candidate_dual
        trace.append(value)

    if not certified:
        v = dual if dual is not None else residual_dual(a, dataset, fc)
        eta = atom_select(v, dataset.lifted, space, sc, rng, a.matrices).magnitude / lam
        certified = eta <= 1.0 + sc.cert_tol
    if not certified:
        _flag(flags, SolverFlag.SUBOPTIMAL)
        logger.warning(f"Solver stopped without certificate (max |T*v|/lambda = {eta:.6g})")

    logger.info(
        f"Variational solve: lambda={lam:.6g} atoms={len(a)} objective={value:.10g} "
        f"iterations={iteration} flags={[flag.value for flag in flags]}"
    )
    return TrainingResult(a, lam, value, trace, float(eta), iteration, flags, dual=np.array(v))


def max_residual(a: DiscreteOperatorMeasure, dataset) -> float:
    """max_i ||Ta(x_i) - y_i||_{Y_*}"""
    if dataset.m == 0:
        return 0.0
    return float(np.max(ystar_norm(forward(a, dataset) - dataset.outputs)))


def interpolation_polish(a: DiscreteOperatorMeasure, dataset, sc: SolverConfig) -> DiscreteOperatorMeasure:
    """Gauss-Newton refinement of the equations Ta(x_i) = y_i over weights and operators.

    Atom l is written s_l (B_l x)_+ with B_l = |alpha_l| K_l and its sign
    s_l fixed; the refined B_l are mapped back onto unit-norm operators.
    """
    if not len(a):
        return a
    signs = np.sign(a.weights)
    B0 = np.abs(a.weights)[:, None, None] * a.matrices
    n, k, c = B0.shape
    m = dataset.m
    if m * k * n * k * c > settings.POLISH_SIZE_LIMIT:
        logger.debug("Interpolation problem too large to polish")
        return a
    lifted, outputs = dataset.lifted, dataset.outputs

    def residual(theta: np.ndarray) -> np.ndarray:
        B = theta.reshape(n, k, c)
        return (np.einsum("mnk,n->mk", features(B, lifted), signs) - outputs).ravel()

    def jacobian(theta: np.ndarray) -> np.ndarray:
        B = theta.reshape(n, k, c)
        active = np.einsum("mc,nkc->mnk", lifted, B) > 0
        J = np.zeros((m, k, n, k, c))
        for j in range(k):
            J[:, j, :, j, :] = (signs[None, :] * active[:, :, j])[:, :, None] * lifted[:, None, :]
        return J.reshape(m * k, n * k * c)

    fit = optimize.least_squares(
        residual,
        B0.ravel(),
        jac=jacobian,
        method="trf",
        ftol=1e-14,
        xtol=1e-14,
        gtol=1e-14,
        max_nfev=sc.polish_iters,
    )
    B = fit.x.reshape(n, k, c)
    norms = stack_norms(B, a.space.p_Y)
    keep = norms > 0
    return DiscreteOperatorMeasure(a.space, signs[keep] * norms[keep], B[keep] / norms[keep][:, None, None])


def solve_least_error(
    dataset,
    sc: Optional[SolverConfig] = None,
    fc: Optional[FidelityConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> LeastErrorResult:
    """Minimum-norm interpolation by lambda-continuation on warm-started solves.

    lambda starts at min(sc.lambda_, factor * lambda_max) and is multiplied
    by the continuation factor until max_i ||r_i||_{Y_*} <= eq_residual_tol.
    After every certified solve the equations are polished; the polished
    network is accepted once it interpolates with a Radon norm within
    (1 + cert_tol) of the solve's.
    """
    sc = sc or SolverConfig()
    fc = fc or FidelityConfig()
    rng = rng if rng is not None else np.random.default_rng(sc.seed)
    space = dataset.space
    a = empty_measure(space)
    if dataset.m == 0:
        return LeastErrorResult(a)

    residual = max_residual(a, dataset)
    if residual <= sc.eq_residual_tol:
        return LeastErrorResult(a, [ContinuationStep(lambda_=0.0, radon_norm=0.0, residual=residual, atoms=0)])

    threshold = lambda_max(dataset, fc, sc, rng)
    lam = min(sc.lambda_, sc.continuation_factor * threshold) if threshold > 0 else sc.lambda_
    trace: List[ContinuationStep] = []
    flags: List[SolverFlag] = []
    result: Optional[TrainingResult] = None
    while True:
        result = solve_variational(dataset, lam, sc, fc, warm_start=a, rng=rng)
        a = result.measure
        residual = max_residual(a, dataset)
        if sc.polish and residual > sc.eq_residual_tol and result.certified and len(a):
            polished = interpolation_polish(a, dataset, sc)
            polished_residual = max_residual(polished, dataset)
            if polished_residual <= sc.eq_residual_tol and radon_norm(polished) <= radon_norm(a) * (1.0 + sc.cert_tol):
                logger.debug(f"Polish accepted at lambda={lam:.3e}: residual {residual:.3e} -> {polished_residual:.3e}")
                a, residual = polished, polished_residual
        trace.append(
            ContinuationStep(
                lambda_=lam, radon_norm=radon_norm(a), residual=residual, atoms=len(a), flags=result.flags
            )
        )
        logger.info(f"Continuation: lambda={lam:.3e} radon={radon_norm(a):.8g} residual={residual:.3e}")
        if residual <= sc.eq_residual_tol:
            break
        next_lam = lam * sc.continuation_factor
        if next_lam < settings.LAMBDA_FLOOR:
            logger.warning(f"Residual {residual:.3e} above target at the lambda floor")
            _flag(flags, SolverFlag.INFEASIBLE_AT_FLOOR)
            break
        lam = next_lam
    return LeastErrorResult(a, trace, flags, lam, result)
