"""Dual certificates: validation, source condition, separation, Bregman distances and debiasing."""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import cvxpy as cp
import numpy as np
from scipy import sparse

from app.core.config import settings
from app.core.errors import NumericError, PreconditionError
from app.schemas.reports import (
    BregmanReport,
    CertificateValidation,
    SeparationCheck,
    SourceConditionReport,
)
from app.schemas.solver import FidelityConfig, SolverConfig
from app.schemas.space import NormExponent
from app.services.distributions import empirical_moment
from app.services.fidelity import Certificate, residual_dual
from app.services.lattice import dstar_weights, norm_exponent
from app.services.measures import (
    DiscreteOperatorMeasure,
    features,
    lift,
    min_opposite_separation,
    prune,
    radon_norm,
)
from app.services.operators import random_ball_grid
from app.services.training import (
    TrainingResult,
    ascend,
    atom_select,
    corrective_step,
    norm_gradients,
    stack_norms,
)

logger = logging.getLogger(__name__)


@dataclass
class SourceConditionResult:
    report: SourceConditionReport
    certificate: Optional[Certificate] = None
    violating_matrix: Optional[np.ndarray] = None

    @property
    def feasible(self) -> bool:
        return self.report.feasible


def _pairing_rows(matrices: np.ndarray, lifted: np.ndarray) -> np.ndarray:
    """Rows A with A @ vec(v) = (T*v)(K) for each operator K, shape (n, m k)"""
    m = lifted.shape[0]
    phi = features(matrices, lifted)
    return phi.transpose(1, 0, 2).reshape(len(matrices), -1) / m


def solution_certificate(
    result: TrainingResult, dataset, fc: FidelityConfig, polish: bool = True
) -> Certificate:
    """The certificate v / lambda at a variational solution.

    v is the solver's dual when it carries one, the residual dual
    otherwise. With `polish`, v / lambda receives the minimum-norm
    correction that makes its value at every kept atom equal sign(alpha_i)
    exactly.
    """
    a = result.measure
    dual = result.dual if result.dual is not None else residual_dual(a, dataset, fc)
    vectors = np.asarray(dual, dtype=np.float64) / result.lam
    if polish and len(a):
        rows = _pairing_rows(a.matrices, dataset.lifted)
        gap = np.sign(a.weights) - rows @ vectors.reshape(-1)
        correction, *_ = np.linalg.lstsq(rows, gap, rcond=None)
        vectors = vectors + correction.reshape(vectors.shape)
    return Certificate(vectors, dataset.lifted)


def validate_certificate(
    cert: Certificate,
    a: DiscreteOperatorMeasure,
    grid_size: int = 0,
    rng: Optional[np.random.Generator] = None,
    sc: Optional[SolverConfig] = None,
    tol: Optional[float] = None,
) -> CertificateValidation:
    """Max |T*v| over a random ball grid plus ascent maximisers, and sign agreement at the atoms"""
    sc = sc or SolverConfig()
    tol = settings.CERT_TOL if tol is None else tol
    rng = rng if rng is not None else np.random.default_rng(0)
    space = a.space
    grid = random_ball_grid(space, grid_size or settings.VALIDATION_GRID, rng)
    peak = float(np.max(np.abs(cert.evaluate(grid)))) if len(grid) else 0.0
    selection = atom_select(cert.vectors, cert.lifted_inputs, space, sc, rng, a.matrices)
    peak = max(peak, selection.magnitude)

    atom_values = np.atleast_1d(cert.evaluate(a.matrices)) if len(a) else np.zeros(0)
    sign_error = float(np.max(np.abs(atom_values - np.sign(a.weights)))) if len(a) else 0.0
    peak = max(peak, float(np.max(np.abs(atom_values))) if len(a) else 0.0)
    return CertificateValidation(
        max_abs_value=peak,
        atom_values=atom_values.tolist(),
        sign_error=sign_error,
        valid=peak <= 1.0 + tol and sign_error <= tol,
    )


def bregman_distance(
    a: DiscreteOperatorMeasure,
    p_ref: Certificate,
    a_ref: Optional[DiscreteOperatorMeasure] = None,
    p_a: Optional[Certificate] = None,
    grid_size: int = 0,
    rng: Optional[np.random.Generator] = None,
    tol: Optional[float] = None,
) -> BregmanReport:
    """D = ||a||_M - sum_i alpha_i (T*p_ref)(K_i).

    The symmetric distance <p_a - p_ref, a - a_ref> is added when both a
    certificate for `a` and the reference measure are given.
    """
    tol = settings.CERT_TOL if tol is None else tol
    rng = rng if rng is not None else np.random.default_rng(0)
    values = np.atleast_1d(p_ref.evaluate(a.matrices)) if len(a) else np.zeros(0)
    distance = radon_norm(a) - float(a.weights @ values)

    grid = random_ball_grid(a.space, grid_size or settings.VALIDATION_GRID, rng)
    seen = [np.abs(np.atleast_1d(p_ref.evaluate(grid)))] if len(grid) else []
    seen.append(np.abs(values))
    if a_ref is not None and len(a_ref):
        seen.append(np.abs(np.atleast_1d(p_ref.evaluate(a_ref.matrices))))
    peak = float(max((np.max(block) for block in seen if block.size), default=0.0))
    valid = peak <= 1.0 + tol
    if not valid:
        logger.warning(f"Reference certificate reaches {peak:.6g} > 1 + {tol:g} on the validation grid")

    symmetric = None
    if p_a is not None and a_ref is not None:
        symmetric = 0.0
        if len(a):
            symmetric += float(a.weights @ (np.atleast_1d(p_a.evaluate(a.matrices)) - values))
        if len(a_ref):
            ref_gap = np.atleast_1d(p_a.evaluate(a_ref.matrices)) - np.atleast_1d(p_ref.evaluate(a_ref.matrices))
            symmetric -= float(a_ref.weights @ ref_gap)

    return BregmanReport(
        distance=distance,
        symmetric_distance=symmetric,
        per_atom_certificate_values=values.tolist(),
        certificate_max=peak,
        certificate_valid=valid,
    )


def _differentiable(matrix: np.ndarray, p_Y, gap: float = 1e-6) -> bool:
    """Whether the operator norm has a unique maximiser at `matrix`"""
    if norm_exponent(p_Y) == NormExponent.INF:
        rows = np.sort(np.linalg.norm(matrix, axis=1))[::-1]
    else:
        rows = np.linalg.svd(matrix, compute_uv=False)
    return len(rows) < 2 or rows[0] - rows[1] > gap * rows[0]


def _stationarity_rows(a: DiscreteOperatorMeasure, lifted: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rows and targets of grad (T*v)(K_l) = sign(alpha_l) grad ||K_l|| at every atom.

    They hold for any certificate bounded by 1 on the ball that attains
    sign(alpha_l) at an atom on the unit sphere where the norm is
    differentiable; other atoms contribute no rows. Rows act on v flattened
    row-major, shape (r, m k).
    """
    m, c = lifted.shape
    k = a.space.k
    _, normals = norm_gradients(a.matrices, a.space.p_Y)
    z = np.einsum("mc,nkc->mnk", lifted, a.matrices)
    rows, targets = [np.zeros((0, m * k))], [np.zeros(0)]
    for atom in range(len(a)):
        if not _differentiable(a.matrices[atom], a.space.p_Y):
            logger.debug(f"Operator norm not differentiable at atom {atom}; no stationarity rows")
            continue
        block = np.zeros((k, c, m, k))
        for j in range(k):
            block[j, :, :, j] = ((z[:, atom, j] > 0)[:, None] * lifted).T / m
        rows.append(block.reshape(k * c, m * k))
        targets.append(np.sign(a.weights[atom]) * normals[atom].ravel())
    return np.vstack(rows), np.concatenate(targets)


def _independent(rows: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """An orthonormal equivalent of rows x = targets and the least-squares inconsistency"""
    u, s, vt = np.linalg.svd(rows, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-10)) if s.size else 0
    projected = u[:, :rank].T @ targets
    inconsistency = float(np.linalg.norm(targets - u[:, :rank] @ projected))
    return vt[:rank], projected / s[:rank], inconsistency


def _min_norm_certificate(
    eq_rows: np.ndarray,
    targets: np.ndarray,
    slab_rows: np.ndarray,
    m: int,
    k: int,
) -> Optional[np.ndarray]:
    """min (1/m) sum_i (max_j |v_ij| / w_j)^2 s.t. eq_rows v = targets, |slab_rows v| <= 1.

    v is flattened row-major (m, k). Solved as a cone program with an
    epigraph t_i of the per-sample dual norm, then projected exactly onto
    the equality set. Returns None when the program is infeasible.
    """
    x = cp.Variable(m * k)
    t = cp.Variable(m)
    spread = sparse.kron(sparse.identity(m), np.ones((k, 1))).tocsr()
    bound = np.tile(dstar_weights(k), m)
    constraints = [cp.abs(x) <= cp.multiply(bound, spread @ t), eq_rows @ x == targets]
    if slab_rows.shape[0]:
        constraints.append(cp.abs(slab_rows @ x) <= 1.0)
    problem = cp.Problem(cp.Minimize(cp.sum_squares(t) / m), constraints)
    problem.solve()
    if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return None
    if x.value is None:
        raise NumericError(f"certificate program ended with status {problem.status}", 0)
    u = np.asarray(x.value, dtype=np.float64)
    return u - eq_rows.T @ (eq_rows @ u - targets)


def verify_source_condition(
    a_truth: DiscreteOperatorMeasure,
    inputs: np.ndarray,
    grid_size: int = 0,
    rng: Optional[np.random.Generator] = None,
    sc: Optional[SolverConfig] = None,
    tol: float = 1e-6,
    max_rounds: int = 50,
    batch: int = 50,
) -> SourceConditionResult:
    """Search the minimum-norm_q certificate with value sign(alpha_j) at each atom and |value| <= 1 on the ball.

    Ball constraints are generated lazily: each round adds up to `batch`
    worst violators among a random grid and the ascent end points of the
    current candidate, then re-solves. The reported violating operator is
    the largest value seen in the last round.
    """
    sc = sc or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(sc.seed)
    space = a_truth.space
    lifted = lift(np.asarray(inputs, dtype=np.float64).reshape(-1, space.d), space)
    m, k = lifted.shape[0], space.k
    if m == 0:
        raise PreconditionError("source condition needs at least one sample input")

    if len(a_truth) == 0:
        cert = Certificate(np.zeros((m, k)), lifted)
        report = SourceConditionReport(feasible=True, norm_q=0.0, max_violation=0.0, rounds=0)
        return SourceConditionResult(report, cert)

    norms = stack_norms(a_truth.matrices, space.p_Y)
    inside = np.flatnonzero(norms < 1.0 - 1e-6)
    if inside.size:
        # value sign(alpha) at K forces |value| = 1 / ||K|| > 1 at K / ||K||
        atom = int(inside[0])
        violation = 1.0 / norms[atom] - 1.0
        logger.warning(f"Atom {atom} lies inside the unit ball (norm {norms[atom]:.6g})")
        report = SourceConditionReport(
            feasible=False, max_violation=violation, rounds=0, reason="atom strictly inside the unit ball"
        )
        return SourceConditionResult(report, None, a_truth.matrices[atom] / norms[atom])

    value_rows = _pairing_rows(a_truth.matrices, lifted)
    gradient_rows, gradient_targets = _stationarity_rows(a_truth, lifted)
    eq_rows, targets, inconsistency = _independent(
        np.vstack([value_rows, gradient_rows]),
        np.concatenate([np.sign(a_truth.weights), gradient_targets]),
    )
    if inconsistency > tol:
        logger.warning(f"Atom equality constraints are inconsistent (residual {inconsistency:.3e})")
        report = SourceConditionReport(
            feasible=False,
            max_violation=inconsistency,
            rounds=0,
            reason="inconsistent equality constraints",
        )
        return SourceConditionResult(report)

    grid = random_ball_grid(space, grid_size or settings.VALIDATION_GRID, rng)
    slab_rows = np.zeros((0, m * k))
    violation, worst = math.inf, None
    cert = None
    for round_ in range(1, max_rounds + 1):
        solution = _min_norm_certificate(eq_rows, targets, slab_rows, m, k)
        if solution is None:
            logger.warning(f"No certificate satisfies the constraints of round {round_}")
            report = SourceConditionReport(
                feasible=False,
                norm_q=cert.norm_q if cert is not None else None,
                max_violation=violation if math.isfinite(violation) else 0.0,
                rounds=round_,
                reason="constraints infeasible",
            )
            return SourceConditionResult(report, None, worst)
        cert = Certificate(solution.reshape(m, k), lifted)
        endpoints, _ = ascend(cert.vectors, lifted, space, sc, rng, a_truth.matrices)
        candidates = np.concatenate([grid, endpoints])
        values = np.abs(np.atleast_1d(cert.evaluate(candidates)))
        peak = int(np.argmax(values))
        violation, worst = float(values[peak]) - 1.0, candidates[peak]
        logger.debug(f"Source condition round {round_}: norm_q={cert.norm_q:.6g} violation={violation:.3e}")
        if violation <= tol:
            report = SourceConditionReport(
                feasible=True, norm_q=cert.norm_q, max_violation=max(violation, 0.0), rounds=round_
            )
            return SourceConditionResult(report, cert)
        order = np.argsort(-values, kind="stable")[:batch]
        violators = candidates[order[values[order] > 1.0 + tol]]
        slab_rows = np.vstack([slab_rows, _pairing_rows(violators, lifted)])

    logger.warning(f"No certificate within {max_rounds} rounds (violation {violation:.3e})")
    report = SourceConditionReport(
        feasible=False,
        norm_q=cert.norm_q if cert is not None else None,
        max_violation=violation,
        rounds=max_rounds,
        reason="ball constraint violated",
    )
    return SourceConditionResult(report, None, worst)


def separation_bound(cert: Certificate, moment_p: Optional[float] = None, p: float = 2.0) -> float:
    """2 / (m_p^(1/p) norm_q); infinite when the certificate vanishes"""
    moment_p = empirical_moment(cert.lifted_inputs, p) if moment_p is None else moment_p
    norm_q = cert.norm_q
    if norm_q == 0.0 or moment_p == 0.0:
        logger.info("Certificate or moment vanishes; separation bound is unconstrained")
        return math.inf
    return 2.0 / (moment_p ** (1.0 / p) * norm_q)


def check_separation(a: DiscreteOperatorMeasure, bound: float, equality_tol: float = 0.0) -> SeparationCheck:
    """Smallest distance between opposite-sign atoms against the bound"""
    distance = min_opposite_separation(a)
    if math.isinf(bound):
        return SeparationCheck(min_distance=distance, bound=bound, holds=math.isinf(distance))
    holds = distance >= bound * (1.0 - equality_tol) - 1e-9
    return SeparationCheck(min_distance=distance, bound=bound, holds=bool(holds))


def debias(
    a: DiscreteOperatorMeasure,
    p_a: Certificate,
    dataset,
    fc: FidelityConfig,
    sc: Optional[SolverConfig] = None,
) -> DiscreteOperatorMeasure:
    """Refit the weights on the fixed support inside the sign cone sign(alpha_i) alpha'_i >= 0"""
    sc = sc or SolverConfig()
    if len(a) == 0:
        return a
    signs = np.sign(a.weights)
    values = np.atleast_1d(p_a.evaluate(a.matrices))
    mismatch = float(np.max(np.abs(values - signs)))
    if mismatch > sc.cert_tol:
        logger.warning(f"Certificate differs from the atom signs by {mismatch:.3e}")

    result = corrective_step(a.matrices, dataset, fc, 0.0, sc, np.array(a.weights), cone=signs)
    return prune(a.with_weights(result.weights))
