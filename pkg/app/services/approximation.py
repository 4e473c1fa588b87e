"""Monte-Carlo approximation of networks by finitely many sampled atoms.

Implements the Hahn-Jordan sampling construction behind the 1/sqrt(n)
direct approximation rate, the two error metrics it is measured in
(sup over sphere probes of d_*, and the Bochner L^p_pi distance), rate
fitting on a log-log scale and a uniform-Cauchy diagnostic for bounded
sequences of networks.
"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import EmptyMeasureError, PreconditionError
from app.schemas.reports import ErrorKind, InverseCheckReport, RateReport, RateRow
from app.schemas.space import InputDistribution
from app.services.distributions import input_moment, sample_inputs, sample_sphere
from app.services.lattice import dstar, ystar_norm
from app.services.measures import (
    DiscreteOperatorMeasure,
    concat,
    empty_measure,
    evaluate,
    evaluate_lifted,
    hahn_jordan,
    lift,
    radon_norm,
)
from app.tasks.pool import derive_rng, run_cells

logger = logging.getLogger(__name__)

ENVELOPE_CONSTANT = 2.0 * math.sqrt(2.0)


def direct_sample(a: DiscreteOperatorMeasure, n: int, rng: np.random.Generator) -> DiscreteOperatorMeasure:
    """Draw n atoms from each Hahn-Jordan part, each carrying ||a_+-|| / n.

    Repeated draws of the same atom are aggregated, so the result has at most
    2n atoms, all of them atoms of `a`, and the same total mass.
    """
    if len(a) == 0:
        raise EmptyMeasureError("cannot sample from an empty measure")
    if n < 1:
        raise PreconditionError(f"sample size must be positive, got {n}")

    result = empty_measure(a.space)
    for part, sign in zip(hahn_jordan(a), (1.0, -1.0)):
        if len(part) == 0:
            continue
        mass = radon_norm(part)
        draws = rng.choice(len(part), size=n, p=part.weights / mass)
        counts = np.bincount(draws, minlength=len(part))
        keep = counts > 0
        weights = sign * mass * (counts[keep] / n)
        sampled = DiscreteOperatorMeasure(a.space, weights, part.matrices[keep], part.norms[keep])
        result = concat(result, sampled)
    return result


def sphere_probes(a: DiscreteOperatorMeasure, probe_count: int, rng: np.random.Generator) -> np.ndarray:
    """Lifted probe inputs drawn uniformly on the unit sphere of X"""
    if probe_count < 1:
        raise PreconditionError(f"probe_count must be at least 1, got {probe_count}")
    return lift(sample_sphere(a.space.d, probe_count, rng), a.space)


def sup_dstar_error(
    a_ref: DiscreteOperatorMeasure,
    a_n: DiscreteOperatorMeasure,
    probe_count: int = 0,
    rng: Optional[np.random.Generator] = None,
    probes: Optional[np.ndarray] = None,
) -> float:
    """max over sphere probes of d_*(f_ref(x), f_n(x)); probes use PROBE_SEED without an rng"""
    if probes is None:
        rng = rng if rng is not None else np.random.default_rng(settings.PROBE_SEED)
        probes = sphere_probes(a_ref, probe_count or settings.PROBE_COUNT, rng)
    gaps = dstar(evaluate_lifted(a_ref, probes), evaluate_lifted(a_n, probes))
    return float(np.max(gaps))


def bochner_error(
    a_ref: DiscreteOperatorMeasure,
    a_n: DiscreteOperatorMeasure,
    dist: InputDistribution,
    p: float,
    m: int,
    rng: np.random.Generator,
) -> float:
    """Empirical L^p_pi(X; Y_*) distance ((1/m) sum ||f_ref - f_n||^p)^(1/p)"""
    if m < 1:
        raise PreconditionError(f"sample count must be positive, got {m}")
    if p < 1:
        raise PreconditionError(f"Bochner exponent must be >= 1, got {p}")
    x = sample_inputs(dist, a_ref.space.d, m, rng)
    return float(empirical_gap(a_ref, a_n, x, p) ** (1.0 / p))


def empirical_gap(
    a: DiscreteOperatorMeasure, a_ref: DiscreteOperatorMeasure, x: np.ndarray, p: float
) -> float:
    """(1/m) sum ||f_a(x_i) - f_ref(x_i)||^p_{Y_*} over the given raw inputs"""
    return float(np.mean(ystar_norm(evaluate(a, x) - evaluate(a_ref, x)) ** p))


def sampling_deviation_bound(
    a: DiscreteOperatorMeasure,
    a_ref: DiscreteOperatorMeasure,
    dist: InputDistribution,
    p: float,
    m: int,
) -> float:
    """Bound on E|integral - empirical mean| of ||f_a - f_ref||^p_{Y_*}:
    (||a|| + ||a_ref||)^p sqrt(m_2p(pi)) / sqrt(m)"""
    moment_2p = input_moment(dist, a.space, 2.0 * p)
    return (radon_norm(a) + radon_norm(a_ref)) ** p * math.sqrt(moment_2p) / math.sqrt(m)


def fit_loglog(xs: Sequence[float], ys: Sequence[float]):
    """OLS fit of log y = intercept + slope log x over the positive entries"""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    mask = (ys > 0) & (xs > 0)
    if np.count_nonzero(mask) < 2:
        return None, None
    slope, intercept = np.polyfit(np.log(xs[mask]), np.log(ys[mask]), 1)
    return float(slope), float(intercept)


def _check_grid(n_grid: Sequence[int], trials: int) -> None:
    grid = list(n_grid)
    if len(grid) < 3:
        raise PreconditionError(f"degenerate grid: need at least 3 sizes, got {grid}")
    if any(n < 2 for n in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise PreconditionError(f"degenerate grid: sizes must be >= 2 and strictly increasing, got {grid}")
    if trials < 5:
        raise PreconditionError(f"need at least 5 trials, got {trials}")


def rate_experiment(
    a: DiscreteOperatorMeasure,
    n_grid: Sequence[int],
    trials: int,
    error_kind: ErrorKind = ErrorKind.SUP_DSTAR,
    seed: int = 0,
    probe_count: int = 0,
    dist: Optional[InputDistribution] = None,
    p: float = 2.0,
    m: int = 10_000,
    threads: int = 0,
) -> RateReport:
    """Mean approximation error of direct_sample over a grid of sample sizes.

    Trial t at grid index i draws from its own stream (seed, i, t), so the
    report does not depend on the number of worker threads.
    """
    _check_grid(n_grid, trials)
    error_kind = ErrorKind(error_kind)
    probe_count = probe_count or settings.PROBE_COUNT
    dist = dist or InputDistribution()

    def run_trial(cell):
        i, n, t = cell
        rng = derive_rng(seed, i, t)
        sample = direct_sample(a, n, rng)
        if error_kind == ErrorKind.SUP_DSTAR:
            return sup_dstar_error(a, sample, probe_count, rng)
        return bochner_error(a, sample, dist, p, m, rng)

    cells = [(i, n, t) for i, n in enumerate(n_grid) for t in range(trials)]
    errors = np.array(run_cells(run_trial, cells, threads)).reshape(len(n_grid), trials)

    rows: List[RateRow] = []
    for n, values in zip(n_grid, errors):
        std = float(np.std(values, ddof=1)) if trials > 1 else 0.0
        rows.append(RateRow(n=n, trials=trials, mean_error=float(np.mean(values)), std_error=std))

    slope, intercept = fit_loglog(n_grid, [row.mean_error for row in rows])
    if slope is None:
        logger.warning("All approximation errors vanish; slope undefined")

    return RateReport(
        grid=rows,
        fitted_slope=slope,
        fitted_intercept=intercept,
        slope_defined=slope is not None,
        error_kind=error_kind,
        metadata={
            "seed": seed,
            "radon_norm": radon_norm(a),
            "atoms": len(a),
            "probe_count": probe_count,
            "envelope_constant": ENVELOPE_CONSTANT,
            "envelope_note": "sup over sphere probes is a diagnostic; no sup-over-ball constant is proven",
        },
    )


def inverse_check(
    sequence: Sequence[DiscreteOperatorMeasure],
    radon_bound: float,
    probe_count: int = 0,
    rng: Optional[np.random.Generator] = None,
    threshold: float = 1e-2,
) -> InverseCheckReport:
    """Successive sup-probe residuals d_*(f_{t+1}(x), f_t(x)) of a bounded sequence"""
    if len(sequence) < 2:
        raise PreconditionError("need at least two measures")
    for index, a in enumerate(sequence):
        if radon_norm(a) > radon_bound * (1.0 + 1e-12):
            raise PreconditionError(
                f"measure {index} has Radon norm {radon_norm(a):.6g} above the bound {radon_bound:.6g}"
            )
    rng = rng if rng is not None else np.random.default_rng(settings.PROBE_SEED)
    probes = sphere_probes(sequence[0], probe_count or settings.PROBE_COUNT, rng)
    values = [evaluate_lifted(a, probes) for a in sequence]
    residuals = [float(np.max(dstar(b, a))) for a, b in zip(values, values[1:])]

    half = len(residuals) // 2
    decreasing = half == 0 or np.mean(residuals[half:]) <= np.mean(residuals[:half])
    converged = bool(residuals[-1] <= threshold and decreasing)
    return InverseCheckReport(residuals=residuals, threshold=threshold, converged=converged)
