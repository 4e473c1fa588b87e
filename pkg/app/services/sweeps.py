import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from app.core.errors import PreconditionError
from app.schemas.reports import SweepCell, SweepReport, SweepRow
from app.schemas.solver import FidelityConfig, NoiseScheme, SolverConfig
from app.schemas.space import InputDistribution
from app.services.approximation import fit_loglog
from app.services.certificates import bregman_distance
from app.services.datasets import make_dataset
from app.services.fidelity import Certificate, fidelity
from app.services.measures import DiscreteOperatorMeasure, radon_norm
from app.services.training import solve_variational
from app.tasks.pool import derive_rng, run_cells

logger = logging.getLogger(__name__)


def parameter_rule(epsilon: float, p: int, c_lambda: float, c_m: float, m_cap: int):
    """lambda = c_lambda eps^(p-1), m = min(ceil(c_m eps^(-2p)), m_cap)"""
    lam = c_lambda * epsilon ** (p - 1)
    m = min(int(math.ceil(c_m * epsilon ** (-2 * p))), m_cap)
    return lam, max(m, 1)


def _check_grid(eps_grid: Sequence[float], trials: int) -> None:
    grid = list(eps_grid)
    if len(grid) < 2:
        raise PreconditionError(f"degenerate grid: need at least 2 noise levels, got {grid}")
    if any(e <= 0 for e in grid) or any(b >= a for a, b in zip(grid, grid[1:])):
        raise PreconditionError(f"degenerate grid: noise levels must be positive and decreasing, got {grid}")
    if trials < 1:
        raise PreconditionError(f"need at least one trial, got {trials}")


def rate_sweep(
    a_truth: DiscreteOperatorMeasure,
    certificate: Certificate,
    eps_grid: Sequence[float],
    dist: InputDistribution,
    sc: SolverConfig,
    fc: FidelityConfig,
    seed: int,
    trials: int = 5,
    c_lambda: float = 1.0,
    c_m: float = 1.0,
    m_cap: int = 100_000,
    noise_scheme: NoiseScheme = NoiseScheme.GAUSSIAN,
    threads: int = 0,
) -> SweepReport:
    """Expected Bregman distance to a_truth under the certificate along a noise grid.

    Cell (i, t) draws its dataset and multistarts from the stream (seed, i, t),
    so the report does not depend on the number of worker threads.
    """
    _check_grid(eps_grid, trials)
    p = fc.p
    rules = [parameter_rule(eps, p, c_lambda, c_m, m_cap) for eps in eps_grid]
    warnings: List[str] = []
    if p == 1 and certificate.norm_q > 0:
        limit = 1.0 / certificate.norm_q
        for eps, (lam, _) in zip(eps_grid, rules):
            if lam > limit:
                message = f"lambda={lam:.4g} at eps={eps:.4g} exceeds 1/norm_q={limit:.4g}"
                logger.warning(message)
                warnings.append(message)

    def run_trial(cell):
        i, t = cell
        eps = eps_grid[i]
        lam, m = rules[i]
        rng = derive_rng(seed, i, t)
        dataset = make_dataset(a_truth, dist, m, eps, noise_scheme, rng, p)
        result = solve_variational(dataset, lam, sc, fc, rng=rng)
        report = bregman_distance(result.measure, certificate, a_ref=a_truth)
        return SweepRow(
            epsilon=eps,
            lambda_=lam,
            m=m,
            trial=t,
            bregman=report.distance,
            fidelity=fidelity(result.measure, dataset, fc),
            radon_norm=radon_norm(result.measure),
            flags=";".join(flag.value for flag in result.flags),
        )

    cells = [(i, t) for i in range(len(eps_grid)) for t in range(trials)]
    rows: List[SweepRow] = run_cells(run_trial, cells, threads)

    summary: List[SweepCell] = []
    for i, eps in enumerate(eps_grid):
        values = np.array([row.bregman for row in rows if row.epsilon == eps])
        lam, m = rules[i]
        summary.append(
            SweepCell(
                epsilon=eps,
                lambda_=lam,
                m=m,
                trials=trials,
                mean_bregman=float(np.mean(values)),
                std_bregman=float(np.std(values, ddof=1)) if trials > 1 else 0.0,
            )
        )

    slope, intercept = fit_loglog(eps_grid, [cell.mean_bregman for cell in summary])
    if slope is None:
        logger.warning("Bregman distances vanish on the grid; slope undefined")
    flagged = sum(1 for row in rows if row.flags)
    return SweepReport(
        rows=rows,
        cells=summary,
        fitted_slope=slope,
        fitted_intercept=intercept,
        slope_defined=slope is not None,
        metadata={
            "seed": seed,
            "p": p,
            "c_lambda": c_lambda,
            "c_m": c_m,
            "m_cap": m_cap,
            "noise_scheme": NoiseScheme(noise_scheme).value,
            "certificate_norm_q": certificate.norm_q,
            "flagged_cells": flagged,
            "warnings": warnings,
        },
    )


def lambda_bias_plateau(
    a_truth: DiscreteOperatorMeasure,
    certificate: Certificate,
    epsilon: float,
    lam: float,
    m_grid: Sequence[int],
    dist: InputDistribution,
    sc: SolverConfig,
    fc: FidelityConfig,
    seed: int,
    noise_scheme: NoiseScheme = NoiseScheme.GAUSSIAN,
    threads: int = 0,
) -> List[float]:
    """Bregman distance at fixed epsilon and lambda for growing sample counts"""
    if not m_grid:
        raise PreconditionError("degenerate grid: no sample counts")

    def run(cell):
        i, m = cell
        rng = derive_rng(seed, i)
        dataset = make_dataset(a_truth, dist, m, epsilon, noise_scheme, rng, fc.p)
        result = solve_variational(dataset, lam, sc, fc, rng=rng)
        return bregman_distance(result.measure, certificate, a_ref=a_truth).distance

    return run_cells(run, list(enumerate(m_grid)), threads)
