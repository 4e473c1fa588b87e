from typing import Dict

import numpy as np
from scipy import integrate, special, stats

from app.core.errors import PreconditionError
from app.schemas.space import DistributionKind, InputDistribution, SpaceConfig


def sample_inputs(
    dist: InputDistribution, d: int, m: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw m inputs in R^d, shape (m, d)"""
    if m < 0:
        raise PreconditionError(f"sample count must be nonnegative, got {m}")
    if dist.kind == DistributionKind.GAUSSIAN:
        return dist.scale * rng.standard_normal((m, d))

    directions = rng.standard_normal((m, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    if dist.kind == DistributionKind.SPHERE_UNIFORM:
        return dist.scale * directions
    radii = rng.uniform(size=(m, 1)) ** (1.0 / d)
    return dist.scale * radii * directions


def sample_sphere(d: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Probe points on the unit sphere of R^d"""
    points = rng.standard_normal((count, d))
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def moment(dist: InputDistribution, d: int, p: float) -> float:
    """m_p(pi) = E ||x||^p, closed form for every supported kind"""
    s = dist.scale
    if dist.kind == DistributionKind.GAUSSIAN:
        log_ratio = special.gammaln((d + p) / 2.0) - special.gammaln(d / 2.0)
        return float(s ** p * 2.0 ** (p / 2.0) * np.exp(log_ratio))
    if dist.kind == DistributionKind.BALL_UNIFORM:
        return float(s ** p * d / (d + p))
    return float(s ** p)


_lifted_cache: Dict[tuple, float] = {}


def lifted_moment(dist: InputDistribution, d: int, p: float) -> float:
    """E ||(x, 1)||^p = E (||x||^2 + 1)^(p/2), integrated numerically"""
    key = (dist.kind, dist.scale, d, p)
    if key in _lifted_cache:
        return _lifted_cache[key]
    s = dist.scale
    if dist.kind == DistributionKind.SPHERE_UNIFORM:
        value = (s * s + 1.0) ** (p / 2.0)
    elif dist.kind == DistributionKind.BALL_UNIFORM:
        value, _ = integrate.quad(
            lambda r: (s * s * r * r + 1.0) ** (p / 2.0) * d * r ** (d - 1), 0.0, 1.0
        )
    else:
        # ||x||^2 / s^2 is chi-squared with d degrees of freedom
        value, _ = integrate.quad(
            lambda t: (s * s * t + 1.0) ** (p / 2.0) * stats.chi2.pdf(t, d), 0.0, np.inf
        )
    _lifted_cache[key] = float(value)
    return float(value)


def input_moment(dist: InputDistribution, space: SpaceConfig, p: float) -> float:
    """Moment of the lifted input norm in bias mode, of the raw norm otherwise"""
    if space.bias:
        return lifted_moment(dist, space.d, p)
    return moment(dist, space.d, p)


def empirical_moment(lifted_inputs: np.ndarray, p: float) -> float:
    """(1/m) sum ||x_i||^p over (already lifted) sample inputs"""
    arr = np.asarray(lifted_inputs, dtype=np.float64)
    if arr.shape[0] == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(arr, axis=1) ** p))
