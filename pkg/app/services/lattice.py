"""Truncated output lattice Y: ReLU, weak* metric d_* and strong norms.

Vectors are float64 numpy arrays whose last axis has length k; every
function broadcasts over leading axes so batches of predictions can be
handled in one call.
"""
from functools import lru_cache
from typing import Union

import numpy as np

from app.core.errors import ConfigurationError
from app.schemas.space import NormExponent, SpaceConfig

VecY = np.ndarray


@lru_cache(maxsize=64)
def _weights(k: int) -> np.ndarray:
    weights = 0.5 ** np.arange(1, k + 1, dtype=np.float64)
    weights.setflags(write=False)
    return weights


def dstar_weights(k: int) -> np.ndarray:
    """The weights 2^-i, i = 1..k, of the predual standard basis"""
    return _weights(k)


def norm_exponent(p_Y) -> NormExponent:
    """Accept 2, "2", inf or "inf"; anything else is unsupported"""
    if isinstance(p_Y, NormExponent):
        return p_Y
    if isinstance(p_Y, (int, float)) and not isinstance(p_Y, bool):
        p_Y = "inf" if p_Y == float("inf") else ("2" if p_Y == 2 else str(p_Y))
    try:
        return NormExponent(str(p_Y))
    except ValueError:
        raise ConfigurationError(f"unsupported output exponent {p_Y!r}")


def as_vec(y, space: SpaceConfig) -> VecY:
    """Validate a point of Y against the space"""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] != space.k:
        raise ConfigurationError(f"expected vectors of length k={space.k}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("vector coordinates must be finite")
    return arr


def pos_part(y: VecY) -> VecY:
    """Lattice positive part y v 0 (the ReLU)"""
    return np.maximum(np.asarray(y, dtype=np.float64), 0.0)


def ystar_norm(y: VecY) -> Union[float, np.ndarray]:
    """||y||_{Y_*} = d_*(y, 0)"""
    arr = np.asarray(y, dtype=np.float64)
    result = np.abs(arr) @ _weights(arr.shape[-1])
    return float(result) if np.ndim(result) == 0 else result


def dstar(y1: VecY, y2: VecY) -> Union[float, np.ndarray]:
    """Weighted-l1 weak* metric sum_i 2^-i |y1_i - y2_i|"""
    a = np.asarray(y1, dtype=np.float64)
    b = np.asarray(y2, dtype=np.float64)
    if a.shape[-1:] != b.shape[-1:]:
        raise ConfigurationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return ystar_norm(a - b)


def strong_norm(y: VecY, p_Y: Union[NormExponent, str] = NormExponent.TWO) -> Union[float, np.ndarray]:
    """Euclidean or max-abs norm of the coordinates"""
    exponent = norm_exponent(p_Y)
    arr = np.asarray(y, dtype=np.float64)
    if exponent == NormExponent.TWO:
        result = np.linalg.norm(arr, axis=-1)
    else:
        result = np.max(np.abs(arr), axis=-1) if arr.shape[-1] else np.zeros(arr.shape[:-1])
    return float(result) if np.ndim(result) == 0 else result


def dual_norm(v: VecY) -> Union[float, np.ndarray]:
    """Norm of (Y_*)^*, dual to the weighted-l1 norm: max_j |v_j| / 2^-j"""
    arr = np.asarray(v, dtype=np.float64)
    scaled = np.abs(arr) / _weights(arr.shape[-1])
    result = np.max(scaled, axis=-1)
    return float(result) if np.ndim(result) == 0 else result
