"""Two-layer vector-valued ReLU networks as discrete signed measures.

A measure a = sum_i alpha_i delta_{K_i} over the operator ball realises
f_a(x) = sum_i alpha_i (K_i (x, 1))_+. The parameter space C(B; Y_*) is
never materialised; atoms are only ever evaluated at points.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigurationError, PreconditionError
from app.schemas.solver import OperatorScheme
from app.schemas.space import SpaceConfig
from app.services.lattice import VecY
from app.services.operators import (
    FiniteRankOperator,
    dstar_op_matrices,
    matrix_norm,
    sample_matrix,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Atom:
    weight: float
    operator: FiniteRankOperator


class DiscreteOperatorMeasure:
    """Finite list of signed atoms, stored as a weight vector and an operator stack"""

    def __init__(
        self,
        space: SpaceConfig,
        weights: Optional[Sequence[float]] = None,
        matrices: Optional[np.ndarray] = None,
        norms: Optional[Sequence[float]] = None,
    ):
        shape = (space.k, space.lifted_dim)
        w = np.zeros(0) if weights is None else np.array(weights, dtype=np.float64).reshape(-1)
        m = np.zeros((0,) + shape) if matrices is None else np.array(matrices, dtype=np.float64)
        if m.ndim == 2 and len(w) == 1:
            m = m[None]
        if m.shape != (len(w),) + shape:
            raise ConfigurationError(
                f"expected {len(w)} operators of shape {shape}, got array of shape {m.shape}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m))):
            raise ConfigurationError("atom weights and operators must be finite")
        if norms is None:
            n = np.array([matrix_norm(mat, space.p_Y) for mat in m], dtype=np.float64)
        else:
            n = np.array(norms, dtype=np.float64).reshape(-1)
        if np.any(n > 1.0 + settings.BALL_TOL):
            raise ConfigurationError(f"atom operator outside the unit ball (norm {n.max():.12g})")
        for arr in (w, m, n):
            arr.setflags(write=False)
        self.space = space
        self.weights = w
        self.matrices = m
        self.norms = n

    @classmethod
    def from_atoms(cls, space: SpaceConfig, atoms: Iterable[Atom]) -> "DiscreteOperatorMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls(space)
        return cls(
            space,
            [atom.weight for atom in atoms],
            np.stack([atom.operator.matrix for atom in atoms]),
            [atom.operator.norm for atom in atoms],
        )

    @property
    def atoms(self) -> List[Atom]:
        return [
            Atom(float(w), FiniteRankOperator(m, self.space.p_Y, float(n)))
            for w, m, n in zip(self.weights, self.matrices, self.norms)
        ]

    def __len__(self) -> int:
        return len(self.weights)

    def __repr__(self) -> str:
        return f"DiscreteOperatorMeasure(atoms={len(self)}, radon_norm={radon_norm(self):.6g})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiscreteOperatorMeasure):
            return NotImplemented
        return (
            self.space == other.space
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.matrices, other.matrices)
        )

    def subset(self, index) -> "DiscreteOperatorMeasure":
        return DiscreteOperatorMeasure(
            self.space, self.weights[index], self.matrices[index], self.norms[index]
        )

    def with_weights(self, weights: Sequence[float]) -> "DiscreteOperatorMeasure":
        """Same support, new weights"""
        return DiscreteOperatorMeasure(self.space, weights, self.matrices, self.norms)


def empty_measure(space: SpaceConfig) -> DiscreteOperatorMeasure:
    return DiscreteOperatorMeasure(space)


def concat(a: DiscreteOperatorMeasure, b: DiscreteOperatorMeasure) -> DiscreteOperatorMeasure:
    """Disjoint union a ⊎ b (atoms of a first)"""
    if a.space != b.space:
        raise ConfigurationError("cannot combine measures over different spaces")
    return DiscreteOperatorMeasure(
        a.space,
        np.concatenate([a.weights, b.weights]),
        np.concatenate([a.matrices, b.matrices]),
        np.concatenate([a.norms, b.norms]),
    )


def scale(a: DiscreteOperatorMeasure, factor: float) -> DiscreteOperatorMeasure:
    return a.with_weights(a.weights * factor)


def negate(a: DiscreteOperatorMeasure) -> DiscreteOperatorMeasure:
    return scale(a, -1.0)


def lift(x: np.ndarray, space: SpaceConfig) -> np.ndarray:
    """Append the unit bias coordinate (no-op in homogeneous mode)"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] != space.d:
        raise ConfigurationError(f"expected inputs of dimension d={space.d}, got shape {arr.shape}")
    if not space.bias:
        return arr
    ones = np.ones(arr.shape[:-1] + (1,))
    return np.concatenate([arr, ones], axis=-1)


def features(matrices: np.ndarray, lifted: np.ndarray) -> np.ndarray:
    """(K_j x_i)_+ for all samples i and atoms j, shape (m, n, k)"""
    return np.maximum(np.einsum("mc,nkc->mnk", lifted, matrices), 0.0)


def _evaluate_lifted(a: DiscreteOperatorMeasure, lifted: np.ndarray) -> np.ndarray:
    batch = lifted.reshape(-1, lifted.shape[-1])
    total = np.zeros((batch.shape[0], a.space.k))
    compensation = np.zeros_like(total)
    # Kahan summation over atoms in stored order
    for weight, matrix in zip(a.weights, a.matrices):
        term = weight * np.maximum(batch @ matrix.T, 0.0)
        y = term - compensation
        t = total + y
        compensation = (t - total) - y
        total = t
    return total.reshape(lifted.shape[:-1] + (a.space.k,))


def evaluate(a: DiscreteOperatorMeasure, x: np.ndarray) -> VecY:
    """f_a(x) = sum_i alpha_i (K_i lift(x))_+ for one input or a batch"""
    return _evaluate_lifted(a, lift(x, a.space))


def evaluate_lifted(a: DiscreteOperatorMeasure, lifted: np.ndarray) -> VecY:
    """Evaluate at inputs that are already lifted"""
    arr = np.asarray(lifted, dtype=np.float64)
    if arr.shape[-1] != a.space.lifted_dim:
        raise ConfigurationError(f"expected lifted inputs of length {a.space.lifted_dim}")
    return _evaluate_lifted(a, arr)


def radon_norm(a: DiscreteOperatorMeasure) -> float:
    """Total variation sum |alpha_i|"""
    return float(np.sum(np.abs(a.weights)))


def lipschitz_bound(a: DiscreteOperatorMeasure) -> float:
    """Lipschitz constant of f_a w.r.t. d_* on outputs and ||.||_2 on lifted inputs.

    This is the Radon norm of this particular representation, an upper bound
    on the F1 norm of f_a, not the F1 norm itself.
    """
    return radon_norm(a)


def hahn_jordan(a: DiscreteOperatorMeasure) -> Tuple[DiscreteOperatorMeasure, DiscreteOperatorMeasure]:
    """Split into (a_plus, a_minus) with a = a_plus - a_minus, both nonnegative"""
    positive = a.weights > 0
    negative = a.weights < 0
    a_plus = a.subset(positive)
    a_minus = a.subset(negative)
    return a_plus, negate(a_minus)


def prune(a: DiscreteOperatorMeasure, tol: float = 0.0) -> DiscreteOperatorMeasure:
    """Drop atoms with |weight| <= tol"""
    return a.subset(np.abs(a.weights) > tol)


def merge_atoms(a: DiscreteOperatorMeasure, tol: Optional[float] = None) -> DiscreteOperatorMeasure:
    """Greedily merge atoms closer than tol in dstar_op into one atom per cluster.

    A cluster is replaced by the |weight|-weighted operator average,
    re-projected onto the unit ball, carrying the summed weight. Clusters
    whose weights cancel are dropped.
    """
    tol = settings.MERGE_TOLERANCE if tol is None else tol
    if tol < 0:
        raise PreconditionError(f"merge tolerance must be nonnegative, got {tol}")
    n = len(a)
    assigned = np.zeros(n, dtype=bool)
    weights, matrices, norms = [], [], []
    for i in range(n):
        if assigned[i]:
            continue
        candidates = np.flatnonzero(~assigned)
        distances = dstar_op_matrices(a.matrices[candidates], a.matrices[i])
        members = candidates[np.atleast_1d(distances) < tol] if tol > 0 else np.array([i])
        if i not in members:
            members = np.append(members, i)
        members = np.sort(members)
        assigned[members] = True

        weight = float(np.sum(a.weights[members]))
        if weight == 0.0:
            continue
        if len(members) == 1 or np.all(a.matrices[members] == a.matrices[i]):
            matrix, norm = a.matrices[i], float(a.norms[i])
        else:
            magnitudes = np.abs(a.weights[members])
            matrix = np.tensordot(magnitudes, a.matrices[members], axes=1) / magnitudes.sum()
            norm = matrix_norm(matrix, a.space.p_Y)
            if norm > 1.0:
                matrix, norm = matrix / norm, 1.0
        weights.append(weight)
        matrices.append(matrix)
        norms.append(norm)

    if not weights:
        return empty_measure(a.space)
    return DiscreteOperatorMeasure(a.space, weights, np.stack(matrices), norms)


def random_measure(
    space: SpaceConfig,
    n_atoms: int,
    rng: np.random.Generator,
    separation: float = 0.0,
    scheme: OperatorScheme = OperatorScheme.GAUSSIAN_PROJECTED,
    weight_range: Tuple[float, float] = (0.5, 1.5),
    max_retries: int = 1000,
) -> DiscreteOperatorMeasure:
    """Ground truth with unit-norm atoms and alternating signs.

    Every (+, -) pair of atoms is kept at least `separation` apart in
    operator norm; atoms violating this are redrawn up to `max_retries`
    times in total.
    """
    if n_atoms < 1:
        raise PreconditionError(f"need at least one atom, got {n_atoms}")
    signs = np.where(np.arange(n_atoms) % 2 == 0, 1.0, -1.0)
    magnitudes = rng.uniform(weight_range[0], weight_range[1], size=n_atoms)
    matrices: List[np.ndarray] = []
    retries = 0
    achieved = np.inf

    def draw() -> np.ndarray:
        matrix = sample_matrix(rng, space, scheme)
        return matrix / matrix_norm(matrix, space.p_Y)

    for j in range(n_atoms):
        candidate = draw()
        while True:
            opposite = [m for i, m in enumerate(matrices) if signs[i] != signs[j]]
            gaps = [matrix_norm(candidate - m, space.p_Y) for m in opposite]
            closest = min(gaps) if gaps else np.inf
            if closest >= separation:
                achieved = min(achieved, closest)
                break
            retries += 1
            if retries > max_retries:
                raise PreconditionError(
                    f"could not reach separation {separation} after {max_retries} retries "
                    f"(achieved {closest:.6g})"
                )
            candidate = draw()
        matrices.append(candidate)

    logger.debug(f"Synthesised {n_atoms} atoms, min +/- separation {achieved:.6g}, {retries} retries")
    return DiscreteOperatorMeasure(space, signs * magnitudes, np.stack(matrices))


def min_opposite_separation(a: DiscreteOperatorMeasure) -> float:
    """Smallest operator-norm distance between a positive and a negative atom"""
    a_plus, a_minus = hahn_jordan(a)
    best = np.inf
    for m_plus in a_plus.matrices:
        for m_minus in a_minus.matrices:
            best = min(best, matrix_norm(m_plus - m_minus, a.space.p_Y))
    return float(best)
