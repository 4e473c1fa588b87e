import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from app.core.errors import ConfigurationError, PreconditionError
from app.schemas.solver import NoiseScheme
from app.schemas.space import InputDistribution, SpaceConfig
from app.services.distributions import sample_inputs
from app.services.lattice import ystar_norm
from app.services.measures import DiscreteOperatorMeasure, evaluate, lift

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Sample inputs x_i (pre-lift) with possibly noisy outputs y_i"""
    space: SpaceConfig
    inputs: np.ndarray
    outputs: np.ndarray
    noise_level: float = 0.0
    scheme: Optional[NoiseScheme] = None
    distribution: InputDistribution = field(default_factory=InputDistribution)
    seed: Optional[int] = None

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64).reshape(-1, self.space.d)
        outputs = np.array(self.outputs, dtype=np.float64).reshape(-1, self.space.k)
        if inputs.shape[0] != outputs.shape[0]:
            raise ConfigurationError(
                f"{inputs.shape[0]} inputs but {outputs.shape[0]} outputs"
            )
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(outputs))):
            raise ConfigurationError("dataset entries must be finite")
        if self.noise_level < 0:
            raise ConfigurationError(f"noise level must be nonnegative, got {self.noise_level}")
        inputs.setflags(write=False)
        outputs.setflags(write=False)
        lifted = lift(inputs, self.space)
        lifted.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "_lifted", lifted)

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def lifted(self) -> np.ndarray:
        return self._lifted


def _draw_noise(scheme: NoiseScheme, shape, rng: np.random.Generator) -> np.ndarray:
    if scheme == NoiseScheme.GAUSSIAN:
        return rng.standard_normal(shape)
    if scheme == NoiseScheme.UNIFORM:
        return rng.uniform(-1.0, 1.0, size=shape)
    if scheme == NoiseScheme.RADEMACHER:
        return rng.choice([-1.0, 1.0], size=shape)
    raise ConfigurationError(f"unknown noise scheme {scheme!r}")


def make_dataset(
    a_truth: DiscreteOperatorMeasure,
    dist: InputDistribution,
    m: int,
    epsilon: float,
    noise_scheme: NoiseScheme = NoiseScheme.GAUSSIAN,
    rng: Optional[np.random.Generator] = None,
    p: int = 2,
    seed: Optional[int] = None,
) -> Dataset:
    """Sample y_i = f(x_i) + e_i with (1/m) sum ||e_i||^p_{Y_*} = epsilon^p"""
    if m < 1:
        raise PreconditionError(f"need at least one sample, got m={m}")
    if epsilon < 0:
        raise PreconditionError(f"noise level must be nonnegative, got {epsilon}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    space = a_truth.space
    x = sample_inputs(dist, space.d, m, rng)
    y = evaluate(a_truth, x)
    if epsilon > 0:
        noise = _draw_noise(NoiseScheme(noise_scheme), (m, space.k), rng)
        level = np.mean(ystar_norm(noise) ** p) ** (1.0 / p)
        y = y + noise * (epsilon / level)
    logger.debug(f"Sampled dataset m={m} epsilon={epsilon} scheme={noise_scheme}")
    return Dataset(
        space=space,
        inputs=x,
        outputs=y,
        noise_level=epsilon,
        scheme=NoiseScheme(noise_scheme),
        distribution=dist,
        seed=seed,
    )
