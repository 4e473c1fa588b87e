from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class FitNorm(str, Enum):
    YSTAR = "ystar"  # weighted-l1 Y_* norm
    EUCLIDEAN = "euclidean"  # diagnostic only


class OperatorScheme(str, Enum):
    GAUSSIAN_PROJECTED = "gaussian-projected"
    SPHERE_UNIFORM_ROWS = "sphere-uniform-rows"


class NoiseScheme(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    RADEMACHER = "rademacher"


class WeightSolver(str, Enum):
    AUTO = "auto"  # conic up to CONIC_SIZE_LIMIT residual entries, proximal above
    CONIC = "conic"
    PROXIMAL = "proximal"


class TrainingMode(str, Enum):
    VARIATIONAL = "variational"
    LEAST_ERROR = "least-error"


class FidelityConfig(BaseModel):
    """Data term (1/(pm)) sum ||Ta(x_i) - y_i||^p"""
    model_config = ConfigDict(frozen=True)

    p: int = Field(default=2, description="Fidelity exponent, 1 or 2")
    fit_norm: FitNorm = Field(default=FitNorm.YSTAR)
    huber_mu: float = Field(
        default=1e-4,
        ge=0,
        description="Smoothing width used only by gradient-based inner solvers",
    )

    @model_validator(mode="after")
    def _check_exponent(self) -> "FidelityConfig":
        if self.p not in (1, 2):
            raise ValueError(f"fidelity exponent must be 1 or 2, got {self.p}")
        return self


class SolverConfig(BaseModel):
    """Conditional-gradient solver settings"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: float = Field(default=1e-2, gt=0, alias="lambda", description="Regularisation weight")
    max_atoms: int = Field(default=50, ge=1)
    outer_iters: int = Field(default=30, ge=1)
    multistarts: int = Field(default=20, ge=0)
    ascent_iters: int = Field(default=200, ge=1)
    ascent_tol: float = Field(default=1e-9, gt=0)
    corrective_tol: float = Field(default=1e-8, gt=0)
    corrective_iters: int = Field(default=2000, ge=1)
    continuation_factor: float = Field(default=0.5, gt=0, lt=1)
    eq_residual_tol: float = Field(default=1e-6, gt=0)
    cert_tol: float = Field(default=1e-3, gt=0)
    sliding: bool = Field(default=True, description="Jointly refine weights and operators")
    sliding_iters: int = Field(default=200, ge=0)
    merge_tol: float = Field(default=1e-3, ge=0, description="dstar_op radius below which atoms are merged")
    weight_solver: WeightSolver = Field(default=WeightSolver.AUTO)
    weight_zero_tol: float = Field(
        default=1e-8, ge=0, description="Conic weights below this fraction of max(1, largest) are set to 0"
    )
    polish: bool = Field(default=True, description="Refine least-error solutions on the interpolation equations")
    polish_iters: int = Field(default=200, ge=1)
    seed: Optional[int] = Field(default=None, description="Seed for multistart draws")
