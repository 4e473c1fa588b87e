from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class ErrorKind(str, Enum):
    SUP_DSTAR = "sup-dstar"
    BOCHNER = "bochner-p"


class SolverFlag(str, Enum):
    SUBOPTIMAL = "suboptimal"
    STAGNATION = "stagnation"
    NON_CONVERGED = "non-converged"
    INFEASIBLE_AT_FLOOR = "infeasible-at-floor"
    INVALID_CERTIFICATE = "invalid-certificate"


class RateRow(BaseModel):
    n: int = Field(..., ge=2)
    trials: int = Field(..., ge=1)
    mean_error: float = Field(..., ge=0)
    std_error: float = Field(..., ge=0)


class RateReport(BaseModel):
    """Monte-Carlo approximation errors against the number of sampled atoms"""
    grid: List[RateRow]
    fitted_slope: Optional[float] = None
    fitted_intercept: Optional[float] = None
    slope_defined: bool = True
    error_kind: ErrorKind = ErrorKind.SUP_DSTAR
    metadata: Dict[str, Any] = Field(default_factory=dict)


class InverseCheckReport(BaseModel):
    residuals: List[float]
    threshold: float
    converged: bool = Field(description="Residuals decay below the threshold")


class BregmanReport(BaseModel):
    distance: float
    symmetric_distance: Optional[float] = None
    per_atom_certificate_values: List[float] = Field(default_factory=list)
    certificate_max: Optional[float] = Field(
        default=None, description="Max |certificate| seen on the validation grid"
    )
    certificate_valid: bool = True


class ContinuationStep(BaseModel):
    lambda_: float = Field(..., alias="lambda")
    radon_norm: float
    residual: float
    atoms: int
    flags: List[SolverFlag] = Field(default_factory=list)

    model_config = {"populate_by_name": True}


class SweepRow(BaseModel):
    epsilon: float
    lambda_: float = Field(..., alias="lambda")
    m: int
    trial: int
    bregman: float
    fidelity: float
    radon_norm: float
    flags: str = ""

    model_config = {"populate_by_name": True}


class SweepCell(BaseModel):
    epsilon: float
    lambda_: float = Field(..., alias="lambda")
    m: int
    trials: int
    mean_bregman: float
    std_bregman: float

    model_config = {"populate_by_name": True}


class SweepReport(BaseModel):
    """Expected Bregman distance along a decreasing noise grid"""
    rows: List[SweepRow]
    cells: List[SweepCell]
    fitted_slope: Optional[float] = None
    fitted_intercept: Optional[float] = None
    slope_defined: bool = True
    metadata: Dict[str, Any] = Field(default_factory=dict)


class CertificateValidation(BaseModel):
    max_abs_value: float = Field(..., description="Max |T*v| over grid and ascent maximisers")
    atom_values: List[float] = Field(default_factory=list)
    sign_error: float = Field(default=0.0, description="Max |T*v(K_i) - sign(alpha_i)|")
    valid: bool


class SeparationCheck(BaseModel):
    min_distance: float
    bound: float
    holds: bool


class SourceConditionReport(BaseModel):
    """Outcome of the minimum-norm source-condition search"""
    feasible: bool
    norm_q: Optional[float] = None
    max_violation: float
    rounds: int
    reason: str = ""
    separation_bound: Optional[float] = None
    separation: Optional[SeparationCheck] = None
