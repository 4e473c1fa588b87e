from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator


class NormExponent(str, Enum):
    TWO = "2"  # Euclidean output norm, spectral operator norm
    INF = "inf"  # max-abs output norm, max row norm


class SpaceConfig(BaseModel):
    """Input/output dimensions of the truncated spaces"""
    model_config = ConfigDict(frozen=True)

    d: int = Field(..., ge=1, description="Input dimension")
    k: int = Field(..., ge=1, description="Output truncation dimension")
    p_Y: NormExponent = Field(default=NormExponent.TWO, description="Output strong-norm exponent")
    bias: bool = Field(default=True, description="Lift inputs with a unit bias coordinate")

    @field_validator("p_Y", mode="before")
    @classmethod
    def _coerce_exponent(cls, value: Any) -> Any:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return "inf" if value == float("inf") else str(int(value))
        if isinstance(value, str) and value.lower() in ("infinity", "∞"):
            return "inf"
        return value

    @property
    def lifted_dim(self) -> int:
        """Number of operator columns"""
        return self.d + int(self.bias)


class DistributionKind(str, Enum):
    GAUSSIAN = "gaussian"
    BALL_UNIFORM = "ball-uniform"
    SPHERE_UNIFORM = "sphere-uniform"


class InputDistribution(BaseModel):
    """Sampling distribution of the network inputs"""
    model_config = ConfigDict(frozen=True)

    kind: DistributionKind = Field(default=DistributionKind.GAUSSIAN)
    scale: float = Field(default=1.0, gt=0, description="Standard deviation or radius")
