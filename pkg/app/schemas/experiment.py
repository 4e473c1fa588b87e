import hashlib
import json

from pydantic import BaseModel, ConfigDict, Field

from app.core.config import settings
from app.schemas.solver import FidelityConfig, SolverConfig
from app.schemas.space import InputDistribution, SpaceConfig


class ExperimentConfig(BaseModel):
    """Everything a run needs besides its input files"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    space: SpaceConfig
    distribution: InputDistribution = Field(default_factory=InputDistribution)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    fidelity: FidelityConfig = Field(default_factory=FidelityConfig)
    seed: int = Field(..., ge=0, lt=2 ** 64, description="Master seed; there is no wall-clock default")
    output_dir: str = Field(default=settings.OUTPUT_DIR)

    def canonical_json(self) -> str:
        payload = self.model_dump(mode="json", by_alias=True, exclude={"output_dir"})
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """sha256 of the canonical JSON, independent of the output location"""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()
