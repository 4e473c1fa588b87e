import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import pandas as pd
from pydantic import BaseModel

from app.core.config import settings
from app.schemas.experiment import ExperimentConfig
from app.schemas.reports import RateReport, SweepReport
from app.storage.models import dump_json

logger = logging.getLogger(__name__)


def artifact_metadata(config: ExperimentConfig) -> Dict[str, Any]:
    """Provenance embedded in every artifact; no timestamps"""
    return {
        "tool_version": settings.TOOL_VERSION,
        "config_hash": config.config_hash(),
        "seed": config.seed,
    }


def write_table(rows: Sequence[BaseModel], path: Union[str, Path], columns: List[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = [row.model_dump(mode="json", by_alias=True) for row in rows]
    pd.DataFrame.from_records(records, columns=columns).to_csv(path, index=False)
    return path


def write_summary(payload: BaseModel, path: Union[str, Path], metadata: Dict[str, Any]) -> Path:
    data = payload.model_dump(mode="json", by_alias=True)
    data["metadata"] = {**data.get("metadata", {}), **metadata}
    return dump_json(data, path)


def write_rate_report(report: RateReport, out_dir: Union[str, Path], config: ExperimentConfig) -> List[Path]:
    out_dir = Path(out_dir)
    table = write_table(report.grid, out_dir / "rates_approx.csv", ["n", "trials", "mean_error", "std_error"])
    summary = write_summary(report, out_dir / "rates_approx.json", artifact_metadata(config))
    logger.info(f"Wrote approximation rates to {table} and {summary}")
    return [table, summary]


def write_sweep_report(report: SweepReport, out_dir: Union[str, Path], config: ExperimentConfig) -> List[Path]:
    out_dir = Path(out_dir)
    table = write_table(
        report.rows,
        out_dir / "rates_bregman.csv",
        ["epsilon", "lambda", "m", "trial", "bregman", "fidelity", "radon_norm", "flags"],
    )
    summary = write_summary(report, out_dir / "rates_bregman.json", artifact_metadata(config))
    logger.info(f"Wrote Bregman sweep to {table} and {summary}")
    return [table, summary]


def write_report(payload: Dict[str, Any], path: Union[str, Path], config: ExperimentConfig) -> Path:
    """Plain JSON command report with provenance"""
    return dump_json({**payload, "metadata": artifact_metadata(config)}, path)
