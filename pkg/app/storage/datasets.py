import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import ConfigurationError, ParseError
from app.schemas.solver import NoiseScheme
from app.schemas.space import InputDistribution, SpaceConfig
from app.services.datasets import Dataset
from app.storage.models import dump_json, from_hex, read_json, to_hex

logger = logging.getLogger(__name__)


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".json")


def columns(space: SpaceConfig):
    return [f"x_{i}" for i in range(1, space.d + 1)] + [f"y_{j}" for j in range(1, space.k + 1)]


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    """CSV of hex-encoded samples plus a JSON sidecar describing how they were drawn"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.hstack([dataset.inputs, dataset.outputs])
    frame = pd.DataFrame([[to_hex(v) for v in row] for row in values], columns=columns(dataset.space))
    frame.to_csv(path, index=False)
    dump_json(
        {
            "format_version": settings.FORMAT_VERSION,
            "tool_version": settings.TOOL_VERSION,
            "space": dataset.space.model_dump(mode="json"),
            "noise_level": to_hex(dataset.noise_level),
            "scheme": dataset.scheme.value if dataset.scheme else None,
            "seed": dataset.seed,
            "distribution": dataset.distribution.model_dump(mode="json"),
        },
        sidecar_path(path),
    )
    logger.info(f"Wrote dataset with {dataset.m} samples to {path}")
    return path


def load_dataset(path: Union[str, Path], space: Optional[SpaceConfig] = None) -> Dataset:
    path = Path(path)
    meta_path = sidecar_path(path)
    meta = read_json(meta_path)
    try:
        file_space = SpaceConfig.model_validate(meta["space"])
        distribution = InputDistribution.model_validate(meta.get("distribution") or {})
        scheme = NoiseScheme(meta["scheme"]) if meta.get("scheme") else None
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]}", str(meta_path))
    except ValueError as exc:
        raise ParseError(str(exc), str(meta_path))
    if space is not None and file_space != space:
        raise ConfigurationError(f"dataset space {file_space.model_dump()} does not match {space.model_dump()}")
    noise = from_hex(str(meta.get("noise_level", "0x0.0p+0")), f"{meta_path}: field noise_level")

    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    expected = columns(file_space)
    if list(frame.columns) != expected:
        raise ParseError(f"expected header {expected}, got {list(frame.columns)}", f"{path}: line 1")
    values = np.array(
        [
            [from_hex(text, f"{path}: line {row + 2} column {col + 1}") for col, text in enumerate(record)]
            for row, record in enumerate(frame.itertuples(index=False, name=None))
        ],
        dtype=np.float64,
    ).reshape(-1, len(expected))
    return Dataset(
        space=file_space,
        inputs=values[:, : file_space.d],
        outputs=values[:, file_space.d:],
        noise_level=noise,
        scheme=scheme,
        distribution=distribution,
        seed=meta.get("seed"),
    )
