"""JSON model and certificate files with bit-exact binary64 values."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from app.core.config import settings
from app.core.errors import ConfigurationError, ParseError
from app.schemas.space import SpaceConfig
from app.services.fidelity import Certificate
from app.services.measures import DiscreteOperatorMeasure

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class AtomRecord(BaseModel):
    weight: str = Field(..., description="binary64 as float.hex()")
    matrix: List[List[str]] = Field(..., description="Row-major operator entries as float.hex()")


class ModelFile(BaseModel):
    format_version: int
    tool_version: str
    space: SpaceConfig
    atoms: List[AtomRecord] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)


class CertificateFile(BaseModel):
    format_version: int
    tool_version: str
    space: SpaceConfig
    q: float = 2.0
    norm_q: str
    vectors: List[List[str]]
    lifted_inputs: List[List[str]]
    metadata: Dict[str, Any] = Field(default_factory=dict)


def to_hex(value: float) -> str:
    return float(value).hex()


def hex_rows(array: np.ndarray) -> List[List[str]]:
    return [[to_hex(value) for value in row] for row in np.asarray(array, dtype=np.float64)]


def from_hex(text: str, location: str) -> float:
    try:
        value = float.fromhex(text.strip())
    except (ValueError, AttributeError, TypeError):
        raise ParseError(f"invalid binary64 value {text!r}", location)
    if not np.isfinite(value):
        raise ParseError(f"non-finite value {text!r}", location)
    return value


def parse_rows(rows: List[List[str]], location: str) -> np.ndarray:
    return np.array(
        [[from_hex(text, f"{location}.{i}.{j}") for j, text in enumerate(row)] for i, row in enumerate(rows)],
        dtype=np.float64,
    )


def dump_json(payload: Dict[str, Any], path: PathLike) -> Path:
    """Write sorted, indented JSON with a trailing newline"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}: line {exc.lineno} column {exc.colno}")
    if not isinstance(payload, dict):
        raise ParseError("top-level JSON value must be an object", str(path))
    return payload


def _validate(model, payload: Dict[str, Any], path: PathLike):
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        error = exc.errors()[0]
        field = ".".join(str(part) for part in error["loc"])
        raise ParseError(error["msg"], f"{path}: field {field}")


def _check_version(version: int, path: PathLike) -> None:
    if version != settings.FORMAT_VERSION:
        raise ParseError(
            f"unsupported format version {version}, expected {settings.FORMAT_VERSION}",
            f"{path}: field format_version",
        )


def _check_space(found: SpaceConfig, expected: Optional[SpaceConfig]) -> None:
    if expected is not None and found != expected:
        raise ConfigurationError(f"file space {found.model_dump()} does not match {expected.model_dump()}")


def save_model(a: DiscreteOperatorMeasure, path: PathLike, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Serialise a measure; atoms keep their stored order"""
    payload = ModelFile(
        format_version=settings.FORMAT_VERSION,
        tool_version=settings.TOOL_VERSION,
        space=a.space,
        atoms=[AtomRecord(weight=to_hex(w), matrix=hex_rows(m)) for w, m in zip(a.weights, a.matrices)],
        metadata=metadata or {},
    )
    logger.debug(f"Writing {len(a)} atoms to {path}")
    return dump_json(payload.model_dump(mode="json"), path)


def load_model(path: PathLike, space: Optional[SpaceConfig] = None) -> DiscreteOperatorMeasure:
    payload = _validate(ModelFile, read_json(path), path)
    _check_version(payload.format_version, path)
    _check_space(payload.space, space)
    shape = (payload.space.k, payload.space.lifted_dim)
    weights, matrices = [], []
    for i, atom in enumerate(payload.atoms):
        weights.append(from_hex(atom.weight, f"{path}: field atoms.{i}.weight"))
        matrix = parse_rows(atom.matrix, f"{path}: field atoms.{i}.matrix")
        if matrix.shape != shape:
            raise ConfigurationError(f"atom {i} has shape {matrix.shape}, expected {shape}")
        matrices.append(matrix)
    if not weights:
        return DiscreteOperatorMeasure(payload.space)
    return DiscreteOperatorMeasure(payload.space, weights, np.stack(matrices))


def save_certificate(
    cert: Certificate, space: SpaceConfig, path: PathLike, metadata: Optional[Dict[str, Any]] = None
) -> Path:
    payload = CertificateFile(
        format_version=settings.FORMAT_VERSION,
        tool_version=settings.TOOL_VERSION,
        space=space,
        q=cert.q,
        norm_q=to_hex(cert.norm_q),
        vectors=hex_rows(cert.vectors),
        lifted_inputs=hex_rows(cert.lifted_inputs),
        metadata=metadata or {},
    )
    return dump_json(payload.model_dump(mode="json"), path)


def load_certificate(path: PathLike, space: Optional[SpaceConfig] = None) -> Certificate:
    payload = _validate(CertificateFile, read_json(path), path)
    _check_version(payload.format_version, path)
    _check_space(payload.space, space)
    vectors = parse_rows(payload.vectors, f"{path}: field vectors").reshape(-1, payload.space.k)
    lifted = parse_rows(payload.lifted_inputs, f"{path}: field lifted_inputs").reshape(-1, payload.space.lifted_dim)
    return Certificate(vectors, lifted, payload.q)
