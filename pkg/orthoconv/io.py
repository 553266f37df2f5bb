"""
File interchange: NPY v1.0 tensors, CSV reports and JSON training configs.

NPY headers are parsed and written with `numpy.lib.format`; only little-endian
float32/float64 C-order arrays are accepted. CSV goes through pandas with
17-significant-digit floats and LF line endings so every float re-parses exactly.
"""
import json
import math
import os
from dataclasses import dataclass, fields
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.lib import format as npy_format

from orthoconv.exceptions import ConfigError, FormatError
from orthoconv.logger import get_logger
from orthoconv.orthreg import DEFAULT_LAMBDA

logger = get_logger()

NPY_DTYPES = ("<f4", "<f8")
FLOAT_FORMAT = "%.17g"
REGULARIZER_MODES = ("none", "kernel", "conv")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the toy trainer. `lam` is the JSON key "lambda"."""
    lam: float = DEFAULT_LAMBDA
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 10
    seed: int = 7
    mode: str = "conv"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.mode not in REGULARIZER_MODES:
            raise ConfigError(f"mode must be one of {REGULARIZER_MODES}, got '{self.mode}'")

    def to_json_dict(self) -> Dict[str, Any]:
        return {_JSON_KEYS.get(f.name, f.name): getattr(self, f.name) for f in fields(self)}


_JSON_KEYS = {"lam": "lambda"}
_CONFIG_TYPES = {"lambda": float, "lr": float, "momentum": float, "epochs": int,
                 "batch_size": int, "seed": int, "mode": str}


# NPY

def read_npy(path: str) -> np.ndarray:
    """
    Read a v1.0 NPY file holding '<f4' or '<f8' data in C order; returns float64.

    Raises:
        FormatError: naming the offending field (magic, version, fortran_order, descr, data)
    """
    with open(path, "rb") as fp:
        try:
            version = npy_format.read_magic(fp)
        except ValueError as e:
            raise FormatError(f"{path}: bad magic string ({e})") from e
        if version != (1, 0):
            raise FormatError(f"{path}: unsupported NPY version {version[0]}.{version[1]}, expected 1.0")
        try:
            shape, fortran_order, dtype = npy_format.read_array_header_1_0(fp)
        except ValueError as e:
            raise FormatError(f"{path}: malformed header ({e})") from e
        if fortran_order:
            raise FormatError(f"{path}: fortran_order=True is not supported")
        if dtype.str not in NPY_DTYPES:
            raise FormatError(f"{path}: unsupported descr '{dtype.str}', expected one of {NPY_DTYPES}")
        if not 1 <= len(shape) <= 4 or 0 in shape:
            raise FormatError(f"{path}: shape {shape} must have 1 to 4 positive extents")
        count = int(np.prod(shape))
        data = np.frombuffer(fp.read(count * dtype.itemsize), dtype=dtype)
    if data.size != count:
        raise FormatError(f"{path}: data holds {data.size} values, header shape {shape} needs {count}")
    logger.debug(f"Read {shape} {dtype.str} tensor from {path}")
    return data.astype(np.float64).reshape(shape)


def write_npy(path: str, t: np.ndarray, dtype: str = "<f8") -> None:
    """Write `t` as a v1.0 NPY file with the given little-endian float dtype."""
    if dtype not in NPY_DTYPES:
        raise FormatError(f"Unsupported dtype '{dtype}', expected one of {NPY_DTYPES}")
    array = np.ascontiguousarray(t, dtype=np.dtype(dtype))
    header = {"descr": dtype, "fortran_order": False, "shape": array.shape}
    try:
        with open(path, "wb") as fp:
            npy_format.write_array_header_1_0(fp, header)
            fp.write(array.tobytes(order="C"))
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise
    logger.debug(f"Wrote {array.shape} {dtype} tensor to {path}")


# CSV

def write_csv(path: str, header_row: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """
    Write rows under a header; floats use 17 significant digits, lines end in LF.

    Raises:
        FormatError: if a row's arity differs from the header's
    """
    header_row = list(header_row)
    for i, row in enumerate(rows):
        if len(row) != len(header_row):
            raise FormatError(f"CSV row {i} has {len(row)} fields, header has {len(header_row)}")
    frame = pd.DataFrame([list(r) for r in rows], columns=header_row)
    write_frame(path, frame)


def write_frame(path: str, frame: pd.DataFrame) -> None:
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise
    logger.info(f"Wrote {len(frame)} rows to {path}")


def read_csv(path: str) -> pd.DataFrame:
    """Read a CSV written by write_csv with exact float round-tripping."""
    return pd.read_csv(path, float_precision="round_trip")


# JSON config

def parse_config(raw: Any, source: str = "config") -> TrainConfig:
    """Validate a decoded JSON object and build a TrainConfig; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: expected a JSON object at $, got {type(raw).__name__}")
    values = {}
    for key, value in raw.items():
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"{source}: unknown key at $.{key}; allowed keys are {sorted(_CONFIG_TYPES)}")
        expected = _CONFIG_TYPES[key]
        if isinstance(value, bool) or not _matches(value, expected):
            raise ConfigError(
                f"{source}: $.{key} must be {expected.__name__}, got {type(value).__name__} {value!r}"
            )
        values["lam" if key == "lambda" else key] = float(value) if expected is float else value
    return TrainConfig(**values)


def _matches(value: Any, expected: type) -> bool:
    if expected is float:
        return isinstance(value, (int, float))
    return isinstance(value, expected)


def read_config(path: str) -> TrainConfig:
    """Load a TrainConfig from a JSON file; defaults fill missing keys."""
    try:
        with open(path, "r", encoding="utf-8") as fp:
            raw = json.load(fp)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    config = parse_config(raw, source=os.fspath(path))
    logger.info(f"Loaded training config from {path}: {config}")
    return config


def json_safe(value: Any) -> Any:
    """Copy of a report with non-finite floats replaced by None, so the JSON stays strict."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def report_json(payload: Dict[str, Any]) -> str:
    """Deterministic JSON text of a report: sorted keys, two-space indent, no NaN or Infinity."""
    return json.dumps(json_safe(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: Optional[str], payload: Dict[str, Any]) -> str:
    """Serialize a report deterministically; writes to `path` when given and returns the text."""
    text = report_json(payload)
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(text)
        logger.info(f"Wrote JSON report to {path}")
    return text
