"""On-disk artifacts: tensors, run configuration, reduction traces.

Tensors use a deliberately minimal subset of the public NPY v1.0 format:
magic + version (1, 0), a Python-literal header dict, C order, little-endian
4-byte floats, rank 1..3. Anything else is rejected outright rather than
coerced, so files produced by other tooling either interoperate exactly or
fail loudly. Configs and traces are UTF-8 JSON.
"""

from __future__ import annotations

import ast
import dataclasses
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, TensorFormatError, TraceError
from .trace import ReductionTrace

_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCR = "<f4"

VARIANTS = ("V", "L")
CLS_MODES = ("cls_row", "key_mean_equivalent")

# Stock hyperparameter defaults; start_layer depends on the variant.
DEFAULT_LAMBDA = 0.35
DEFAULT_BETA = 0.6
DEFAULT_GAMMA = 0.6
DEFAULT_EPSILON = 0.998
DEFAULT_PENALTY_COEFFICIENT = 2.0
DEFAULT_WINDOW_SIZE = 2
DEFAULT_START_LAYER = {"V": 12, "L": 4}


# ---------------------------------------------------------------------------
# tensors
# ---------------------------------------------------------------------------


def _header_bytes(shape: tuple[int, ...]) -> bytes:
    if len(shape) == 1:
        shape_txt = f"({shape[0]},)"
    else:
        shape_txt = "(" + ", ".join(str(d) for d in shape) + ")"
    header = f"{{'descr': '{_SUPPORTED_DESCR}', 'fortran_order': False, 'shape': {shape_txt}, }}"
    # magic(6) + version(2) + header-len(2) + header must be a multiple of 64
    unpadded = len(_MAGIC) + 2 + 2 + len(header) + 1
    pad = (64 - unpadded % 64) % 64
    return (header + " " * pad + "\n").encode("latin1")


def write_tensor(path: str | Path, values: np.ndarray) -> None:
    """Write a float32 array as an NPY v1.0 file.

    The array must already be float32 with rank 1..3; callers convert
    explicitly so precision loss never happens silently here.
    """
    arr = np.asarray(values)
    if arr.dtype != np.float32:
        raise TensorFormatError(
            f"write_tensor requires float32 payload, got {arr.dtype}; convert explicitly"
        )
    if arr.ndim not in (1, 2, 3):
        raise TensorFormatError(f"tensor rank must be 1, 2, or 3, got {arr.ndim}")
    arr = np.ascontiguousarray(arr)
    header = _header_bytes(arr.shape)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an NPY file written in the supported subset; returns float32, C order."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:6] != _MAGIC:
        raise TensorFormatError(f"{path}: not a tensor file (bad magic)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise TensorFormatError(f"{path}: unsupported format version {major}.{minor}")
    (header_len,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + header_len
    if len(raw) < header_end:
        raise TensorFormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise TensorFormatError(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise TensorFormatError(f"{path}: header must have exactly descr/fortran_order/shape")
    if header["descr"] != _SUPPORTED_DESCR:
        raise TensorFormatError(
            f"{path}: unsupported dtype {header['descr']!r}; only {_SUPPORTED_DESCR} is accepted"
        )
    if header["fortran_order"] is not False:
        raise TensorFormatError(f"{path}: fortran_order must be False")
    shape = header["shape"]
    if (
        not isinstance(shape, tuple)
        or not shape
        or len(shape) > 3
        or not all(isinstance(d, int) and d >= 0 for d in shape)
    ):
        raise TensorFormatError(f"{path}: shape {shape!r} must be a rank-1..3 tuple of sizes")
    count = int(np.prod(shape, dtype=np.int64))
    payload = raw[header_end:]
    if len(payload) != 4 * count:
        raise TensorFormatError(
            f"{path}: payload holds {len(payload) // 4} values, shape {shape} needs {count}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return np.ascontiguousarray(arr)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ReductionConfig:
    """Validated hyperparameters and schedule inputs for one run."""

    variant: str
    grid_rows: int
    grid_cols: int
    num_layers: int
    lam: float = DEFAULT_LAMBDA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    epsilon: float = DEFAULT_EPSILON
    window_size: int = DEFAULT_WINDOW_SIZE
    penalty_coefficient: float = DEFAULT_PENALTY_COEFFICIENT
    start_layer: int = -1  # resolved per variant when unset
    keep_budget: int | None = None
    per_layer_discard: tuple[int, ...] | None = None
    seed: int = 0
    cls_mode: str = "cls_row"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.start_layer < 0:
            object.__setattr__(self, "start_layer", DEFAULT_START_LAYER[self.variant])
        for name in ("lam", "beta", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")
        if self.penalty_coefficient <= 0:
            raise ConfigError(
                f"penalty_coefficient must be positive, got {self.penalty_coefficient}"
            )
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ConfigError("grid_rows and grid_cols must be positive")
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be positive, got {self.num_layers}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.cls_mode not in CLS_MODES:
            raise ConfigError(f"cls_mode must be one of {CLS_MODES}, got {self.cls_mode!r}")
        if (self.keep_budget is None) == (self.per_layer_discard is None):
            raise ConfigError("exactly one of keep_budget / per_layer_discard must be given")
        if self.keep_budget is not None and self.keep_budget < 0:
            raise ConfigError(f"keep_budget must be non-negative, got {self.keep_budget}")
        if self.per_layer_discard is not None:
            vec = tuple(int(v) for v in self.per_layer_discard)
            if any(v < 0 for v in vec):
                raise ConfigError("per_layer_discard entries must be non-negative")
            if len(vec) != self.num_layers:
                raise ConfigError(
                    f"per_layer_discard has {len(vec)} entries for {self.num_layers} layers"
                )
            object.__setattr__(self, "per_layer_discard", vec)

    @property
    def initial_visual(self) -> int:
        return self.grid_rows * self.grid_cols


_CONFIG_KEYS = {
    "variant": ("variant", str),
    "grid_rows": ("grid_rows", int),
    "grid_cols": ("grid_cols", int),
    "num_layers": ("num_layers", int),
    "lambda": ("lam", float),
    "beta": ("beta", float),
    "gamma": ("gamma", float),
    "epsilon": ("epsilon", float),
    "window_size": ("window_size", int),
    "penalty_coefficient": ("penalty_coefficient", float),
    "start_layer": ("start_layer", int),
    "keep_budget": ("keep_budget", int),
    "per_layer_discard": ("per_layer_discard", tuple),
    "seed": ("seed", int),
    "cls_mode": ("cls_mode", str),
}

_REQUIRED_KEYS = ("variant", "grid_rows", "grid_cols", "num_layers")


def config_from_mapping(obj: dict[str, Any]) -> ReductionConfig:
    """Build a validated config from a JSON-style mapping. Unknown keys are fatal."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(obj) - set(_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in _REQUIRED_KEYS if k not in obj]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    kwargs: dict[str, Any] = {}
    for key, value in obj.items():
        field, caster = _CONFIG_KEYS[key]
        try:
            if caster is tuple:
                vec = []
                for v in value:
                    if isinstance(v, bool) or int(v) != v:
                        raise ValueError(f"{v!r} is not an integer")
                    vec.append(int(v))
                kwargs[field] = tuple(vec)
            elif caster is int:
                if isinstance(value, bool) or int(value) != value:
                    raise ValueError(f"{value!r} is not an integer")
                kwargs[field] = int(value)
            else:
                kwargs[field] = caster(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    return ReductionConfig(**kwargs)


def config_to_mapping(config: ReductionConfig) -> dict[str, Any]:
    """Canonical JSON mapping for a config (budget key emitted only when set)."""
    out: dict[str, Any] = {
        "variant": config.variant,
        "grid_rows": config.grid_rows,
        "grid_cols": config.grid_cols,
        "num_layers": config.num_layers,
        "lambda": config.lam,
        "beta": config.beta,
        "gamma": config.gamma,
        "epsilon": config.epsilon,
        "window_size": config.window_size,
        "penalty_coefficient": config.penalty_coefficient,
        "start_layer": config.start_layer,
        "seed": config.seed,
        "cls_mode": config.cls_mode,
    }
    if config.keep_budget is not None:
        out["keep_budget"] = config.keep_budget
    if config.per_layer_discard is not None:
        out["per_layer_discard"] = list(config.per_layer_discard)
    return out


def read_config(path: str | Path) -> ReductionConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_mapping(obj)


def write_config(path: str | Path, config: ReductionConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_mapping(config), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


def write_trace(path: str | Path, trace: ReductionTrace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace.to_json_obj(), fh, indent=2)
        fh.write("\n")


def read_trace(path: str | Path) -> ReductionTrace:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise TraceError(f"trace {path} is not valid JSON: {exc}") from exc
    return ReductionTrace.from_json_obj(obj)
