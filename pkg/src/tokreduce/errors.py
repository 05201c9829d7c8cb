"""Exception hierarchy shared by every engine module.

Each class carries a short machine-readable ``error_class`` used by the CLI
for structured error output and exit-code mapping.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all errors raised by this package."""

    error_class = "runtime"


class TensorFormatError(EngineError):
    """Malformed tensor file: bad magic/header, unsupported dtype, bad payload size."""

    error_class = "tensor-format"


class ConfigError(EngineError):
    """Invalid run configuration: out-of-range value, unknown key, missing field."""

    error_class = "config"


class ShapeError(EngineError):
    """Dimension mismatch between arrays, or drift between supplied tensors and the workspace."""

    error_class = "shape"


class MissingClsError(EngineError):
    """A CLS attention row was requested from a layout that has no CLS token."""

    error_class = "missing-cls"


class MissingTextError(EngineError):
    """A decoder-variant operation was invoked without any text tokens."""

    error_class = "missing-text"


class ScheduleError(EngineError):
    """Infeasible reduction schedule or keep budget."""

    error_class = "schedule"


class TraceError(EngineError):
    """Malformed reduction trace, or a trace inconsistent with its workspace."""

    error_class = "trace"
