"""In-process bindings for the token-reduction engine.

Three functions, :func:`bound_run`, :func:`plan_schedule`, and
:func:`pipeline_cost`, let inference stacks drive the engine directly on
attention/embedding buffers, skipping file round-trips. Tensors cross the
boundary as contiguous row-major 32-bit float buffers with explicit shapes;
results come back as native mappings plus a float32 array for the reduced
embeddings.

No numeric work happens here: every value is marshalled and delegated to the
engine, so results are bitwise-identical to the CLI on identical inputs.
Buffers are wrapped zero-copy where the memory layout permits (the engine
then makes its one documented float64 working copy). Wrong dtypes are
rejected with the engine's error classes, never silently cast.

Thread notes: the binding adds no locking of its own. The engine is pure
(each call owns its inputs), so calls from multiple host threads on distinct
inputs are safe; long-running array kernels release the interpreter lock
inside numpy where it applies.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Sequence

import numpy as np

import tokreduce
from tokreduce import errors
from tokreduce.errors import ShapeError, TensorFormatError

__version__ = tokreduce.__version__

__all__ = ["bound_run", "plan_schedule", "pipeline_cost", "__version__", "errors"]

_RAW_FORMATS = ("B", "b", "c")


def _as_float32(buf: Any, shape: Sequence[int] | None, name: str) -> np.ndarray:
    """View a host buffer as a float32 array of the given shape, zero-copy.

    Accepts float32 ndarrays (shape optional) or any buffer-protocol object
    holding raw bytes / typed float32 data plus an explicit shape. 64-bit
    float input is an error, not a cast.
    """
    if isinstance(buf, np.ndarray):
        if buf.dtype != np.float32:
            raise TensorFormatError(
                f"{name} must be float32, got {buf.dtype}; convert explicitly"
            )
        arr = np.ascontiguousarray(buf)
        if shape is not None and tuple(shape) != arr.shape:
            raise ShapeError(f"{name} has shape {arr.shape}, caller declared {tuple(shape)}")
        return arr
    if shape is None:
        raise ShapeError(f"{name}: raw buffers need an explicit shape")
    mv = memoryview(buf)
    if mv.format == "f":
        flat = np.frombuffer(mv, dtype=np.float32)
    elif mv.format in _RAW_FORMATS:
        if mv.nbytes % 4:
            raise TensorFormatError(f"{name}: byte length {mv.nbytes} is not a float32 multiple")
        flat = np.frombuffer(mv, dtype=np.float32)
    else:
        raise TensorFormatError(
            f"{name} buffer has element format {mv.format!r}; only 32-bit floats are accepted"
        )
    count = int(np.prod(shape, dtype=np.int64))
    if flat.size != count:
        raise ShapeError(f"{name} holds {flat.size} values, shape {tuple(shape)} needs {count}")
    return flat.reshape(tuple(shape))


def _synthetic_workload(
    embeddings: np.ndarray, synth: dict[str, Any], config: tokreduce.ReductionConfig
) -> tokreduce.SyntheticWorkload:
    known = {"seed", "m_text", "include_cls"}
    unknown = sorted(set(synth) - known)
    if unknown:
        raise errors.ConfigError(f"unknown synth spec keys: {', '.join(unknown)}")
    seed = int(synth.get("seed", config.seed))
    m_text = int(synth.get("m_text", 0))
    include_cls = bool(synth.get("include_cls", True))
    workload = tokreduce.gen_workload(
        n_visual=config.initial_visual,
        m_text=m_text,
        width=embeddings.shape[1],
        num_layers=config.num_layers,
        seed=seed,
        grid=(config.grid_rows, config.grid_cols),
        include_cls=include_cls,
    )
    if embeddings.shape != workload.embeddings.shape:
        raise ShapeError(
            f"embeddings shape {embeddings.shape} does not fit the synth layout "
            f"{workload.embeddings.shape}"
        )
    return dataclasses.replace(workload, embeddings=embeddings)


def bound_run(
    embeddings: Any,
    *,
    shape: Sequence[int] | None = None,
    attention: Sequence[Any] | None = None,
    attention_shapes: Sequence[Sequence[int]] | None = None,
    keys: Sequence[Any] | None = None,
    m_text: int = 0,
    include_cls: bool = True,
    synth: dict[str, Any] | None = None,
    config: dict[str, Any],
) -> tuple[np.ndarray, list[dict[str, Any]], dict[str, Any]]:
    """Run a reduction over in-memory buffers.

    ``embeddings`` is the initial token matrix. Supply either ``synth`` (a
    mapping with ``seed`` and optional ``m_text`` / ``include_cls``; attention
    is then recomputed per layer from seeded projections) or ``attention``
    (one buffer per layer, each covering the tokens alive at that layer;
    ``m_text`` / ``include_cls`` then describe the token layout).
    ``config`` uses the same keys as the engine's config JSON.

    Returns ``(reduced, trace, summary)``: a float32 C-order array of the
    surviving embeddings, the trace as a list of layer-record mappings, and
    the summary mapping.
    """
    if (attention is None) == (synth is None):
        raise errors.ConfigError("exactly one of attention / synth must be given")
    cfg = tokreduce.config_from_mapping(dict(config))
    emb = _as_float32(embeddings, shape, "embeddings")
    if emb.ndim != 2:
        raise ShapeError(f"embeddings must be rank 2, got shape {emb.shape}")

    if synth is not None:
        workload: Any = _synthetic_workload(emb, dict(synth), cfg)
    else:
        shapes = list(attention_shapes) if attention_shapes is not None else [None] * len(attention)
        if len(shapes) != len(attention):
            raise ShapeError("attention_shapes must match attention one-to-one")
        layers = tuple(
            np.asarray(_as_float32(a, s, f"attention[{i}]"), dtype=np.float64)
            for i, (a, s) in enumerate(zip(attention, shapes))
        )
        key_arrays: tuple[np.ndarray | None, ...]
        if keys is None:
            key_arrays = (None,) * len(layers)
        else:
            if len(keys) != len(layers):
                raise ShapeError("keys must match attention one-to-one")
            key_arrays = tuple(
                None if k is None
                else np.asarray(_as_float32(k, None, f"keys[{i}]"), dtype=np.float64)
                for i, k in enumerate(keys)
            )
        workload = tokreduce.AttentionSequenceWorkload(
            embeddings=emb,
            n_visual=cfg.initial_visual,
            m_text=int(m_text),
            grid=(cfg.grid_rows, cfg.grid_cols),
            include_cls=bool(include_cls),
            attention=layers,
            keys=key_arrays,
        )

    final_ws, trace, summary = tokreduce.run(workload, cfg)
    reduced = np.ascontiguousarray(final_ws.embeddings.astype(np.float32))
    return reduced, trace.to_json_obj(), summary


def plan_schedule(
    initial_visual: int,
    *,
    keep_budget: int | None = None,
    explicit: Sequence[int] | None = None,
    start_layer: int,
    num_layers: int,
) -> list[int]:
    """Per-layer discard counts as a plain list; delegates to the engine."""
    schedule = tokreduce.plan_schedule(
        int(initial_visual),
        keep_budget=None if keep_budget is None else int(keep_budget),
        explicit=None if explicit is None else [int(v) for v in explicit],
        start_layer=int(start_layer),
        num_layers=int(num_layers),
    )
    return list(schedule.per_layer)


def pipeline_cost(
    schedule: Sequence[int],
    *,
    n_visual: int,
    m_text: int = 0,
    d: int,
    h_ffn: int,
    variant: str,
) -> dict[str, Any]:
    """Whole-schedule cost report as a native mapping; delegates to the engine."""
    cost = tokreduce.pipeline_cost(
        [int(v) for v in schedule],
        n_visual=int(n_visual),
        m_text=int(m_text),
        d=int(d),
        h_ffn=int(h_ffn),
        variant=variant,
    )
    return cost.to_json_dict()
