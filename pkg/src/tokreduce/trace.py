"""Per-layer reduction records and the run trace.

A trace is the durable account of one reduction run: which tokens each layer
discarded, where their information went, and with what weights. Token
references use ORIGINAL indices (position in the untouched input sequence) so
records stay meaningful after rows have been dropped. The JSON form is a plain
list of layer records; see ``docs/trace-schema.md`` in the repo root.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import TraceError


@dataclass(frozen=True)
class Assignment:
    """One discarded token's outgoing pathways: targets and convex weights."""

    source: int
    targets: tuple[int, ...]
    weights: tuple[float, ...]


@dataclass(frozen=True)
class LayerRecord:
    """Everything one layer's reduction step decided.

    ``scores`` snapshots the ranking actually used for selection (after the
    local penalty, when applied), keyed by original token index.
    ``received_mass`` lists only targets that absorbed anything; absent
    targets received mass 0.
    """

    layer: int
    variant: str
    penalty_applied: bool
    used_text: bool
    score_tokens: tuple[int, ...]
    scores: tuple[float, ...]
    discarded: tuple[int, ...]
    assignments: tuple[Assignment, ...]
    received_targets: tuple[int, ...]
    received_mass: tuple[float, ...]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "layer": self.layer,
            "variant": self.variant,
            "penalty_applied": self.penalty_applied,
            "used_text": self.used_text,
            "scores": {
                "tokens": list(self.score_tokens),
                "values": list(self.scores),
            },
            "discarded": list(self.discarded),
            "assignments": [
                {
                    "source": a.source,
                    "targets": list(a.targets),
                    "weights": list(a.weights),
                }
                for a in self.assignments
            ],
            "received_mass": [
                {"target": t, "mass": m}
                for t, m in zip(self.received_targets, self.received_mass)
            ],
        }

    @staticmethod
    def from_json_dict(obj: dict[str, Any]) -> "LayerRecord":
        try:
            scores = obj["scores"]
            received = obj["received_mass"]
            return LayerRecord(
                layer=int(obj["layer"]),
                variant=str(obj["variant"]),
                penalty_applied=bool(obj["penalty_applied"]),
                used_text=bool(obj["used_text"]),
                score_tokens=tuple(int(t) for t in scores["tokens"]),
                scores=tuple(float(v) for v in scores["values"]),
                discarded=tuple(int(i) for i in obj["discarded"]),
                assignments=tuple(
                    Assignment(
                        source=int(a["source"]),
                        targets=tuple(int(t) for t in a["targets"]),
                        weights=tuple(float(w) for w in a["weights"]),
                    )
                    for a in obj["assignments"]
                ),
                received_targets=tuple(int(r["target"]) for r in received),
                received_mass=tuple(float(r["mass"]) for r in received),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceError(f"malformed layer record: {exc}") from exc


@dataclass(frozen=True)
class ReductionTrace:
    """Ordered layer records for a whole run."""

    layers: tuple[LayerRecord, ...] = field(default_factory=tuple)

    def to_json_obj(self) -> list[dict[str, Any]]:
        return [rec.to_json_dict() for rec in self.layers]

    @staticmethod
    def from_json_obj(obj: Any) -> "ReductionTrace":
        if not isinstance(obj, list):
            raise TraceError("trace JSON must be a list of layer records")
        return ReductionTrace(tuple(LayerRecord.from_json_dict(rec) for rec in obj))

    def all_discarded(self) -> list[int]:
        """Original indices discarded over the whole run, in layer order."""
        out: list[int] = []
        for rec in self.layers:
            out.extend(rec.discarded)
        return out


def empty_layer_record(layer: int, variant: str) -> LayerRecord:
    """Record for a layer whose schedule entry was zero."""
    return LayerRecord(
        layer=layer,
        variant=variant,
        penalty_applied=False,
        used_text=False,
        score_tokens=(),
        scores=(),
        discarded=(),
        assignments=(),
        received_targets=(),
        received_mass=(),
    )


def as_float_tuple(values: np.ndarray) -> tuple[float, ...]:
    return tuple(float(v) for v in np.asarray(values).ravel())


def as_int_tuple(values: np.ndarray) -> tuple[int, ...]:
    return tuple(int(v) for v in np.asarray(values).ravel())
