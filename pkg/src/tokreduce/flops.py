"""Analytical per-layer cost model for token reduction.

Everything is exact integer arithmetic (Python ints never wrap), so the
defining identity (delta equals cost-before minus cost-after) can be checked
bitwise. The published closed forms for the delta are evaluated alongside the
definitional subtraction; when they disagree (they do: the encoder form's
middle term and the decoder form's missing text contribution) the discrepancy
is reported as a structured warning, never silently corrected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .errors import ShapeError

VARIANTS = ("V", "L")


@dataclass(frozen=True)
class LayerCostParams:
    """Token counts and widths entering one layer's cost."""

    d: int  # hidden width
    h_ffn: int  # feed-forward width
    n_visual: int
    n_discard: int = 0
    m_text: int = 0

    def __post_init__(self) -> None:
        for name in ("d", "h_ffn", "n_visual", "n_discard", "m_text"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ShapeError(f"{name} must be a non-negative integer, got {v!r}")
        if self.n_discard > self.n_visual:
            raise ShapeError(
                f"cannot discard {self.n_discard} of {self.n_visual} visual tokens"
            )

    @property
    def n_target(self) -> int:
        return self.n_visual - self.n_discard


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ShapeError(f"variant must be one of {VARIANTS}, got {variant!r}")


def layer_flops(tokens: int, d: int, h_ffn: int) -> int:
    """Cost of one transformer layer over ``tokens`` positions.

    4*P*D^2 (QKVO projections) + 2*P^2*D (attention products) + 2*P*D*H (FFN).
    """
    for name, v in (("tokens", tokens), ("d", d), ("h_ffn", h_ffn)):
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ShapeError(f"{name} must be a non-negative integer, got {v!r}")
    return 4 * tokens * d * d + 2 * tokens * tokens * d + 2 * tokens * d * h_ffn


def _tokens_before_after(params: LayerCostParams, variant: str) -> tuple[int, int]:
    if variant == "V":
        return params.n_visual, params.n_target
    return params.n_visual + params.m_text, params.n_target + params.m_text


def reduction_delta(params: LayerCostParams, variant: str) -> int:
    """Definitional per-layer saving: cost before minus cost after reduction."""
    _check_variant(variant)
    before, after = _tokens_before_after(params, variant)
    return layer_flops(before, params.d, params.h_ffn) - layer_flops(
        after, params.d, params.h_ffn
    )


def printed_delta(params: LayerCostParams, variant: str) -> int:
    """The published closed forms, evaluated literally for comparison."""
    _check_variant(variant)
    ns, d, h = params.n_discard, params.d, params.h_ffn
    n = params.n_visual
    if variant == "V":
        middle = n * ns - ns * ns
    else:
        middle = 2 * n * ns - ns * ns
    return 4 * ns * d * d + 2 * middle * d + 2 * ns * d * h


@dataclass(frozen=True)
class DeltaReport:
    """Definitional delta vs the published closed form for one layer."""

    true_delta: int
    printed: int

    @property
    def matches(self) -> bool:
        return self.true_delta == self.printed


def delta_report(params: LayerCostParams, variant: str) -> DeltaReport:
    return DeltaReport(reduction_delta(params, variant), printed_delta(params, variant))


def overhead_flops(params: LayerCostParams, variant: str) -> int:
    """Bookkeeping cost of the reduction itself (scoring, thresholds, folds).

    Encoder form: N^2 + 2N + N_s*(N_t + 2D + 1) + D; the decoder form doubles
    the N^2 + 2N term (it also scans text attention).
    """
    _check_variant(variant)
    n, ns, nt, d = params.n_visual, params.n_discard, params.n_target, params.d
    base = n * n + 2 * n
    if variant == "L":
        base *= 2
    return base + ns * (nt + 2 * d + 1) + d


@dataclass(frozen=True)
class CostSummary:
    """Totals over a whole schedule, plus any closed-form discrepancies found."""

    variant: str
    total_before: int
    total_after: int
    total_overhead: int
    total_delta: int
    per_layer_tokens: tuple[int, ...]
    warnings: tuple[dict[str, Any], ...] = field(default_factory=tuple)

    @property
    def percent_reduction(self) -> float:
        if self.total_before == 0:
            return 0.0
        return 100.0 * (1.0 - self.total_after / self.total_before)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant,
            "total_before": self.total_before,
            "total_after": self.total_after,
            "total_overhead": self.total_overhead,
            "total_delta": self.total_delta,
            "percent_reduction": self.percent_reduction,
            "per_layer_tokens": list(self.per_layer_tokens),
            "closed_form_warnings": list(self.warnings),
        }


def pipeline_cost(
    per_layer_discard: list[int] | tuple[int, ...],
    n_visual: int,
    m_text: int,
    d: int,
    h_ffn: int,
    variant: str,
) -> CostSummary:
    """Sum layer costs along a schedule with the visual count evolving per layer.

    Each layer is costed at its post-reduction token count: a scheduled
    discard lands between the attention read and the heavy tail of the layer,
    so the layer's own FFN and every later layer run on the reduced set. The
    unreduced baseline ("before") runs every layer at the initial count.
    """
    _check_variant(variant)
    schedule = [int(v) for v in per_layer_discard]
    if any(v < 0 for v in schedule):
        raise ShapeError("schedule entries must be non-negative")
    if sum(schedule) > n_visual:
        raise ShapeError(f"schedule discards {sum(schedule)} of {n_visual} visual tokens")
    extra = m_text if variant == "L" else 0
    full = n_visual + extra
    total_before = 0
    total_after = 0
    total_overhead = 0
    total_delta = 0
    warnings: list[dict[str, Any]] = []
    alive = n_visual
    per_layer_tokens: list[int] = []
    for layer, ns in enumerate(schedule):
        total_before += layer_flops(full, d, h_ffn)
        params = LayerCostParams(
            d=d, h_ffn=h_ffn, n_visual=alive, n_discard=ns, m_text=m_text
        )
        if ns > 0:
            report = delta_report(params, variant)
            total_delta += report.true_delta
            total_overhead += overhead_flops(params, variant)
            if not report.matches:
                warnings.append(
                    {
                        "layer": layer,
                        "variant": variant,
                        "n_visual": alive,
                        "n_discard": ns,
                        "true_delta": report.true_delta,
                        "printed_delta": report.printed,
                    }
                )
        alive -= ns
        per_layer_tokens.append(alive + extra)
        total_after += layer_flops(alive + extra, d, h_ffn)
    return CostSummary(
        variant=variant,
        total_before=total_before,
        total_after=total_after,
        total_overhead=total_overhead,
        total_delta=total_delta,
        per_layer_tokens=tuple(per_layer_tokens),
        warnings=tuple(warnings),
    )
