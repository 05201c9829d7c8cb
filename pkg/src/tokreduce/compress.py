"""Compress stage: fold discarded embeddings into their correlated targets.

The weighted update keeps each target dominant: its own coefficient is
1 / (1 + received mass), and every source distributes exactly unit weight
across its targets. Targets nobody feeds come back bit-identical. Source
contributions accumulate in ascending source order for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlate import CorrelationPlan
from .errors import ShapeError


@dataclass(frozen=True)
class CompressionResult:
    """Updated target embeddings plus bookkeeping for inspection.

    ``received_mass[j]`` is the total incoming weight of target j (its own
    coefficient in the update was ``1 / (1 + received_mass[j])``);
    ``provenance[j]`` lists the (source row, weight) pairs that fed it.
    """

    updated_targets: np.ndarray
    received_mass: np.ndarray
    provenance: tuple[tuple[np.ndarray, np.ndarray], ...]


def _check_inputs(
    x_targets: np.ndarray, x_sources: np.ndarray, plan: CorrelationPlan
) -> tuple[np.ndarray, np.ndarray]:
    x_targets = np.asarray(x_targets, dtype=np.float64)
    x_sources = np.asarray(x_sources, dtype=np.float64)
    if x_targets.ndim != 2 or x_sources.ndim != 2:
        raise ShapeError("token matrices must be rank 2")
    if x_sources.shape[0] != plan.n_source or x_targets.shape[0] != plan.n_target:
        raise ShapeError(
            f"plan is {plan.n_source}x{plan.n_target} but matrices hold "
            f"{x_sources.shape[0]} sources and {x_targets.shape[0]} targets"
        )
    if plan.n_source and x_sources.shape[1] != x_targets.shape[1]:
        raise ShapeError("source and target embedding widths differ")
    return x_targets, x_sources


def weighted_compress(
    x_targets: np.ndarray, x_sources: np.ndarray, plan: CorrelationPlan
) -> CompressionResult:
    """Convex fold: target_j <- (target_j + sum_i w_ij * source_i) / (1 + sum_i w_ij)."""
    x_targets, x_sources = _check_inputs(x_targets, x_sources, plan)
    out = x_targets.copy()
    mass = np.zeros(plan.n_target, dtype=np.float64)
    for j, (srcs, w) in enumerate(plan.incoming):
        if srcs.size == 0:
            continue
        total = float(w.sum())
        contrib = np.einsum("s,sd->d", w, x_sources[srcs], optimize=False)
        out[j] = (x_targets[j] + contrib) / (1.0 + total)
        mass[j] = total
    return CompressionResult(out, mass, plan.incoming)


def average_compress(
    x_targets: np.ndarray, x_sources: np.ndarray, plan: CorrelationPlan
) -> CompressionResult:
    """Uniform fold baseline: target_j <- (target_j + sum_i source_i) / (1 + |I_j|).

    Ignores the plan's weights entirely, so a target absorbing many sources
    dilutes its own share well below one half.
    """
    x_targets, x_sources = _check_inputs(x_targets, x_sources, plan)
    out = x_targets.copy()
    mass = np.zeros(plan.n_target, dtype=np.float64)
    for j, (srcs, w) in enumerate(plan.incoming):
        if srcs.size == 0:
            continue
        contrib = x_sources[srcs].sum(axis=0)
        out[j] = (x_targets[j] + contrib) / (1.0 + srcs.size)
        mass[j] = float(w.sum())
    return CompressionResult(out, mass, plan.incoming)
