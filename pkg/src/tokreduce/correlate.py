"""Correlate stage: source/target correlation, quantile thresholds, assignments.

The correlation matrix C has one row per discarded (source) token and one
column per preserved (target) token. Each source gets a token-wise threshold
from the empirical quantile of its row; targets at or above the threshold form
the source's pathway set, with weights normalized over the row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filtering import SourceTargetSplit
from .errors import MissingTextError, ShapeError


@dataclass(frozen=True)
class CorrelationPlan:
    """Thresholded assignment sets and weights for one reduction step.

    ``outgoing[i]`` holds the target columns of source row i (ascending) and
    ``weights[i]`` the matching convex weights. ``incoming[j]`` is the
    transpose view: (source rows, weights) feeding target column j, ascending
    in source row.
    """

    C: np.ndarray
    tau: np.ndarray
    outgoing: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    incoming: tuple[tuple[np.ndarray, np.ndarray], ...]

    @property
    def n_source(self) -> int:
        return self.C.shape[0]

    @property
    def n_target(self) -> int:
        return self.C.shape[1]


def correlation_v(a_vv: np.ndarray, split: SourceTargetSplit) -> np.ndarray:
    """Encoder-side correlation: attention from source to target, verbatim."""
    a_vv = np.asarray(a_vv, dtype=np.float64)
    _check_split(a_vv, split)
    return a_vv[np.ix_(split.source, split.target)].copy()


def correlation_l(
    a_vv: np.ndarray, a_tv: np.ndarray, split: SourceTargetSplit, gamma: float
) -> np.ndarray:
    """Decoder-side correlation: symmetrized direct term plus a text bridge.

    The direct term takes ``max(A[s, t], A[t, s])`` because under a causal
    mask one of the two directions is structurally zero whenever the source
    precedes the target. The indirect term averages, over text rows k, the
    product of the attention k pays to the source and to the target: pairs
    whose attention concentrates on the same text anchors correlate.
    """
    a_vv = np.asarray(a_vv, dtype=np.float64)
    a_tv = np.asarray(a_tv, dtype=np.float64)
    _check_split(a_vv, split)
    if a_tv.ndim != 2 or a_tv.shape[1] != a_vv.shape[0]:
        raise ShapeError(
            f"text block {a_tv.shape} does not cover the {a_vv.shape[0]} visual tokens"
        )
    m = a_tv.shape[0]
    if m == 0:
        raise MissingTextError("decoder-side correlation requires at least one text token")
    direct_fwd = a_vv[np.ix_(split.source, split.target)]
    direct_bwd = a_vv[np.ix_(split.target, split.source)].T
    direct = np.maximum(direct_fwd, direct_bwd)
    bridge = np.einsum(
        "ks,kt->st", a_tv[:, split.source], a_tv[:, split.target], optimize=False
    )
    return gamma * direct + (1.0 - gamma) * (bridge / m)


def thresholds(C: np.ndarray, epsilon: float) -> np.ndarray:
    """Per-row linear-interpolation empirical quantile, clamped to the row max.

    With the ascending sorted row v of length n and h = epsilon * (n - 1), the
    threshold is v[floor(h)] + (h - floor(h)) * (v[ceil(h)] - v[floor(h)]).
    The row-max clamp makes the non-empty-assignment guarantee unconditional.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ShapeError(f"correlation matrix must be rank 2, got {C.shape}")
    if not 0.0 < epsilon <= 1.0:
        raise ShapeError(f"epsilon must lie in (0, 1], got {epsilon}")
    if C.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    if C.shape[1] == 0:
        raise ShapeError("correlation rows are empty; no targets to threshold against")
    tau = np.quantile(C, epsilon, axis=1, method="linear")
    return np.minimum(tau, C.max(axis=1))


def assignments(C: np.ndarray, tau: np.ndarray) -> CorrelationPlan:
    """Materialize pathway sets: target j joins source i's set iff C[i, j] >= tau[i].

    Weights are the selected correlations normalized per source row; an
    all-zero selection falls back to uniform weights so no NaN can escape.
    """
    C = np.asarray(C, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if tau.shape != (C.shape[0],):
        raise ShapeError(f"tau length {tau.shape} does not match {C.shape[0]} sources")
    selected = C >= tau[:, None]
    outgoing: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    for i in range(C.shape[0]):
        cols = np.flatnonzero(selected[i])
        vals = C[i, cols]
        total = vals.sum()
        if total > 0.0:
            w = vals / total
        else:
            w = np.full(cols.size, 1.0 / cols.size) if cols.size else vals
        outgoing.append(cols)
        weights.append(w)
    return _finish_plan(C, tau, outgoing, weights)


def fixed_k_assignments(C: np.ndarray, k: int) -> CorrelationPlan:
    """Ablation baseline: each source keeps exactly its top-k targets.

    k = 0 degenerates to pure pruning (empty pathway sets, compression becomes
    a no-op); ties rank the lower column first.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ShapeError(f"correlation matrix must be rank 2, got {C.shape}")
    if k < 0 or k > C.shape[1]:
        raise ShapeError(f"fixed k={k} outside [0, {C.shape[1]}]")
    outgoing: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    for i in range(C.shape[0]):
        order = np.argsort(-C[i], kind="stable")
        cols = np.sort(order[:k])
        vals = C[i, cols]
        total = vals.sum()
        if k == 0:
            w = vals
        elif total > 0.0:
            w = vals / total
        else:
            w = np.full(cols.size, 1.0 / cols.size)
        outgoing.append(cols)
        weights.append(w)
    tau = np.array([C[i, cols].min() if cols.size else np.inf for i, cols in enumerate(outgoing)])
    return _finish_plan(C, tau, outgoing, weights)


def many_to_one_assignments(C: np.ndarray) -> CorrelationPlan:
    """Ablation baseline: each source feeds only its argmax target with weight 1.

    Targets may still receive several sources; only the source side is
    restricted to a single pathway.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ShapeError(f"correlation matrix must be rank 2, got {C.shape}")
    if C.shape[0] and C.shape[1] == 0:
        raise ShapeError("cannot assign sources with no targets")
    outgoing = [np.array([int(np.argmax(C[i]))]) for i in range(C.shape[0])]
    weights = [np.array([1.0]) for _ in range(C.shape[0])]
    tau = np.array([C[i, cols[0]] for i, cols in enumerate(outgoing)])
    return _finish_plan(C, tau, outgoing, weights)


def _check_split(a_vv: np.ndarray, split: SourceTargetSplit) -> None:
    if a_vv.ndim != 2 or a_vv.shape[0] != a_vv.shape[1]:
        raise ShapeError(f"visual block must be square, got {a_vv.shape}")
    n = a_vv.shape[0]
    if split.n_source + split.n_target != n:
        raise ShapeError(
            f"split covers {split.n_source + split.n_target} tokens, block has {n}"
        )
    for idx in (split.source, split.target):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ShapeError("split indices outside the visual block")


def _finish_plan(
    C: np.ndarray,
    tau: np.ndarray,
    outgoing: list[np.ndarray],
    weights: list[np.ndarray],
) -> CorrelationPlan:
    incoming_src: list[list[int]] = [[] for _ in range(C.shape[1])]
    incoming_w: list[list[float]] = [[] for _ in range(C.shape[1])]
    for i, (cols, w) in enumerate(zip(outgoing, weights)):
        for j, wij in zip(cols, w):
            incoming_src[int(j)].append(i)
            incoming_w[int(j)].append(float(wij))
    incoming = tuple(
        (np.asarray(src, dtype=np.int64), np.asarray(w, dtype=np.float64))
        for src, w in zip(incoming_src, incoming_w)
    )
    return CorrelationPlan(
        C=C,
        tau=np.asarray(tau, dtype=np.float64),
        outgoing=tuple(outgoing),
        weights=tuple(weights),
        incoming=incoming,
    )
