"""Filter stage: redundancy scoring, local penalty, and source selection.

Scores follow the convention that HIGHER means more redundant, so the tokens
to discard are the top of the ranking. All tie-breaks resolve to the lower
original index, which keeps traces deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import Role, TokenWorkspace
from .errors import MissingTextError, ShapeError

# Padding for grid cells whose token is gone; can never win a window max.
DEAD_CELL = -np.inf


@dataclass(frozen=True)
class RedundancyScores:
    """Per-visual-token redundancy, aligned with the alive visual ordering."""

    scores: np.ndarray
    variant: str

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        if scores.ndim != 1:
            raise ShapeError(f"scores must be a vector, got shape {scores.shape}")
        if scores.size and not np.isfinite(scores).all():
            raise ShapeError("redundancy scores must be finite")


@dataclass(frozen=True)
class SourceTargetSplit:
    """Discarded (source) vs preserved (target) visual positions, both ascending."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self) -> None:
        src = np.asarray(self.source, dtype=np.int64)
        tgt = np.asarray(self.target, dtype=np.int64)
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)
        if np.intersect1d(src, tgt).size:
            raise ShapeError("source and target sets overlap")

    @property
    def n_source(self) -> int:
        return int(self.source.size)

    @property
    def n_target(self) -> int:
        return int(self.target.size)


def score_v(
    a_vv: np.ndarray, a_cls: np.ndarray, lam: float, *, received: bool = False
) -> RedundancyScores:
    """Encoder-side redundancy: row-mean of the visual block vs the CLS row.

    ``score_i = lam * mean_j(a_vv[i, j]) - (1 - lam) * a_cls[i]``. The visual
    block keeps its raw softmax mass (rows leak to CLS/text columns), which is
    what makes the first term informative. ``received=True`` swaps the row
    mean for the column mean (attention received instead of spent) for
    experiments; the row mean is the default reading.
    """
    a_vv = np.asarray(a_vv, dtype=np.float64)
    a_cls = np.asarray(a_cls, dtype=np.float64)
    if a_vv.ndim != 2 or a_vv.shape[0] != a_vv.shape[1]:
        raise ShapeError(f"visual block must be square, got {a_vv.shape}")
    if a_cls.shape != (a_vv.shape[0],):
        raise ShapeError(
            f"cls row length {a_cls.shape} does not match visual block {a_vv.shape}"
        )
    replaceable = a_vv.mean(axis=0) if received else a_vv.mean(axis=1)
    return RedundancyScores(lam * replaceable - (1.0 - lam) * a_cls, "V")


def score_l(a_vv: np.ndarray, a_tv: np.ndarray, beta: float) -> RedundancyScores:
    """Decoder-side redundancy: causal visual row-mean vs text-row attention.

    The task term averages, over text rows, the attention each visual token
    RECEIVES from text; under a causal mask visual queries cannot see later
    text tokens, so the received direction is the informative one.
    """
    a_vv = np.asarray(a_vv, dtype=np.float64)
    a_tv = np.asarray(a_tv, dtype=np.float64)
    if a_vv.ndim != 2 or a_vv.shape[0] != a_vv.shape[1]:
        raise ShapeError(f"visual block must be square, got {a_vv.shape}")
    if a_tv.ndim != 2 or a_tv.shape[1] != a_vv.shape[0]:
        raise ShapeError(
            f"text block {a_tv.shape} does not cover the {a_vv.shape[0]} visual tokens"
        )
    if a_tv.shape[0] == 0:
        raise MissingTextError("decoder-side scoring requires at least one text token")
    return RedundancyScores(beta * a_vv.mean(axis=1) - (1.0 - beta) * a_tv.mean(axis=0), "L")


def key_mean_equivalent(keys: np.ndarray, workspace: TokenWorkspace) -> np.ndarray:
    """CLS-free substitute for the CLS attention row, from key vectors.

    Heads (if stacked) are averaged, the mean of the visual tokens' keys acts
    as a global reference, and each visual token scores the NEGATED cosine
    similarity to it: tokens resembling the global mean are the redundant
    ones. Zero-norm vectors score 0 (treated as uncorrelated).
    """
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim == 3:
        keys = keys.mean(axis=0)
    if keys.ndim != 2 or keys.shape[1] < 1:
        raise ShapeError(f"keys must be (tokens, width) or (heads, tokens, width), got {keys.shape}")
    if keys.shape[0] != workspace.n_tokens:
        raise ShapeError(
            f"keys cover {keys.shape[0]} tokens but workspace holds {workspace.n_tokens}"
        )
    vis = workspace.visual_positions
    if vis.size == 0:
        raise ShapeError("key-mean scores need at least one visual token")
    patch = keys[vis]
    mu = patch.mean(axis=0)
    mu_norm = float(np.sqrt(np.einsum("d,d->", mu, mu)))
    out = np.zeros(vis.size, dtype=np.float64)
    if mu_norm == 0.0:
        return out
    dots = np.einsum("nd,d->n", patch, mu, optimize=False)
    norms = np.sqrt(np.einsum("nd,nd->n", patch, patch, optimize=False))
    nonzero = norms > 0.0
    out[nonzero] = -dots[nonzero] / (norms[nonzero] * mu_norm)
    return out


def local_penalty(
    scores: RedundancyScores,
    workspace: TokenWorkspace,
    window_size: int,
    coefficient: float,
) -> RedundancyScores:
    """Scale the maximum score inside each non-overlapping grid window.

    Scores scatter back to the 2D patch grid; cells of previously discarded
    tokens pad with ``DEAD_CELL`` so they never win a window. Within each
    ``window_size`` square tile (ragged edges processed as-is) only the
    maximum alive score is multiplied by ``coefficient``, boosting positive
    maxima and diminishing negative ones. Max ties resolve to the lower
    original index.
    """
    if window_size < 1:
        raise ShapeError(f"window_size must be >= 1, got {window_size}")
    vis = workspace.visual_positions
    values = scores.scores
    if values.shape != (vis.size,):
        raise ShapeError(
            f"scores cover {values.shape[0]} tokens but workspace has {vis.size} visual tokens"
        )
    rows, cols = workspace.grid_shape
    grid = np.full((rows, cols), DEAD_CELL, dtype=np.float64)
    orig_grid = np.full((rows, cols), np.iinfo(np.int64).max, dtype=np.int64)
    slot_grid = np.full((rows, cols), -1, dtype=np.int64)
    gp = workspace.grid_pos[vis]
    grid[gp[:, 0], gp[:, 1]] = values
    orig_grid[gp[:, 0], gp[:, 1]] = workspace.original_index[vis]
    slot_grid[gp[:, 0], gp[:, 1]] = np.arange(vis.size)

    out = values.copy()
    for r0 in range(0, rows, window_size):
        for c0 in range(0, cols, window_size):
            tile = grid[r0 : r0 + window_size, c0 : c0 + window_size]
            alive = tile != DEAD_CELL
            if not alive.any():
                continue
            best = tile[alive].max()
            ties = alive & (tile == best)
            tie_orig = orig_grid[r0 : r0 + window_size, c0 : c0 + window_size]
            winner = np.argmin(np.where(ties, tie_orig, np.iinfo(np.int64).max))
            wr, wc = np.unravel_index(winner, tile.shape)
            slot = slot_grid[r0 + wr, c0 + wc]
            out[slot] = values[slot] * coefficient
    return RedundancyScores(out, scores.variant)


def select_discarded(scores: RedundancyScores, n_discard: int) -> SourceTargetSplit:
    """Split visual positions into the ``n_discard`` highest-scoring sources and the rest.

    Stable ranking: equal scores fall to the lower position (and the alive
    ordering is ascending in original index, so lower position means lower
    original index).
    """
    values = scores.scores
    n = values.size
    if n_discard < 0 or n_discard > n:
        raise ShapeError(f"cannot discard {n_discard} of {n} visual tokens")
    order = np.argsort(-values, kind="stable")
    source = np.sort(order[:n_discard])
    target = np.sort(order[n_discard:])
    return SourceTargetSplit(source=source, target=target)
