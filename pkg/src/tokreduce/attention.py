"""Token layout and attention-map machinery.

A :class:`TokenWorkspace` holds the live tokens of a run (embeddings plus
identity bookkeeping); an :class:`AttentionView` pairs one layer's attention
weights with the layout they were computed over. Everything here is immutable:
reduction builds successor workspaces instead of mutating.

Matrix products go through ``np.einsum`` with ``optimize=False`` on purpose:
that path accumulates in a fixed order independent of the installed BLAS, which
keeps golden traces reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .errors import MissingClsError, ShapeError

ROW_SUM_TOL = 1e-5


class Role(IntEnum):
    CLS = 0
    VISUAL = 1
    TEXT = 2


@dataclass(frozen=True)
class TokenWorkspace:
    """Live tokens with identity labels, original indices, and grid coordinates.

    ``alive`` is a mask over the ORIGINAL index space; exactly the alive tokens
    appear in ``embeddings``, in ascending original order. ``grid_pos`` holds
    (row, col) for visual tokens and (-1, -1) elsewhere.
    """

    embeddings: np.ndarray  # (n_alive, width) float64
    roles: np.ndarray  # (n_alive,) int8 Role values
    original_index: np.ndarray  # (n_alive,) int64, strictly ascending
    grid_pos: np.ndarray  # (n_alive, 2) int64
    alive: np.ndarray  # (n_original,) bool
    grid_shape: tuple[int, int]

    def __post_init__(self) -> None:
        emb = np.asarray(self.embeddings, dtype=np.float64)
        roles = np.asarray(self.roles, dtype=np.int8)
        orig = np.asarray(self.original_index, dtype=np.int64)
        grid = np.asarray(self.grid_pos, dtype=np.int64)
        alive = np.asarray(self.alive, dtype=bool)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "original_index", orig)
        object.__setattr__(self, "grid_pos", grid)
        object.__setattr__(self, "alive", alive)

        n = emb.shape[0]
        if emb.ndim != 2 or emb.shape[1] < 1:
            raise ShapeError(f"embeddings must be (tokens, width), got {emb.shape}")
        if roles.shape != (n,) or orig.shape != (n,) or grid.shape != (n, 2):
            raise ShapeError("roles / original_index / grid_pos sizes disagree with embeddings")
        if n and np.any(np.diff(orig) <= 0):
            raise ShapeError("original_index must be strictly ascending")
        if int(alive.sum()) != n or (n and not alive[orig].all()):
            raise ShapeError("alive mask must select exactly the workspace tokens")
        cls_at = np.flatnonzero(roles == Role.CLS)
        if cls_at.size > 1:
            raise ShapeError("at most one CLS token allowed")
        if cls_at.size == 1 and orig[cls_at[0]] != 0:
            raise ShapeError("CLS token must carry original index 0")
        vis = roles == Role.VISUAL
        rows, cols = self.grid_shape
        if vis.any():
            vg = grid[vis]
            if (vg < 0).any() or (vg[:, 0] >= rows).any() or (vg[:, 1] >= cols).any():
                raise ShapeError("visual grid_pos outside the grid")
            cells = vg[:, 0] * cols + vg[:, 1]
            if np.unique(cells).size != cells.size:
                raise ShapeError("two visual tokens share a grid cell")

    @property
    def width(self) -> int:
        return self.embeddings.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.embeddings.shape[0]

    def positions(self, role: Role) -> np.ndarray:
        return np.flatnonzero(self.roles == role)

    @property
    def visual_positions(self) -> np.ndarray:
        return self.positions(Role.VISUAL)

    @property
    def text_positions(self) -> np.ndarray:
        return self.positions(Role.TEXT)

    @property
    def cls_position(self) -> int | None:
        idx = self.positions(Role.CLS)
        return int(idx[0]) if idx.size else None

    @property
    def n_visual(self) -> int:
        return int((self.roles == Role.VISUAL).sum())

    @property
    def n_text(self) -> int:
        return int((self.roles == Role.TEXT).sum())

    def drop(self, positions: np.ndarray) -> "TokenWorkspace":
        """New workspace without the given (workspace-relative) rows."""
        positions = np.asarray(positions, dtype=np.int64)
        if positions.size == 0:
            return self
        keep = np.ones(self.n_tokens, dtype=bool)
        keep[positions] = False
        alive = self.alive.copy()
        alive[self.original_index[~keep]] = False
        return replace(
            self,
            embeddings=self.embeddings[keep],
            roles=self.roles[keep],
            original_index=self.original_index[keep],
            grid_pos=self.grid_pos[keep],
            alive=alive,
        )

    def with_embeddings(self, embeddings: np.ndarray) -> "TokenWorkspace":
        if embeddings.shape != self.embeddings.shape:
            raise ShapeError("replacement embeddings must keep the same shape")
        return replace(self, embeddings=np.asarray(embeddings, dtype=np.float64))


def build_workspace(
    embeddings: np.ndarray,
    n_visual: int,
    n_text: int,
    grid_shape: tuple[int, int],
    include_cls: bool,
) -> TokenWorkspace:
    """Workspace for a fresh sequence laid out [CLS?] + visual + text.

    Visual token k sits at grid cell (k // cols, k % cols), row-major.
    """
    rows, cols = grid_shape
    if rows * cols != n_visual:
        raise ShapeError(f"grid {rows}x{cols} does not hold {n_visual} visual tokens")
    total = (1 if include_cls else 0) + n_visual + n_text
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.shape[0] != total:
        raise ShapeError(f"embeddings hold {emb.shape[0]} tokens, layout needs {total}")
    roles = np.empty(total, dtype=np.int8)
    grid = np.full((total, 2), -1, dtype=np.int64)
    off = 0
    if include_cls:
        roles[0] = Role.CLS
        off = 1
    roles[off : off + n_visual] = Role.VISUAL
    roles[off + n_visual :] = Role.TEXT
    k = np.arange(n_visual)
    grid[off : off + n_visual, 0] = k // cols
    grid[off : off + n_visual, 1] = k % cols
    return TokenWorkspace(
        embeddings=emb,
        roles=roles,
        original_index=np.arange(total, dtype=np.int64),
        grid_pos=grid,
        alive=np.ones(total, dtype=bool),
        grid_shape=grid_shape,
    )


@dataclass(frozen=True)
class AttentionView:
    """One layer's attention weights plus the layout they attend over.

    Weights are (N, N) or head-stacked (H, N, N); every row must be a
    probability distribution over its permitted columns (all columns when
    bidirectional, columns <= row when causal) within ``ROW_SUM_TOL``.
    """

    weights: np.ndarray
    layout: TokenWorkspace
    causal: bool = False

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.ndim not in (2, 3):
            raise ShapeError(f"attention weights must be rank 2 or 3, got rank {w.ndim}")
        n = w.shape[-1]
        if w.shape[-2] != n:
            raise ShapeError(f"attention must be square, got {w.shape}")
        if n != self.layout.n_tokens:
            raise ShapeError(
                f"attention covers {n} tokens but layout holds {self.layout.n_tokens}"
            )
        if w.size:
            if not np.isfinite(w).all():
                raise ShapeError("attention entries must be finite")
            if w.min() < -ROW_SUM_TOL or w.max() > 1.0 + ROW_SUM_TOL:
                raise ShapeError("attention entries must lie in [0, 1]")
            flat = w.reshape(-1, n, n)
            if self.causal:
                if np.abs(np.triu(flat, k=1)).max() > ROW_SUM_TOL:
                    raise ShapeError("causal attention has mass above the diagonal")
            sums = flat.sum(axis=2)
            if np.abs(sums - 1.0).max() > ROW_SUM_TOL:
                raise ShapeError("attention rows must each sum to 1")

    @property
    def n_heads(self) -> int:
        return self.weights.shape[0] if self.weights.ndim == 3 else 1

    def _matrix(self) -> np.ndarray:
        if self.weights.ndim != 2:
            raise ShapeError("operation needs a single attention matrix; average heads first")
        return self.weights


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Fixed-order matrix product (no BLAS dispatch)."""
    return np.einsum("ij,jk->ik", a, b, optimize=False)


def softmax_attention(
    x: np.ndarray, wq: np.ndarray, wk: np.ndarray, causal: bool
) -> np.ndarray:
    """Row-softmax of the scaled query/key product for one token matrix.

    Queries and keys come from projecting ``x``; logits are scaled by the
    square root of the embedding width before the softmax. ``causal`` masks
    columns above the diagonal.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"token matrix must be non-empty (tokens, width), got {x.shape}")
    d = x.shape[1]
    if wq.shape != (d, d) or wk.shape != (d, d):
        raise ShapeError(
            f"projections must be ({d}, {d}), got {np.shape(wq)} and {np.shape(wk)}"
        )
    q = matmul(x, np.asarray(wq, dtype=np.float64))
    k = matmul(x, np.asarray(wk, dtype=np.float64))
    logits = np.einsum("id,jd->ij", q, k, optimize=False) / np.sqrt(float(d))
    if causal:
        n = x.shape[0]
        logits = np.where(np.arange(n)[None, :] > np.arange(n)[:, None], -np.inf, logits)
    logits = logits - logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits


def attention_from_projections(
    workspace: TokenWorkspace, wq: np.ndarray, wk: np.ndarray, causal: bool
) -> AttentionView:
    weights = softmax_attention(workspace.embeddings, wq, wk, causal)
    return AttentionView(weights=weights, layout=workspace, causal=causal)


def head_mean(view: AttentionView) -> AttentionView:
    """Average a head-stacked view into a single attention matrix."""
    if view.weights.ndim != 3:
        raise ShapeError(f"head_mean needs rank-3 weights, got rank {view.weights.ndim}")
    return AttentionView(
        weights=view.weights.mean(axis=0), layout=view.layout, causal=view.causal
    )


def visual_block(view: AttentionView) -> np.ndarray:
    """Visual-to-visual sub-matrix, copied verbatim (never renormalized)."""
    w = view._matrix()
    vis = view.layout.visual_positions
    return w[np.ix_(vis, vis)].copy()


def cls_row(view: AttentionView) -> np.ndarray:
    """The CLS token's attention over visual columns."""
    w = view._matrix()
    pos = view.layout.cls_position
    if pos is None:
        raise MissingClsError(
            "layout has no CLS token; use the key-mean equivalent scores instead"
        )
    return w[pos, view.layout.visual_positions].copy()


def text_to_visual_block(view: AttentionView) -> np.ndarray:
    """Text rows over visual columns; (0, N) when no text tokens exist."""
    w = view._matrix()
    txt = view.layout.text_positions
    vis = view.layout.visual_positions
    return w[np.ix_(txt, vis)].copy()
