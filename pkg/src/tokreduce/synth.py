"""Seeded synthetic workloads: embeddings, per-layer projections, planted redundancy.

Everything is a pure function of (seed, parameters). Embeddings are quantized
to float32 at generation time so the in-memory path and the tensor-file path
see bit-identical values. Per-layer projection matrices are regenerated on
demand from stored per-layer seeds; they never touch disk.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any

import numpy as np

from .attention import (
    AttentionView,
    TokenWorkspace,
    attention_from_projections,
    build_workspace,
    matmul,
    softmax_attention,
)
from .errors import ConfigError, ShapeError
from .tensor_io import read_tensor, write_tensor

MANIFEST_NAME = "workload.json"

# Correlation between the query and key projections of a synthetic layer.
# Trained encoders produce similarity-sensitive attention (near-duplicate
# tokens attend to each other); independent Gaussian projections do not, which
# would make planted redundancy statistically invisible to the filter stage.
QK_CORRELATION = 0.6


@dataclasses.dataclass(frozen=True)
class SyntheticWorkload:
    """Initial embeddings plus the seeds that rebuild each layer's projections."""

    embeddings: np.ndarray  # (tokens, width) float32-valued
    n_visual: int
    m_text: int
    width: int
    num_layers: int
    grid: tuple[int, int]
    include_cls: bool
    seed: int
    layer_seeds: tuple[int, ...]
    planted: tuple[int, ...] = ()

    def initial_workspace(self) -> TokenWorkspace:
        return build_workspace(
            self.embeddings.astype(np.float64),
            n_visual=self.n_visual,
            n_text=self.m_text,
            grid_shape=self.grid,
            include_cls=self.include_cls,
        )

    def projections(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """Query/key projection pair for one layer.

        Entries are Gaussian, scaled to keep logits O(1); the key projection
        is correlated with the query projection (see ``QK_CORRELATION``).
        """
        if not 0 <= layer < self.num_layers:
            raise ShapeError(f"layer {layer} outside 0..{self.num_layers - 1}")
        rng = np.random.default_rng(self.layer_seeds[layer])
        scale = self.width ** -0.5
        wq = rng.standard_normal((self.width, self.width)) * scale
        w_extra = rng.standard_normal((self.width, self.width)) * scale
        wk = QK_CORRELATION * wq + np.sqrt(1.0 - QK_CORRELATION**2) * w_extra
        return wq, wk

    def layer_inputs(
        self, layer: int, workspace: TokenWorkspace, causal: bool
    ) -> tuple[AttentionView, np.ndarray]:
        """Attention recomputed from the CURRENT embeddings, plus the layer's keys.

        Compression feeds back into later layers' attention, mirroring a real
        encoder's data flow.
        """
        wq, wk = self.projections(layer)
        view = attention_from_projections(workspace, wq, wk, causal)
        keys = matmul(workspace.embeddings, wk)
        return view, keys


def gen_workload(
    n_visual: int,
    m_text: int,
    width: int,
    num_layers: int,
    seed: int,
    grid: tuple[int, int],
    include_cls: bool = True,
) -> SyntheticWorkload:
    """Unit-Gaussian token embeddings with independently seeded layer projections."""
    rows, cols = grid
    if rows * cols != n_visual:
        raise ShapeError(f"grid {rows}x{cols} does not hold {n_visual} visual tokens")
    if width < 1:
        raise ShapeError(f"width must be >= 1, got {width}")
    if num_layers < 1:
        raise ShapeError(f"num_layers must be >= 1, got {num_layers}")
    root = np.random.SeedSequence(seed)
    emb_ss, layer_ss = root.spawn(2)
    total = (1 if include_cls else 0) + n_visual + m_text
    emb = (
        np.random.default_rng(emb_ss)
        .standard_normal((total, width))
        .astype(np.float32)
    )
    layer_seeds = tuple(
        int(s) for s in layer_ss.generate_state(num_layers, dtype=np.uint64)
    )
    return SyntheticWorkload(
        embeddings=emb,
        n_visual=n_visual,
        m_text=m_text,
        width=width,
        num_layers=num_layers,
        grid=(rows, cols),
        include_cls=include_cls,
        seed=seed,
        layer_seeds=layer_seeds,
    )


def plant_redundancy(
    workload: SyntheticWorkload,
    duplicate_count: int,
    noise_sigma: float,
    seed: int,
) -> SyntheticWorkload:
    """Replace some visual tokens with near-copies of randomly chosen survivors.

    The replaced indices (original token indices) are recorded as ground truth
    so harnesses can measure whether the filter stage finds them.
    """
    if duplicate_count >= workload.n_visual:
        raise ShapeError(
            f"cannot plant {duplicate_count} duplicates among {workload.n_visual} visual tokens"
        )
    if duplicate_count == 0:
        return workload
    rng = np.random.default_rng(seed)
    offset = 1 if workload.include_cls else 0
    chosen = rng.choice(workload.n_visual, size=duplicate_count, replace=False)
    chosen.sort()
    survivors = np.setdiff1d(np.arange(workload.n_visual), chosen)
    emb = workload.embeddings.copy()
    for k in chosen:
        donor = int(survivors[rng.integers(survivors.size)])
        noise = rng.standard_normal(workload.width) * noise_sigma
        emb[offset + k] = (
            emb[offset + donor].astype(np.float64) + noise
        ).astype(np.float32)
    planted = tuple(int(offset + k) for k in chosen)
    return dataclasses.replace(workload, embeddings=emb, planted=planted)


def gen_attention_heads(
    n_tokens: int, n_heads: int, width: int, seed: int
) -> np.ndarray:
    """A seeded (heads, N, N) stack of row-stochastic maps, as float32.

    Handy for exercising multi-head file round-trips and head averaging
    without running the pipeline.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_tokens, width))
    out = np.empty((n_heads, n_tokens, n_tokens), dtype=np.float32)
    scale = width ** -0.5
    for h in range(n_heads):
        wq = rng.standard_normal((width, width)) * scale
        wk = rng.standard_normal((width, width)) * scale
        out[h] = softmax_attention(x, wq, wk, causal=False).astype(np.float32)
    return out


# ---------------------------------------------------------------------------
# manifest round-trip (tensors + JSON sidecar)
# ---------------------------------------------------------------------------


def write_workload(directory: str | Path, workload: SyntheticWorkload) -> Path:
    """Write embeddings tensor + manifest JSON; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    emb_name = "embeddings.npy"
    write_tensor(directory / emb_name, workload.embeddings.astype(np.float32))
    manifest = {
        "kind": "synthetic",
        "n_visual": workload.n_visual,
        "m_text": workload.m_text,
        "width": workload.width,
        "num_layers": workload.num_layers,
        "grid": list(workload.grid),
        "include_cls": workload.include_cls,
        "seed": workload.seed,
        "layer_seeds": list(workload.layer_seeds),
        "planted": list(workload.planted),
        "embeddings": emb_name,
    }
    path = directory / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def read_workload(path: str | Path) -> SyntheticWorkload:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj: dict[str, Any] = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read workload manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"workload manifest {path} is not valid JSON: {exc}") from exc
    if obj.get("kind") != "synthetic":
        raise ConfigError(f"unsupported workload kind {obj.get('kind')!r}")
    try:
        emb = read_tensor(path.parent / obj["embeddings"])
        if emb.ndim != 2 or emb.shape[1] != int(obj["width"]):
            raise ShapeError(
                f"embedding tensor {emb.shape} disagrees with manifest width {obj['width']}"
            )
        return SyntheticWorkload(
            embeddings=emb,
            n_visual=int(obj["n_visual"]),
            m_text=int(obj["m_text"]),
            width=int(obj["width"]),
            num_layers=int(obj["num_layers"]),
            grid=(int(obj["grid"][0]), int(obj["grid"][1])),
            include_cls=bool(obj["include_cls"]),
            seed=int(obj["seed"]),
            layer_seeds=tuple(int(s) for s in obj["layer_seeds"]),
            planted=tuple(int(p) for p in obj.get("planted", [])),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"malformed workload manifest {path}: {exc}") from exc
