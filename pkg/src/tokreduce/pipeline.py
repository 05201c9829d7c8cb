"""Run orchestration: schedules, per-layer reduction, traces, replay.

A run walks the layers of a workload, reducing visual tokens at each scheduled
layer and recording what happened. Workloads come in two kinds: synthetic
(attention recomputed each layer from the current embeddings with seeded
projections) and attention-sequence (per-layer attention tensors supplied, as
dumped from a real model). Both expose ``initial_workspace()`` and
``layer_inputs(layer, workspace, causal)``.
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
    build_workspace,
    cls_row,
    head_mean,
    visual_block,
    text_to_visual_block,
)
from .compress import CompressionResult, weighted_compress
from .correlate import CorrelationPlan, assignments, correlation_l, correlation_v, thresholds
from .errors import ConfigError, MissingTextError, ScheduleError, ShapeError
from .filtering import (
    RedundancyScores,
    SourceTargetSplit,
    key_mean_equivalent,
    local_penalty,
    score_l,
    score_v,
    select_discarded,
)
from .flops import CostSummary, pipeline_cost
from .tensor_io import ReductionConfig, read_tensor
from .trace import (
    Assignment,
    LayerRecord,
    ReductionTrace,
    as_float_tuple,
    as_int_tuple,
    empty_layer_record,
)

# Hidden-to-FFN width ratio assumed when summarizing run cost; the config
# carries no feed-forward width of its own.
FFN_RATIO = 4


@dataclasses.dataclass(frozen=True)
class Schedule:
    """Per-layer discard counts; zero before the start layer."""

    per_layer: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.per_layer)


def plan_schedule(
    initial_visual: int,
    *,
    keep_budget: int | None = None,
    explicit: tuple[int, ...] | list[int] | None = None,
    start_layer: int,
    num_layers: int,
) -> Schedule:
    """Build a per-layer discard plan.

    An explicit vector is validated and returned as-is. Otherwise the
    difference between the initial count and the keep budget is spread as
    evenly as possible over layers ``start_layer..num_layers-1``, earlier
    layers absorbing the remainder first.
    """
    if (keep_budget is None) == (explicit is None):
        raise ScheduleError("exactly one of keep_budget / explicit must be given")
    if num_layers < 1:
        raise ScheduleError(f"num_layers must be positive, got {num_layers}")
    if not 0 <= start_layer:
        raise ScheduleError(f"start_layer must be non-negative, got {start_layer}")
    if explicit is not None:
        vec = tuple(int(v) for v in explicit)
        if len(vec) != num_layers:
            raise ScheduleError(f"schedule has {len(vec)} entries for {num_layers} layers")
        if any(v < 0 for v in vec):
            raise ScheduleError("schedule entries must be non-negative")
        if any(v > 0 for v in vec[:start_layer]):
            raise ScheduleError(f"schedule discards before start layer {start_layer}")
        if sum(vec) > initial_visual:
            raise ScheduleError(
                f"schedule discards {sum(vec)} of {initial_visual} visual tokens"
            )
        return Schedule(vec)
    if keep_budget < 0 or keep_budget > initial_visual:
        raise ScheduleError(
            f"keep budget {keep_budget} outside 0..{initial_visual}"
        )
    total = initial_visual - keep_budget
    vec_list = [0] * num_layers
    if total:
        active = num_layers - start_layer
        if active <= 0:
            raise ScheduleError(
                f"start layer {start_layer} leaves no layers to discard {total} tokens"
            )
        base, rem = divmod(total, active)
        for i in range(active):
            vec_list[start_layer + i] = base + (1 if i < rem else 0)
    return Schedule(tuple(vec_list))


@dataclasses.dataclass(frozen=True)
class AttentionSequenceWorkload:
    """Workload driven by supplied per-layer attention tensors (file mode).

    Each layer's tensor must cover exactly the tokens alive when that layer
    runs; any drift raises a shape error instead of being silently resliced.
    """

    embeddings: np.ndarray
    n_visual: int
    m_text: int
    grid: tuple[int, int]
    include_cls: bool
    attention: tuple[np.ndarray, ...]
    keys: tuple[np.ndarray | None, ...]

    @property
    def num_layers(self) -> int:
        return len(self.attention)

    def initial_workspace(self) -> TokenWorkspace:
        return build_workspace(
            np.asarray(self.embeddings, dtype=np.float64),
            n_visual=self.n_visual,
            n_text=self.m_text,
            grid_shape=self.grid,
            include_cls=self.include_cls,
        )

    def layer_inputs(
        self, layer: int, workspace: TokenWorkspace, causal: bool
    ) -> tuple[AttentionView, np.ndarray | None]:
        arr = self.attention[layer]
        if arr.shape[-1] != workspace.n_tokens:
            raise ShapeError(
                f"layer {layer} attention covers {arr.shape[-1]} tokens but "
                f"{workspace.n_tokens} are alive"
            )
        view = AttentionView(
            weights=np.asarray(arr, dtype=np.float64), layout=workspace, causal=causal
        )
        keys = self.keys[layer]
        if keys is not None and keys.shape[-2] != workspace.n_tokens:
            raise ShapeError(
                f"layer {layer} keys cover {keys.shape[-2]} tokens but "
                f"{workspace.n_tokens} are alive"
            )
        return view, None if keys is None else np.asarray(keys, dtype=np.float64)


def attention_workload_from_manifest(path: str | Path) -> AttentionSequenceWorkload:
    """Load an attention-sequence workload from a manifest JSON + tensor files."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj: dict[str, Any] = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read workload manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"workload manifest {path} is not valid JSON: {exc}") from exc
    if obj.get("kind") != "attention":
        raise ConfigError(f"unsupported workload kind {obj.get('kind')!r}")
    try:
        base = path.parent
        attention = []
        keys: list[np.ndarray | None] = []
        for entry in obj["layers"]:
            attention.append(read_tensor(base / entry["attention"]))
            keys.append(read_tensor(base / entry["keys"]) if entry.get("keys") else None)
        return AttentionSequenceWorkload(
            embeddings=read_tensor(base / obj["embeddings"]),
            n_visual=int(obj["n_visual"]),
            m_text=int(obj["m_text"]),
            grid=(int(obj["grid"][0]), int(obj["grid"][1])),
            include_cls=bool(obj["include_cls"]),
            attention=tuple(attention),
            keys=tuple(keys),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"malformed workload manifest {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# per-layer reduction
# ---------------------------------------------------------------------------


def _single_head(view: AttentionView) -> AttentionView:
    return head_mean(view) if view.weights.ndim == 3 else view


def _fold_and_drop(
    workspace: TokenWorkspace,
    split: SourceTargetSplit,
    plan: CorrelationPlan | None,
) -> tuple[TokenWorkspace, CompressionResult | None]:
    vis = workspace.visual_positions
    src_rows = vis[split.source]
    if plan is None:  # no targets left: pure prune
        return workspace.drop(src_rows), None
    tgt_rows = vis[split.target]
    result = weighted_compress(
        workspace.embeddings[tgt_rows], workspace.embeddings[src_rows], plan
    )
    emb = workspace.embeddings.copy()
    emb[tgt_rows] = result.updated_targets
    return workspace.with_embeddings(emb).drop(src_rows), result


def _layer_record(
    layer: int,
    variant: str,
    penalty_applied: bool,
    used_text: bool,
    workspace: TokenWorkspace,
    ranked: RedundancyScores,
    split: SourceTargetSplit,
    plan: CorrelationPlan | None,
    result: CompressionResult | None,
) -> LayerRecord:
    vis_orig = workspace.original_index[workspace.visual_positions]
    src_orig = vis_orig[split.source]
    tgt_orig = vis_orig[split.target]
    assigns = []
    if plan is not None:
        for i, (cols, w) in enumerate(zip(plan.outgoing, plan.weights)):
            assigns.append(
                Assignment(
                    source=int(src_orig[i]),
                    targets=as_int_tuple(tgt_orig[cols]),
                    weights=as_float_tuple(w),
                )
            )
    else:
        assigns = [Assignment(int(s), (), ()) for s in src_orig]
    received_targets: list[int] = []
    received_mass: list[float] = []
    if result is not None:
        for j, (srcs, _) in enumerate(result.provenance):
            if srcs.size:
                received_targets.append(int(tgt_orig[j]))
                received_mass.append(float(result.received_mass[j]))
    return LayerRecord(
        layer=layer,
        variant=variant,
        penalty_applied=penalty_applied,
        used_text=used_text,
        score_tokens=as_int_tuple(vis_orig),
        scores=as_float_tuple(ranked.scores),
        discarded=as_int_tuple(src_orig),
        assignments=tuple(assigns),
        received_targets=tuple(received_targets),
        received_mass=tuple(received_mass),
    )


def reduce_layer_v(
    workspace: TokenWorkspace,
    view: AttentionView,
    keys: np.ndarray | None,
    config: ReductionConfig,
    n_discard: int,
) -> tuple[TokenWorkspace, LayerRecord]:
    """Encoder-side step: score, penalize, select, correlate, fold, drop.

    The layer index on the returned record is 0; ``run`` restamps it.
    """
    if n_discard == 0:
        return workspace, empty_layer_record(0, "V")
    single = _single_head(view)
    a_vv = visual_block(single)
    if config.cls_mode == "cls_row":
        anchor = cls_row(single)
    else:
        if keys is None:
            raise ShapeError("cls_mode key_mean_equivalent requires key vectors")
        anchor = key_mean_equivalent(keys, workspace)
    raw = score_v(a_vv, anchor, config.lam)
    ranked = local_penalty(raw, workspace, config.window_size, config.penalty_coefficient)
    split = select_discarded(ranked, n_discard)
    plan = None
    if split.n_target > 0:
        c = correlation_v(a_vv, split)
        plan = assignments(c, thresholds(c, config.epsilon))
    reduced, result = _fold_and_drop(workspace, split, plan)
    record = _layer_record(
        0, "V", True, False, workspace, ranked, split, plan, result
    )
    return reduced, record


def reduce_layer_l(
    workspace: TokenWorkspace,
    view: AttentionView,
    config: ReductionConfig,
    n_discard: int,
) -> tuple[TokenWorkspace, LayerRecord]:
    """Decoder-side step: no local penalty, text tokens never discarded.

    The layer index on the returned record is 0; ``run`` restamps it.
    """
    if workspace.n_text == 0:
        raise MissingTextError("decoder-side reduction requires text tokens")
    if n_discard == 0:
        return workspace, empty_layer_record(0, "L")
    single = _single_head(view)
    a_vv = visual_block(single)
    a_tv = text_to_visual_block(single)
    ranked = score_l(a_vv, a_tv, config.beta)
    split = select_discarded(ranked, n_discard)
    plan = None
    if split.n_target > 0:
        c = correlation_l(a_vv, a_tv, split, config.gamma)
        plan = assignments(c, thresholds(c, config.epsilon))
    reduced, result = _fold_and_drop(workspace, split, plan)
    record = _layer_record(
        0, "L", False, True, workspace, ranked, split, plan, result
    )
    return reduced, record


# ---------------------------------------------------------------------------
# whole-run driver
# ---------------------------------------------------------------------------


def run(
    workload: Any, config: ReductionConfig
) -> tuple[TokenWorkspace, ReductionTrace, dict[str, Any]]:
    """Reduce a workload layer by layer; returns final workspace, trace, summary."""
    workspace = workload.initial_workspace()
    if workspace.n_visual != config.initial_visual:
        raise ConfigError(
            f"config grid {config.grid_rows}x{config.grid_cols} expects "
            f"{config.initial_visual} visual tokens, workload has {workspace.n_visual}"
        )
    if workload.num_layers != config.num_layers:
        raise ConfigError(
            f"config has {config.num_layers} layers, workload provides {workload.num_layers}"
        )
    schedule = plan_schedule(
        workspace.n_visual,
        keep_budget=config.keep_budget,
        explicit=config.per_layer_discard,
        start_layer=config.start_layer,
        num_layers=config.num_layers,
    )
    causal = config.variant == "L"
    initial = _count_tokens(workspace)
    records: list[LayerRecord] = []
    for layer, n_discard in enumerate(schedule.per_layer):
        before = workspace.n_visual
        view, keys = workload.layer_inputs(layer, workspace, causal)
        if config.variant == "V":
            workspace, record = reduce_layer_v(workspace, view, keys, config, n_discard)
        else:
            workspace, record = reduce_layer_l(workspace, view, config, n_discard)
        if workspace.n_visual != before - n_discard:
            raise ShapeError(
                f"layer {layer}: token ledger broken "
                f"({before} - {n_discard} != {workspace.n_visual})"
            )
        records.append(dataclasses.replace(record, layer=layer))
    trace = ReductionTrace(tuple(records))
    summary = _summarize(config, schedule, initial, workspace)
    return workspace, trace, summary


def _count_tokens(workspace: TokenWorkspace) -> dict[str, int]:
    return {
        "total": workspace.n_tokens,
        "visual": workspace.n_visual,
        "text": workspace.n_text,
        "cls": 1 if workspace.cls_position is not None else 0,
    }


def _summarize(
    config: ReductionConfig,
    schedule: Schedule,
    initial: dict[str, int],
    final_ws: TokenWorkspace,
) -> dict[str, Any]:
    d = final_ws.width
    cost: CostSummary = pipeline_cost(
        schedule.per_layer,
        n_visual=initial["visual"],
        m_text=initial["text"],
        d=d,
        h_ffn=FFN_RATIO * d,
        variant=config.variant,
    )
    return {
        "variant": config.variant,
        "num_layers": config.num_layers,
        "grid": [config.grid_rows, config.grid_cols],
        "first_visual_index": initial["cls"],
        "seed": config.seed,
        "schedule": list(schedule.per_layer),
        "initial": initial,
        "final": _count_tokens(final_ws),
        "flops_params": {"d": d, "h_ffn": FFN_RATIO * d, "m_text": initial["text"]},
        "flops": cost.to_json_dict(),
    }


# ---------------------------------------------------------------------------
# trace replay
# ---------------------------------------------------------------------------


def replay_trace(workspace: TokenWorkspace, trace: ReductionTrace) -> TokenWorkspace:
    """Re-apply a trace's folds and drops to the same initial workspace.

    Uses only the recorded assignments and weights, so agreement with the live
    run's final embeddings certifies the trace is a complete account.
    """
    for rec in trace.layers:
        if not rec.discarded:
            continue
        pos_of = {int(o): p for p, o in enumerate(workspace.original_index)}
        try:
            src_rows = np.array([pos_of[o] for o in rec.discarded], dtype=np.int64)
            incoming: dict[int, list[tuple[int, float]]] = {}
            for a in rec.assignments:
                s_row = pos_of[a.source]
                for t, w in zip(a.targets, a.weights):
                    incoming.setdefault(pos_of[t], []).append((s_row, w))
        except KeyError as exc:
            raise ShapeError(
                f"trace references token {exc} not alive at layer {rec.layer}"
            ) from None
        emb = workspace.embeddings
        new_emb = emb.copy()
        for t_row, pairs in incoming.items():
            srcs = np.array([p[0] for p in pairs], dtype=np.int64)
            w = np.array([p[1] for p in pairs], dtype=np.float64)
            contrib = np.einsum("s,sd->d", w, emb[srcs], optimize=False)
            new_emb[t_row] = (emb[t_row] + contrib) / (1.0 + float(w.sum()))
        workspace = workspace.with_embeddings(new_emb).drop(src_rows)
    return workspace
