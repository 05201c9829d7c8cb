"""Token-reduction engine: filter redundant tokens, correlate their information
to preserved tokens, compress. Ships encoder-side (V) and decoder-side (L)
variants, a synthetic workload generator, a FLOPs cost model, and a CLI.
"""

from . import errors
from .attention import (
    AttentionView,
    Role,
    TokenWorkspace,
    attention_from_projections,
    build_workspace,
    cls_row,
    head_mean,
    softmax_attention,
    text_to_visual_block,
    visual_block,
)
from .compress import CompressionResult, average_compress, weighted_compress
from .correlate import (
    CorrelationPlan,
    assignments,
    correlation_l,
    correlation_v,
    fixed_k_assignments,
    many_to_one_assignments,
    thresholds,
)
from .filtering import (
    RedundancyScores,
    SourceTargetSplit,
    key_mean_equivalent,
    local_penalty,
    score_l,
    score_v,
    select_discarded,
)
from .flops import (
    CostSummary,
    DeltaReport,
    LayerCostParams,
    delta_report,
    layer_flops,
    overhead_flops,
    pipeline_cost,
    printed_delta,
    reduction_delta,
)
from .pipeline import (
    AttentionSequenceWorkload,
    Schedule,
    attention_workload_from_manifest,
    plan_schedule,
    reduce_layer_l,
    reduce_layer_v,
    replay_trace,
    run,
)
from .synth import (
    SyntheticWorkload,
    gen_attention_heads,
    gen_workload,
    plant_redundancy,
    read_workload,
    write_workload,
)
from .tensor_io import (
    ReductionConfig,
    config_from_mapping,
    config_to_mapping,
    read_config,
    read_tensor,
    read_trace,
    write_config,
    write_tensor,
    write_trace,
)
from .trace import Assignment, LayerRecord, ReductionTrace

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "errors",
    # attention
    "AttentionView",
    "Role",
    "TokenWorkspace",
    "attention_from_projections",
    "build_workspace",
    "cls_row",
    "head_mean",
    "softmax_attention",
    "text_to_visual_block",
    "visual_block",
    # filter
    "RedundancyScores",
    "SourceTargetSplit",
    "key_mean_equivalent",
    "local_penalty",
    "score_l",
    "score_v",
    "select_discarded",
    # correlate
    "CorrelationPlan",
    "assignments",
    "correlation_l",
    "correlation_v",
    "fixed_k_assignments",
    "many_to_one_assignments",
    "thresholds",
    # compress
    "CompressionResult",
    "average_compress",
    "weighted_compress",
    # flops
    "CostSummary",
    "DeltaReport",
    "LayerCostParams",
    "delta_report",
    "layer_flops",
    "overhead_flops",
    "pipeline_cost",
    "printed_delta",
    "reduction_delta",
    # pipeline
    "AttentionSequenceWorkload",
    "Schedule",
    "attention_workload_from_manifest",
    "plan_schedule",
    "reduce_layer_l",
    "reduce_layer_v",
    "replay_trace",
    "run",
    # synth
    "SyntheticWorkload",
    "gen_attention_heads",
    "gen_workload",
    "plant_redundancy",
    "read_workload",
    "write_workload",
    # io
    "ReductionConfig",
    "config_from_mapping",
    "config_to_mapping",
    "read_config",
    "read_tensor",
    "read_trace",
    "write_config",
    "write_tensor",
    "write_trace",
    # trace
    "Assignment",
    "LayerRecord",
    "ReductionTrace",
]
