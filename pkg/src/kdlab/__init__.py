"""kdlab: a desk-scale knowledge-distillation laboratory.

A from-scratch micro-transformer (with its own reverse-mode autodiff engine),
TinyBERT-style distillation losses, teacher-weight-copy student
initialization, synthetic multilingual tasks, and a seeded experiment runner
for studying how initialization and distillation interact.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check
from .data import (
    Corpus,
    DatasetBundle,
    LanguagePartition,
    LanguageSpec,
    filter_corpus,
    gen_classification,
    gen_tagging,
    partition_languages,
    stratified_subset,
)
from .distill import (
    KdLossBreakdown,
    LayerMap,
    ProjectionParams,
    attention_loss,
    embedding_loss,
    hidden_loss,
    layer_map,
    make_projection,
    overall_loss,
    prediction_loss,
)
from .metrics import EvalReport, extract_spans, macro_f1, majority_baseline, span_f1
from .model import (
    EncoderModel,
    ForwardTrace,
    ModelConfig,
    forward,
    init_random,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .train import AdamW, TrainConfig, TrainRun, evaluate, steps_to_threshold, train, zero_shot_eval
from .weight_copy import CopyPlan, build_copy_plan, copy_weights, slice_bias, slice_indices, slice_matrix
