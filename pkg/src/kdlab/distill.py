"""Distillation objective: attention, hidden, embedding, and prediction losses.

All four are MSE terms between student and mapped teacher trace quantities;
the overall training loss adds cross-entropy against the gold labels. When
the student is narrower, a learnable projection lifts student states to the
teacher width (one shared matrix for hidden states, one for embeddings);
when widths match the projection is omitted entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ForwardTrace, ModelConfig
from .weight_copy import slice_indices


@dataclass(frozen=True)
class LayerMap:
    """1-indexed (student_layer, teacher_layer) pairs, k = i * N_T / N_S."""

    pairs: tuple[tuple[int, int], ...]


def layer_map(n_student: int, n_teacher: int) -> LayerMap:
    if n_student < 1 or n_teacher < 1:
        raise ValueError("layer counts must be >= 1")
    if n_student > n_teacher or n_teacher % n_student:
        raise ValueError(f"teacher layers {n_teacher} not an integer multiple of student layers {n_student}")
    ratio = n_teacher // n_student
    return LayerMap(pairs=tuple((i, i * ratio) for i in range(1, n_student + 1)))


@dataclass
class ProjectionParams:
    """Learnable width-matching projections, None when widths already match.

    Initialized as selection matrices (row j is the unit vector at the j-th
    evenly spaced teacher index) so a slice-copied student starts with its
    projected states landing on the coordinates they were copied from.
    """

    w_hidden: Tensor | None = None
    w_embedding: Tensor | None = None

    def trainable(self) -> list[tuple[str, Tensor]]:
        out = []
        if self.w_hidden is not None:
            out.append(("proj.hidden", self.w_hidden))
        if self.w_embedding is not None:
            out.append(("proj.embedding", self.w_embedding))
        return out


def make_projection(student_cfg: ModelConfig, teacher_cfg: ModelConfig) -> ProjectionParams:
    ds, dt = student_cfg.hidden_dim, teacher_cfg.hidden_dim
    if ds == dt:
        return ProjectionParams()
    if ds > dt:
        raise ValueError(f"student hidden_dim {ds} exceeds teacher hidden_dim {dt}")
    selection = np.zeros((ds, dt))
    for j, idx in enumerate(slice_indices(dt, ds)):
        selection[j, idx] = 1.0
    return ProjectionParams(
        w_hidden=Tensor(selection.copy(), requires_grad=True),
        w_embedding=Tensor(selection.copy(), requires_grad=True),
    )


def _project(x: Tensor, w: Tensor | None) -> Tensor:
    return x if w is None else ad.matmul(x, w)


def _check_traces(trace_s: ForwardTrace, trace_t: ForwardTrace, lmap: LayerMap) -> None:
    n_s, n_t = len(trace_s.attn_scores), len(trace_t.attn_scores)
    for s_layer, t_layer in lmap.pairs:
        if not 1 <= s_layer <= n_s or not 1 <= t_layer <= n_t:
            raise ValueError(f"layer map pair ({s_layer}, {t_layer}) outside traces of {n_s}/{n_t} layers")


def attention_loss(trace_s: ForwardTrace, trace_t: ForwardTrace, lmap: LayerMap) -> Tensor:
    """Mean over student layers and heads of MSE between mapped score matrices."""
    _check_traces(trace_s, trace_t, lmap)
    total = None
    for s_layer, t_layer in lmap.pairs:
        a_s = trace_s.attn_scores[s_layer - 1]
        a_t = trace_t.attn_scores[t_layer - 1]
        if a_s.shape != a_t.shape:
            raise ValueError(f"attention score shapes differ: student {a_s.shape} vs teacher {a_t.shape}")
        term = ad.mse(a_s, a_t)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(lmap.pairs))


def hidden_loss(trace_s: ForwardTrace, trace_t: ForwardTrace, lmap: LayerMap, proj: ProjectionParams) -> Tensor:
    """Mean over student layers of MSE between (projected) student and mapped teacher hiddens."""
    _check_traces(trace_s, trace_t, lmap)
    total = None
    for s_layer, t_layer in lmap.pairs:
        h_s = _project(trace_s.hidden[s_layer - 1], proj.w_hidden)
        h_t = trace_t.hidden[t_layer - 1]
        term = ad.mse(h_s, h_t)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(lmap.pairs))


def embedding_loss(trace_s: ForwardTrace, trace_t: ForwardTrace, proj: ProjectionParams) -> Tensor:
    return ad.mse(_project(trace_s.emb_out, proj.w_embedding), trace_t.emb_out)


def prediction_loss(trace_s: ForwardTrace, trace_t: ForwardTrace) -> Tensor:
    """MSE over logits (token task: over every position)."""
    if trace_s.logits.shape != trace_t.logits.shape:
        raise ValueError(f"logit shapes differ: student {trace_s.logits.shape} vs teacher {trace_t.logits.shape}")
    return ad.mse(trace_s.logits, trace_t.logits)


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights; the reference objective is the unweighted sum."""

    att: float = 1.0
    hid: float = 1.0
    embd: float = 1.0
    pred: float = 1.0
    clf: float = 1.0


@dataclass
class KdLossBreakdown:
    l_att: float
    l_hid: float
    l_embd: float
    l_pred: float
    l_kd: float
    l_clf: float
    l_overall: float
    loss: Tensor = field(repr=False, compare=False)


def overall_loss(
    trace_s: ForwardTrace,
    trace_t: ForwardTrace | None,
    gold,
    lmap: LayerMap | None,
    proj: ProjectionParams | None,
    kd_enabled: bool,
    weights: LossWeights = LossWeights(),
) -> KdLossBreakdown:
    """Training loss with its logged breakdown.

    With kd_enabled the overall loss is the four distillation terms plus
    cross-entropy; without it (the plain fine-tuning baselines) it is the
    cross-entropy alone and the distillation terms are reported as 0.
    """
    targets = gold if isinstance(gold, (list, tuple, np.ndarray)) else [gold]
    l_clf = ad.cross_entropy(trace_s.logits, targets)
    if not kd_enabled:
        return KdLossBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, l_clf.item(), l_clf.item(), loss=l_clf)
    if trace_t is None or lmap is None or proj is None:
        raise ValueError("kd_enabled requires a teacher trace, a layer map, and projection params")

    l_att = attention_loss(trace_s, trace_t, lmap)
    l_hid = hidden_loss(trace_s, trace_t, lmap, proj)
    l_embd = embedding_loss(trace_s, trace_t, proj)
    l_pred = prediction_loss(trace_s, trace_t)
    loss = ad.scale(l_att, weights.att)
    loss = ad.add(loss, ad.scale(l_hid, weights.hid))
    loss = ad.add(loss, ad.scale(l_embd, weights.embd))
    loss = ad.add(loss, ad.scale(l_pred, weights.pred))
    loss = ad.add(loss, ad.scale(l_clf, weights.clf))
    l_kd = l_att.item() + l_hid.item() + l_embd.item() + l_pred.item()
    return KdLossBreakdown(
        l_att=l_att.item(),
        l_hid=l_hid.item(),
        l_embd=l_embd.item(),
        l_pred=l_pred.item(),
        l_kd=l_kd,
        l_clf=l_clf.item(),
        l_overall=loss.item(),
        loss=loss,
    )
