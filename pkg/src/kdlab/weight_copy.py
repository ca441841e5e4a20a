"""Student initialization by transplanting teacher weights.

Student layer i (1-indexed) receives teacher layer i * (N_T / N_S); when the
student is narrower, evenly spaced rows/columns of each teacher matrix are
gathered. Embedding tables keep their vocab axis and the head keeps its class
axis; only hidden-sized axes are sliced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .model import EncoderModel, ModelConfig


class IncompatibleModelsError(ValueError):
    """Teacher/student configs cannot be connected by a copy plan."""


def slice_indices(d_teacher: int, d_student: int) -> list[int]:
    """Evenly spaced indices floor(j * d_teacher / d_student), j = 0..d_student-1."""
    if d_teacher < 1 or d_student < 1:
        raise ValueError("dimensions must be >= 1")
    if d_student > d_teacher:
        raise ValueError(f"student dim {d_student} exceeds teacher dim {d_teacher}")
    return [j * d_teacher // d_student for j in range(d_student)]


def slice_matrix(w: Tensor, rows: list[int], cols: list[int]) -> Tensor:
    """Gather the submatrix at the given row/column indices."""
    if w.data.ndim != 2:
        raise ValueError(f"slice_matrix expects a 2D tensor, got shape {w.shape}")
    _check_indices(rows, w.shape[0])
    _check_indices(cols, w.shape[1])
    return Tensor(w.data[np.ix_(rows, cols)].copy())


def slice_bias(b: Tensor, rows: list[int]) -> Tensor:
    """Gather a subvector at the given indices."""
    if b.data.ndim != 1:
        raise ValueError(f"slice_bias expects a 1D tensor, got shape {b.shape}")
    _check_indices(rows, b.shape[0])
    return Tensor(b.data[np.asarray(rows)].copy())


def _check_indices(indices: list[int], bound: int) -> None:
    for idx in indices:
        if not 0 <= idx < bound:
            raise IndexError(f"index {idx} out of range [0, {bound})")


@dataclass(frozen=True)
class CopyPlan:
    """Which teacher pieces land where in the student.

    layer_pairs are 1-indexed (student_layer, teacher_layer); hidden/ffn index
    lists are None when the dimension is unchanged. full_block=False restricts
    per-layer copying to the attention projections (FFN and norms stay as
    initialized), for probing what the block copy contributes.
    """

    layer_pairs: tuple[tuple[int, int], ...]
    hidden_indices: tuple[int, ...] | None = None
    ffn_indices: tuple[int, ...] | None = None
    copy_embedding: bool = True
    copy_head: bool = True
    full_block: bool = True


def build_copy_plan(
    teacher_cfg: ModelConfig,
    student_cfg: ModelConfig,
    *,
    copy_embedding: bool = True,
    copy_head: bool = True,
    full_block: bool = True,
) -> CopyPlan:
    """Plan the teacher-to-student transplant, or raise naming the offending dimension.

    copy_head=False relaxes the task/class checks so an encoder can be copied
    across heads of different sizes (e.g. from a pretext-trained base).
    """
    nt, ns = teacher_cfg.n_layers, student_cfg.n_layers
    if ns > nt or nt % ns:
        raise IncompatibleModelsError(f"n_layers: teacher {nt} not an integer multiple of student {ns}")
    dt, ds = teacher_cfg.hidden_dim, student_cfg.hidden_dim
    if ds > dt or dt % ds:
        raise IncompatibleModelsError(f"hidden_dim: teacher {dt} not an integer multiple of student {ds}")
    ft, fs = teacher_cfg.ffn_dim, student_cfg.ffn_dim
    if fs > ft or ft % fs:
        raise IncompatibleModelsError(f"ffn_dim: teacher {ft} not an integer multiple of student {fs}")
    ht, hs = teacher_cfg.n_heads, student_cfg.n_heads
    if hs != ht and (hs > ht or ht % hs):
        raise IncompatibleModelsError(f"n_heads: teacher {ht} incompatible with student {hs}")
    if teacher_cfg.vocab_size != student_cfg.vocab_size:
        raise IncompatibleModelsError(
            f"vocab_size: teacher {teacher_cfg.vocab_size} != student {student_cfg.vocab_size}")
    if teacher_cfg.max_seq_len != student_cfg.max_seq_len:
        raise IncompatibleModelsError(
            f"max_seq_len: teacher {teacher_cfg.max_seq_len} != student {student_cfg.max_seq_len}")
    if copy_head:
        if teacher_cfg.task != student_cfg.task:
            raise IncompatibleModelsError(f"task: teacher {teacher_cfg.task} != student {student_cfg.task}")
        if teacher_cfg.n_classes != student_cfg.n_classes:
            raise IncompatibleModelsError(
                f"n_classes: teacher {teacher_cfg.n_classes} != student {student_cfg.n_classes}")

    ratio = nt // ns
    return CopyPlan(
        layer_pairs=tuple((i, i * ratio) for i in range(1, ns + 1)),
        hidden_indices=None if ds == dt else tuple(slice_indices(dt, ds)),
        ffn_indices=None if fs == ft else tuple(slice_indices(ft, fs)),
        copy_embedding=copy_embedding,
        copy_head=copy_head,
        full_block=full_block,
    )


def copy_weights(teacher: EncoderModel, student: EncoderModel, plan: CopyPlan) -> EncoderModel:
    """Return a copy of the student with the planned teacher parameters transplanted."""
    _validate_plan(teacher, student, plan)
    hid = list(plan.hidden_indices) if plan.hidden_indices is not None else None
    ffn = list(plan.ffn_indices) if plan.ffn_indices is not None else None
    out = student.clone()
    tp = teacher.params

    def assign(student_name: str, array: np.ndarray) -> None:
        out.params[student_name].data = np.array(array, dtype=np.float64)

    def gather(array: np.ndarray, rows: list[int] | None, cols: list[int] | None) -> np.ndarray:
        if rows is not None:
            array = array[np.asarray(rows)]
        if cols is not None:
            array = array[:, np.asarray(cols)]
        return array

    for s_layer, t_layer in plan.layer_pairs:
        src, dst = f"layer.{t_layer - 1}", f"layer.{s_layer - 1}"
        for name in ("q", "k", "v", "o"):
            assign(f"{dst}.attn.{name}", gather(tp[f"{src}.attn.{name}"].data, hid, hid))
            assign(f"{dst}.attn.{name}_b", gather(tp[f"{src}.attn.{name}_b"].data, hid, None))
        if plan.full_block:
            assign(f"{dst}.ffn.w1", gather(tp[f"{src}.ffn.w1"].data, hid, ffn))
            assign(f"{dst}.ffn.w1_b", gather(tp[f"{src}.ffn.w1_b"].data, ffn, None))
            assign(f"{dst}.ffn.w2", gather(tp[f"{src}.ffn.w2"].data, ffn, hid))
            assign(f"{dst}.ffn.w2_b", gather(tp[f"{src}.ffn.w2_b"].data, hid, None))
            for name in ("gamma1", "beta1", "gamma2", "beta2"):
                assign(f"{dst}.norm.{name}", gather(tp[f"{src}.norm.{name}"].data, hid, None))

    if plan.copy_embedding:
        assign("emb.tok", gather(tp["emb.tok"].data, None, hid))
        assign("emb.pos", gather(tp["emb.pos"].data, None, hid))
    if plan.copy_head:
        assign("head.w", gather(tp["head.w"].data, hid, None))
        assign("head.b", tp["head.b"].data)
    return out


def _validate_plan(teacher: EncoderModel, student: EncoderModel, plan: CopyPlan) -> None:
    nt, ns = teacher.config.n_layers, student.config.n_layers
    students = [pair[0] for pair in plan.layer_pairs]
    if sorted(students) != list(range(1, ns + 1)):
        raise IncompatibleModelsError(f"plan must cover student layers 1..{ns} exactly once")
    for s_layer, t_layer in plan.layer_pairs:
        if not 1 <= t_layer <= nt:
            raise IncompatibleModelsError(f"teacher layer {t_layer} out of range 1..{nt}")
    for indices, want, label in (
        (plan.hidden_indices, student.config.hidden_dim, "hidden"),
        (plan.ffn_indices, student.config.ffn_dim, "ffn"),
    ):
        if indices is None:
            continue
        if len(indices) != want:
            raise IncompatibleModelsError(f"{label} index list has {len(indices)} entries, expected {want}")
        if list(indices) != sorted(set(indices)):
            raise IncompatibleModelsError(f"{label} index list must be strictly increasing")
    if plan.hidden_indices is None and teacher.config.hidden_dim != student.config.hidden_dim:
        raise IncompatibleModelsError("hidden dims differ but plan has no hidden index list")
    if plan.ffn_indices is None and teacher.config.ffn_dim != student.config.ffn_dim:
        raise IncompatibleModelsError("ffn dims differ but plan has no ffn index list")
