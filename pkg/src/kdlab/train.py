"""AdamW, the fine-tuning/distillation loop, and convergence instrumentation.

The loop is deterministic per seed: one generator drives shuffling and
dropout, dev evaluations never touch it, and gradient reduction over a batch
follows batch order. The teacher (when distilling) is frozen; its traces are
computed in evaluation mode and cached for small corpora.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Corpus
from .distill import KdLossBreakdown, LayerMap, LossWeights, ProjectionParams, layer_map, make_projection, overall_loss
from .metrics import EvalReport, macro_f1, span_f1
from .model import TASK_SEQUENCE, EncoderModel, ModelConfig, ForwardTrace, forward, init_random, predict
from .weight_copy import build_copy_plan, copy_weights

TEACHER_TRACE_CACHE_LIMIT = 5000


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    dropout: float = 0.1
    kd_enabled: bool = False
    eval_steps: int = 50
    seed: int = 0
    linear_decay: bool = False
    loss_weights: LossWeights = field(default_factory=LossWeights)


class AdamW:
    """Decoupled-weight-decay Adam over named parameter tensors."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 5e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in params]
        self.v = [np.zeros_like(p.data) for _, p in params]

    def step(self, lr_scale: float = 1.0) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        lr = self.lr * lr_scale
        for i, (name, p) in enumerate(self.params):
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(grad).all():
                raise FloatingPointError(f"non-finite gradient in parameter {name!r} at step {self.t}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= lr * (m_hat / (np.sqrt(v_hat) + self.eps))
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


@dataclass
class TrainRun:
    loss_curve: list[tuple[int, KdLossBreakdown]]
    dev_curve: list[tuple[int, EvalReport]]
    best_step: int
    best_score: float
    best_state: dict[str, np.ndarray]
    seed: int
    n_steps: int


def evaluate(model: EncoderModel, corpus: Corpus, tag_names: tuple[str, ...] | None = None) -> EvalReport:
    """Macro F1 (sequence task) or entity-span F1 (token task) on one corpus."""
    if not corpus.examples:
        raise ValueError("evaluate: empty corpus")
    if model.config.task == TASK_SEQUENCE:
        gold = [ex.label for ex in corpus.examples]
        pred = [predict(model, ex.tokens) for ex in corpus.examples]
        return macro_f1(gold, pred)
    if tag_names is None:
        raise ValueError("token-task evaluation needs tag_names")
    gold_tags = [list(ex.tags) for ex in corpus.examples]
    pred_tags = [[tag_names[i] for i in predict(model, ex.tokens)] for ex in corpus.examples]
    return span_f1(gold_tags, pred_tags)


def _gold_targets(corpus: Corpus, task: str, tag_names: tuple[str, ...] | None) -> list:
    if task == TASK_SEQUENCE:
        return [ex.label for ex in corpus.examples]
    if tag_names is None:
        raise ValueError("token-task training needs tag_names")
    index = {name: i for i, name in enumerate(tag_names)}
    return [[index[tag] for tag in ex.tags] for ex in corpus.examples]


class _TeacherTraces:
    """Eval-mode teacher traces, cached when the corpus is small enough."""

    def __init__(self, teacher: EncoderModel, cache_limit: int = TEACHER_TRACE_CACHE_LIMIT):
        self.teacher = teacher
        self.cache_limit = cache_limit
        self.cache: dict[int, ForwardTrace] = {}

    def get(self, index: int, tokens) -> ForwardTrace:
        trace = self.cache.get(index)
        if trace is None:
            trace = forward(self.teacher, tokens)
            if len(self.cache) < self.cache_limit:
                self.cache[index] = trace
        return trace


def train(
    student: EncoderModel,
    train_corpus: Corpus,
    dev_corpus: Corpus,
    config: TrainConfig,
    teacher: EncoderModel | None = None,
    tag_names: tuple[str, ...] | None = None,
) -> TrainRun:
    """Mini-batch fine-tuning with periodic dev evaluation and best-checkpoint selection.

    With kd_enabled a frozen teacher is required and each step's loss is the
    distillation objective plus cross-entropy; without it the teacher must be
    omitted and the loop reduces to plain fine-tuning.
    """
    if not train_corpus.examples:
        raise ValueError("train: empty training corpus")
    if config.kd_enabled != (teacher is not None):
        raise ValueError("teacher must be supplied exactly when kd_enabled")

    lmap: LayerMap | None = None
    proj: ProjectionParams | None = None
    traces: _TeacherTraces | None = None
    trainable = student.parameters()
    if teacher is not None:
        teacher.set_requires_grad(False)
        lmap = layer_map(student.config.n_layers, teacher.config.n_layers)
        proj = make_projection(student.config, teacher.config)
        trainable = trainable + proj.trainable()
        traces = _TeacherTraces(teacher)

    optimizer = AdamW(trainable, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                      eps=config.eps, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    examples = train_corpus.examples
    golds = _gold_targets(train_corpus, student.config.task, tag_names)
    n = len(examples)
    total_steps = max(1, config.epochs * ((n + config.batch_size - 1) // config.batch_size))

    loss_curve: list[tuple[int, KdLossBreakdown]] = []
    dev_curve: list[tuple[int, EvalReport]] = []
    best_step, best_score = 0, -1.0
    best_state = student.state()
    step = 0

    def run_dev() -> None:
        nonlocal best_step, best_score, best_state
        report = evaluate(student, dev_corpus, tag_names)
        dev_curve.append((step, report))
        if report.score > best_score:
            best_step, best_score, best_state = step, report.score, student.state()

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            optimizer.zero_grad()
            sums = np.zeros(7)
            for idx in batch:
                ex = examples[int(idx)]
                trace_s = forward(student, ex.tokens, dropout=config.dropout, rng=rng)
                trace_t = traces.get(int(idx), ex.tokens) if traces is not None else None
                breakdown = overall_loss(
                    trace_s, trace_t, golds[int(idx)],
                    lmap, proj, config.kd_enabled, config.loss_weights,
                )
                ad.backward(breakdown.loss)
                sums += (breakdown.l_att, breakdown.l_hid, breakdown.l_embd,
                         breakdown.l_pred, breakdown.l_kd, breakdown.l_clf, breakdown.l_overall)
            for _, p in trainable:
                if p.grad is not None:
                    p.grad /= len(batch)
            step += 1
            lr_scale = 1.0 - (step - 1) / total_steps if config.linear_decay else 1.0
            optimizer.step(lr_scale=lr_scale)
            mean = sums / len(batch)
            loss_curve.append((step, KdLossBreakdown(
                l_att=mean[0], l_hid=mean[1], l_embd=mean[2], l_pred=mean[3],
                l_kd=mean[4], l_clf=mean[5], l_overall=mean[6],
                loss=Tensor(np.asarray(mean[6])),
            )))
            if config.eval_steps > 0 and step % config.eval_steps == 0:
                run_dev()

    if not dev_curve or dev_curve[-1][0] != step:
        run_dev()
    return TrainRun(
        loss_curve=loss_curve,
        dev_curve=dev_curve,
        best_step=best_step,
        best_score=best_score,
        best_state=best_state,
        seed=config.seed,
        n_steps=step,
    )


def steps_to_threshold(run: TrainRun, threshold: float, window: int = 10) -> int | None:
    """First step whose trailing-window mean of l_overall is <= threshold, else None."""
    if window < 1:
        raise ValueError("window must be >= 1")
    values = [b.l_overall for _, b in run.loss_curve]
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        if float(np.mean(values[lo:i + 1])) <= threshold:
            return run.loss_curve[i][0]
    return None


def zero_shot_eval(
    teacher: EncoderModel,
    student_cfg: ModelConfig,
    corpus: Corpus,
    tag_names: tuple[str, ...] | None = None,
    seed: int = 0,
) -> EvalReport:
    """Copy teacher weights into a fresh student and evaluate with zero training steps."""
    plan = build_copy_plan(teacher.config, student_cfg)
    student = copy_weights(teacher, init_random(student_cfg, seed), plan)
    return evaluate(student, corpus, tag_names)
