"""Transformer encoder with multi-head self-attention and trace capture.

The forward pass records, per layer, the pre-softmax scaled attention score
matrices and the post-block hidden states, plus the embedding output and the
head logits; the distillation losses consume exactly these quantities.
Post-layer-norm block order: attention -> add&norm -> FFN -> add&norm.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TASK_SEQUENCE = "sequence-classification"
TASK_TOKEN = "token-classification"

CHECKPOINT_SCHEMA_VERSION = 1

_DIM_FIELDS = ("n_layers", "n_heads", "hidden_dim", "ffn_dim", "vocab_size", "max_seq_len", "n_classes")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    hidden_dim: int
    ffn_dim: int
    vocab_size: int
    max_seq_len: int
    n_classes: int
    task: str = TASK_SEQUENCE

    def __post_init__(self):
        for field in _DIM_FIELDS:
            if getattr(self, field) < 1:
                raise ValueError(f"ModelConfig.{field} must be >= 1")
        if self.hidden_dim % self.n_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if self.task not in (TASK_SEQUENCE, TASK_TOKEN):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Named parameter shapes in their canonical (and checkpoint) order."""
    d, f = config.hidden_dim, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "emb.tok": (config.vocab_size, d),
        "emb.pos": (config.max_seq_len, d),
    }
    for i in range(config.n_layers):
        for name in ("q", "k", "v", "o"):
            shapes[f"layer.{i}.attn.{name}"] = (d, d)
            shapes[f"layer.{i}.attn.{name}_b"] = (d,)
        shapes[f"layer.{i}.ffn.w1"] = (d, f)
        shapes[f"layer.{i}.ffn.w1_b"] = (f,)
        shapes[f"layer.{i}.ffn.w2"] = (f, d)
        shapes[f"layer.{i}.ffn.w2_b"] = (d,)
        for name in ("gamma1", "beta1", "gamma2", "beta2"):
            shapes[f"layer.{i}.norm.{name}"] = (d,)
    shapes["head.w"] = (d, config.n_classes)
    shapes["head.b"] = (config.n_classes,)
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(math.prod(shape) for shape in param_shapes(config).values())


class EncoderModel:
    """Config plus the named parameter tensors of one encoder."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = param_shapes(config)
        if set(params) != set(expected):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, tensor in params.items():
            if tensor.shape != expected[name]:
                raise ValueError(f"parameter {name}: shape {tensor.shape}, expected {expected[name]}")
        self.config = config
        self.params = params

    def param(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def set_requires_grad(self, flag: bool) -> None:
        for tensor in self.params.values():
            tensor.requires_grad = flag

    def clone(self) -> "EncoderModel":
        return EncoderModel(
            self.config,
            {name: Tensor(t.data.copy(), requires_grad=t.requires_grad) for name, t in self.params.items()},
        )

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, tensor in self.params.items():
            tensor.data = np.asarray(state[name], dtype=np.float64).reshape(tensor.shape).copy()

    def param_count(self) -> int:
        return param_count(self.config)


def init_random(config: ModelConfig, seed: int) -> EncoderModel:
    """Fresh model: Glorot-uniform weights, zero biases, identity norms, N(0, 0.02) embeddings."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("emb."):
            data = rng.normal(0.0, 0.02, shape)
        elif len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, shape)
        elif name.endswith(("gamma1", "gamma2")):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return EncoderModel(config, params)


@dataclass
class ForwardTrace:
    """Everything the distillation losses consume from one forward pass.

    attn_scores holds, per layer, the [n_heads, seq, seq] pre-softmax scaled
    scores QK^T/sqrt(head_dim); hidden holds the per-layer post-block [seq, d]
    states; logits is [n_classes] (sequence task, first-position pooling) or
    [seq, n_classes] (token task).
    """

    emb_out: Tensor
    attn_scores: list[Tensor]
    hidden: list[Tensor]
    logits: Tensor


def forward(
    model: EncoderModel,
    tokens,
    *,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    cfg = model.config
    ids = np.asarray(list(tokens), dtype=np.intp)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("forward expects a non-empty 1D token sequence")
    if ids.size > cfg.max_seq_len:
        raise ValueError(f"sequence length {ids.size} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
    if dropout > 0.0 and rng is None:
        raise ValueError("dropout requires an rng")

    p = model.params
    seq = ids.size
    inv_sqrt_dh = 1.0 / math.sqrt(cfg.head_dim)

    emb = ad.add(ad.embedding(p["emb.tok"], ids), ad.embedding(p["emb.pos"], np.arange(seq)))
    x = ad.dropout(emb, dropout, rng) if dropout > 0.0 else emb

    scores_per_layer: list[Tensor] = []
    hidden_per_layer: list[Tensor] = []
    for i in range(cfg.n_layers):
        pre = f"layer.{i}"
        q = ad.add(ad.matmul(x, p[f"{pre}.attn.q"]), p[f"{pre}.attn.q_b"])
        k = ad.add(ad.matmul(x, p[f"{pre}.attn.k"]), p[f"{pre}.attn.k_b"])
        v = ad.add(ad.matmul(x, p[f"{pre}.attn.v"]), p[f"{pre}.attn.v_b"])
        qh = ad.split_heads(q, cfg.n_heads)
        kh = ad.split_heads(k, cfg.n_heads)
        vh = ad.split_heads(v, cfg.n_heads)
        scores = ad.scale(ad.matmul(qh, ad.transpose_last2(kh)), inv_sqrt_dh)
        scores_per_layer.append(scores)
        ctx = ad.merge_heads(ad.matmul(ad.softmax(scores), vh))
        attn_out = ad.add(ad.matmul(ctx, p[f"{pre}.attn.o"]), p[f"{pre}.attn.o_b"])
        if dropout > 0.0:
            attn_out = ad.dropout(attn_out, dropout, rng)
        x = ad.layer_norm(ad.add(x, attn_out), p[f"{pre}.norm.gamma1"], p[f"{pre}.norm.beta1"])

        mid = ad.gelu(ad.add(ad.matmul(x, p[f"{pre}.ffn.w1"]), p[f"{pre}.ffn.w1_b"]))
        ffn_out = ad.add(ad.matmul(mid, p[f"{pre}.ffn.w2"]), p[f"{pre}.ffn.w2_b"])
        if dropout > 0.0:
            ffn_out = ad.dropout(ffn_out, dropout, rng)
        x = ad.layer_norm(ad.add(x, ffn_out), p[f"{pre}.norm.gamma2"], p[f"{pre}.norm.beta2"])
        hidden_per_layer.append(x)

    if cfg.task == TASK_SEQUENCE:
        logits = ad.add(ad.matmul(ad.first_row(x), p["head.w"]), p["head.b"])
    else:
        logits = ad.add(ad.matmul(x, p["head.w"]), p["head.b"])
    return ForwardTrace(emb_out=emb, attn_scores=scores_per_layer, hidden=hidden_per_layer, logits=logits)


def predict(model: EncoderModel, tokens):
    """Argmax class index (sequence task) or per-position tag indices (token task).

    Ties break toward the lowest class index.
    """
    logits = forward(model, tokens).logits.data
    if model.config.task == TASK_SEQUENCE:
        return int(np.argmax(logits))
    return [int(c) for c in np.argmax(logits, axis=-1)]


def save_checkpoint(model: EncoderModel, path) -> None:
    """Write config plus named parameter arrays as JSON; floats round-trip bit-exactly."""
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": asdict(model.config),
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in model.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> EncoderModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema_version {doc.get('schema_version')!r}")
    config = ModelConfig(**doc["config"])
    params = {
        name: Tensor(np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"]), requires_grad=True)
        for name, entry in doc["params"].items()
    }
    return EncoderModel(config, params)
