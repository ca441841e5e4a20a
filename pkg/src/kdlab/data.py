"""Synthetic multilingual tasks with controllable cross-lingual overlap.

Each "language" renders a shared latent symbol vocabulary through its own
disjoint token-id block via a private permutation. Any symbol occurrence is
instead rendered as a shared anchor token with probability ``anchor_ratio``,
so the expected fraction of surface vocabulary shared between two languages
equals that ratio; rendering stays invertible per language, so every task is
solvable exactly by a model with perfect latent knowledge.

Token-id layout for a dataset with latent vocabulary size V and L languages:

    [0, V)                 anchor ids (anchor of latent s is s itself)
    [V*(i+1), V*(i+2))     block of language i
    V*(L+1)                mask token (reserved for pretext training)

Classification: each class has a designated indicator symbol; a few indicator
occurrences are planted in a background-symbol sequence and the label is the
planted class. Tagging: entity spans are contiguous runs drawn from per-type
latent sub-vocabularies, tagged B-X/I-X over an O background.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .model import TASK_SEQUENCE, TASK_TOKEN

_TAG_RE = re.compile(r"^(O|[BI]-[A-Za-z0-9_]+)$")


class DataFormatError(ValueError):
    """A data file failed to parse; the message cites the offending line."""


@dataclass(frozen=True)
class LanguageSpec:
    """One synthetic language: its token-id block and rendering parameters."""

    lang_id: str
    block_start: int
    block_size: int
    anchor_ratio: float
    perm_seed: int

    @property
    def vocab_block(self) -> tuple[int, int]:
        return (self.block_start, self.block_start + self.block_size)

    def permutation(self) -> np.ndarray:
        return np.random.default_rng(self.perm_seed).permutation(self.block_size)

    def inverse_permutation(self) -> np.ndarray:
        return np.argsort(self.permutation())


@dataclass(frozen=True)
class Example:
    tokens: tuple[int, ...]
    lang: str
    label: int | None = None
    tags: tuple[str, ...] | None = None


@dataclass
class Corpus:
    examples: list[Example]
    split: str
    task: str

    def __len__(self) -> int:
        return len(self.examples)

    def languages(self) -> list[str]:
        return sorted({ex.lang for ex in self.examples})


@dataclass(frozen=True)
class LanguagePartition:
    seen: tuple[str, ...]
    unseen: tuple[str, ...]
    english_analogue: str


@dataclass
class DatasetBundle:
    """A generated task: three splits plus everything a model config needs."""

    train: Corpus
    dev: Corpus
    test: Corpus
    lang_specs: dict[str, LanguageSpec]
    task: str
    n_classes: int
    vocab_size: int
    latent_vocab: int
    mask_token: int
    seq_len: int
    tag_names: tuple[str, ...] | None = None

    def split(self, name: str) -> Corpus:
        if name not in ("train", "dev", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def _make_language_specs(n_langs: int, latent_vocab: int, anchor_ratio: float, seed: int) -> dict[str, LanguageSpec]:
    specs = {}
    for i in range(n_langs):
        lang = f"lang{i:02d}"
        specs[lang] = LanguageSpec(
            lang_id=lang,
            block_start=latent_vocab * (i + 1),
            block_size=latent_vocab,
            anchor_ratio=anchor_ratio,
            perm_seed=seed * 100003 + i,
        )
    return specs


def render(latent: np.ndarray, spec: LanguageSpec, rng: np.random.Generator) -> tuple[int, ...]:
    """Surface one latent symbol sequence in a language; anchors with prob anchor_ratio."""
    perm = spec.permutation()
    anchored = rng.random(latent.size) < spec.anchor_ratio
    surface = np.where(anchored, latent, spec.block_start + perm[latent])
    return tuple(int(t) for t in surface)


def latent_of_token(token: int, spec: LanguageSpec, latent_vocab: int) -> int:
    """Invert rendering: (language, surface token) -> latent symbol."""
    if 0 <= token < latent_vocab:
        return token
    lo, hi = spec.vocab_block
    if lo <= token < hi:
        return int(spec.inverse_permutation()[token - lo])
    raise ValueError(f"token {token} belongs to neither the anchors nor {spec.lang_id}'s block")


def _draw_labels(n: int, n_classes: int, weights, rng: np.random.Generator) -> np.ndarray:
    """Label sequence with exact class proportions (largest-remainder rounding), shuffled."""
    if weights is None:
        weights = [1.0 / n_classes] * n_classes
    total = float(sum(weights))
    exact = [n * w / total for w in weights]
    counts = [int(x) for x in exact]
    remainders = sorted(range(n_classes), key=lambda c: (exact[c] - counts[c], -c), reverse=True)
    for c in remainders[: n - sum(counts)]:
        counts[c] += 1
    labels = np.repeat(np.arange(n_classes), counts)
    rng.shuffle(labels)
    return labels


def _latent_classification(label: int, n_classes: int, seq_len: int, rng: np.random.Generator,
                           latent_vocab: int) -> np.ndarray:
    # The label is the strictly most frequent indicator symbol; up to two other
    # classes appear as less-frequent distractors, so the task needs counting,
    # not a single-symbol lookup.
    latent = rng.integers(n_classes, latent_vocab, size=seq_len)
    n_true = 3
    others = [c for c in range(n_classes) if c != label]
    rng.shuffle(others)
    planted = [label] * n_true
    for distractor in others[:2]:
        planted += [int(distractor)] * (n_true - 1)
    positions = rng.choice(seq_len, size=len(planted), replace=False)
    latent[positions] = planted
    return latent


def gen_classification(
    n_langs: int,
    n_classes: int,
    n_per_lang: int,
    seq_len: int = 16,
    anchor_ratio: float = 0.3,
    parallel: bool = False,
    seed: int = 0,
    *,
    dev_per_lang: int = 40,
    test_per_lang: int = 80,
    latent_vocab: int | None = None,
    class_weights: list[float] | None = None,
) -> DatasetBundle:
    """Sequence-classification corpus over n_langs synthetic languages.

    The label is the strictly most frequent of the planted indicator symbols
    (latent ids 0..n_classes-1); other classes appear as less-frequent
    distractors, and the rest of the sequence is background. parallel=True
    renders the same latent examples in every language, so the per-language
    label sequences coincide. class_weights skews the label prior (balanced
    by default) with exact per-split proportions.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if class_weights is not None and (len(class_weights) != n_classes or min(class_weights) <= 0):
        raise ValueError("class_weights must list a positive weight per class")
    if not 0.0 <= anchor_ratio <= 1.0:
        raise ValueError(f"anchor_ratio {anchor_ratio} outside [0, 1]")
    if latent_vocab is None:
        latent_vocab = max(2 * n_classes, 32)
    if latent_vocab <= n_classes:
        raise ValueError("latent_vocab must leave room for background symbols")
    if seq_len < 8:
        raise ValueError("seq_len must be >= 8 to hold the indicator pattern")

    specs = _make_language_specs(n_langs, latent_vocab, anchor_ratio, seed)
    rng = np.random.default_rng(seed)
    langs = sorted(specs)
    splits = {}
    for split_name, count in (("train", n_per_lang), ("dev", dev_per_lang), ("test", test_per_lang)):
        examples: list[Example] = []
        shared = None
        if parallel:
            labels = _draw_labels(count, n_classes, class_weights, rng)
            shared = [(int(lab), _latent_classification(int(lab), n_classes, seq_len, rng, latent_vocab))
                      for lab in labels]
        for lang in langs:
            if parallel:
                drawn = shared
            else:
                labels = _draw_labels(count, n_classes, class_weights, rng)
                drawn = [(int(lab), _latent_classification(int(lab), n_classes, seq_len, rng, latent_vocab))
                         for lab in labels]
            for label, latent in drawn:
                examples.append(Example(tokens=render(latent, specs[lang], rng), lang=lang, label=label))
        splits[split_name] = Corpus(examples=examples, split=split_name, task=TASK_SEQUENCE)

    return DatasetBundle(
        train=splits["train"],
        dev=splits["dev"],
        test=splits["test"],
        lang_specs=specs,
        task=TASK_SEQUENCE,
        n_classes=n_classes,
        vocab_size=latent_vocab * (n_langs + 1) + 1,
        latent_vocab=latent_vocab,
        mask_token=latent_vocab * (n_langs + 1),
        seq_len=seq_len,
    )


def _latent_tagging(n_types: int, seq_len: int, rng: np.random.Generator,
                    latent_vocab: int) -> tuple[np.ndarray, list[str]]:
    # Latent layout: type t owns symbols [2t, 2t+2); background starts at 2*n_types.
    background_start = 2 * n_types
    latent = rng.integers(background_start, latent_vocab, size=seq_len)
    tags = ["O"] * seq_len
    free = list(range(seq_len))
    for _ in range(int(rng.integers(1, 3))):
        span_len = int(rng.integers(1, 4))
        starts = [p for p in free if all(p + k in free for k in range(span_len))]
        if not starts:
            continue
        start = int(rng.choice(starts))
        ent = int(rng.integers(0, n_types))
        for k in range(span_len):
            latent[start + k] = 2 * ent + int(rng.integers(0, 2))
            tags[start + k] = ("B-" if k == 0 else "I-") + f"T{ent}"
            free.remove(start + k)
    return latent, tags


def gen_tagging(
    n_langs: int,
    n_entity_types: int,
    n_per_lang: int,
    seq_len: int = 12,
    anchor_ratio: float = 0.3,
    seed: int = 0,
    *,
    dev_per_lang: int = 30,
    test_per_lang: int = 40,
    latent_vocab: int | None = None,
) -> DatasetBundle:
    """BIO-tagged corpus: 1-2 entity spans of length 1-3 per sequence over an O background."""
    if n_entity_types < 1:
        raise ValueError("n_entity_types must be >= 1")
    if not 0.0 <= anchor_ratio <= 1.0:
        raise ValueError(f"anchor_ratio {anchor_ratio} outside [0, 1]")
    if seq_len < 4:
        raise ValueError("seq_len too small to hold an entity span")
    if latent_vocab is None:
        latent_vocab = max(2 * n_entity_types + 10, 16)
    if latent_vocab <= 2 * n_entity_types:
        raise ValueError("latent_vocab must leave room for background symbols")

    tag_names = ["O"]
    for t in range(n_entity_types):
        tag_names += [f"B-T{t}", f"I-T{t}"]

    specs = _make_language_specs(n_langs, latent_vocab, anchor_ratio, seed)
    rng = np.random.default_rng(seed)
    langs = sorted(specs)
    splits = {}
    for split_name, count in (("train", n_per_lang), ("dev", dev_per_lang), ("test", test_per_lang)):
        examples: list[Example] = []
        for lang in langs:
            for _ in range(count):
                latent, tags = _latent_tagging(n_entity_types, seq_len, rng, latent_vocab)
                examples.append(Example(tokens=render(latent, specs[lang], rng), lang=lang, tags=tuple(tags)))
        splits[split_name] = Corpus(examples=examples, split=split_name, task=TASK_TOKEN)

    return DatasetBundle(
        train=splits["train"],
        dev=splits["dev"],
        test=splits["test"],
        lang_specs=specs,
        task=TASK_TOKEN,
        n_classes=len(tag_names),
        vocab_size=latent_vocab * (n_langs + 1) + 1,
        latent_vocab=latent_vocab,
        mask_token=latent_vocab * (n_langs + 1),
        seq_len=seq_len,
        tag_names=tuple(tag_names),
    )


def _strat_key(example: Example):
    if example.label is not None:
        return example.label
    # Tagging: stratify by the multiset of span types present.
    return tuple(sorted(tag[2:] for tag in example.tags if tag.startswith("B-")))


def stratified_subset(corpus: Corpus, fraction: float, seed: int) -> Corpus:
    """Per (language, label) cell, keep round(fraction * cell) examples, at least 1.

    round() here is floor(x + 0.5), so equal-fraction reruns are exact; cells
    are processed in a fixed order and sampled without replacement.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside (0, 1]")
    if fraction == 1.0:
        return Corpus(examples=list(corpus.examples), split=corpus.split, task=corpus.task)
    cells: dict[tuple, list[int]] = {}
    for i, ex in enumerate(corpus.examples):
        cells.setdefault((ex.lang, _strat_key(ex)), []).append(i)
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    for key in sorted(cells):
        members = cells[key]
        want = max(1, math.floor(fraction * len(members) + 0.5))
        keep.extend(int(i) for i in rng.choice(members, size=want, replace=False))
    keep.sort()
    return Corpus(examples=[corpus.examples[i] for i in keep], split=corpus.split, task=corpus.task)


def partition_languages(specs: dict[str, LanguageSpec], unseen_fraction: float, seed: int) -> LanguagePartition:
    """Deterministic seen/unseen split; the english analogue is the first seen language by id."""
    langs = sorted(specs)
    n_unseen = int(round(unseen_fraction * len(langs)))
    if n_unseen >= len(langs):
        raise ValueError("partition would leave no seen language")
    rng = np.random.default_rng(seed)
    unseen = sorted(rng.choice(langs, size=n_unseen, replace=False).tolist())
    seen = [lang for lang in langs if lang not in unseen]
    return LanguagePartition(seen=tuple(seen), unseen=tuple(unseen), english_analogue=seen[0])


def filter_corpus(corpus: Corpus, langs) -> Corpus:
    wanted = set(langs)
    return Corpus(
        examples=[ex for ex in corpus.examples if ex.lang in wanted],
        split=corpus.split,
        task=corpus.task,
    )


def save_jsonl_classification(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus.examples:
            fh.write(json.dumps({"tokens": list(ex.tokens), "label": ex.label, "lang": ex.lang}) + "\n")


def load_jsonl_classification(path, split: str = "train") -> Corpus:
    """Load `{"tokens": [ints], "label": int, "lang": str}` lines; errors cite the line number."""
    examples: list[Example] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                tokens = tuple(int(t) for t in doc["tokens"])
                label = int(doc["label"])
                lang = str(doc["lang"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
            if label < 0:
                raise DataFormatError(f"{path}: line {lineno}: negative label {label}")
            examples.append(Example(tokens=tokens, lang=lang, label=label))
    return Corpus(examples=examples, split=split, task=TASK_SEQUENCE)


def save_conll_tagging(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus.examples:
            fh.write(f"# lang={ex.lang}\n")
            for token, tag in zip(ex.tokens, ex.tags):
                fh.write(f"{token}\t{tag}\n")
            fh.write("\n")


def load_conll_tagging(path, split: str = "train") -> Corpus:
    """Load one `token_id<TAB>tag` per line, blank line between sentences,
    `# lang=<id>` comment per sentence."""
    examples: list[Example] = []
    tokens: list[int] = []
    tags: list[str] = []
    lang: str | None = None

    def flush(lineno: int) -> None:
        nonlocal tokens, tags, lang
        if not tokens:
            lang = None
            return
        if lang is None:
            raise DataFormatError(f"{path}: line {lineno}: sentence without a # lang= comment")
        examples.append(Example(tokens=tuple(tokens), lang=lang, tags=tuple(tags)))
        tokens, tags, lang = [], [], None

    with open(path, encoding="utf-8") as fh:
        lineno = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush(lineno)
                continue
            if line.startswith("#"):
                match = re.match(r"#\s*lang=(\S+)\s*$", line)
                if not match:
                    raise DataFormatError(f"{path}: line {lineno}: unrecognized comment {line!r}")
                lang = match.group(1)
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}: line {lineno}: expected token<TAB>tag, got {line!r}")
            try:
                token = int(parts[0])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: bad token id {parts[0]!r}") from exc
            if not _TAG_RE.match(parts[1]):
                raise DataFormatError(f"{path}: line {lineno}: unknown tag {parts[1]!r}")
            tokens.append(token)
            tags.append(parts[1])
        flush(lineno + 1)
    return Corpus(examples=examples, split=split, task=TASK_TOKEN)
