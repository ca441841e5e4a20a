"""Declarative experiment scenarios over the distillation lab.

A JSON experiment spec picks one of the study's scenarios, the synthetic (or
file-based) task, teacher/student architectures, the student initialization,
and the seed list; running it trains the full pipeline per seed (pretext base
-> fine-tuned teacher -> student) and writes a machine-readable report plus
plot-ready CSV curves into the output directory. Reports are byte-identical
across reruns of the same spec.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .data import (
    Corpus,
    DatasetBundle,
    LanguagePartition,
    filter_corpus,
    gen_classification,
    gen_tagging,
    load_conll_tagging,
    load_jsonl_classification,
    partition_languages,
    stratified_subset,
)
from .metrics import EvalReport, majority_baseline
from .model import (
    TASK_SEQUENCE,
    TASK_TOKEN,
    EncoderModel,
    ModelConfig,
    forward,
    init_random,
    save_checkpoint,
)
from .train import AdamW, TrainConfig, TrainRun, evaluate, train
from .weight_copy import build_copy_plan, copy_weights

REPORT_SCHEMA_VERSION = 1
MASK_FRACTION = 0.15

SCENARIOS = (
    "all-langs",
    "zscl-seen",
    "zscl-english",
    "english-only-teacher",
    "zero-shot-copy",
    "subsets",
)
INITS = ("from-scratch", "from-base", "from-teacher")


class ConfigError(ValueError):
    """The experiment spec is malformed (unknown key, bad value, missing field)."""


@dataclass(frozen=True)
class ArchParams:
    n_layers: int
    n_heads: int
    hidden_dim: int
    ffn_dim: int


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 5e-5
    eval_steps: int = 50
    dropout: float = 0.1
    weight_decay: float = 0.0
    teacher_epochs: int = 30
    teacher_lr: float = 5e-5
    base_epochs: int = 3
    base_lr: float = 5e-5
    threshold_window: int = 10


@dataclass(frozen=True)
class DataParams:
    kind: str = "classification"
    n_langs: int = 8
    n_classes: int = 3
    n_per_lang: int = 150
    seq_len: int = 16
    anchor_ratio: float = 0.3
    parallel: bool = False
    seed: int = 0
    dev_per_lang: int = 40
    test_per_lang: int = 80
    latent_vocab: int | None = None
    class_weights: list[float] | None = None
    n_entity_types: int = 3
    unseen_fraction: float = 0.25
    english_analogue: str | None = None
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    task: str | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    data: DataParams
    teacher_cfg: ArchParams
    student_cfg: ArchParams
    init: str = "from-teacher"
    kd_enabled: bool = True
    seeds: tuple[int, ...] = (0, 1, 2)
    fractions: tuple[float, ...] | None = None
    output_dir: str = "out"
    train: TrainParams = field(default_factory=TrainParams)


def _parse_section(raw: dict, cls, where: str, required: tuple[str, ...] = ()):
    allowed = set(cls.__dataclass_fields__)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = set(required) - set(raw)
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {sorted(missing)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def spec_from_dict(raw: dict) -> ExperimentSpec:
    """Validate a spec document; unknown keys anywhere are an error."""
    if not isinstance(raw, dict):
        raise ConfigError("experiment spec must be a JSON object")
    allowed = set(ExperimentSpec.__dataclass_fields__)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"spec: unknown key(s) {sorted(unknown)}")
    for key in ("scenario", "data", "teacher_cfg", "student_cfg"):
        if key not in raw:
            raise ConfigError(f"spec: missing required key {key!r}")
    scenario = raw["scenario"]
    if scenario not in SCENARIOS:
        raise ConfigError(f"spec: unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    init = raw.get("init", "from-teacher")
    if init not in INITS:
        raise ConfigError(f"spec: unknown init {init!r}; expected one of {INITS}")
    data = _parse_section(dict(raw["data"]), DataParams, "data")
    if data.kind not in ("classification", "tagging", "files"):
        raise ConfigError(f"data: unknown kind {data.kind!r}")
    if data.kind == "files":
        if data.task not in (TASK_SEQUENCE, TASK_TOKEN):
            raise ConfigError("data: kind=files requires task")
        for key in ("train_path", "dev_path", "test_path"):
            if getattr(data, key) is None:
                raise ConfigError(f"data: kind=files requires {key}")
    seeds = tuple(int(s) for s in raw.get("seeds", (0, 1, 2)))
    if not seeds:
        raise ConfigError("spec: seeds must be nonempty")
    fractions = raw.get("fractions")
    if scenario == "subsets":
        if not fractions:
            raise ConfigError("spec: subsets scenario requires fractions")
        fractions = tuple(float(f) for f in fractions)
        for f in fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"spec: fraction {f} outside (0, 1]")
    elif fractions is not None:
        raise ConfigError(f"spec: fractions only apply to the subsets scenario, not {scenario!r}")
    return ExperimentSpec(
        scenario=scenario,
        data=data,
        teacher_cfg=_parse_section(dict(raw["teacher_cfg"]), ArchParams, "teacher_cfg",
                                   required=("n_layers", "n_heads", "hidden_dim", "ffn_dim")),
        student_cfg=_parse_section(dict(raw["student_cfg"]), ArchParams, "student_cfg",
                                   required=("n_layers", "n_heads", "hidden_dim", "ffn_dim")),
        init=init,
        kd_enabled=bool(raw.get("kd_enabled", True)),
        seeds=seeds,
        fractions=fractions,
        output_dir=str(raw.get("output_dir", "out")),
        train=_parse_section(dict(raw.get("train", {})), TrainParams, "train"),
    )


def spec_from_file(path) -> ExperimentSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return spec_from_dict(raw)


def spec_to_dict(spec: ExperimentSpec) -> dict:
    doc = asdict(spec)
    doc["seeds"] = list(spec.seeds)
    doc["fractions"] = list(spec.fractions) if spec.fractions is not None else None
    return doc


def config_hash(spec: ExperimentSpec) -> str:
    canonical = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def prepare_bundle(data: DataParams) -> DatasetBundle:
    if data.kind == "classification":
        return gen_classification(
            n_langs=data.n_langs, n_classes=data.n_classes, n_per_lang=data.n_per_lang,
            seq_len=data.seq_len, anchor_ratio=data.anchor_ratio, parallel=data.parallel,
            seed=data.seed, dev_per_lang=data.dev_per_lang, test_per_lang=data.test_per_lang,
            latent_vocab=data.latent_vocab,
            class_weights=list(data.class_weights) if data.class_weights else None,
        )
    if data.kind == "tagging":
        return gen_tagging(
            n_langs=data.n_langs, n_entity_types=data.n_entity_types, n_per_lang=data.n_per_lang,
            seq_len=data.seq_len, anchor_ratio=data.anchor_ratio, seed=data.seed,
            dev_per_lang=data.dev_per_lang, test_per_lang=data.test_per_lang,
            latent_vocab=data.latent_vocab,
        )
    return _load_file_bundle(data)


def _load_file_bundle(data: DataParams) -> DatasetBundle:
    if data.task == TASK_SEQUENCE:
        loader = load_jsonl_classification
    else:
        loader = load_conll_tagging
    splits = {name: loader(getattr(data, f"{name}_path"), split=name) for name in ("train", "dev", "test")}
    all_examples = [ex for corpus in splits.values() for ex in corpus.examples]
    if not all_examples:
        raise ConfigError("file-based dataset is empty")
    max_token = max((max(ex.tokens) for ex in all_examples if ex.tokens), default=0)
    max_len = max(len(ex.tokens) for ex in all_examples)
    if data.task == TASK_SEQUENCE:
        n_classes = max(ex.label for ex in all_examples) + 1
        tag_names = None
    else:
        tags = sorted({tag for ex in all_examples for tag in ex.tags} - {"O"})
        tag_names = tuple(["O"] + tags)
        n_classes = len(tag_names)
    return DatasetBundle(
        train=splits["train"], dev=splits["dev"], test=splits["test"],
        lang_specs={}, task=data.task, n_classes=n_classes,
        vocab_size=max_token + 2, latent_vocab=0, mask_token=max_token + 1,
        seq_len=max_len, tag_names=tag_names,
    )


def resolve_partition(bundle: DatasetBundle, data: DataParams) -> LanguagePartition:
    langs = sorted(bundle.lang_specs) if bundle.lang_specs else bundle.train.languages()
    part = partition_languages({lang: None for lang in langs}, data.unseen_fraction, data.seed)
    if data.english_analogue is not None:
        if data.english_analogue not in part.seen:
            raise ConfigError(f"english_analogue {data.english_analogue!r} is not a seen language")
        part = LanguagePartition(seen=part.seen, unseen=part.unseen, english_analogue=data.english_analogue)
    return part


def _scenario_langs(scenario: str, part: LanguagePartition, all_langs: list[str]):
    """(teacher_train, student_train, eval) language sets for a scenario."""
    english = [part.english_analogue]
    if scenario in ("all-langs", "zero-shot-copy", "subsets"):
        return all_langs, all_langs, all_langs
    if scenario == "zscl-seen":
        return list(part.seen), list(part.seen), list(part.unseen)
    if scenario == "zscl-english":
        return list(part.seen), english, list(part.unseen)
    if scenario == "english-only-teacher":
        return english, english, list(part.unseen)
    raise ValueError(f"unknown scenario {scenario!r}")


def _task_config(arch: ArchParams, bundle: DatasetBundle) -> ModelConfig:
    return ModelConfig(
        n_layers=arch.n_layers, n_heads=arch.n_heads, hidden_dim=arch.hidden_dim,
        ffn_dim=arch.ffn_dim, vocab_size=bundle.vocab_size, max_seq_len=bundle.seq_len,
        n_classes=bundle.n_classes, task=bundle.task,
    )


def _base_config(arch: ArchParams, bundle: DatasetBundle) -> ModelConfig:
    return ModelConfig(
        n_layers=arch.n_layers, n_heads=arch.n_heads, hidden_dim=arch.hidden_dim,
        ffn_dim=arch.ffn_dim, vocab_size=bundle.vocab_size, max_seq_len=bundle.seq_len,
        n_classes=bundle.vocab_size, task=TASK_TOKEN,
    )


def make_base(
    arch: ArchParams,
    bundle: DatasetBundle,
    params: TrainParams,
    seed: int,
) -> tuple[EncoderModel, list[float]]:
    """Pretext-pretrain the teacher architecture: mask 15% of tokens, predict their ids.

    Runs over every language's train split without task labels; the returned
    per-step losses let callers verify the pretext objective is decreasing.
    """
    cfg = _base_config(arch, bundle)
    model = init_random(cfg, seed)
    optimizer = AdamW(model.parameters(), lr=params.base_lr, weight_decay=params.weight_decay)
    rng = np.random.default_rng(seed)
    examples = bundle.train.examples
    losses: list[float] = []
    for _ in range(params.base_epochs):
        order = rng.permutation(len(examples))
        for start in range(0, len(order), params.batch_size):
            batch = order[start:start + params.batch_size]
            optimizer.zero_grad()
            total = 0.0
            for idx in batch:
                ids = np.asarray(examples[int(idx)].tokens, dtype=np.intp)
                n_mask = max(1, math.floor(MASK_FRACTION * ids.size + 0.5))
                positions = rng.choice(ids.size, size=n_mask, replace=False)
                masked = ids.copy()
                masked[positions] = bundle.mask_token
                trace = forward(model, masked, dropout=params.dropout, rng=rng)
                loss = ad.cross_entropy(ad.take_rows(trace.logits, positions), ids[positions])
                ad.backward(loss)
                total += loss.item()
            for _, p in model.parameters():
                if p.grad is not None:
                    p.grad /= len(batch)
            optimizer.step()
            losses.append(total / len(batch))
    return model, losses


def train_teacher(
    base: EncoderModel,
    arch: ArchParams,
    bundle: DatasetBundle,
    train_corpus: Corpus,
    dev_corpus: Corpus,
    params: TrainParams,
    seed: int,
) -> tuple[EncoderModel, TrainRun]:
    """Fine-tune a from-base teacher (encoder and embeddings copied, fresh head)."""
    cfg = _task_config(arch, bundle)
    plan = build_copy_plan(base.config, cfg, copy_head=False)
    teacher = copy_weights(base, init_random(cfg, seed), plan)
    run = train(
        teacher, train_corpus, dev_corpus,
        TrainConfig(epochs=params.teacher_epochs, batch_size=params.batch_size, lr=params.teacher_lr,
                    weight_decay=params.weight_decay, dropout=params.dropout, kd_enabled=False,
                    eval_steps=params.eval_steps, seed=seed),
        tag_names=bundle.tag_names,
    )
    teacher.load_state(run.best_state)
    return teacher, run


def init_student(
    init: str,
    student_cfg: ModelConfig,
    teacher: EncoderModel,
    base: EncoderModel,
    seed: int,
) -> EncoderModel:
    fresh = init_random(student_cfg, seed)
    if init == "from-scratch":
        return fresh
    if init == "from-teacher":
        return copy_weights(teacher, fresh, build_copy_plan(teacher.config, student_cfg))
    if init == "from-base":
        return copy_weights(base, fresh, build_copy_plan(base.config, student_cfg, copy_head=False))
    raise ValueError(f"unknown init {init!r}")


def _eval_suite(model: EncoderModel, bundle: DatasetBundle, eval_corpus: Corpus) -> dict:
    overall = evaluate(model, eval_corpus, bundle.tag_names)
    per_language = {
        lang: evaluate(model, filter_corpus(eval_corpus, [lang]), bundle.tag_names).to_dict()
        for lang in eval_corpus.languages()
    }
    return {"overall": overall.to_dict(), "per_language": per_language}


def _baseline_report(bundle: DatasetBundle, eval_corpus: Corpus) -> dict:
    if bundle.task == TASK_SEQUENCE:
        gold = [ex.label for ex in eval_corpus.examples]
    else:
        gold = [list(ex.tags) for ex in eval_corpus.examples]
    return majority_baseline(gold).to_dict()


@dataclass
class CellResult:
    """One trained (or zero-shot) student cell within a seed's pipeline."""

    test: dict
    baseline: dict
    n_steps: int
    dev_best_step: int
    dev_best_score: float
    run: TrainRun | None
    student_state: dict[str, np.ndarray]


@dataclass
class SeedResult:
    seed: int
    pretext_losses: list[float]
    teacher_run: TrainRun
    teacher_test: dict
    cells: dict[str, CellResult]
    base_state: dict[str, np.ndarray]
    teacher_state: dict[str, np.ndarray]


def run_student_cell(
    spec: ExperimentSpec,
    bundle: DatasetBundle,
    teacher: EncoderModel,
    base: EncoderModel,
    student_train: Corpus,
    student_dev: Corpus,
    eval_corpus: Corpus,
    seed: int,
    *,
    init: str | None = None,
    kd_enabled: bool | None = None,
) -> CellResult:
    init = spec.init if init is None else init
    kd_enabled = spec.kd_enabled if kd_enabled is None else kd_enabled
    student_cfg = _task_config(spec.student_cfg, bundle)
    student = init_student(init, student_cfg, teacher, base, seed)
    if spec.scenario == "zero-shot-copy":
        return CellResult(
            test=_eval_suite(student, bundle, eval_corpus),
            baseline=_baseline_report(bundle, eval_corpus),
            n_steps=0, dev_best_step=0, dev_best_score=float("nan"),
            run=None, student_state=student.state(),
        )
    params = spec.train
    run = train(
        student, student_train, student_dev,
        TrainConfig(epochs=params.epochs, batch_size=params.batch_size, lr=params.lr,
                    weight_decay=params.weight_decay, dropout=params.dropout,
                    kd_enabled=kd_enabled, eval_steps=params.eval_steps, seed=seed),
        teacher=teacher if kd_enabled else None,
        tag_names=bundle.tag_names,
    )
    student.load_state(run.best_state)
    return CellResult(
        test=_eval_suite(student, bundle, eval_corpus),
        baseline=_baseline_report(bundle, eval_corpus),
        n_steps=run.n_steps, dev_best_step=run.best_step, dev_best_score=run.best_score,
        run=run, student_state=run.best_state,
    )


def run_seed(spec: ExperimentSpec, seed: int) -> SeedResult:
    """The full pipeline for one seed: base pretext, teacher fine-tune, student cell(s)."""
    bundle = prepare_bundle(spec.data)
    part = resolve_partition(bundle, spec.data)
    all_langs = sorted(bundle.lang_specs) if bundle.lang_specs else bundle.train.languages()
    teacher_langs, student_langs, eval_langs = _scenario_langs(spec.scenario, part, all_langs)

    base, pretext_losses = make_base(spec.teacher_cfg, bundle, spec.train, seed)
    teacher, teacher_run = train_teacher(
        base, spec.teacher_cfg, bundle,
        filter_corpus(bundle.train, teacher_langs),
        filter_corpus(bundle.dev, teacher_langs),
        spec.train, seed,
    )
    eval_corpus = filter_corpus(bundle.test, eval_langs)
    teacher_test = _eval_suite(teacher, bundle, eval_corpus)

    student_train = filter_corpus(bundle.train, student_langs)
    student_dev = filter_corpus(bundle.dev, student_langs)
    cells: dict[str, CellResult] = {}
    if spec.scenario == "subsets":
        for fraction in spec.fractions:
            subset = stratified_subset(student_train, fraction, spec.data.seed)
            cells[_fraction_key(fraction)] = run_student_cell(
                spec, bundle, teacher, base, subset, student_dev, eval_corpus, seed)
    else:
        cells["cell"] = run_student_cell(
            spec, bundle, teacher, base, student_train, student_dev, eval_corpus, seed)
    return SeedResult(
        seed=seed,
        pretext_losses=pretext_losses,
        teacher_run=teacher_run,
        teacher_test=teacher_test,
        cells=cells,
        base_state=base.state(),
        teacher_state=teacher.state(),
    )


def _fraction_key(fraction: float) -> str:
    return f"{fraction:g}"


def _manifest(bundle: DatasetBundle, part: LanguagePartition, teacher_langs, student_langs, eval_langs) -> dict:
    def counts(corpus: Corpus, langs) -> dict[str, int]:
        keep = set(langs)
        out: dict[str, int] = {}
        for ex in corpus.examples:
            if ex.lang in keep:
                out[ex.lang] = out.get(ex.lang, 0) + 1
        return dict(sorted(out.items()))

    return {
        "train": counts(bundle.train, student_langs),
        "teacher_train": counts(bundle.train, teacher_langs),
        "dev": counts(bundle.dev, student_langs),
        "test": counts(bundle.test, eval_langs),
        "languages": {
            "seen": list(part.seen),
            "unseen": list(part.unseen),
            "english_analogue": part.english_analogue,
        },
    }


def _aggregate(scores: list[float]) -> dict:
    return {
        "mean": float(np.mean(scores)),
        "std": float(np.std(scores)),
        "per_seed": [float(s) for s in scores],
    }


def build_report(spec: ExperimentSpec, results: list[SeedResult]) -> dict:
    bundle = prepare_bundle(spec.data)
    part = resolve_partition(bundle, spec.data)
    all_langs = sorted(bundle.lang_specs) if bundle.lang_specs else bundle.train.languages()
    teacher_langs, student_langs, eval_langs = _scenario_langs(spec.scenario, part, all_langs)

    cell_keys = list(results[0].cells)
    per_seed = []
    for res in results:
        entry = {
            "seed": res.seed,
            "pretext_loss_first": float(np.mean(res.pretext_losses[:5])),
            "pretext_loss_last": float(np.mean(res.pretext_losses[-5:])),
            "teacher": {
                "dev_best_step": res.teacher_run.best_step,
                "dev_best_score": res.teacher_run.best_score,
                "n_steps": res.teacher_run.n_steps,
                "test": res.teacher_test,
            },
            "cells": {
                key: {
                    "test": cell.test,
                    "baseline": cell.baseline,
                    "n_steps": cell.n_steps,
                    "dev_best_step": cell.dev_best_step,
                    "dev_best_score": _json_float(cell.dev_best_score),
                }
                for key, cell in res.cells.items()
            },
        }
        per_seed.append(entry)

    aggregate = {}
    for key in cell_keys:
        scores = [res.cells[key].test["overall"]["score"] for res in results]
        baselines = [res.cells[key].baseline["score"] for res in results]
        aggregate[key] = {
            "test_score": _aggregate(scores),
            "baseline_score": _aggregate(baselines),
        }
    aggregate["teacher_test_score"] = _aggregate(
        [res.teacher_test["overall"]["score"] for res in results])

    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "config_hash": config_hash(spec),
        "spec": spec_to_dict(spec),
        "scenario": spec.scenario,
        "cell": {"init": spec.init, "kd_enabled": spec.kd_enabled},
        "seeds": list(spec.seeds),
        "data_manifest": _manifest(bundle, part, teacher_langs, student_langs, eval_langs),
        "per_seed": per_seed,
        "aggregate": aggregate,
    }


def _json_float(value: float) -> float | None:
    return None if math.isnan(value) else float(value)


def _write_json(doc: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_train_log(run: TrainRun, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "l_att", "l_hid", "l_embd", "l_pred", "l_clf", "l_overall"])
        for step, b in run.loss_curve:
            writer.writerow([step, repr(b.l_att), repr(b.l_hid), repr(b.l_embd),
                             repr(b.l_pred), repr(b.l_clf), repr(b.l_overall)])


def _write_dev_log(run: TrainRun, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "score"])
        for step, report in run.dev_curve:
            writer.writerow([step, repr(report.score)])


def run_scenario(spec: ExperimentSpec, threads: int = 1) -> dict:
    """Run every seed of a scenario, write the report and curves, return the report."""
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if threads > 1 and len(spec.seeds) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_seed, [spec] * len(spec.seeds), spec.seeds))
    else:
        results = [run_seed(spec, seed) for seed in spec.seeds]

    report = build_report(spec, results)
    bundle = prepare_bundle(spec.data)
    combined_rows: list[tuple[int, float, str]] = []
    for res in results:
        ckpt_dir = out_dir / "checkpoints"
        _save_state(res.base_state, _base_config(spec.teacher_cfg, bundle), ckpt_dir / f"seed{res.seed}_base.json")
        _save_state(res.teacher_state, _task_config(spec.teacher_cfg, bundle),
                    ckpt_dir / f"seed{res.seed}_teacher.json")
        for key, cell in res.cells.items():
            tag = "" if key == "cell" else f"f{key}_"
            _save_state(cell.student_state, _task_config(spec.student_cfg, bundle),
                        ckpt_dir / f"{tag}seed{res.seed}_student.json")
            if cell.run is not None:
                _write_train_log(cell.run, out_dir / "curves" / f"{tag}seed{res.seed}_train_log.csv")
                _write_dev_log(cell.run, out_dir / "curves" / f"{tag}seed{res.seed}_dev_log.csv")
                series = f"seed={res.seed}" if key == "cell" else f"frac={key}/seed={res.seed}"
                combined_rows.extend((step, b.l_overall, series) for step, b in cell.run.loss_curve)

    if spec.scenario == "subsets":
        for key in results[0].cells:
            sub = {
                "schema_version": report["schema_version"],
                "tool_version": report["tool_version"],
                "config_hash": report["config_hash"],
                "scenario": report["scenario"],
                "cell": report["cell"],
                "fraction": float(key),
                "seeds": report["seeds"],
                "data_manifest": report["data_manifest"],
                "per_seed": [
                    {"seed": entry["seed"], "cells": {key: entry["cells"][key]}}
                    for entry in report["per_seed"]
                ],
                "aggregate": {key: report["aggregate"][key]},
            }
            _write_json(sub, out_dir / f"metrics_fraction_{key}.json")
        with open(out_dir / "curves_combined.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "value", "series"])
            for step, value, series in combined_rows:
                writer.writerow([step, repr(value), series])

    _write_json(report, out_dir / "metrics.json")
    return report


def _save_state(state: dict[str, np.ndarray], config: ModelConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    model = init_random(config, 0)
    model.load_state(state)
    save_checkpoint(model, path)


def compare_report(reports: list[dict]) -> dict:
    """Mean/std per (init, kd) cell plus pairwise deltas and ordering flags."""
    if not reports:
        raise ValueError("compare_report: no reports")
    reference = reports[0]
    for report in reports[1:]:
        if report["spec"]["data"] != reference["spec"]["data"]:
            raise ValueError("compare_report: reports use different data specs")
        if report["seeds"] != reference["seeds"]:
            raise ValueError("compare_report: reports use different seeds")

    cells = {}
    for report in reports:
        init = report["cell"]["init"]
        kd = report["cell"]["kd_enabled"]
        label = init + (" + KD" if kd else "")
        agg = report["aggregate"]
        if "cell" not in agg:
            raise ValueError("compare_report: expected single-cell reports (not subsets)")
        cells[label] = {
            "mean": agg["cell"]["test_score"]["mean"],
            "std": agg["cell"]["test_score"]["std"],
        }

    labels = sorted(cells)
    deltas = {
        f"{a} - {b}": cells[a]["mean"] - cells[b]["mean"]
        for i, a in enumerate(labels) for b in labels[i + 1:]
    }
    orderings = {}
    expected = [
        ("from-teacher + KD", "from-teacher"),
        ("from-scratch + KD", "from-scratch"),
        ("from-base + KD", "from-base"),
        ("from-teacher", "from-scratch"),
        ("from-teacher", "from-base"),
        ("from-base", "from-scratch"),
        ("from-teacher + KD", "from-scratch + KD"),
    ]
    for hi, lo in expected:
        if hi in cells and lo in cells:
            orderings[f"{hi} > {lo}"] = bool(cells[hi]["mean"] > cells[lo]["mean"])
    return {"cells": cells, "deltas": deltas, "orderings": orderings}
