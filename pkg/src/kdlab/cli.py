"""Command-line experiment runner.

Every subcommand is driven by a JSON experiment spec (see README for the
schema); stages beyond data generation rerun their prerequisites in memory,
so each invocation is self-contained and reproducible. Exit codes: 0 on
success, 2 on config errors, 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .data import save_conll_tagging, save_jsonl_classification
from .experiments import (
    ConfigError,
    ExperimentSpec,
    _task_config,
    build_report,
    compare_report,
    make_base,
    prepare_bundle,
    resolve_partition,
    run_scenario,
    run_seed,
    spec_from_file,
    train_teacher,
    _base_config,
)
from .model import TASK_SEQUENCE, init_random, load_checkpoint, save_checkpoint
from .train import evaluate
from .data import filter_corpus


def _load_spec(args) -> ExperimentSpec:
    spec = spec_from_file(args.config)
    if args.output_dir:
        spec = replace(spec, output_dir=args.output_dir)
    if args.seed_override:
        seeds = tuple(int(s) for s in args.seed_override.split(","))
        if not seeds:
            raise ConfigError("--seed-override must list at least one seed")
        spec = replace(spec, seeds=seeds)
    return spec


def _cmd_gen_data(args) -> int:
    spec = _load_spec(args)
    bundle = prepare_bundle(spec.data)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "jsonl" if bundle.task == TASK_SEQUENCE else "conll"
    saver = save_jsonl_classification if bundle.task == TASK_SEQUENCE else save_conll_tagging
    for name in ("train", "dev", "test"):
        saver(bundle.split(name), out / f"{name}.{suffix}")
    meta = {
        "task": bundle.task,
        "n_classes": bundle.n_classes,
        "vocab_size": bundle.vocab_size,
        "latent_vocab": bundle.latent_vocab,
        "mask_token": bundle.mask_token,
        "seq_len": bundle.seq_len,
        "tag_names": list(bundle.tag_names) if bundle.tag_names else None,
        "languages": sorted(bundle.lang_specs),
        "sizes": {name: len(bundle.split(name)) for name in ("train", "dev", "test")},
    }
    with open(out / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {meta['sizes']} to {out}")
    return 0


def _cmd_pretrain_base(args) -> int:
    spec = _load_spec(args)
    bundle = prepare_bundle(spec.data)
    out = Path(spec.output_dir) / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    for seed in spec.seeds:
        base, losses = make_base(spec.teacher_cfg, bundle, spec.train, seed)
        save_checkpoint(base, out / f"seed{seed}_base.json")
        print(f"seed {seed}: pretext loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    return 0


def _cmd_train_teacher(args) -> int:
    spec = _load_spec(args)
    bundle = prepare_bundle(spec.data)
    part = resolve_partition(bundle, spec.data)
    from .experiments import _scenario_langs

    all_langs = sorted(bundle.lang_specs) if bundle.lang_specs else bundle.train.languages()
    teacher_langs, _, _ = _scenario_langs(spec.scenario, part, all_langs)
    out = Path(spec.output_dir) / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    for seed in spec.seeds:
        base, _ = make_base(spec.teacher_cfg, bundle, spec.train, seed)
        teacher, run = train_teacher(
            base, spec.teacher_cfg, bundle,
            filter_corpus(bundle.train, teacher_langs),
            filter_corpus(bundle.dev, teacher_langs),
            spec.train, seed,
        )
        save_checkpoint(base, out / f"seed{seed}_base.json")
        save_checkpoint(teacher, out / f"seed{seed}_teacher.json")
        print(f"seed {seed}: teacher dev best {run.best_score:.4f} at step {run.best_step}")
    return 0


def _cmd_experiment(args) -> int:
    spec = _load_spec(args)
    report = run_scenario(spec, threads=args.threads)
    for key, agg in sorted(report["aggregate"].items()):
        if isinstance(agg, dict) and "test_score" in agg:
            print(f"{key}: test {agg['test_score']['mean']:.4f} +- {agg['test_score']['std']:.4f} "
                  f"(baseline {agg['baseline_score']['mean']:.4f})")
    print(f"report: {Path(spec.output_dir) / 'metrics.json'}")
    return 0


def _cmd_zero_shot_copy(args) -> int:
    spec = replace(_load_spec(args), scenario="zero-shot-copy", fractions=None)
    report = run_scenario(spec, threads=args.threads)
    agg = report["aggregate"]["cell"]
    print(f"zero-shot copy: test {agg['test_score']['mean']:.4f} "
          f"(baseline {agg['baseline_score']['mean']:.4f})")
    return 0


def _cmd_distill(args) -> int:
    spec = _load_spec(args)
    results = [run_seed(spec, seed) for seed in spec.seeds]
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = prepare_bundle(spec.data)
    for res in results:
        for key, cell in res.cells.items():
            tag = "" if key == "cell" else f"f{key}_"
            student = init_random(_task_config(spec.student_cfg, bundle), 0)
            student.load_state(cell.student_state)
            save_checkpoint(student, out / "checkpoints" / f"{tag}seed{res.seed}_student.json")
            print(f"seed {res.seed} {key}: test {cell.test['overall']['score']:.4f}")
    return 0


def _cmd_eval(args) -> int:
    spec = _load_spec(args)
    bundle = prepare_bundle(spec.data)
    model = load_checkpoint(args.checkpoint)
    corpus = bundle.split(args.split)
    if args.langs:
        corpus = filter_corpus(corpus, args.langs.split(","))
    report = evaluate(model, corpus, bundle.tag_names)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return 0


def _cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        with open(path, encoding="utf-8") as fh:
            reports.append(json.load(fh))
    summary = compare_report(reports)
    print(json.dumps(summary, sort_keys=True, indent=2))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, needs_spec=True):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        if needs_spec:
            p.add_argument("--config", required=True, help="experiment spec JSON")
            p.add_argument("--output-dir", default=None, help="override spec output_dir")
            p.add_argument("--seed-override", default=None, help="comma-separated seeds")
            p.add_argument("--threads", type=int, default=1, help="parallel seeds")
        return p

    add("gen-data", _cmd_gen_data, "generate the spec's dataset and write it to disk")
    add("pretrain-base", _cmd_pretrain_base, "masked-token pretext training of the teacher architecture")
    add("train-teacher", _cmd_train_teacher, "pretext base plus fine-tuned teacher checkpoints")
    add("distill", _cmd_distill, "train the spec's student cell and save checkpoints")
    eval_p = add("eval", _cmd_eval, "evaluate a checkpoint on a split of the spec's dataset")
    eval_p.add_argument("--checkpoint", required=True)
    eval_p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    eval_p.add_argument("--langs", default=None, help="comma-separated language filter")
    add("zero-shot-copy", _cmd_zero_shot_copy, "weight-copy the teacher and evaluate without training")
    add("experiment", _cmd_experiment, "run the full scenario and write the metrics report")
    cmp_p = add("compare", _cmd_compare, "ordering summary across metrics.json reports", needs_spec=False)
    cmp_p.add_argument("reports", nargs="+", help="metrics.json paths")
    cmp_p.add_argument("--output", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
