"""Calibration: shared small pipeline (strong base) for criteria 5 + 8."""
import dataclasses
import time

import numpy as np

from kdlab.data import stratified_subset
from kdlab.experiments import (
    make_base,
    prepare_bundle,
    run_student_cell,
    spec_from_dict,
    train_teacher,
)
from kdlab.train import evaluate, steps_to_threshold

spec = spec_from_dict({
    "scenario": "all-langs",
    "data": {"kind": "classification", "n_langs": 8, "n_classes": 3, "n_per_lang": 150, "seed": 0},
    "teacher_cfg": {"n_layers": 4, "n_heads": 2, "hidden_dim": 16, "ffn_dim": 32},
    "student_cfg": {"n_layers": 2, "n_heads": 2, "hidden_dim": 16, "ffn_dim": 32},
    "init": "from-teacher", "kd_enabled": True, "seeds": [0],
    "output_dir": "/tmp/kd0",
    "train": {"epochs": 6, "batch_size": 32, "lr": 1e-3, "eval_steps": 10,
               "teacher_epochs": 16, "teacher_lr": 2e-3, "base_epochs": 8, "base_lr": 3e-3},
})
bundle = prepare_bundle(spec.data)
t0 = time.time()
c5 = {}
c8_scores = {}
c8_steps = {}
for seed in (0, 1, 2):
    base, pl = make_base(spec.teacher_cfg, bundle, spec.train, seed)
    teacher, trun = train_teacher(base, spec.teacher_cfg, bundle, bundle.train, bundle.dev, spec.train, seed)
    print(f"seed {seed}: pretext {pl[0]:.2f}->{np.mean(pl[-5:]):.2f} "
          f"teacher={evaluate(teacher, bundle.test).score:.3f} ({time.time()-t0:.0f}s)", flush=True)
    for init in ("from-scratch", "from-teacher"):
        for kd in (False, True):
            cell = run_student_cell(spec, bundle, teacher, base, bundle.train, bundle.dev,
                                    bundle.test, seed, init=init, kd_enabled=kd)
            c5.setdefault((init, kd), []).append(cell.test["overall"]["score"])
    print(f"  c5 cells done ({time.time()-t0:.0f}s)", flush=True)
    sub_spec = dataclasses.replace(spec, train=dataclasses.replace(spec.train, epochs=4))
    for fraction in (0.01, 0.05, 0.2, 1.0):
        subset = stratified_subset(bundle.train, fraction, spec.data.seed)
        taus = {}
        for init in ("from-scratch", "from-base", "from-teacher"):
            cell = run_student_cell(sub_spec, bundle, teacher, base, subset, bundle.dev,
                                    bundle.test, seed, init=init, kd_enabled=True)
            c8_scores.setdefault((fraction, init), []).append(cell.test["overall"]["score"])
            taus[init] = cell.run
        tau = 0.5 * taus["from-scratch"].loss_curve[0][1].l_overall
        for init, run in taus.items():
            steps = steps_to_threshold(run, tau, window=10)
            c8_steps.setdefault((fraction, init), []).append(
                steps if steps is not None else run.n_steps + 1)
    print(f"  c8 cells done ({time.time()-t0:.0f}s)", flush=True)

print("== C5 (epochs 6) ==")
for (init, kd), scores in sorted(c5.items()):
    print(f"{init:13s} kd={int(kd)}: mean={np.mean(scores):.4f} {[round(s, 3) for s in scores]}")
print("== C8 scores (epochs 4, KD) ==")
for (fraction, init), scores in sorted(c8_scores.items()):
    print(f"frac={fraction:<5} {init:13s}: mean={np.mean(scores):.4f} {[round(s, 3) for s in scores]}")
print("== C8 steps-to-threshold ==")
for (fraction, init), steps in sorted(c8_steps.items()):
    print(f"frac={fraction:<5} {init:13s}: mean={np.mean(steps):.1f} {steps}")
