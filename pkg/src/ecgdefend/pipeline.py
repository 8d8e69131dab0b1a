"""Desk-scale experiment orchestration.

Wires synthetic data, the eight defense methods, both evaluation
situations, the smoothing-step and noise-level sweeps, and report
rendering into one reproducible run. Every run directory receives a config
snapshot sufficient to replay it bit-identically.

Scale note: noise levels here are expressed through DESK_UNIT, the desk
analog of one raw amplitude unit of the full-size recordings. The
reference noise level 10 and step size 1 scale accordingly, and the
headline attack (20 sign-gradient steps, 40 smoothing steps) uses the
total-budget clip anchor so the noise level acts as a real budget.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attacks import AttackParams
from .data import split_dataset, synthesize_ecg
from .defenses import (
    METHODS,
    RegularizerConfig,
    TrainPlan,
    TrainedDefense,
    save_defense,
    train_defense,
)
from .figures import perturbation_figure, situation_bar_figure, sweep_figure
from .protocols import (
    ProtocolRun,
    parameter_sweep,
    rows_for_csv,
    run_situation,
    write_results_csv,
    write_summary_json,
)

DESK_LENGTH = 256
DESK_PER_CLASS = 150
DESK_DATA_SEED = 7777
DESK_TRAIN_FRACTION = 0.9

# One desk amplitude unit; the reference noise level is 10 of these.
DESK_UNIT = 0.012
DESK_EPS = 10 * DESK_UNIT
DESK_ALPHA = 1 * DESK_UNIT

DESK_EPOCHS = 24
DESK_WARMUP_EPOCH = 11
DESK_JR_WEIGHT = 1.0
DESK_NSR_EPS_MAX = DESK_UNIT
DESK_NSR_BETA = 1.0

TPRIME_SWEEP = (0, 10, 20, 30, 40)
EPS_SWEEP_UNITS = (5, 10, 15, 20, 25)


def desk_train_attack_params() -> AttackParams:
    """Attack settings used while generating training batches."""
    return AttackParams(
        eps=DESK_EPS, alpha=DESK_ALPHA, steps=5, smooth_steps=5,
        clip_anchor="original",
    )


def desk_headline_attack_params() -> AttackParams:
    """The strong evaluation attack: 20 gradient steps, 40 smoothing steps."""
    return AttackParams(
        eps=DESK_EPS, alpha=DESK_ALPHA, steps=20, smooth_steps=40,
        clip_anchor="original",
    )


def desk_plan(seed: int, epochs: int = DESK_EPOCHS) -> TrainPlan:
    return TrainPlan(
        attack=desk_train_attack_params(),
        epochs_first=epochs,
        epochs_second=epochs,
        batch_size=16,
        learning_rate=0.001,
        seed=seed,
        temperature=1.0,
        mix_c=0.5,
        regularizer=RegularizerConfig(
            jr_weight=DESK_JR_WEIGHT,
            nsr_eps_max=DESK_NSR_EPS_MAX,
            nsr_beta=DESK_NSR_BETA,
        ),
        regularizer_warmup_epoch=DESK_WARMUP_EPOCH,
        model_spec="desk",
        input_length=DESK_LENGTH,
        num_classes=4,
    )


def desk_dataset(per_class: int = DESK_PER_CLASS, length: int = DESK_LENGTH,
                 seed: int = DESK_DATA_SEED):
    return synthesize_ecg(per_class, length, seed)


def desk_config_snapshot(seeds, per_class, epochs) -> dict:
    return {
        "kind": "desk-reproduction",
        "length": DESK_LENGTH,
        "per_class": per_class,
        "data_seed": DESK_DATA_SEED,
        "train_fraction": DESK_TRAIN_FRACTION,
        "unit": DESK_UNIT,
        "epochs": epochs,
        "seeds": list(seeds),
        "train_attack": desk_train_attack_params().to_dict(),
        "headline_attack": desk_headline_attack_params().to_dict(),
        "tprime_sweep": list(TPRIME_SWEEP),
        "eps_sweep_units": list(EPS_SWEEP_UNITS),
        "jr_weight": DESK_JR_WEIGHT,
        "nsr_eps_max": DESK_NSR_EPS_MAX,
        "nsr_beta": DESK_NSR_BETA,
    }


def train_all_defenses(
    train_data, plan: TrainPlan, methods=METHODS, progress=None
) -> dict[str, TrainedDefense]:
    defenses = {}
    for method in methods:
        started = time.time()
        defenses[method] = train_defense(train_data, plan, method)
        if progress is not None:
            progress(f"trained {method} (seed {plan.seed}) "
                     f"in {time.time() - started:.1f}s")
    return defenses


def run_desk_reproduction(
    output_dir,
    seeds=(0, 1, 2),
    per_class: int = DESK_PER_CLASS,
    epochs: int = DESK_EPOCHS,
    threads: int = 1,
    sweep_situation: str = "I",
    save_models: bool = False,
    progress=None,
) -> dict:
    """The full desk pipeline: data, eight defenses per seed, both
    situations, both sweeps, CSV/JSON results, and report figures.

    Returns a dict with the output paths and the in-memory protocol runs.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    def report(message: str) -> None:
        if progress is not None:
            progress(message)

    dataset = desk_dataset(per_class=per_class)
    headline = desk_headline_attack_params()
    runs: list[ProtocolRun] = []
    all_defenses: dict[int, dict[str, TrainedDefense]] = {}
    test_arrays: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    for seed in seeds:
        train_set, test_set = split_dataset(dataset, DESK_TRAIN_FRACTION, seed)
        X_test, y_test = test_set.to_arrays()
        test_arrays[seed] = (X_test, y_test)
        plan = desk_plan(seed, epochs=epochs)
        defenses = train_all_defenses(train_set, plan, progress=progress)
        all_defenses[seed] = defenses
        if save_models:
            for method, defense in defenses.items():
                save_defense(defense, output_dir / f"seed{seed}" / method)
        ordered = [defenses[m] for m in METHODS]
        source = defenses["none"]

        for situation in ("I", "II"):
            run = run_situation(
                situation, ordered, source, headline, X_test, y_test,
                seed=seed, threads=threads,
            )
            runs.append(run)
            report(f"seed {seed}: situation {situation} done")

        runs.extend(
            parameter_sweep(
                "tprime", TPRIME_SWEEP, headline, sweep_situation, ordered,
                source, X_test, y_test, seed=seed, threads=threads,
            )
        )
        report(f"seed {seed}: smoothing-step sweep done")
        eps_values = [u * DESK_UNIT for u in EPS_SWEEP_UNITS]
        runs.extend(
            parameter_sweep(
                "eps", eps_values, headline, sweep_situation, ordered, source,
                X_test, y_test, seed=seed, threads=threads,
            )
        )
        report(f"seed {seed}: noise-level sweep done")

    results_csv = write_results_csv(runs, output_dir / "results.csv")
    summary_json = write_summary_json(runs, output_dir / "summary.json")
    rows = rows_for_csv(runs)

    sweep_figure(
        [r for r in rows if r["axis"] == "tprime"],
        "smoothing steps", output_dir / "sweep_tprime.png",
    )
    sweep_figure(
        [r for r in rows if r["axis"] == "eps"],
        "noise level", output_dir / "sweep_eps.png",
    )
    situation_bar_figure(rows, output_dir / "situations.png")

    # One illustrative trace: jagged vs smoothed perturbation on a test sample.
    from .attacks import craft_pgd, craft_sap

    seed0 = seeds[0]
    X0, y0 = test_arrays[seed0]
    source_model = all_defenses[seed0]["none"].deployable
    jagged, _ = craft_pgd(source_model, X0[:1], y0[:1],
                          replace(headline, smooth_steps=0))
    smoothed, _, _ = craft_sap(source_model, X0[:1], y0[:1], headline)
    perturbation_figure(
        X0[0], jagged[0], smoothed[0], output_dir / "perturbation_example.png"
    )

    snapshot = desk_config_snapshot(seeds, per_class, epochs)
    (output_dir / "config.json").write_text(json.dumps(snapshot, indent=2))

    return {
        "output_dir": output_dir,
        "results_csv": results_csv,
        "summary_json": summary_json,
        "runs": runs,
        "defenses": all_defenses,
        "test_arrays": test_arrays,
        "config": snapshot,
    }
