"""Command-line entry point for reproducible experiment runs.

Subcommands wire the data pipeline, trainers, attacks, and evaluation
protocols together. Every run writes its artifacts under one output
directory together with a config snapshot sufficient to replay it; nothing
outside that directory is touched. Values resolve as flags over config
file over desk defaults. The ECGDEFEND_OUTPUT_ROOT environment variable
supplies the default root for relative output paths.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import pipeline
from .attacks import (
    AdversarialExample,
    AttackParams,
    adversarial_set_id,
    boundary_attack,
    craft_pgd,
    craft_sap,
    data_digest,
    save_adversarial_set,
)
from .data import (
    Dataset,
    convert_cinc_directory,
    load_records,
    preprocess_dataset,
    rebalance,
    save_records,
    split_dataset,
    synthesize_ecg,
)
from .defenses import METHODS, TrainPlan, load_defense, save_defense, train_defense
from .figures import situation_bar_figure, sweep_figure
from .models import load_model, predict_batch
from .protocols import (
    parameter_sweep,
    rows_for_csv,
    run_boundary_eval,
    run_situation,
    write_results_csv,
    write_summary_json,
)

OUTPUT_ROOT_VAR = "ECGDEFEND_OUTPUT_ROOT"


@dataclass
class ExperimentConfig:
    """Aggregated, validated settings for one experiment run."""

    dataset: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    defense: str = "none"
    plan: TrainPlan | None = None
    attack: AttackParams | None = None
    protocol: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "."

    def validate(self) -> list[str]:
        problems = []
        if not self.dataset:
            problems.append("dataset: neither a path nor a synthetic spec given")
        elif "path" in self.dataset:
            if not Path(self.dataset["path"]).exists():
                problems.append(f"dataset: path {self.dataset['path']} does not exist")
        elif "synthetic" in self.dataset:
            spec = self.dataset["synthetic"]
            if spec.get("per_class", 1) < 1:
                problems.append("dataset: synthetic per_class must be >= 1")
            if spec.get("length", 64) < 64:
                problems.append("dataset: synthetic length must be >= 64")
        else:
            problems.append("dataset: expected a 'path' or 'synthetic' entry")
        if self.defense not in METHODS:
            problems.append(
                f"defense: {self.defense!r} is not one of {', '.join(METHODS)}"
            )
        if self.plan is not None:
            problems.extend(f"plan: {p}" for p in self.plan.validate())
        if self.attack is not None:
            problems.extend(f"attack: {p}" for p in self.attack.validate())
        situation = self.protocol.get("situation")
        if situation is not None and situation not in ("I", "II", "boundary"):
            problems.append(f"protocol: unknown situation {situation!r}")
        axis = self.protocol.get("axis")
        if axis is not None and axis not in ("tprime", "eps"):
            problems.append(f"protocol: unknown sweep axis {axis!r}")
        if not self.seeds:
            problems.append("seeds: at least one seed is required")
        return problems


def _resolve_out(out: str) -> Path:
    path = Path(out)
    root = os.environ.get(OUTPUT_ROOT_VAR)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _snapshot(out_dir: Path, payload: dict) -> None:
    (out_dir / "config.json").write_text(json.dumps(payload, indent=2, default=str))


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_prepared(data_dir: str, part: str) -> Dataset:
    """Read one part of a prepared data directory (train/ and test/ layout),
    falling back to a flat directory with its own index.csv."""
    base = Path(data_dir)
    candidate = base / part
    if (candidate / "index.csv").exists():
        return load_records(candidate, candidate / "index.csv")
    if (base / "index.csv").exists():
        return load_records(base, base / "index.csv")
    _fail(f"no index.csv under {base} or {candidate}")


def _attack_from_flags(config: dict, **flags) -> AttackParams:
    base = pipeline.desk_headline_attack_params().to_dict()
    base.update(config.get("attack", {}))
    for key, value in flags.items():
        if value is not None:
            base[key] = value
    return AttackParams.from_dict(base)


def _plan_from_flags(config: dict, **flags) -> TrainPlan:
    base = pipeline.desk_plan(seed=0).to_dict()
    base.update(config.get("plan", {}))
    for key, value in flags.items():
        if value is not None:
            base[key] = value
    return TrainPlan.from_dict(base)


@click.group()
def main() -> None:
    """Attacks, defenses, and evaluation for 1D signal classifiers."""


@main.group()
def data() -> None:
    """Dataset preparation utilities."""


@data.command("prepare")
@click.option("--synthetic", is_flag=True, help="Generate the synthetic corpus.")
@click.option("--source", type=click.Path(exists=True), default=None,
              help="Directory of records to ingest.")
@click.option("--cinc", is_flag=True,
              help="Treat --source as challenge-native .mat records.")
@click.option("--per-class", type=int, default=pipeline.DESK_PER_CLASS,
              show_default=True)
@click.option("--length", type=int, default=pipeline.DESK_LENGTH, show_default=True)
@click.option("--data-seed", type=int, default=pipeline.DESK_DATA_SEED,
              show_default=True)
@click.option("--target-length", type=int, default=None,
              help="Canonical length; defaults to 9000 for real data.")
@click.option("--rebalance/--no-rebalance", "do_rebalance", default=None,
              help="Duplicate minority classes; defaults on for real data.")
@click.option("--noise-copies", type=int, default=5, show_default=True)
@click.option("--af-copies", type=int, default=1, show_default=True)
@click.option("--split", "split_fraction", type=float, default=0.9,
              show_default=True)
@click.option("--split-seed", type=int, default=0, show_default=True)
@click.option("--split-first", is_flag=True,
              help="Leakage-safe mode: split before duplication.")
@click.option("--out", required=True, type=click.Path())
def data_prepare(synthetic, source, cinc, per_class, length, data_seed,
                 target_length, do_rebalance, noise_copies, af_copies,
                 split_fraction, split_seed, split_first, out):
    """Build a train/test layout from synthetic or real records."""
    if synthetic == (source is not None):
        _fail("exactly one of --synthetic or --source is required")
    out_dir = _resolve_out(out)
    try:
        if synthetic:
            dataset = synthesize_ecg(per_class, length, data_seed)
            if do_rebalance is None:
                do_rebalance = False
        else:
            if cinc:
                staging = out_dir / "converted"
                convert_cinc_directory(source, staging)
                dataset = load_records(staging, staging / "index.csv")
            else:
                dataset = load_records(source, Path(source) / "index.csv")
            if target_length is None:
                target_length = 9000
            if do_rebalance is None:
                do_rebalance = True
        if target_length is not None:
            dataset = preprocess_dataset(dataset, target_length)

        if split_first:
            train_set, test_set = split_dataset(dataset, split_fraction, split_seed)
            if do_rebalance:
                train_set = rebalance(train_set, noise_copies, af_copies)
        else:
            if do_rebalance:
                dataset = rebalance(dataset, noise_copies, af_copies)
            train_set, test_set = split_dataset(dataset, split_fraction, split_seed)

        save_records(train_set, out_dir / "train")
        save_records(test_set, out_dir / "test")
    except Exception as exc:  # noqa: BLE001 - single-line reason contract
        _fail(str(exc))
    _snapshot(out_dir, {
        "command": "data prepare",
        "synthetic": synthetic, "source": source, "cinc": cinc,
        "per_class": per_class, "length": length, "data_seed": data_seed,
        "target_length": target_length, "rebalance": do_rebalance,
        "noise_copies": noise_copies, "af_copies": af_copies,
        "split": split_fraction, "split_seed": split_seed,
        "split_first": split_first,
        "train_count": len(train_set), "test_count": len(test_set),
    })
    click.echo(f"prepared {len(train_set)} train / {len(test_set)} test records "
               f"under {out_dir}")


@main.command()
@click.option("--defense", required=True, type=click.Choice(METHODS))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None,
              help="Prepared data directory; overrides the config dataset.")
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
def train(defense, config_path, data_dir, seed, epochs, out):
    """Train one defense method and write its models, log, and manifest."""
    out_dir = _resolve_out(out)
    config = _load_config_file(config_path)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if epochs is not None:
        overrides["epochs_first"] = epochs
        overrides["epochs_second"] = epochs
    plan = _plan_from_flags(config, **overrides)
    dataset_spec = config.get("dataset", {})
    if data_dir is not None:
        dataset_spec = {"path": data_dir}
    experiment = ExperimentConfig(
        dataset=dataset_spec, defense=defense, plan=plan,
        seeds=[plan.seed], output_dir=str(out_dir),
    )
    problems = experiment.validate()
    if problems:
        click.echo("invalid config:", err=True)
        for problem in problems:
            click.echo(f"  - {problem}", err=True)
        sys.exit(1)
    try:
        if "path" in dataset_spec:
            train_set = _load_prepared(dataset_spec["path"], "train")
        else:
            spec = dataset_spec["synthetic"]
            train_set = synthesize_ecg(
                spec.get("per_class", pipeline.DESK_PER_CLASS),
                spec.get("length", plan.input_length),
                spec.get("seed", pipeline.DESK_DATA_SEED),
            )
        trained = train_defense(train_set, plan, defense)
        save_defense(trained, out_dir)
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))
    _snapshot(out_dir, {
        "command": "train", "defense": defense, "plan": plan.to_dict(),
        "dataset": dataset_spec,
    })
    click.echo(f"trained {defense}: deployable model "
               f"{trained.deployable.model_id()} under {out_dir}")


@main.command()
@click.option("--method", required=True, type=click.Choice(["pgd", "sap", "boundary"]))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True),
              help="Model file (.npz) or defense directory.")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--eps", type=float, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--smooth-steps", type=int, default=None)
@click.option("--clip-anchor", type=click.Choice(["previous", "original"]),
              default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--budget", type=int, default=2000, show_default=True,
              help="Query budget per sample for the boundary method.")
@click.option("--pairs", type=int, default=12, show_default=True)
@click.option("--rng-seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def attack(method, model_path, data_dir, eps, alpha, steps, smooth_steps,
           clip_anchor, temperature, budget, pairs, rng_seed, out):
    """Craft an adversarial set against a model and persist it with a manifest."""
    out_dir = _resolve_out(out)
    try:
        model_path = Path(model_path)
        model = (
            load_defense(model_path).deployable
            if model_path.is_dir()
            else load_model(model_path)
        )
        dataset = _load_prepared(data_dir, "test")
        X, y = dataset.to_arrays()
        params = _attack_from_flags(
            {}, eps=eps, alpha=alpha, steps=steps, smooth_steps=smooth_steps,
            clip_anchor=clip_anchor, temperature=temperature,
        )
        examples: list[AdversarialExample] = []
        if method == "boundary":
            rng = np.random.default_rng(rng_seed)
            predictions, _ = predict_batch(model, X)
            correct = np.flatnonzero(predictions == y)
            order = rng.permutation(correct)[:pairs]
            for victim_index in order:
                candidates = [j for j in correct if y[j] != y[victim_index]]
                if not candidates:
                    continue
                seed_index = int(rng.choice(candidates))
                examples.append(
                    boundary_attack(
                        lambda s: int(predict_batch(model, s[None, :])[0][0]),
                        X[victim_index], X[seed_index], budget=budget,
                        rng_seed=int(rng.integers(2**31 - 1)),
                        target_class=int(y[seed_index]),
                    )
                )
            set_id = f"boundary-{model.model_id()}"
        else:
            if method == "pgd":
                adv, delta = craft_pgd(model, X, y, params)
                applied = delta
            else:
                adv, delta, applied = craft_sap(model, X, y, params)
            set_id = adversarial_set_id(model.model_id(), params, data_digest(X, y))
            for i in range(X.shape[0]):
                examples.append(AdversarialExample(
                    original=X[i], delta=delta[i], applied=applied[i],
                    adversarial=adv[i], label=int(y[i]),
                    provenance={"attack": method, "params": params.to_dict(),
                                "source_model": model.model_id()},
                ))
        save_adversarial_set(examples, out_dir / set_id, set_id,
                             meta={"method": method, "model": model.model_id()})
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))
    _snapshot(out_dir, {
        "command": "attack", "method": method, "model": str(model_path),
        "data": str(data_dir), "params": params.to_dict(), "set_id": set_id,
        "samples": len(examples), "budget": budget, "pairs": pairs,
        "rng_seed": rng_seed,
    })
    click.echo(f"crafted {len(examples)} samples into {out_dir / set_id}")


def _load_defenses(paths) -> list:
    return [load_defense(p) for p in paths]


@main.command()
@click.option("--situation", type=click.Choice(["I", "II"]), default=None)
@click.option("--protocol", "protocol_name", type=click.Choice(["boundary"]),
              default=None)
@click.option("--source", "source_dir", required=True,
              type=click.Path(exists=True))
@click.option("--models", "model_dirs", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--eps", type=float, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--smooth-steps", type=int, default=None)
@click.option("--clip-anchor", type=click.Choice(["previous", "original"]),
              default=None)
@click.option("--budget", type=int, default=2000, show_default=True)
@click.option("--pairs", type=int, default=12, show_default=True)
@click.option("--eval-seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path())
def evaluate(situation, protocol_name, source_dir, model_dirs, data_dir, eps,
             alpha, steps, smooth_steps, clip_anchor, budget, pairs, eval_seed,
             threads, out):
    """Score defended models under a situation or the boundary protocol."""
    if (situation is None) == (protocol_name is None):
        _fail("exactly one of --situation or --protocol is required")
    out_dir = _resolve_out(out)
    try:
        source = load_defense(source_dir)
        defended = _load_defenses(model_dirs)
        dataset = _load_prepared(data_dir, "test")
        X, y = dataset.to_arrays()
        if protocol_name == "boundary":
            run = run_boundary_eval(
                defended, source, X, y, budget=budget, rng_seed=eval_seed,
                n_pairs=pairs,
            )
            runs = [run]
        else:
            params = _attack_from_flags(
                {}, eps=eps, alpha=alpha, steps=steps, smooth_steps=smooth_steps,
                clip_anchor=clip_anchor,
            )
            runs = [run_situation(situation, defended, source, params, X, y,
                                  seed=eval_seed, output_dir=out_dir / "sets",
                                  threads=threads)]
        write_results_csv(runs, out_dir / "results.csv")
        write_summary_json(runs, out_dir / "summary.json")
        situation_bar_figure(rows_for_csv(runs), out_dir / "situations.png")
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))
    _snapshot(out_dir, {
        "command": "evaluate", "situation": situation, "protocol": protocol_name,
        "source": str(source_dir), "models": [str(m) for m in model_dirs],
        "data": str(data_dir), "eval_seed": eval_seed,
    })
    click.echo(f"results written to {out_dir / 'results.csv'}")


@main.command()
@click.option("--axis", required=True, type=click.Choice(["tprime", "eps"]))
@click.option("--values", required=True,
              help="Comma-separated axis values, e.g. 0,10,20,30,40.")
@click.option("--situation", type=click.Choice(["I", "II"]), default="I",
              show_default=True)
@click.option("--source", "source_dir", required=True,
              type=click.Path(exists=True))
@click.option("--models", "model_dirs", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--eps", type=float, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--eval-seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path())
def sweep(axis, values, situation, source_dir, model_dirs, data_dir, eps, alpha,
          steps, eval_seed, threads, out):
    """Hold everything fixed and sweep one attack parameter."""
    out_dir = _resolve_out(out)
    try:
        parsed = [float(v) for v in values.split(",") if v.strip()]
        if not parsed:
            _fail("--values parsed to an empty list")
        source = load_defense(source_dir)
        defended = _load_defenses(model_dirs)
        dataset = _load_prepared(data_dir, "test")
        X, y = dataset.to_arrays()
        params = _attack_from_flags({}, eps=eps, alpha=alpha, steps=steps)
        runs = parameter_sweep(axis, parsed, params, situation, defended, source,
                               X, y, seed=eval_seed, threads=threads)
        write_results_csv(runs, out_dir / "results.csv")
        write_summary_json(runs, out_dir / "summary.json")
        label = "smoothing steps" if axis == "tprime" else "noise level"
        sweep_figure(rows_for_csv(runs), label, out_dir / f"sweep_{axis}.png")
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))
    _snapshot(out_dir, {
        "command": "sweep", "axis": axis, "values": parsed,
        "situation": situation, "source": str(source_dir),
        "models": [str(m) for m in model_dirs], "data": str(data_dir),
        "eval_seed": eval_seed,
    })
    click.echo(f"sweep results written to {out_dir / 'results.csv'}")


@main.command("reproduce-desk")
@click.option("--seeds", default="0,1,2", show_default=True,
              help="Comma-separated training seeds.")
@click.option("--per-class", type=int, default=pipeline.DESK_PER_CLASS,
              show_default=True)
@click.option("--epochs", type=int, default=pipeline.DESK_EPOCHS,
              show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--save-models", is_flag=True)
@click.option("--out", required=True, type=click.Path())
def reproduce_desk(seeds, per_class, epochs, threads, save_models, out):
    """Run the full desk pipeline: data, eight defenses, situations, sweeps."""
    out_dir = _resolve_out(out)
    seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    if not seed_list:
        _fail("--seeds parsed to an empty list")
    try:
        result = pipeline.run_desk_reproduction(
            out_dir, seeds=seed_list, per_class=per_class, epochs=epochs,
            threads=threads, save_models=save_models,
            progress=lambda message: click.echo(message),
        )
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))
    click.echo(f"desk reproduction complete: {result['results_csv']}")


if __name__ == "__main__":
    main()
