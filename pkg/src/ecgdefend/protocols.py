"""Attack-evaluation protocols: shared-source and self-attack situations,
parameter sweeps, and the black-box boundary evaluation.

Situation I crafts one adversarial set against a source model and scores
every defended model on that identical set; Situation II re-crafts the set
against each defended model itself. Evaluating the source model under
Situation I coincides with its Situation II evaluation by construction.

Results serialize to CSV (one row per model and condition) plus a JSON
summary of means and standard deviations over repetition seeds. Figures are
rendered elsewhere, from these rows.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import (
    AdversarialExample,
    AttackParams,
    adversarial_set_id,
    boundary_attack,
    craft_sap,
    data_digest,
    save_adversarial_set,
)
from .defenses import TrainedDefense
from .metrics import MetricsReport, confusion_matrix, f1_scores
from .models import ClassifierModel, predict_batch


class ProtocolError(ValueError):
    pass


@dataclass
class EvalRow:
    method: str
    model_id: str
    manifest_id: str
    clean_accuracy: float
    metrics: MetricsReport


@dataclass
class ProtocolRun:
    situation: str
    source_model_id: str
    attack_params: AttackParams | None
    rows: list[EvalRow]
    seed: int | None = None
    axis: str | None = None
    axis_value: float | None = None
    extra: dict = field(default_factory=dict)


def _clean_accuracy(model: ClassifierModel, X: np.ndarray, y: np.ndarray) -> float:
    pred, _ = predict_batch(model, X)
    return float(np.mean(pred == y))


def _evaluate_on(model: ClassifierModel, X: np.ndarray, y: np.ndarray) -> MetricsReport:
    pred, _ = predict_batch(model, X)
    return f1_scores(confusion_matrix(pred, y))


def _craft_set(
    model: ClassifierModel, X: np.ndarray, y: np.ndarray, params: AttackParams
) -> tuple[str, np.ndarray]:
    adv, _, _ = craft_sap(model, X, y, params)
    manifest_id = adversarial_set_id(model.model_id(), params, data_digest(X, y))
    return manifest_id, adv


def _persist_set(
    directory, manifest_id: str, originals, adversarials, deltas, applied, labels,
    params: AttackParams, source_id: str,
) -> None:
    examples = []
    for i in range(originals.shape[0]):
        examples.append(
            AdversarialExample(
                original=originals[i],
                delta=deltas[i],
                applied=applied[i],
                adversarial=adversarials[i],
                label=int(labels[i]),
                provenance={
                    "attack": "sap",
                    "params": params.to_dict(),
                    "source_model": source_id,
                },
            )
        )
    save_adversarial_set(
        examples, Path(directory) / manifest_id, manifest_id,
        meta={"source_model": source_id, "params": params.to_dict()},
    )


def run_situation(
    situation: str,
    defended: list[TrainedDefense],
    source: TrainedDefense,
    attack_params: AttackParams,
    X_test: np.ndarray,
    y_test: np.ndarray,
    seed: int | None = None,
    output_dir=None,
    threads: int = 1,
) -> ProtocolRun:
    """Score every defended model under the chosen protocol.

    Situation "I" reuses one adversarial set crafted against the source
    model, so the same manifest id appears in every row. Situation "II"
    crafts a fresh set against each defended model, giving pairwise distinct
    manifest ids that each reference their own model. Reports carry the
    performance drop relative to each model's clean test accuracy.
    """
    if situation not in ("I", "II"):
        raise ProtocolError(f"situation must be I or II, got {situation!r}")
    if not defended:
        raise ProtocolError("need at least one defended model")
    X = np.asarray(X_test, dtype=np.float64)
    y = np.asarray(y_test, dtype=np.intp)
    source_model = source.deployable
    rows: list[EvalRow] = []

    if situation == "I":
        manifest_id, adv = _craft_set(source_model, X, y, attack_params)
        if output_dir is not None:
            _persist_set(output_dir, manifest_id, X, adv, adv - X, adv - X, y,
                         attack_params, source_model.model_id())

        def score(defense: TrainedDefense) -> EvalRow:
            model = defense.deployable
            clean = _clean_accuracy(model, X, y)
            report = _evaluate_on(model, adv, y).with_drop(clean)
            return EvalRow(defense.method, model.model_id(), manifest_id, clean,
                           report)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(score, defended))
        else:
            rows = [score(d) for d in defended]
    else:

        def score_self(defense: TrainedDefense) -> EvalRow:
            model = defense.deployable
            manifest_id, adv = _craft_set(model, X, y, attack_params)
            if output_dir is not None:
                _persist_set(output_dir, manifest_id, X, adv, adv - X, adv - X, y,
                             attack_params, model.model_id())
            clean = _clean_accuracy(model, X, y)
            report = _evaluate_on(model, adv, y).with_drop(clean)
            return EvalRow(defense.method, model.model_id(), manifest_id, clean,
                           report)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(score_self, defended))
        else:
            rows = [score_self(d) for d in defended]

    return ProtocolRun(
        situation=situation,
        source_model_id=source_model.model_id(),
        attack_params=attack_params,
        rows=rows,
        seed=seed,
    )


def parameter_sweep(
    axis: str,
    values,
    fixed_params: AttackParams,
    situation: str,
    defended: list[TrainedDefense],
    source: TrainedDefense,
    X_test: np.ndarray,
    y_test: np.ndarray,
    seed: int | None = None,
    threads: int = 1,
) -> list[ProtocolRun]:
    """One ProtocolRun per axis value; every (value, model) cell is present.

    axis "tprime" varies the smoothing iteration count; axis "eps" varies
    the noise level with zero smoothing steps, which reduces the attack to
    its sign-gradient first stage.
    """
    if axis not in ("tprime", "eps"):
        raise ProtocolError(f"axis must be tprime or eps, got {axis!r}")
    values = list(values)
    if not values:
        raise ProtocolError("sweep needs at least one value")
    runs = []
    for value in values:
        if axis == "tprime":
            params = replace(fixed_params, smooth_steps=int(value))
        else:
            params = replace(fixed_params, eps=float(value), smooth_steps=0)
        run = run_situation(
            situation, defended, source, params, X_test, y_test, seed=seed,
            threads=threads,
        )
        run.axis = axis
        run.axis_value = float(value)
        runs.append(run)
    return runs


def run_boundary_eval(
    defended: list[TrainedDefense],
    source: TrainedDefense,
    X_test: np.ndarray,
    y_test: np.ndarray,
    budget: int,
    rng_seed: int,
    n_pairs: int = 12,
    window_length: int = 21,
    success_distance_fraction: float = 0.2,
    include_source_row: bool = True,
) -> ProtocolRun:
    """Craft boundary samples against the source model, score every defense.

    Victims are test samples the source classifies correctly; each is paired
    with a correctly classified sample of another class as the target-class
    seed. A crafted sample counts as successful when it ends within the
    given fraction of its initial distance to the victim while the source
    still reports the target class; the source therefore scores 0 on the
    successful set, and a defended model scores the fraction it assigns back
    to the victims' true classes.
    """
    X = np.asarray(X_test, dtype=np.float64)
    y = np.asarray(y_test, dtype=np.intp)
    source_model = source.deployable

    def oracle(signal: np.ndarray) -> int:
        pred, _ = predict_batch(source_model, signal[None, :])
        return int(pred[0])

    predictions, _ = predict_batch(source_model, X)
    correct = np.flatnonzero(predictions == y)
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(correct)

    successes: list[AdversarialExample] = []
    true_labels: list[int] = []
    attempted = 0
    for victim_index in order:
        if attempted >= n_pairs:
            break
        victim_class = int(y[victim_index])
        candidates = [
            j for j in correct if y[j] != victim_class and j != victim_index
        ]
        if not candidates:
            continue
        seed_index = int(rng.choice(candidates))
        attempted += 1
        example = boundary_attack(
            oracle,
            X[victim_index],
            X[seed_index],
            budget=budget,
            rng_seed=int(rng.integers(2**31 - 1)),
            target_class=int(y[seed_index]),
            window_length=window_length,
        )
        final = example.provenance["final_distance"]
        initial = example.provenance["initial_distance"]
        if final <= success_distance_fraction * initial:
            successes.append(example)
            true_labels.append(victim_class)

    rows: list[EvalRow] = []
    manifest_id = f"boundary-{source_model.model_id()}"
    if successes:
        adv = np.stack([e.adversarial for e in successes])
        truth = np.array(true_labels, dtype=np.intp)
        scored = defended + ([source] if include_source_row else [])
        for defense in scored:
            model = defense.deployable
            clean = _clean_accuracy(model, X, y)
            report = _evaluate_on(model, adv, truth).with_drop(clean)
            rows.append(
                EvalRow(defense.method, model.model_id(), manifest_id, clean, report)
            )
    return ProtocolRun(
        situation="boundary",
        source_model_id=source_model.model_id(),
        attack_params=None,
        rows=rows,
        seed=rng_seed,
        extra={
            "budget": budget,
            "pairs_attempted": attempted,
            "successful_samples": len(successes),
            "empty": not successes,
        },
    )


# -- result serialization ----------------------------------------------------------


CSV_COLUMNS = (
    "method", "situation", "axis", "axis_value", "seed", "clean_accuracy",
    "accuracy", "f1_normal", "f1_af", "f1_other", "f1_noise", "macro_f1",
    "drop_pct", "manifest_id",
)


def rows_for_csv(runs: list[ProtocolRun]) -> list[dict]:
    out = []
    for run in runs:
        for row in run.rows:
            f1 = row.metrics.f1_per_class
            out.append(
                {
                    "method": row.method,
                    "situation": run.situation,
                    "axis": run.axis or "",
                    "axis_value": "" if run.axis_value is None else run.axis_value,
                    "seed": "" if run.seed is None else run.seed,
                    "clean_accuracy": row.clean_accuracy,
                    "accuracy": row.metrics.accuracy,
                    "f1_normal": f1["Normal"],
                    "f1_af": f1["AF"],
                    "f1_other": f1["Other"],
                    "f1_noise": f1["Noise"],
                    "macro_f1": row.metrics.macro_f1,
                    "drop_pct": "" if row.metrics.drop_pct is None
                    else row.metrics.drop_pct,
                    "manifest_id": row.manifest_id,
                }
            )
    return out


def write_results_csv(runs: list[ProtocolRun], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows_for_csv(runs):
            writer.writerow(row)
    return path


def write_summary_json(runs: list[ProtocolRun], path) -> Path:
    """Group rows over seeds and emit mean and standard deviation per group."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows_for_csv(runs):
        key = (row["method"], row["situation"], row["axis"], row["axis_value"])
        groups.setdefault(key, []).append(row)
    summary = []
    for (method, situation, axis, axis_value), rows in sorted(
        groups.items(), key=lambda item: [str(k) for k in item[0]]
    ):
        entry = {
            "method": method,
            "situation": situation,
            "axis": axis,
            "axis_value": axis_value,
            "n": len(rows),
        }
        for column in ("clean_accuracy", "accuracy", "macro_f1", "drop_pct"):
            values = [float(r[column]) for r in rows if r[column] != ""]
            if values:
                entry[column] = {
                    "mean": float(np.mean(values)),
                    "std": float(np.std(values)),
                }
        summary.append(entry)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2))
    return path
