"""Training procedures and regularization penalties for robust classifiers.

Covers plain training, adversarial training on a mixed natural/adversarial
loss, two-stage distillation onto temperature-softened soft labels, the
combined adversarial-distillation procedure with its two single-stage
variants, and input-gradient (Jacobian) and noise-to-signal-ratio
penalties.

Degenerate gating is exact: with a zero adversarial mixing weight the
adversarial trainers consume no extra randomness and build the same loss
tape as their plain counterparts, so parameter traces are bit-identical
under shared seeds.

The penalty value functions are exact first-order quantities. Training
with a penalty uses a finite-difference surrogate for the penalty's
parameter gradient, since differentiating through an input gradient would
need higher-order derivatives, which the tape engine deliberately omits.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .attacks import AttackParams, craft_sap
from .models import (
    ClassifierModel,
    build_model,
    hard_label_loss_graph,
    load_model,
    save_model,
    softmax_with_temperature,
    soft_label_loss_graph,
)

METHODS = ("none", "at", "dd", "adt", "init-adt", "dist-adt", "jr", "nsr")
DISTILLATION_METHODS = ("dd", "adt", "init-adt", "dist-adt")

_FD_STEP = 1e-3
_RATIO_FLOOR = 1e-12


class TrainingError(RuntimeError):
    """Training diverged or was configured inconsistently."""


@dataclass(frozen=True)
class RegularizerConfig:
    """Weights of the gradient penalties; all zero disables them."""

    jr_weight: float = 0.0
    nsr_eps_max: float = 0.0
    nsr_beta: float = 0.0

    def validate(self) -> list[str]:
        problems = []
        for name in ("jr_weight", "nsr_eps_max", "nsr_beta"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0, got {getattr(self, name)}")
        return problems


@dataclass
class TrainPlan:
    """Everything a trainer needs to be reproducible from its seed."""

    attack: AttackParams
    epochs_first: int = 100
    epochs_second: int = 100
    batch_size: int = 16
    learning_rate: float = 0.001
    seed: int = 0
    temperature: float = 1.0
    stage2_temperature: float | None = None
    mix_c: float = 0.5
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    regularizer_warmup_epoch: int = 11
    model_spec: str = "desk"
    input_length: int = 512
    num_classes: int = 4

    def validate(self) -> list[str]:
        problems = []
        if self.epochs_first < 1:
            problems.append(f"epochs_first must be >= 1, got {self.epochs_first}")
        if self.epochs_second < 1:
            problems.append(f"epochs_second must be >= 1, got {self.epochs_second}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.temperature > 0:
            problems.append(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.mix_c <= 1.0:
            problems.append(f"mix_c must be in [0, 1], got {self.mix_c}")
        if self.regularizer_warmup_epoch < 1:
            problems.append(
                f"regularizer_warmup_epoch must be >= 1, got "
                f"{self.regularizer_warmup_epoch}"
            )
        problems.extend(self.attack.validate())
        problems.extend(self.regularizer.validate())
        return problems

    @property
    def stage2_T(self) -> float:
        return (
            self.temperature
            if self.stage2_temperature is None
            else self.stage2_temperature
        )

    def to_dict(self) -> dict:
        return {
            "epochs_first": self.epochs_first,
            "epochs_second": self.epochs_second,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "temperature": self.temperature,
            "stage2_temperature": self.stage2_temperature,
            "mix_c": self.mix_c,
            "regularizer": {
                "jr_weight": self.regularizer.jr_weight,
                "nsr_eps_max": self.regularizer.nsr_eps_max,
                "nsr_beta": self.regularizer.nsr_beta,
            },
            "regularizer_warmup_epoch": self.regularizer_warmup_epoch,
            "model_spec": self.model_spec,
            "input_length": self.input_length,
            "num_classes": self.num_classes,
            "attack": self.attack.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainPlan":
        attack = AttackParams.from_dict(data["attack"])
        regularizer = RegularizerConfig(**data.get("regularizer", {}))
        fields = {
            k: data[k]
            for k in (
                "epochs_first", "epochs_second", "batch_size", "learning_rate",
                "seed", "temperature", "stage2_temperature", "mix_c",
                "regularizer_warmup_epoch", "model_spec", "input_length",
                "num_classes",
            )
            if k in data
        }
        return cls(attack=attack, regularizer=regularizer, **fields)


@dataclass
class EpochLog:
    stage: int
    epoch: int
    loss: float
    loss_natural: float
    loss_adversarial: float | None
    penalty: float
    train_accuracy: float
    param_digest: str


@dataclass
class TrainedDefense:
    """A defense method tag with its trained network(s) and training log.

    Distillation-family methods carry exactly two models; all others carry
    one. The deployable model is always the last.
    """

    method: str
    models: list[ClassifierModel]
    training_log: list[EpochLog]
    plan: TrainPlan

    def __post_init__(self):
        if self.method not in METHODS:
            raise TrainingError(f"unknown defense method {self.method!r}")
        expected = 2 if self.method in DISTILLATION_METHODS else 1
        if len(self.models) != expected:
            raise TrainingError(
                f"method {self.method!r} must carry {expected} model(s), "
                f"got {len(self.models)}"
            )

    @property
    def deployable(self) -> ClassifierModel:
        return self.models[-1]


# -- optimizer -------------------------------------------------------------------


class Adam:
    """Adaptive-moment descent with the usual decay constants."""

    def __init__(self, parameters: dict[str, np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.parameters = parameters
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in parameters.items()}
        self.v = {k: np.zeros_like(v) for k, v in parameters.items()}

    def step(self, gradients: dict[str, np.ndarray]) -> None:
        self.t += 1
        for key, grad in gradients.items():
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad * grad
            m_hat = self.m[key] / (1 - self.beta1**self.t)
            v_hat = self.v[key] / (1 - self.beta2**self.t)
            self.parameters[key] = self.parameters[key] - self.lr * m_hat / (
                np.sqrt(v_hat) + self.eps
            )


# -- shared training internals ------------------------------------------------------


def _as_training_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(data, "to_arrays"):
        return data.to_arrays()
    X, y = data
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.intp)


def _param_digest(model: ClassifierModel) -> str:
    digest = hashlib.sha256()
    for key in sorted(model.parameters):
        digest.update(model.parameters[key].tobytes())
    return digest.hexdigest()[:16]


def _wrap_params(model: ClassifierModel) -> dict[str, Tensor]:
    return {k: Tensor(v, op=f"param:{k}") for k, v in model.parameters.items()}


def _probs_graph(model, params_t, signals, temperature):
    x = Tensor(np.asarray(signals)[:, None, :], op="input:x")
    logits = model.logits_graph(params_t, x)
    return logits, ad.softmax_temperature(logits, temperature)


def _loss_graph(probs, targets) -> Tensor:
    if targets.ndim == 1:
        return hard_label_loss_graph(probs, targets)
    return soft_label_loss_graph(probs, targets)


def _selected_logit_input_grad(
    model: ClassifierModel, signals: np.ndarray, indices: np.ndarray,
    temperature: float | None = None,
) -> np.ndarray:
    """Per-sample input gradient of the chosen output entry, one backward pass.

    With `temperature` set, the output is the probability row; otherwise the
    raw logit row.
    """
    params_t = _wrap_params(model)
    x = Tensor(np.asarray(signals)[:, None, :], op="input:x")
    out = model.logits_graph(params_t, x)
    if temperature is not None:
        out = ad.softmax_temperature(out, temperature)
    picked = ad.gather_rows(out, indices)
    ad.reduce_sum(picked).backward()
    return x.grad[:, 0, :]


def _epoch_indices(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _train_stage(
    model: ClassifierModel,
    X: np.ndarray,
    hard_labels: np.ndarray,
    soft_targets: np.ndarray | None,
    plan: TrainPlan,
    epochs: int,
    stage: int,
    stage_temperature: float,
    rng: np.random.Generator,
    log: list[EpochLog],
    generate_adversarial: bool,
    regularizer: str | None = None,
) -> None:
    """Run `epochs` of mini-batch descent on one network, appending to `log`.

    Adversarial samples are generated per batch against the current
    parameters and enter through the mixed loss; with mix_c == 0 the
    adversarial branch is skipped entirely so the tape and the randomness
    stream match plain training exactly. A regularizer contributes from the
    warmup epoch onward.
    """
    adam = Adam(model.parameters, plan.learning_rate)
    use_adversarial = generate_adversarial and plan.mix_c > 0
    attack_params = replace(plan.attack, temperature=stage_temperature)
    targets_all = soft_targets if soft_targets is not None else hard_labels
    n = X.shape[0]
    for epoch in range(1, epochs + 1):
        reg_active = regularizer is not None and epoch >= plan.regularizer_warmup_epoch
        sum_total = sum_nat = sum_adv = sum_pen = 0.0
        batches = 0
        correct = 0
        for batch_idx in _epoch_indices(n, plan.batch_size, rng):
            Xb = X[batch_idx]
            tb = targets_all[batch_idx]
            yb = hard_labels[batch_idx]
            adv_X = None
            if use_adversarial:
                adv_X, _, _ = craft_sap(model, Xb, tb, attack_params)
            params_t = _wrap_params(model)
            logits_t, probs_t = _probs_graph(model, params_t, Xb, stage_temperature)
            loss_nat = _loss_graph(probs_t, tb)
            if adv_X is not None:
                _, probs_adv = _probs_graph(model, params_t, adv_X, stage_temperature)
                loss_adv = _loss_graph(probs_adv, tb)
                total = ad.add(
                    ad.mul(loss_adv, plan.mix_c),
                    ad.mul(loss_nat, 1.0 - plan.mix_c),
                )
            else:
                loss_adv = None
                total = loss_nat
            penalty_t = None
            if reg_active:
                if regularizer == "jr":
                    penalty_t = _jr_surrogate(
                        model, params_t, Xb, plan.regularizer.jr_weight,
                        stage_temperature, rng,
                    )
                elif regularizer == "nsr":
                    penalty_t = _nsr_surrogate(
                        model, params_t, logits_t, Xb, yb,
                        plan.regularizer.nsr_eps_max, plan.regularizer.nsr_beta,
                    )
                else:
                    raise TrainingError(f"unknown regularizer {regularizer!r}")
                total = ad.add(total, penalty_t)
            if not np.isfinite(total.data):
                raise TrainingError(
                    f"non-finite loss at stage {stage}, epoch {epoch}"
                )
            total.backward()
            adam.step({
                k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in params_t.items()
            })
            sum_total += float(total.data)
            sum_nat += float(loss_nat.data)
            sum_adv += float(loss_adv.data) if loss_adv is not None else 0.0
            sum_pen += float(penalty_t.data) if penalty_t is not None else 0.0
            correct += int((probs_t.data.argmax(axis=1) == yb).sum())
            batches += 1
        log.append(
            EpochLog(
                stage=stage,
                epoch=epoch,
                loss=sum_total / batches,
                loss_natural=sum_nat / batches,
                loss_adversarial=(sum_adv / batches) if use_adversarial else None,
                penalty=sum_pen / batches,
                train_accuracy=correct / n,
                param_digest=_param_digest(model),
            )
        )


def _validated(plan: TrainPlan) -> TrainPlan:
    problems = plan.validate()
    if problems:
        raise TrainingError("invalid training plan: " + "; ".join(problems))
    return plan


def _soft_labels(model: ClassifierModel, X: np.ndarray, temperature: float,
                 chunk: int = 1024) -> np.ndarray:
    rows = []
    for start in range(0, X.shape[0], chunk):
        rows.append(
            softmax_with_temperature(model.logits(X[start : start + chunk]),
                                     temperature)
        )
    return np.concatenate(rows, axis=0)


# -- public trainers ------------------------------------------------------------------


def train_standard(data, plan: TrainPlan) -> TrainedDefense:
    """Minimize the hard-label loss for epochs_first epochs. The baseline."""
    plan = _validated(plan)
    X, y = _as_training_arrays(data)
    rng = np.random.default_rng(plan.seed)
    model = build_model(plan.model_spec, plan.input_length, plan.num_classes,
                        plan.seed)
    model.temperature = plan.temperature
    log: list[EpochLog] = []
    _train_stage(model, X, y, None, plan, plan.epochs_first, 1, plan.temperature,
                 rng, log, generate_adversarial=False)
    return TrainedDefense("none", [model], log, plan)


def train_adversarial(data, plan: TrainPlan) -> TrainedDefense:
    """Single-network training on the weighted natural/adversarial mixture.

    Each mini-batch crafts smoothed adversarial samples against the current
    parameters, and one update follows the final gradient computation.
    """
    plan = _validated(plan)
    X, y = _as_training_arrays(data)
    rng = np.random.default_rng(plan.seed)
    model = build_model(plan.model_spec, plan.input_length, plan.num_classes,
                        plan.seed)
    model.temperature = plan.temperature
    log: list[EpochLog] = []
    _train_stage(model, X, y, None, plan, plan.epochs_first, 1, plan.temperature,
                 rng, log, generate_adversarial=True)
    return TrainedDefense("at", [model], log, plan)


def train_distilled(data, plan: TrainPlan) -> TrainedDefense:
    """Two-stage distillation: train, relabel with soft labels, train again.

    Both networks share the architecture and train from scratch at the
    plan's temperature (stage 2 optionally at its own). The deployable
    model is the second network.
    """
    plan = _validated(plan)
    X, y = _as_training_arrays(data)
    rng = np.random.default_rng(plan.seed)
    log: list[EpochLog] = []
    first = build_model(plan.model_spec, plan.input_length, plan.num_classes,
                        plan.seed)
    first.temperature = plan.temperature
    _train_stage(first, X, y, None, plan, plan.epochs_first, 1, plan.temperature,
                 rng, log, generate_adversarial=False)
    soft = _soft_labels(first, X, plan.temperature)
    second = build_model(plan.model_spec, plan.input_length, plan.num_classes,
                         plan.seed + 1)
    second.temperature = plan.stage2_T
    _train_stage(second, X, y, soft, plan, plan.epochs_second, 2, plan.stage2_T,
                 rng, log, generate_adversarial=False)
    return TrainedDefense("dd", [first, second], log, plan)


_ADT_VARIANTS = {
    "full": ("adt", True, True),
    "init-only": ("init-adt", True, False),
    "dist-only": ("dist-adt", False, True),
}


def train_adt(data, plan: TrainPlan, variant: str = "full") -> TrainedDefense:
    """Distillation with adversarial samples mixed into the selected stages.

    variant "full" crafts adversarial batches in both stages, "init-only"
    only while training the first network, "dist-only" only while training
    the second. A stage without adversarial samples reduces exactly to its
    plain-distillation counterpart.
    """
    if variant not in _ADT_VARIANTS:
        raise TrainingError(f"unknown variant {variant!r}")
    method, adv_first, adv_second = _ADT_VARIANTS[variant]
    plan = _validated(plan)
    X, y = _as_training_arrays(data)
    rng = np.random.default_rng(plan.seed)
    log: list[EpochLog] = []
    first = build_model(plan.model_spec, plan.input_length, plan.num_classes,
                        plan.seed)
    first.temperature = plan.temperature
    _train_stage(first, X, y, None, plan, plan.epochs_first, 1, plan.temperature,
                 rng, log, generate_adversarial=adv_first)
    soft = _soft_labels(first, X, plan.temperature)
    second = build_model(plan.model_spec, plan.input_length, plan.num_classes,
                         plan.seed + 1)
    second.temperature = plan.stage2_T
    _train_stage(second, X, y, soft, plan, plan.epochs_second, 2, plan.stage2_T,
                 rng, log, generate_adversarial=adv_second)
    return TrainedDefense(method, [first, second], log, plan)


def train_regularized(data, plan: TrainPlan, kind: str) -> TrainedDefense:
    """Standard training plus a gradient penalty from the warmup epoch on."""
    if kind not in ("jr", "nsr"):
        raise TrainingError(f"unknown regularizer {kind!r}")
    plan = _validated(plan)
    config = plan.regularizer
    if kind == "jr" and config.jr_weight == 0:
        raise TrainingError("jr training needs a positive jr_weight")
    if kind == "nsr" and config.nsr_beta == 0:
        raise TrainingError("nsr training needs a positive nsr_beta")
    X, y = _as_training_arrays(data)
    rng = np.random.default_rng(plan.seed)
    model = build_model(plan.model_spec, plan.input_length, plan.num_classes,
                        plan.seed)
    model.temperature = plan.temperature
    log: list[EpochLog] = []
    _train_stage(model, X, y, None, plan, plan.epochs_first, 1, plan.temperature,
                 rng, log, generate_adversarial=False, regularizer=kind)
    return TrainedDefense(kind, [model], log, plan)


def train_defense(data, plan: TrainPlan, method: str) -> TrainedDefense:
    """Dispatch on the defense method roster."""
    if method == "none":
        return train_standard(data, plan)
    if method == "at":
        return train_adversarial(data, plan)
    if method == "dd":
        return train_distilled(data, plan)
    if method == "adt":
        return train_adt(data, plan, "full")
    if method == "init-adt":
        return train_adt(data, plan, "init-only")
    if method == "dist-adt":
        return train_adt(data, plan, "dist-only")
    if method in ("jr", "nsr"):
        return train_regularized(data, plan, method)
    raise TrainingError(f"unknown defense method {method!r}")


# -- penalties (exact values) -----------------------------------------------------------


def jacobian_penalty(
    model: ClassifierModel,
    signals: np.ndarray,
    weight: float,
    on: str = "probabilities",
    temperature: float = 1.0,
) -> float:
    """weight times the batch-mean squared Frobenius norm of the output's
    input Jacobian.

    `on` selects the probability output (default) or raw logits; the logits
    mode exists for closed-form checks against linear maps.
    """
    if weight < 0:
        raise ValueError(f"weight must be >= 0, got {weight}")
    if weight == 0:
        return 0.0
    X = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    batch = X.shape[0]
    t = temperature if on == "probabilities" else None
    squared = np.zeros(batch)
    for class_index in range(model.num_classes):
        grad = _selected_logit_input_grad(
            model, X, np.full(batch, class_index, dtype=np.intp), temperature=t
        )
        squared += (grad * grad).sum(axis=1)
    return weight * float(squared.mean())


def nsr_penalty(
    model: ClassifierModel,
    signals: np.ndarray,
    labels: np.ndarray,
    eps_max: float,
    beta: float,
) -> float:
    """Noise-to-signal penalty on the true-class logit plus a margin hinge.

    For each sample the worst-case true-class logit change under an
    inf-norm noise bound is eps_max times the L1 norm of that logit's input
    gradient. The penalty averages (change / |logit|) plus
    max(0, change - max(margin, 0)) over the batch and scales by beta.
    """
    if eps_max < 0 or beta < 0:
        raise ValueError("eps_max and beta must be >= 0")
    if beta == 0 or eps_max == 0:
        return 0.0
    X = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    y = np.asarray(labels, dtype=np.intp)
    logits = model.logits(X)
    rows = np.arange(X.shape[0])
    grad = _selected_logit_input_grad(model, X, y, temperature=None)
    change = eps_max * np.abs(grad).sum(axis=1)
    true_logit = logits[rows, y]
    masked = logits.copy()
    masked[rows, y] = -np.inf
    margin = true_logit - masked.max(axis=1)
    ratio = change / np.maximum(np.abs(true_logit), _RATIO_FLOOR)
    hinge = np.maximum(0.0, change - np.maximum(margin, 0.0))
    return beta * float(np.mean(ratio + hinge))


# -- penalty surrogates used inside the training tape --------------------------------


def _jr_surrogate(
    model: ClassifierModel,
    params_t: dict[str, Tensor],
    Xb: np.ndarray,
    weight: float,
    temperature: float,
    rng: np.random.Generator,
    step: float = _FD_STEP,
) -> Tensor:
    """Random-projection Jacobian estimate that is differentiable in theta.

    ||J v||^2 for a unit probe v estimates ||J||_F^2 / d, and the
    directional derivative J v is taken by central differences through two
    displaced forward passes, which keeps the whole term first-order.
    """
    batch, dim = Xb.shape
    probe = rng.normal(size=(batch, dim))
    probe /= np.linalg.norm(probe, axis=1, keepdims=True)
    _, probs_plus = _probs_graph(model, params_t, Xb + step * probe, temperature)
    _, probs_minus = _probs_graph(model, params_t, Xb - step * probe, temperature)
    directional = ad.mul(ad.sub(probs_plus, probs_minus), 1.0 / (2.0 * step))
    squared = ad.reduce_sum(ad.square(directional), axis=1)
    return ad.mul(ad.reduce_mean(squared), weight * dim)


def _nsr_surrogate(
    model: ClassifierModel,
    params_t: dict[str, Tensor],
    logits_t: Tensor,
    Xb: np.ndarray,
    yb: np.ndarray,
    eps_max: float,
    beta: float,
    step: float = _FD_STEP,
) -> Tensor:
    """Differentiable noise-to-signal term matching nsr_penalty's definition.

    The L1 gradient norm equals the directional derivative along the sign
    of the input gradient, so it is rebuilt from two displaced forward
    passes with the sign held constant.
    """
    rows = np.arange(Xb.shape[0])
    grad = _selected_logit_input_grad(model, Xb, yb, temperature=None)
    probe = np.sign(grad)
    logits_plus = model.logits_graph(
        params_t, Tensor((Xb + step * probe)[:, None, :], op="input:x+")
    )
    logits_minus = model.logits_graph(
        params_t, Tensor((Xb - step * probe)[:, None, :], op="input:x-")
    )
    change = ad.mul(
        ad.sub(ad.gather_rows(logits_plus, yb), ad.gather_rows(logits_minus, yb)),
        eps_max / (2.0 * step),
    )
    true_logit = ad.gather_rows(logits_t, yb)
    masked = logits_t.data.copy()
    masked[rows, yb] = -np.inf
    runner_up = masked.argmax(axis=1)
    margin = ad.sub(true_logit, ad.gather_rows(logits_t, runner_up))
    ratio = ad.div(change, ad.clamp_min(ad.absolute(true_logit), _RATIO_FLOOR))
    hinge = ad.relu(ad.sub(change, ad.relu(margin)))
    return ad.mul(ad.reduce_mean(ad.add(ratio, hinge)), beta)


# -- persistence -------------------------------------------------------------------------


def write_training_log(log: list[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["stage", "epoch", "loss", "loss_natural", "loss_adversarial",
             "penalty", "train_accuracy", "param_digest"]
        )
        for row in log:
            writer.writerow(
                [row.stage, row.epoch, f"{row.loss:.10g}",
                 f"{row.loss_natural:.10g}",
                 "" if row.loss_adversarial is None else
                 f"{row.loss_adversarial:.10g}",
                 f"{row.penalty:.10g}", f"{row.train_accuracy:.6f}",
                 row.param_digest]
            )


def save_defense(defense: TrainedDefense, directory) -> Path:
    """Model files plus a method-tag manifest and the training log CSV."""
    import json

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model_files = []
    for index, model in enumerate(defense.models, start=1):
        name = f"model_{index}.npz"
        save_model(model, directory / name)
        model_files.append(name)
    write_training_log(defense.training_log, directory / "training_log.csv")
    manifest = {
        "method": defense.method,
        "models": model_files,
        "model_ids": [m.model_id() for m in defense.models],
        "plan": defense.plan.to_dict(),
    }
    path = directory / "defense.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_defense(directory) -> TrainedDefense:
    import json

    directory = Path(directory)
    manifest = json.loads((directory / "defense.json").read_text())
    models = [load_model(directory / name) for name in manifest["models"]]
    plan = TrainPlan.from_dict(manifest["plan"])
    # Logs round-trip through CSV for inspection only; a reloaded defense
    # carries an empty in-memory log.
    return TrainedDefense(manifest["method"], models, [], plan)
