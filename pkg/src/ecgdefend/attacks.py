"""White-box and black-box adversarial attacks on 1D signal classifiers.

Implements elementwise clipping, iterative sign-gradient attacks (PGD), the
smoothed-perturbation attack (SAP) built on a Gaussian kernel bank, a
low-pass Hanning filter, and a decision-based boundary attack. Crafted
sample sets persist to a checksummed, append-only manifest so a shared
adversarial set can be reused auditable across evaluations.

All attacks are pure functions of (frozen model, input, params, rng seed)
and may run in parallel across samples; the boundary attack serializes its
own query stream per sample.
"""

from __future__ import annotations

import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .models import (
    ClassifierModel,
    hard_label_loss_graph,
    soft_label_loss_graph,
)

PAPER_KERNEL_SIZES = (5, 7, 11, 15, 19)
PAPER_KERNEL_STDS = (1.0, 3.0, 5.0, 7.0, 10.0)


class AttackError(RuntimeError):
    """An attack could not run or aborted on a non-finite gradient."""


@dataclass(frozen=True)
class AttackParams:
    """Knobs shared by the white-box attacks.

    eps and alpha are in raw signal amplitude units. `clip_anchor`
    selects what each iterate is clipped against: "previous" keeps the
    literal per-step bound (cumulative deviation can reach steps * alpha),
    "original" enforces the total budget |x_adv - x|_inf <= eps.
    """

    eps: float
    alpha: float
    steps: int = 5
    smooth_steps: int = 5
    kernel_sizes: tuple[int, ...] = PAPER_KERNEL_SIZES
    kernel_stds: tuple[float, ...] = PAPER_KERNEL_STDS
    clip_anchor: str = "previous"
    temperature: float = 1.0

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))

    def validate(self) -> list[str]:
        problems = []
        if not self.eps > 0:
            problems.append(f"eps must be > 0, got {self.eps}")
        if not self.alpha > 0:
            problems.append(f"alpha must be > 0, got {self.alpha}")
        if self.steps < 0:
            problems.append(f"steps must be >= 0, got {self.steps}")
        if self.smooth_steps < 0:
            problems.append(f"smooth_steps must be >= 0, got {self.smooth_steps}")
        if len(self.kernel_sizes) != len(self.kernel_stds):
            problems.append(
                f"{len(self.kernel_sizes)} kernel sizes paired with "
                f"{len(self.kernel_stds)} stds"
            )
        for s in self.kernel_sizes:
            if s < 1 or s % 2 == 0:
                problems.append(f"kernel sizes must be odd and >= 1, got {s}")
        for sd in self.kernel_stds:
            if not sd > 0:
                problems.append(f"kernel stds must be > 0, got {sd}")
        if self.clip_anchor not in ("previous", "original"):
            problems.append(f"clip_anchor must be previous|original, got "
                            f"{self.clip_anchor!r}")
        if not self.temperature > 0:
            problems.append(f"temperature must be > 0, got {self.temperature}")
        return problems

    @property
    def bank_size(self) -> int:
        return len(self.kernel_sizes)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "alpha": self.alpha,
            "steps": self.steps,
            "smooth_steps": self.smooth_steps,
            "kernel_sizes": list(self.kernel_sizes),
            "kernel_stds": list(self.kernel_stds),
            "clip_anchor": self.clip_anchor,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AttackParams":
        return cls(
            eps=float(data["eps"]),
            alpha=float(data["alpha"]),
            steps=int(data.get("steps", 5)),
            smooth_steps=int(data.get("smooth_steps", 5)),
            kernel_sizes=tuple(int(s) for s in
                               data.get("kernel_sizes", PAPER_KERNEL_SIZES)),
            kernel_stds=tuple(float(s) for s in
                              data.get("kernel_stds", PAPER_KERNEL_STDS)),
            clip_anchor=data.get("clip_anchor", "previous"),
            temperature=float(data.get("temperature", 1.0)),
        )


# -- primitives ---------------------------------------------------------------


def clip(candidate: np.ndarray, anchor: np.ndarray, eps: float) -> np.ndarray:
    """Project each element into [anchor_j - eps, anchor_j + eps]."""
    candidate = np.asarray(candidate, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if candidate.shape != anchor.shape:
        raise ShapeError(
            f"clip shapes differ: {candidate.shape} vs {anchor.shape}"
        )
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    return np.clip(candidate, anchor - eps, anchor + eps)


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    """Normalized Gaussian kernel of odd length `size`.

    Entry j (0-based) is exp(-(j - M)^2 / (2 std^2)) with M = (size - 1) / 2,
    divided by the sum over all entries, so the kernel sums to 1 and is
    symmetric about its center.
    """
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {size}")
    if not std > 0:
        raise ValueError(f"kernel std must be > 0, got {std}")
    half = (size - 1) // 2
    offsets = np.arange(size, dtype=np.float64) - half
    weights = np.exp(-(offsets**2) / (2.0 * std * std))
    return weights / weights.sum()


@dataclass(frozen=True)
class KernelBank:
    """The Gaussian kernels used to smooth a perturbation, paired by index."""

    kernels: tuple[np.ndarray, ...]

    @classmethod
    def from_params(cls, params: AttackParams) -> "KernelBank":
        return cls(
            tuple(
                gaussian_kernel(s, sd)
                for s, sd in zip(params.kernel_sizes, params.kernel_stds)
            )
        )

    @property
    def max_length(self) -> int:
        return max(len(k) for k in self.kernels)


def smooth_perturbation(delta: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Average of the perturbation convolved with each kernel in the bank.

    Out-of-range samples read as zero, matching the zero padding applied to
    short signals elsewhere in the pipeline, which keeps the operation
    linear in the perturbation.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 1:
        raise ShapeError(f"expected a 1D perturbation, got shape {delta.shape}")
    if delta.size < bank.max_length:
        raise ShapeError(
            f"perturbation of length {delta.size} is shorter than the largest "
            f"kernel ({bank.max_length})"
        )
    total = np.zeros_like(delta)
    for kernel in bank.kernels:
        total = total + np.convolve(delta, kernel, mode="same")
    return total / len(bank.kernels)


def hanning_filter(signal: np.ndarray, window_length: int) -> np.ndarray:
    """Convolve with a sum-normalized Hanning window, zero-padded edges."""
    if window_length < 1 or window_length % 2 == 0:
        raise ValueError(
            f"window length must be odd and >= 1, got {window_length}"
        )
    signal = np.asarray(signal, dtype=np.float64)
    window = np.hanning(window_length)
    window = window / window.sum()
    return np.convolve(signal, window, mode="same")


# -- white-box attacks -----------------------------------------------------------


@dataclass
class AdversarialExample:
    """One crafted sample: original, raw and applied perturbations, provenance.

    `adversarial` always equals `original + applied` exactly. For PGD the
    applied perturbation is the raw delta itself; for SAP it is the
    kernel-bank average of the stored delta.
    """

    original: np.ndarray
    delta: np.ndarray
    applied: np.ndarray
    adversarial: np.ndarray
    label: int
    provenance: dict = field(default_factory=dict)


def _loss_and_input_grad(
    model: ClassifierModel,
    signals: np.ndarray,
    targets: np.ndarray,
    temperature: float,
) -> np.ndarray:
    """Gradient wrt the input of the summed per-sample attack loss."""
    params = {k: Tensor(v, op=f"param:{k}") for k, v in model.parameters.items()}
    x = Tensor(signals[:, None, :], op="input:x")
    probs = ad.softmax_temperature(model.logits_graph(params, x), temperature)
    loss = _attack_loss(probs, targets)
    loss.backward()
    grad = x.grad[:, 0, :]
    if not np.all(np.isfinite(grad)):
        raise AttackError("non-finite input gradient during attack iteration")
    return grad


def _attack_loss(probs: Tensor, targets: np.ndarray) -> Tensor:
    # Per-sample losses are summed, not averaged: sign() ignores the scale
    # and the sum keeps each sample's gradient independent of batch size.
    batch = probs.data.shape[0]
    if targets.ndim == 1:
        return hard_label_loss_graph(probs, targets) * float(batch)
    return soft_label_loss_graph(probs, targets) * float(batch)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def _as_targets(y, batch: int, num_classes: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim == 0:
        arr = arr[None]
    if arr.ndim == 1 and arr.shape == (batch,):
        return arr.astype(np.intp)
    if arr.ndim == 2 and arr.shape == (batch, num_classes):
        return arr.astype(np.float64)
    raise ShapeError(
        f"targets of shape {np.asarray(y).shape} do not match batch {batch}"
    )


def pgd_iterates(
    model: ClassifierModel,
    signals: np.ndarray,
    targets: np.ndarray,
    params: AttackParams,
    record_steps: bool = False,
) -> tuple[np.ndarray, list[float]]:
    """Run the sign-gradient iteration on a (B, L) batch.

    Each step ascends the attack loss by alpha * sign(grad) and clips
    against the configured anchor; sign(0) is 0. Returns the final batch
    and, when requested, the sup-norm of every accepted step.
    """
    current = signals.copy()
    step_norms: list[float] = []
    for _ in range(params.steps):
        grad = _loss_and_input_grad(model, current, targets, params.temperature)
        candidate = current + params.alpha * np.sign(grad)
        anchor = current if params.clip_anchor == "previous" else signals
        updated = clip(candidate, anchor, params.eps)
        if record_steps:
            step_norms.append(float(np.abs(updated - current).max()))
        current = updated
    return current, step_norms


def _sap_delta_grad(
    model: ClassifierModel,
    originals: np.ndarray,
    delta: np.ndarray,
    targets: np.ndarray,
    temperature: float,
    bank: KernelBank,
) -> np.ndarray:
    """Gradient wrt the raw perturbation of the loss at x + smoothed(delta)."""
    params = {k: Tensor(v, op=f"param:{k}") for k, v in model.parameters.items()}
    d = Tensor(delta[:, None, :], op="input:delta")
    smoothed = None
    for kernel in bank.kernels:
        k = Tensor(kernel[None, None, :], op="const:kernel")
        term = ad.conv1d(d, k, padding=(len(kernel) - 1) // 2)
        smoothed = term if smoothed is None else ad.add(smoothed, term)
    smoothed = ad.mul(smoothed, 1.0 / len(bank.kernels))
    x_adv = ad.add(Tensor(originals[:, None, :], op="const:x"), smoothed)
    probs = ad.softmax_temperature(model.logits_graph(params, x_adv), temperature)
    loss = _attack_loss(probs, targets)
    loss.backward()
    grad = d.grad[:, 0, :]
    if not np.all(np.isfinite(grad)):
        raise AttackError("non-finite perturbation gradient during attack iteration")
    return grad


def sap_iterates(
    model: ClassifierModel,
    originals: np.ndarray,
    delta0: np.ndarray,
    targets: np.ndarray,
    params: AttackParams,
    bank: KernelBank,
) -> np.ndarray:
    """Refine a raw perturbation so its smoothed form stays adversarial.

    With clip_anchor "previous" each update is bounded against the previous
    perturbation iterate, exactly as the update rule is written; with
    "original" the perturbation is kept inside the global eps ball, so the
    smoothed form (a convex combination per sample) stays inside it too.
    """
    delta = delta0.copy()
    zero = np.zeros_like(delta)
    for _ in range(params.smooth_steps):
        grad = _sap_delta_grad(
            model, originals, delta, targets, params.temperature, bank
        )
        candidate = delta + params.alpha * np.sign(grad)
        anchor = delta if params.clip_anchor == "previous" else zero
        delta = clip(candidate, anchor, params.eps)
    return delta


def craft_pgd(
    model: ClassifierModel,
    signals: np.ndarray,
    labels,
    params: AttackParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Batch PGD: returns (adversarial signals, perturbations)."""
    batch, _ = _as_batch(signals)
    targets = _as_targets(labels, batch.shape[0], model.num_classes)
    adv, _ = pgd_iterates(model, batch, targets, params)
    return adv, adv - batch


def craft_sap(
    model: ClassifierModel,
    signals: np.ndarray,
    labels,
    params: AttackParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch SAP: returns (adversarial signals, raw deltas, applied perturbations).

    Stage 1 is plain PGD; stage 2 updates the raw perturbation while the
    loss sees its kernel-smoothed form. With zero smoothing steps the attack
    degenerates to PGD exactly and no smoothing is applied at all.
    """
    batch, _ = _as_batch(signals)
    targets = _as_targets(labels, batch.shape[0], model.num_classes)
    adv, _ = pgd_iterates(model, batch, targets, params)
    delta = adv - batch
    if params.smooth_steps == 0:
        return adv, delta, delta.copy()
    bank = KernelBank.from_params(params)
    if batch.shape[1] < bank.max_length:
        raise ShapeError(
            f"signals of length {batch.shape[1]} are shorter than the largest "
            f"kernel ({bank.max_length})"
        )
    delta = sap_iterates(model, batch, delta, targets, params, bank)
    applied = np.stack([smooth_perturbation(row, bank) for row in delta])
    return batch + applied, delta, applied


def _label_scalar(label) -> int:
    arr = np.asarray(label)
    if arr.ndim <= 1 and arr.size == 1:
        return int(arr.reshape(-1)[0])
    return -1  # soft-label target; no single class index


def pgd_attack(
    model: ClassifierModel, signal: np.ndarray, label, params: AttackParams
) -> AdversarialExample:
    """Non-targeted sign-gradient attack on one signal."""
    x = np.asarray(signal, dtype=np.float64)
    adv, delta = craft_pgd(model, x, label, params)
    provenance = {
        "attack": "pgd",
        "params": params.to_dict(),
        "source_model": model.model_id(),
    }
    return AdversarialExample(
        original=x,
        delta=delta[0],
        applied=delta[0].copy(),
        adversarial=x + delta[0],
        label=_label_scalar(label),
        provenance=provenance,
    )


def sap_attack(
    model: ClassifierModel, signal: np.ndarray, label, params: AttackParams
) -> AdversarialExample:
    """Smoothed-perturbation attack on one signal.

    The returned applied perturbation is the kernel-bank average of the
    stored raw delta (or the delta itself when smooth_steps is 0, where the
    attack is bit-identical to PGD).
    """
    x = np.asarray(signal, dtype=np.float64)
    adv, delta, applied = craft_sap(model, x, label, params)
    provenance = {
        "attack": "sap",
        "params": params.to_dict(),
        "source_model": model.model_id(),
    }
    return AdversarialExample(
        original=x,
        delta=delta[0],
        applied=applied[0],
        adversarial=x + applied[0],
        label=_label_scalar(label),
        provenance=provenance,
    )


# -- black-box boundary attack -----------------------------------------------------


def boundary_attack(
    query: Callable[[np.ndarray], int],
    victim: np.ndarray,
    target_seed: np.ndarray,
    budget: int,
    rng_seed: int,
    target_class: int | None = None,
    window_length: int = 21,
    initial_step: float = 0.2,
) -> AdversarialExample:
    """Decision-based search from a target-class sample toward the victim.

    Every proposal's perturbation (difference from the victim) is smoothed
    with a Hanning filter before querying the oracle. A proposal is accepted
    only if the oracle still reports the target class and its Euclidean
    distance to the victim does not increase, so the accepted-step distance
    sequence is monotone non-increasing. Step sizes adapt toward roughly a
    quarter of proposals being accepted.

    Raises AttackError if the seed sample is not classified as the target
    class (when target_class is omitted, the oracle's verdict on the seed
    defines it). If the budget runs out without any improvement over the
    seed, the best candidate so far is returned with provenance flag
    improved=False.
    """
    if budget <= 0:
        raise ValueError(f"budget must be > 0, got {budget}")
    victim = np.asarray(victim, dtype=np.float64)
    current = np.asarray(target_seed, dtype=np.float64).copy()
    if victim.shape != current.shape:
        raise ShapeError("victim and seed sample must have equal lengths")
    rng = np.random.default_rng(rng_seed)

    queries = 0

    def ask(candidate: np.ndarray) -> int:
        nonlocal queries
        queries += 1
        return int(query(candidate))

    seed_class = ask(current)
    if target_class is None:
        target_class = seed_class
    elif seed_class != target_class:
        raise AttackError(
            f"seed sample is classified as {seed_class}, not the target class "
            f"{target_class}"
        )

    initial_distance = float(np.linalg.norm(current - victim))
    best = current.copy()
    best_distance = initial_distance
    accepted_distances = [initial_distance]
    ortho_step = initial_step
    source_step = 0.1
    accepted = 0
    ortho_history: list[bool] = []
    source_history: list[bool] = []

    def bisect_inward() -> None:
        """Shrink the perturbation radially to the verified boundary scale.

        Pure rescaling of an already-accepted perturbation, so it adds no
        frequency content; every accepted scale was queried as target class.
        """
        nonlocal best, best_distance, accepted
        offset = best - victim
        low, high = 0.0, 1.0
        improved_scale = None
        for _ in range(10):
            if queries >= budget:
                break
            mid = 0.5 * (low + high)
            if ask(victim + offset * mid) == target_class:
                high = mid
                improved_scale = mid
            else:
                low = mid
        if improved_scale is not None:
            best = victim + offset * improved_scale
            best_distance = float(np.linalg.norm(offset) * improved_scale)
            accepted_distances.append(best_distance)
            accepted += 1

    bisect_inward()
    proposals = 0
    while queries < budget and best_distance > 0.0:
        proposals += 1
        if proposals % 50 == 0:
            bisect_inward()
            continue
        # Orthogonal phase: wander on the sphere around the victim. The added
        # noise is low-passed by the Hanning filter before the proposal is
        # queried, and the perturbation is rescaled back to the current
        # radius, so an accepted move never increases the distance.
        noise = hanning_filter(rng.normal(size=victim.shape), window_length)
        norm = float(np.linalg.norm(noise))
        if norm == 0.0:
            continue
        noise *= ortho_step * best_distance / norm
        offset = best + noise - victim
        offset_norm = float(np.linalg.norm(offset))
        if offset_norm == 0.0:
            continue
        offset *= best_distance / offset_norm
        verdict = ask(victim + offset)
        moved = verdict == target_class
        ortho_history.append(moved)
        if moved:
            best = victim + offset
            accepted_distances.append(best_distance)
            accepted += 1
            if queries < budget:
                # Source phase: contract straight toward the victim; pure
                # rescaling adds no frequency content.
                contracted = offset * (1.0 - source_step)
                verdict = ask(victim + contracted)
                stepped = verdict == target_class
                source_history.append(stepped)
                if stepped:
                    best = victim + contracted
                    best_distance = float(np.linalg.norm(contracted))
                    accepted_distances.append(best_distance)
                    accepted += 1
        if len(ortho_history) >= 10:
            rate = sum(ortho_history) / len(ortho_history)
            ortho_step = (
                min(ortho_step * 1.3, 1.0) if rate > 0.5
                else max(ortho_step * 0.7, 1e-5)
            )
            ortho_history.clear()
        if len(source_history) >= 5:
            rate = sum(source_history) / len(source_history)
            source_step = (
                min(source_step * 1.3, 0.5) if rate > 0.5
                else max(source_step * 0.7, 1e-5)
            )
            source_history.clear()

    applied = best - victim
    provenance = {
        "attack": "boundary",
        "target_class": target_class,
        "queries": queries,
        "accepted_steps": accepted,
        "accepted_distances": accepted_distances,
        "initial_distance": initial_distance,
        "final_distance": best_distance,
        "improved": best_distance < initial_distance,
        "window_length": window_length,
        "rng_seed": rng_seed,
    }
    return AdversarialExample(
        original=victim,
        delta=applied.copy(),
        applied=applied,
        adversarial=best,
        label=target_class,
        provenance=provenance,
    )


# -- persistence -----------------------------------------------------------------


MANIFEST_NAME = "manifest.jsonl"


def adversarial_set_id(source_model_id: str, params: AttackParams,
                       data_digest: str) -> str:
    payload = json.dumps(
        {"source": source_model_id, "params": params.to_dict(), "data": data_digest},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def data_digest(signals: np.ndarray, labels: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(signals, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(labels, dtype=np.int64).tobytes())
    return digest.hexdigest()[:12]


def _example_bytes(example: AdversarialExample) -> bytes:
    buffer = io.BytesIO()
    np.savez(
        buffer,
        original=example.original,
        delta=example.delta,
        applied=example.applied,
        adversarial=example.adversarial,
        label=np.int64(example.label),
        provenance=np.frombuffer(
            json.dumps(example.provenance, sort_keys=True).encode(), dtype=np.uint8
        ),
    )
    return buffer.getvalue()


def save_adversarial_set(
    examples: Sequence[AdversarialExample],
    directory,
    set_id: str,
    meta: dict | None = None,
) -> Path:
    """Persist samples and append them to the set's checksummed manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / MANIFEST_NAME
    lines = []
    if not manifest.exists():
        header = {
            "set_id": set_id,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "meta": meta or {},
        }
        lines.append(json.dumps(header, sort_keys=True))
        start = 0
    else:
        with open(manifest) as fh:
            start = sum(1 for _ in fh) - 1
    for offset, example in enumerate(examples):
        payload = _example_bytes(example)
        name = f"sample_{start + offset:05d}.npz"
        (directory / name).write_bytes(payload)
        lines.append(
            json.dumps(
                {"file": name, "sha256": hashlib.sha256(payload).hexdigest()},
                sort_keys=True,
            )
        )
    with open(manifest, "a") as fh:
        for line in lines:
            fh.write(line + "\n")
    return manifest


def load_adversarial_set(directory) -> tuple[dict, list[AdversarialExample]]:
    """Read a persisted set back, verifying every checksum."""
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest at {manifest}")
    with open(manifest) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    header, entries = records[0], records[1:]
    examples = []
    for entry in entries:
        payload = (directory / entry["file"]).read_bytes()
        actual = hashlib.sha256(payload).hexdigest()
        if actual != entry["sha256"]:
            raise IOError(f"checksum mismatch for {entry['file']}")
        with np.load(io.BytesIO(payload)) as archive:
            examples.append(
                AdversarialExample(
                    original=archive["original"],
                    delta=archive["delta"],
                    applied=archive["applied"],
                    adversarial=archive["adversarial"],
                    label=int(archive["label"]),
                    provenance=json.loads(bytes(archive["provenance"]).decode()),
                )
            )
    return header, examples
