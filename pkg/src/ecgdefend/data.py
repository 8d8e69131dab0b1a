"""Loading, preprocessing, rebalancing, and synthesis of 1D ECG-style records.

The on-disk layout is a directory of per-record sample files (one numeric
sample per line, plain text) plus a CSV index mapping record id to label.
A converter ingests the 2017 PhysioNet/CinC challenge's native .mat records
into this layout. Datasets round-trip through the same layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LABELS = ("Normal", "AF", "Other", "Noise")
LABEL_TO_INDEX = {name: i for i, name in enumerate(LABELS)}

# Accepts both the spelled-out labels and the challenge's single-char tokens.
_LABEL_ALIASES = {
    "normal": "Normal",
    "n": "Normal",
    "af": "AF",
    "a": "AF",
    "other": "Other",
    "o": "Other",
    "noise": "Noise",
    "~": "Noise",
    "p": "Noise",
}


class DataError(ValueError):
    """Malformed index, missing record files, or unknown labels."""


def canonical_label(token: str) -> str:
    name = _LABEL_ALIASES.get(token.strip().lower())
    if name is None:
        raise DataError(f"unknown label token {token!r}")
    return name


@dataclass
class Record:
    """One variable-length trace in raw amplitude units with its class label."""

    id: str
    samples: np.ndarray
    label: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise DataError(f"record {self.id!r} has no samples")
        if self.label not in LABEL_TO_INDEX:
            raise DataError(f"record {self.id!r} has unknown label {self.label!r}")

    @property
    def label_index(self) -> int:
        return LABEL_TO_INDEX[self.label]


@dataclass
class Dataset:
    records: list[Record]
    provenance: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def class_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in LABELS}
        for record in self.records:
            counts[record.label] += 1
        return counts

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack into (X, y); requires records of uniform length."""
        lengths = {record.samples.size for record in self.records}
        if len(lengths) != 1:
            raise DataError(
                f"records have mixed lengths {sorted(lengths)}; preprocess first"
            )
        X = np.stack([record.samples for record in self.records])
        y = np.array([record.label_index for record in self.records], dtype=np.intp)
        return X, y

    def derive(self, records: list[Record], step: str) -> "Dataset":
        return Dataset(records, self.provenance + [step])


# -- loading and saving --------------------------------------------------------


def load_records(directory, index_file) -> Dataset:
    """Read records named by a CSV index of (id, label) rows, in index order."""
    directory = Path(directory)
    index_file = Path(index_file)
    if not directory.is_dir():
        raise DataError(f"record directory {directory} does not exist")
    rows: list[tuple[str, str]] = []
    with open(index_file, newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            if len(row) < 2:
                raise DataError(f"index row {row!r} lacks a label column")
            rows.append((row[0].strip(), canonical_label(row[1])))
    if not rows:
        raise DataError(f"index file {index_file} lists no records")
    ids = [record_id for record_id, _ in rows]
    if len(set(ids)) != len(ids):
        raise DataError("record ids in the index are not unique")
    missing = [rid for rid in ids if not (directory / f"{rid}.txt").exists()]
    if missing:
        raise DataError(f"missing record files for ids: {', '.join(missing)}")
    records = []
    for record_id, label in rows:
        samples = np.loadtxt(directory / f"{record_id}.txt", dtype=np.float64, ndmin=1)
        records.append(Record(record_id, samples, label))
    return Dataset(records, [f"loaded {len(records)} records from {directory}"])


def save_records(dataset: Dataset, directory) -> Path:
    """Write the dataset in the plain-text layout; returns the index path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index_path = directory / "index.csv"
    with open(index_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for record in dataset.records:
            np.savetxt(directory / f"{record.id}.txt", record.samples, fmt="%.17g")
            writer.writerow([record.id, record.label])
    return index_path


def convert_cinc_directory(source, destination) -> Path:
    """Convert challenge-native .mat records plus REFERENCE.csv to our layout."""
    from scipy.io import loadmat

    source = Path(source)
    reference = source / "REFERENCE.csv"
    if not reference.exists():
        raise DataError(f"no REFERENCE.csv under {source}")
    records = []
    with open(reference, newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            record_id, label = row[0].strip(), canonical_label(row[1])
            mat_path = source / f"{record_id}.mat"
            if not mat_path.exists():
                raise DataError(f"missing record file {mat_path}")
            samples = np.asarray(loadmat(mat_path)["val"], dtype=np.float64).ravel()
            records.append(Record(record_id, samples, label))
    dataset = Dataset(records, [f"converted {len(records)} records from {source}"])
    return save_records(dataset, destination)


# -- preprocessing ----------------------------------------------------------------


def preprocess_record(record: Record, target_length: int = 9000) -> Record:
    """Canonicalize to exactly `target_length` samples.

    Shorter records are zero-padded with the same number of zeros on both
    sides (an odd deficit puts the extra zero on the right); longer records
    keep only their first `target_length` samples. Idempotent at the target
    length.
    """
    samples = record.samples
    if samples.size == target_length:
        return record
    if samples.size > target_length:
        return Record(record.id, samples[:target_length].copy(), record.label)
    deficit = target_length - samples.size
    left = deficit // 2
    right = deficit - left
    return Record(record.id, np.pad(samples, (left, right)), record.label)


def preprocess_dataset(dataset: Dataset, target_length: int = 9000) -> Dataset:
    records = [preprocess_record(r, target_length) for r in dataset.records]
    return dataset.derive(records, f"canonicalized to {target_length} samples")


def rebalance(
    dataset: Dataset, noise_extra_copies: int = 5, af_extra_copies: int = 1
) -> Dataset:
    """Duplicate minority classes; defaults add five Noise copies and one AF copy.

    Every original record is preserved verbatim; duplicates are exact copies
    whose ids carry a duplicate-index suffix. Reading "duplicate five times"
    as five additional copies (six-fold total) is the default; pass
    noise_extra_copies=4 for the five-fold-total alternative.
    """
    extra = {"Noise": noise_extra_copies, "AF": af_extra_copies}
    records = list(dataset.records)
    for record in dataset.records:
        for copy_index in range(extra.get(record.label, 0)):
            records.append(
                Record(
                    f"{record.id}_dup{copy_index + 1}",
                    record.samples.copy(),
                    record.label,
                )
            )
    return dataset.derive(
        records,
        f"rebalanced with +{noise_extra_copies} Noise and +{af_extra_copies} AF copies",
    )


def split_dataset(
    dataset: Dataset, train_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split into floor(n * f) train and the rest test."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train fraction must be in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset.records))
    cut = int(len(dataset.records) * train_fraction)
    train = [dataset.records[i] for i in order[:cut]]
    test = [dataset.records[i] for i in order[cut:]]
    note = f"split {train_fraction:.2f} with seed {seed}"
    return (
        dataset.derive(train, note + " (train)"),
        dataset.derive(test, note + " (test)"),
    )


# -- synthetic desk-scale corpus ----------------------------------------------------


def _spike(length: int, center: float, width: float) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _biphasic(length: int, center: float, width: float) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    z = (t - center) / width
    return -z * np.exp(-0.5 * z * z) * np.exp(0.5)


def synthesize_ecg(per_class_count: int, length: int, seed: int) -> Dataset:
    """Deterministic four-class corpus of structurally distinct signal families.

    Normal: narrow positive spikes at a regular rhythm. AF: the same spike
    morphology at a faster, irregular rhythm. Other: wider biphasic
    complexes at a slower rhythm. Noise: broadband noise with no rhythmic
    structure. Amplitudes are order 1 with a small noise floor.
    """
    if per_class_count < 1:
        raise DataError(f"per-class count must be >= 1, got {per_class_count}")
    if length < 64:
        raise DataError(f"length must be >= 64, got {length}")
    rng = np.random.default_rng(seed)
    base_period = length / 8.0
    records = []
    for label in LABELS:
        for k in range(per_class_count):
            signal = rng.normal(0.0, 0.04, size=length)
            if label == "Normal":
                period = base_period * rng.uniform(0.95, 1.05)
                phase = rng.uniform(0.0, period)
                width = length / 120.0
                center = phase
                while center < length:
                    amp = rng.uniform(0.9, 1.1)
                    signal += amp * _spike(length, center, width)
                    center += period * rng.uniform(0.98, 1.02)
            elif label == "AF":
                period = base_period * 0.55
                center = rng.uniform(0.0, period)
                width = length / 120.0
                while center < length:
                    amp = rng.uniform(0.8, 1.1)
                    signal += amp * _spike(length, center, width)
                    center += period * rng.uniform(0.55, 1.45)
            elif label == "Other":
                period = base_period * 1.3
                phase = rng.uniform(0.0, period)
                width = length / 50.0
                center = phase
                while center < length:
                    amp = rng.uniform(0.8, 1.05)
                    signal += amp * _biphasic(length, center, width)
                    center += period * rng.uniform(0.95, 1.05)
            else:  # Noise
                # Heavy broadband noise over faint residual beats, so the
                # family sits near the rhythmic classes without merging.
                signal = rng.normal(0.0, 0.3, size=length)
                period = base_period * 0.8
                center = rng.uniform(0.0, period)
                width = length / 110.0
                while center < length:
                    signal += rng.uniform(0.2, 0.45) * _spike(length, center, width)
                    center += period * rng.uniform(0.6, 1.4)
                signal += rng.normal(0.0, 0.15) * np.sin(
                    2 * np.pi * rng.uniform(0.5, 3.0) * np.arange(length) / length
                )
            records.append(Record(f"syn_{label.lower()}_{k:04d}", signal, label))
    return Dataset(
        records,
        [f"synthesized {per_class_count} records per class, length {length}, "
         f"seed {seed}"],
    )
