import numpy as np
import pytest

from ecgdefend.attacks import AttackParams
from ecgdefend.data import split_dataset, synthesize_ecg
from ecgdefend.defenses import TrainPlan, train_standard

TINY_LENGTH = 256


def tiny_attack_params(**overrides) -> AttackParams:
    base = dict(eps=0.15, alpha=0.015, steps=5, smooth_steps=5,
                clip_anchor="original")
    base.update(overrides)
    return AttackParams(**base)


def tiny_plan(**overrides) -> TrainPlan:
    base = dict(
        attack=tiny_attack_params(),
        epochs_first=24,
        epochs_second=24,
        seed=0,
        input_length=TINY_LENGTH,
    )
    base.update(overrides)
    return TrainPlan(**base)


@pytest.fixture(scope="session")
def tiny_data():
    dataset = synthesize_ecg(40, TINY_LENGTH, seed=11)
    train_set, test_set = split_dataset(dataset, 0.9, 0)
    return train_set.to_arrays(), test_set.to_arrays()


@pytest.fixture(scope="session")
def tiny_defense(tiny_data):
    (Xtr, ytr), _ = tiny_data
    return train_standard((Xtr, ytr), tiny_plan())


@pytest.fixture(scope="session")
def tiny_model(tiny_defense):
    return tiny_defense.deployable
