import numpy as np
import pytest

from ecgdefend.attacks import AttackParams, craft_sap
from ecgdefend.data import synthesize_ecg
from ecgdefend.defenses import (
    Adam,
    RegularizerConfig,
    TrainedDefense,
    TrainingError,
    load_defense,
    nsr_penalty,
    jacobian_penalty,
    save_defense,
    train_adt,
    train_adversarial,
    train_defense,
    train_distilled,
    train_regularized,
    train_standard,
)
from ecgdefend.models import build_model, predict_batch, softmax_with_temperature

from conftest import tiny_attack_params, tiny_plan


@pytest.fixture(scope="module")
def small_set():
    dataset = synthesize_ecg(30, 256, seed=23)
    return dataset.to_arrays()


def quick_plan(**overrides):
    base = dict(epochs_first=3, epochs_second=3, seed=5)
    base.update(overrides)
    return tiny_plan(**base)


def digests(defense: TrainedDefense) -> list[str]:
    return [row.param_digest for row in defense.training_log]


def final_params(defense: TrainedDefense) -> dict[str, np.ndarray]:
    return defense.deployable.parameters


# -- degenerate-equivalence lattice --------------------------------------------


def test_adversarial_with_zero_mix_equals_standard(small_set):
    plan = quick_plan(mix_c=0.0)
    standard = train_standard(small_set, plan)
    adversarial = train_adversarial(small_set, plan)
    assert digests(adversarial) == digests(standard)
    for key, value in final_params(standard).items():
        assert np.array_equal(final_params(adversarial)[key], value)


def test_adt_with_zero_mix_equals_distilled(small_set):
    plan = quick_plan(mix_c=0.0)
    distilled = train_distilled(small_set, plan)
    adt = train_adt(small_set, plan, "full")
    assert digests(adt) == digests(distilled)
    for key, value in final_params(distilled).items():
        assert np.array_equal(final_params(adt)[key], value)


def test_dist_only_stage_one_matches_distilled(small_set):
    plan = quick_plan()
    distilled = train_distilled(small_set, plan)
    dist_only = train_adt(small_set, plan, "dist-only")
    stage1 = lambda d: [r.param_digest for r in d.training_log if r.stage == 1]
    assert stage1(dist_only) == stage1(distilled)


def test_training_is_reproducible(small_set):
    plan = quick_plan()
    first = train_adversarial(small_set, plan)
    second = train_adversarial(small_set, plan)
    for key, value in final_params(first).items():
        assert np.array_equal(final_params(second)[key], value)


# -- plan validation and failure modes -------------------------------------------


def test_zero_epochs_is_a_plan_error(small_set):
    with pytest.raises(TrainingError, match="epochs_first"):
        train_standard(small_set, quick_plan(epochs_first=0))


def test_divergent_loss_aborts_with_epoch_index(small_set):
    plan = quick_plan(learning_rate=1e12, epochs_first=4)
    with pytest.raises(TrainingError, match="epoch"):
        train_standard(small_set, plan)


def test_unknown_method_rejected(small_set):
    with pytest.raises(TrainingError):
        train_defense(small_set, quick_plan(), "fgsm")


def test_defense_model_count_invariant():
    model = build_model("desk", 256, 4, seed=0)
    with pytest.raises(TrainingError, match="2 model"):
        TrainedDefense("dd", [model], [], quick_plan())
    with pytest.raises(TrainingError, match="1 model"):
        TrainedDefense("at", [model, model], [], quick_plan())


# -- logging --------------------------------------------------------------------


def test_adversarial_log_records_both_loss_terms(small_set):
    defense = train_adversarial(small_set, quick_plan(epochs_first=2))
    for row in defense.training_log:
        assert row.loss_adversarial is not None
        assert np.isfinite(row.loss_adversarial)
        assert np.isfinite(row.loss_natural)


def test_standard_log_has_no_adversarial_term(small_set):
    defense = train_standard(small_set, quick_plan(epochs_first=2))
    assert all(row.loss_adversarial is None for row in defense.training_log)


def test_every_epoch_loss_is_finite(small_set):
    defense = train_adt(small_set, quick_plan(epochs_first=2, epochs_second=2),
                        "full")
    assert all(np.isfinite(row.loss) for row in defense.training_log)
    assert len(defense.training_log) == 4


# -- distillation ----------------------------------------------------------------


def test_soft_labels_are_valid_probability_rows(small_set):
    X, _ = small_set
    model = build_model("desk", 256, 4, seed=1)
    soft = softmax_with_temperature(model.logits(X), 4.0)
    assert np.all(soft >= 0)
    np.testing.assert_allclose(soft.sum(axis=1), 1.0, atol=1e-9)


def test_distilled_second_network_matches_first_on_easy_data(small_set):
    X, y = small_set
    plan = quick_plan(epochs_first=16, epochs_second=16)
    defense = train_distilled(small_set, plan)
    first, second = defense.models
    acc_first = np.mean(predict_batch(first, X)[0] == y)
    acc_second = np.mean(predict_batch(second, X)[0] == y)
    assert acc_first >= 0.9
    assert abs(acc_first - acc_second) <= 0.05


def test_distillation_stores_training_temperature(small_set):
    plan = quick_plan(temperature=20.0, epochs_first=1, epochs_second=1)
    defense = train_distilled(small_set, plan)
    assert defense.models[0].temperature == 20.0
    assert defense.models[1].temperature == 20.0
    # Evaluation still defaults to temperature 1 regardless of training T.
    X, _ = small_set
    _, probs = predict_batch(defense.deployable, X[:2])
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


# -- penalties -------------------------------------------------------------------


def test_jacobian_penalty_zero_weight(small_set):
    X, _ = small_set
    model = build_model("desk", 256, 4, seed=2)
    assert jacobian_penalty(model, X[:4], 0.0) == 0.0


def test_jacobian_penalty_linear_closed_form():
    model = build_model("linear", 16, 4, seed=3)
    model.parameters["layer1.b"] = np.zeros(4)
    W = model.parameters["layer1.w"]
    x = np.random.default_rng(0).normal(size=(3, 16))
    weight = 44.0
    expected = weight * float((W**2).sum())
    assert jacobian_penalty(model, x, weight, on="logits") == pytest.approx(
        expected, rel=1e-12
    )


def test_jacobian_penalty_matches_finite_differences(tiny_model, tiny_data):
    _, (Xte, _) = tiny_data
    X = Xte[:2]
    step = 1e-5
    total = 0.0
    for b in range(X.shape[0]):
        jac = np.zeros((4, X.shape[1]))
        for j in range(X.shape[1]):
            up = X[b].copy()
            up[j] += step
            down = X[b].copy()
            down[j] -= step
            p_up = softmax_with_temperature(tiny_model.logits(up[None])[0], 1.0)
            p_down = softmax_with_temperature(tiny_model.logits(down[None])[0], 1.0)
            jac[:, j] = (p_up - p_down) / (2 * step)
        total += (jac**2).sum()
    expected = total / X.shape[0]
    actual = jacobian_penalty(tiny_model, X, 1.0)
    assert actual == pytest.approx(expected, rel=1e-3)


def test_nsr_penalty_trivial_zeros(small_set):
    X, y = small_set
    model = build_model("desk", 256, 4, seed=2)
    assert nsr_penalty(model, X[:4], y[:4], eps_max=1.0, beta=0.0) == 0.0
    assert nsr_penalty(model, X[:4], y[:4], eps_max=0.0, beta=1.0) == 0.0


def test_nsr_penalty_linear_closed_form():
    model = build_model("linear", 8, 4, seed=4)
    W = model.parameters["layer1.w"]
    b = model.parameters["layer1.b"]
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 8))
    y = rng.integers(0, 4, size=5)
    eps_max, beta = 0.7, 2.0
    logits = x @ W + b
    rows = np.arange(5)
    change = eps_max * np.abs(W[:, y]).sum(axis=0)
    true_logit = logits[rows, y]
    masked = logits.copy()
    masked[rows, y] = -np.inf
    margin = true_logit - masked.max(axis=1)
    expected = beta * np.mean(
        change / np.maximum(np.abs(true_logit), 1e-12)
        + np.maximum(0.0, change - np.maximum(margin, 0.0))
    )
    assert nsr_penalty(model, x, y, eps_max, beta) == pytest.approx(
        expected, rel=1e-12
    )


def test_regularizer_applies_only_after_warmup(small_set):
    plan = quick_plan(
        epochs_first=5,
        regularizer=RegularizerConfig(jr_weight=1.0),
        regularizer_warmup_epoch=4,
    )
    defense = train_regularized(small_set, plan, "jr")
    penalties = [row.penalty for row in defense.training_log]
    assert penalties[0] == penalties[1] == penalties[2] == 0.0
    assert penalties[3] > 0.0 and penalties[4] > 0.0


def test_nsr_training_runs_and_penalizes(small_set):
    plan = quick_plan(
        epochs_first=3,
        regularizer=RegularizerConfig(nsr_eps_max=0.012, nsr_beta=1.0),
        regularizer_warmup_epoch=2,
    )
    defense = train_regularized(small_set, plan, "nsr")
    assert defense.method == "nsr"
    assert defense.training_log[-1].penalty > 0.0


def test_regularized_training_requires_positive_weight(small_set):
    plan = quick_plan(regularizer=RegularizerConfig())
    with pytest.raises(TrainingError):
        train_regularized(small_set, plan, "jr")


# -- adversarial training helps (paired runs) ---------------------------------------


@pytest.mark.slow
def test_adversarial_training_beats_standard_under_self_attack():
    attack = tiny_attack_params(steps=20, smooth_steps=40)
    gaps = []
    for seed in (0, 1, 2):
        dataset = synthesize_ecg(40, 256, seed=31 + seed)
        X, y = dataset.to_arrays()
        plan = tiny_plan(seed=seed, epochs_first=16, epochs_second=16)
        standard = train_standard((X, y), plan).deployable
        adversarial = train_adversarial((X, y), plan).deployable

        def self_attack_accuracy(model):
            adv, _, _ = craft_sap(model, X, y, attack)
            pred, _ = predict_batch(model, adv)
            return float(np.mean(pred == y))

        gaps.append(self_attack_accuracy(adversarial) - self_attack_accuracy(standard))
    assert all(gap >= 0.15 for gap in gaps)


# -- optimizer and persistence --------------------------------------------------------


def test_adam_moves_parameters_against_gradient():
    params = {"w": np.array([1.0, -1.0])}
    adam = Adam(params, learning_rate=0.1)
    adam.step({"w": np.array([1.0, -1.0])})
    assert params["w"][0] < 1.0
    assert params["w"][1] > -1.0


def test_save_and_load_defense_round_trip(tmp_path, small_set):
    defense = train_distilled(small_set, quick_plan(epochs_first=1,
                                                    epochs_second=1))
    save_defense(defense, tmp_path / "dd")
    loaded = load_defense(tmp_path / "dd")
    assert loaded.method == "dd"
    assert len(loaded.models) == 2
    assert loaded.deployable.model_id() == defense.deployable.model_id()
    assert (tmp_path / "dd" / "training_log.csv").exists()
    assert loaded.plan.seed == defense.plan.seed
