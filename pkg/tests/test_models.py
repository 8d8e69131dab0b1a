import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgdefend.autodiff import ShapeError
from ecgdefend.defenses import jacobian_penalty
from ecgdefend.models import (
    ClassifierModel,
    Conv1D,
    Dense,
    MixedLossConfig,
    ModelSpecError,
    build_model,
    clamp_counter,
    hard_label_loss,
    load_model,
    mixed_loss,
    predict,
    predict_batch,
    save_model,
    soft_label_loss,
    softmax_with_temperature,
)

from conftest import tiny_plan


# -- temperature softmax ------------------------------------------------------


def test_softmax_uniform_for_equal_logits():
    np.testing.assert_allclose(
        softmax_with_temperature(np.zeros(4), 3.7), np.full(4, 0.25)
    )


def test_softmax_analytic_two_class():
    probs = softmax_with_temperature(np.array([math.log(2.0), 0.0]), 1.0)
    np.testing.assert_allclose(probs, [2 / 3, 1 / 3], rtol=1e-12)


def test_softmax_huge_temperature_approaches_uniform():
    probs = softmax_with_temperature(np.array([3.0, 1.0, 0.2]), 1e6)
    assert np.all(np.abs(probs - 1 / 3) < 1e-3)


def test_softmax_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        softmax_with_temperature(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        softmax_with_temperature(np.zeros(3), -1.0)


@given(
    st.lists(st.floats(-20, 20), min_size=2, max_size=8),
    st.sampled_from([0.1, 1.0, 10.0, 100.0]),
)
@settings(max_examples=60, deadline=None)
def test_softmax_sums_to_one(logits, temperature):
    probs = softmax_with_temperature(np.array(logits), temperature)
    assert abs(probs.sum() - 1.0) < 1e-9
    assert np.all(probs >= 0.0) and np.all(probs <= 1.0)


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=6))
@settings(max_examples=60, deadline=None)
def test_softmax_argmax_is_temperature_invariant(logits):
    z = np.array(logits)
    if np.sum(z == z.max()) != 1:
        return  # unique-max vectors only
    references = [
        int(np.argmax(softmax_with_temperature(z, t))) for t in (0.1, 1.0, 20.0)
    ]
    assert len(set(references)) == 1


def test_raising_temperature_shrinks_probability_gap():
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.normal(size=4)
        if np.ptp(z) == 0:
            continue
        gaps = []
        for t in (1.0, 5.0, 20.0):
            p = softmax_with_temperature(z, t)
            gaps.append(p.max() - p.min())
        assert gaps[0] > gaps[1] > gaps[2]


# -- losses ------------------------------------------------------------------


def test_hard_label_loss_perfect_prediction_is_zero():
    probs = np.eye(4)[[0, 1, 2, 3]]
    assert hard_label_loss(probs, np.arange(4)) == 0.0


def test_hard_label_loss_analytic_value():
    e_inv = math.exp(-1)
    rest = (1 - e_inv) / 3
    probs = np.array([[e_inv, rest, rest, rest]] * 5)
    labels = np.zeros(5, dtype=int)
    assert abs(hard_label_loss(probs, labels) - 1.0) < 1e-12


def test_hard_label_loss_matches_direct_recomputation():
    rng = np.random.default_rng(7)
    probs = softmax_with_temperature(rng.normal(size=(32, 4)), 1.0)
    labels = rng.integers(0, 4, size=32)
    expected = -np.mean(np.log(probs[np.arange(32), labels]))
    assert abs(hard_label_loss(probs, labels) - expected) < 1e-12


def test_hard_label_loss_accepts_one_hot_rows():
    probs = np.array([[0.7, 0.1, 0.1, 0.1], [0.2, 0.5, 0.2, 0.1]])
    one_hot = np.eye(4)[[0, 1]]
    assert hard_label_loss(probs, one_hot) == hard_label_loss(probs, np.array([0, 1]))


def test_zero_probability_is_floored_and_counted():
    clamp_counter.reset()
    probs = np.array([[0.0, 1.0]])
    value = hard_label_loss(probs, np.array([0]))
    assert value == pytest.approx(-math.log(1e-12))
    assert clamp_counter.count == 1


def test_soft_label_loss_analytic():
    assert soft_label_loss(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]])) == (
        pytest.approx(math.log(2.0))
    )


def test_soft_label_loss_self_is_entropy():
    p = np.array([[0.5, 0.5]])
    assert soft_label_loss(p, p) == pytest.approx(math.log(2.0))


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_soft_label_loss_gibbs_inequality(seed):
    rng = np.random.default_rng(seed)
    target = rng.dirichlet(np.ones(4))
    other = rng.dirichlet(np.ones(4))
    self_loss = soft_label_loss(target[None], target[None])
    cross_loss = soft_label_loss(other[None], target[None])
    assert self_loss >= 0.0
    assert cross_loss >= self_loss - 1e-12


def test_soft_label_loss_matches_direct_recomputation():
    rng = np.random.default_rng(3)
    preds = softmax_with_temperature(rng.normal(size=(16, 4)), 2.0)
    targets = softmax_with_temperature(rng.normal(size=(16, 4)), 2.0)
    expected = -np.mean((targets * np.log(preds)).sum(axis=1))
    assert abs(soft_label_loss(preds, targets) - expected) < 1e-12


def test_mixed_loss_endpoints_and_midpoint():
    assert mixed_loss(5.0, 1.0, MixedLossConfig(0.0)) == 1.0
    assert mixed_loss(5.0, 1.0, MixedLossConfig(1.0)) == 5.0
    assert mixed_loss(2.0, 1.0, MixedLossConfig(0.5)) == 1.5


def test_mixed_loss_config_rejects_out_of_range_weight():
    with pytest.raises(ValueError):
        MixedLossConfig(1.5)
    with pytest.raises(ValueError):
        MixedLossConfig(-0.1)


# -- prediction ----------------------------------------------------------------


def test_predict_follows_output_bias():
    model = build_model("desk", 128, 4, seed=0)
    for key in model.parameters:
        model.parameters[key] = np.zeros_like(model.parameters[key])
    dense_key = [k for k in model.parameters if k.endswith(".b")][-1]
    model.parameters[dense_key] = np.array([0.0, 9.0, 0.0, 0.0])
    label, probs = predict(model, np.zeros(128))
    assert label == 1
    assert probs.argmax() == 1


def test_predict_tie_breaks_to_lowest_index():
    model = build_model("desk", 128, 4, seed=0)
    for key in model.parameters:
        model.parameters[key] = np.zeros_like(model.parameters[key])
    label, _ = predict(model, np.zeros(128))
    assert label == 0


def test_batch_prediction_matches_single(tiny_model, tiny_data):
    _, (Xte, _) = tiny_data
    batch_classes, batch_probs = predict_batch(tiny_model, Xte[:5])
    for i in range(5):
        single_class, single_probs = predict(tiny_model, Xte[i])
        assert single_class == batch_classes[i]
        # Contraction order differs across batch sizes, so equality holds to
        # machine precision rather than bitwise.
        np.testing.assert_allclose(single_probs, batch_probs[i], rtol=1e-12,
                                   atol=1e-15)


def test_predict_rejects_length_mismatch(tiny_model):
    with pytest.raises(ShapeError):
        predict(tiny_model, np.zeros(100))


def test_desk_training_reaches_high_accuracy(tiny_defense, tiny_data):
    (Xtr, ytr), _ = tiny_data
    pred, _ = predict_batch(tiny_defense.deployable, Xtr)
    assert np.mean(pred == ytr) > 0.9


# -- construction ----------------------------------------------------------------


def test_cnn13_has_13_conv_layers_and_4_logits():
    model = build_model("cnn13", 9000, 4, seed=1)
    conv_layers = [l for l in model.layers if isinstance(l, Conv1D)]
    assert len(conv_layers) == 13
    dense = [l for l in model.layers if isinstance(l, Dense)]
    assert dense[-1].out_features == 4
    assert model.logits(np.zeros((1, 9000))).shape == (1, 4)


def test_desk_parameter_count_matches_descriptor_sum():
    model = build_model("desk", 512, 4, seed=1)
    expected = 0
    channels, width = 1, 512
    for layer in model.layers:
        if isinstance(layer, Conv1D):
            expected += layer.out_channels * channels * layer.kernel_size
            expected += layer.out_channels
            channels = layer.out_channels
        elif isinstance(layer, Dense):
            expected += channels * layer.out_features + layer.out_features
    assert model.parameter_count() == expected == 2420


def test_same_seed_gives_identical_parameters():
    a = build_model("desk", 256, 4, seed=42)
    b = build_model("desk", 256, 4, seed=42)
    for key in a.parameters:
        assert np.array_equal(a.parameters[key], b.parameters[key])


def test_unknown_spec_name_is_rejected():
    with pytest.raises(ModelSpecError):
        build_model("resnet", 512, 4, seed=0)


def test_model_rejects_nonpositive_temperature():
    model = build_model("desk", 128, 4, seed=0)
    with pytest.raises(ModelSpecError):
        ClassifierModel(
            spec_name=model.spec_name,
            input_length=model.input_length,
            num_classes=4,
            seed=0,
            layers=model.layers,
            parameters=model.parameters,
            temperature=0.0,
        )


# -- serialization ---------------------------------------------------------------


def test_model_round_trip_is_bit_exact(tmp_path, tiny_model):
    path = tmp_path / "model.npz"
    tiny_model.temperature = 3.5
    save_model(tiny_model, path)
    loaded = load_model(path)
    assert loaded.spec_name == tiny_model.spec_name
    assert loaded.temperature == 3.5
    assert loaded.model_id() == tiny_model.model_id()
    for key in tiny_model.parameters:
        assert np.array_equal(loaded.parameters[key], tiny_model.parameters[key])
    tiny_model.temperature = 1.0


# -- temperature flattens the input Jacobian ---------------------------------------


def test_probability_jacobian_shrinks_with_temperature(tiny_model, tiny_data):
    _, (Xte, _) = tiny_data
    x = Xte[:4]
    cold = jacobian_penalty(tiny_model, x, 1.0, temperature=1.0)
    hot = jacobian_penalty(tiny_model, x, 1.0, temperature=20.0)
    assert hot < cold
