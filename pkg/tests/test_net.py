import json
import math

import numpy as np
import pytest

from dropuq import (
    DropweightNet,
    NumericalError,
    ParseError,
    SyntheticDataset,
    ValidationError,
    forward,
    generate_synthetic,
    init_network,
    input_gradient_saliency,
    load_checkpoint,
    load_features,
    loss_and_gradients,
    mc_predict,
    sample_masks,
    save_checkpoint,
    save_features,
    train,
    weighted_ce_loss,
)


def small_net(seed=0, drop_rate=0.3, sizes=(3, 5, 4, 2)):
    return init_network(sizes, drop_rate=drop_rate, seed=seed)


def test_init_is_deterministic_and_shaped():
    a = small_net(seed=7)
    b = small_net(seed=7)
    c = small_net(seed=8)
    assert all((x == y).all() for x, y in zip(a.weights, b.weights))
    assert any((x != y).any() for x, y in zip(a.weights, c.weights))
    assert [w.shape for w in a.weights] == [(5, 3), (4, 5), (2, 4)]
    assert all((b == 0).all() for b in a.biases)


def test_net_validations():
    with pytest.raises(ValidationError):
        init_network([3], drop_rate=0.3)
    with pytest.raises(ValidationError):
        init_network([3, 2], drop_rate=1.0)
    with pytest.raises(ValidationError):
        init_network([3, 2], class_weights=[1.0, -1.0])
    net = small_net()
    with pytest.raises(ValueError):
        net.weights[0][0, 0] = 1.0


def test_masks_are_pure_functions_of_their_key():
    net = small_net(drop_rate=0.4)
    again = sample_masks(net, seed=3, pass_index=5)
    masks = sample_masks(net, seed=3, pass_index=5)
    for m, n in zip(masks, again):
        assert (m == n).all()
        assert set(np.unique(m)) <= {0.0, 1.0}
    other_pass = sample_masks(net, seed=3, pass_index=6)
    assert any((m != o).any() for m, o in zip(masks, other_pass))
    other_seed = sample_masks(net, seed=4, pass_index=5)
    assert any((m != o).any() for m, o in zip(masks, other_seed))


def test_mask_drop_rate_is_respected():
    net = init_network([40, 50, 30, 4], drop_rate=0.3, seed=1)
    masks = sample_masks(net, seed=0, pass_index=0)
    total = sum(m.size for m in masks)
    kept = sum(m.sum() for m in masks)
    assert kept / total == pytest.approx(0.7, abs=0.02)


def test_forward_outputs_simplex_rows():
    net = small_net()
    x = np.random.default_rng(0).normal(size=(10, 3))
    probs = forward(net, x)
    assert probs.shape == (10, 2)
    assert probs.sum(axis=1) == pytest.approx(np.ones(10), abs=1e-12)
    assert (probs > 0).all()


def test_forward_single_vector_matches_batch():
    net = small_net()
    x = np.array([0.3, -1.2, 0.8])
    single = forward(net, x)
    batch = forward(net, x[None, :])
    assert single == pytest.approx(batch[0], abs=0)


def test_forward_rejects_bad_input():
    net = small_net()
    with pytest.raises(ValidationError):
        forward(net, np.array([1.0, np.nan, 0.0]))
    with pytest.raises(ValidationError):
        forward(net, np.zeros(4))


def test_forward_with_zero_drop_rate_masks_is_exact():
    net = small_net(drop_rate=0.0)
    x = np.random.default_rng(1).normal(size=(4, 3))
    masks = sample_masks(net, seed=0, pass_index=0)
    assert all((m == 1.0).all() for m in masks)
    assert forward(net, x, masks=masks) == pytest.approx(forward(net, x), abs=0)


def test_weighted_ce_loss_value_and_clamp():
    value = weighted_ce_loss([0.5, 0.5], 0, [2.0, 1.0])
    assert value == pytest.approx(2 * math.log(2), rel=1e-9)
    # perfect prediction: -ln(1 + eps) is slightly negative, clamped to zero
    assert weighted_ce_loss([1.0, 0.0], 0, [50.0, 1.0]) == 0.0
    with pytest.raises(ValidationError):
        weighted_ce_loss([0.5, 0.5], 2, [1.0, 1.0])


def numeric_gradients(net, x, y, masks, step=1e-6):
    grads_w, grads_b = [], []
    for l in range(len(net.weights)):
        gw = np.zeros_like(net.weights[l])
        for idx in np.ndindex(*net.weights[l].shape):
            for sign in (1, -1):
                weights = [w.copy() for w in net.weights]
                weights[l][idx] += sign * step
                bumped = DropweightNet(net.layer_sizes, tuple(weights), net.biases,
                                       net.drop_rate, net.class_weights, net.rng_seed)
                loss, _, _ = loss_and_gradients(bumped, x, y, masks=masks)
                gw[idx] += sign * loss / (2 * step)
        grads_w.append(gw)
        gb = np.zeros_like(net.biases[l])
        for idx in np.ndindex(*net.biases[l].shape):
            for sign in (1, -1):
                biases = [b.copy() for b in net.biases]
                biases[l][idx] += sign * step
                bumped = DropweightNet(net.layer_sizes, net.weights, tuple(biases),
                                       net.drop_rate, net.class_weights, net.rng_seed)
                loss, _, _ = loss_and_gradients(bumped, x, y, masks=masks)
                gb[idx] += sign * loss / (2 * step)
        grads_b.append(gb)
    return grads_w, grads_b


def relative_gradient_error(analytic, numeric):
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return np.linalg.norm(a - n) / (np.linalg.norm(a) + np.linalg.norm(n) + 1e-12)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    net = init_network([3, 4, 3], drop_rate=0.25, class_weights=[2.0, 1.0, 5.0], seed=3)
    # nonzero biases keep units off the ReLU kink, where central differences
    # would straddle the corner a fully dropped row sits on
    net = DropweightNet(net.layer_sizes, net.weights,
                        tuple(rng.normal(scale=0.5, size=b.shape) for b in net.biases),
                        net.drop_rate, net.class_weights, net.rng_seed)
    x = rng.normal(size=(4, 3))
    y = rng.integers(0, 3, size=4)
    masks = sample_masks(net, seed=9, pass_index=0)
    _, gw, gb = loss_and_gradients(net, x, y, masks=masks)
    nw, nb = numeric_gradients(net, x, y, masks)
    assert relative_gradient_error(gw, nw) < 1e-6
    assert relative_gradient_error(gb, nb) < 1e-6


def test_gradient_is_zero_at_dropped_weights():
    net = init_network([3, 6, 2], drop_rate=0.5, seed=5)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 3))
    y = np.array([0, 1, 0])
    masks = sample_masks(net, seed=2, pass_index=1)
    _, gw, _ = loss_and_gradients(net, x, y, masks=masks)
    for g, m in zip(gw, masks):
        assert (g[m == 0.0] == 0.0).all()


def easy_dataset(seed=0):
    return generate_synthetic(seed, [40, 40, 40], 4, 0.2)


def test_train_reduces_loss_and_is_deterministic():
    data = easy_dataset()
    net = init_network([4, 16, 3], drop_rate=0.2, seed=0)
    first = train(net, data, epochs=8, batch_size=16, lr=0.02, seed=0)
    second = train(net, data, epochs=8, batch_size=16, lr=0.02, seed=0)
    assert len(first.epoch_losses) == 8
    assert first.epoch_losses[-1] < first.epoch_losses[0]
    assert all((a == b).all() for a, b in zip(first.net.weights, second.net.weights))
    assert first.epoch_losses == second.epoch_losses


def test_train_zero_lr_keeps_parameters():
    data = easy_dataset()
    net = init_network([4, 8, 3], drop_rate=0.2, seed=1)
    result = train(net, data, epochs=2, batch_size=32, lr=0.0, seed=0)
    assert all((a == b).all() for a, b in zip(result.net.weights, net.weights))


def test_train_raises_on_numerical_blowup():
    data = easy_dataset()
    net = init_network([4, 8, 3], drop_rate=0.2, seed=1)
    with pytest.raises(NumericalError):
        train(net, data, epochs=5, batch_size=32, lr=1e200, seed=0)


def test_train_validates_arguments():
    data = easy_dataset()
    net = init_network([4, 8, 3], seed=1)
    with pytest.raises(ValidationError):
        train(net, data, epochs=0, batch_size=8, lr=0.1, seed=0)
    with pytest.raises(ValidationError):
        train(net, data, epochs=1, batch_size=0, lr=0.1, seed=0)


def test_mc_predict_is_deterministic_and_valid():
    net = small_net(drop_rate=0.4)
    x = np.random.default_rng(3).normal(size=(6, 3))
    preds = mc_predict(net, x, num_passes=7, seed=11)
    again = mc_predict(net, x, num_passes=7, seed=11)
    assert preds.num_passes == 7
    assert preds.num_items == 6
    assert preds.item_ids == tuple(f"item_{i:05d}" for i in range(6))
    assert (preds.probs == again.probs).all()
    # with active dropweights the passes must actually differ
    assert (preds.probs[0] != preds.probs[1]).any()


def test_mc_predict_zero_drop_rate_passes_identical():
    net = small_net(drop_rate=0.0)
    x = np.random.default_rng(4).normal(size=(5, 3))
    preds = mc_predict(net, x, num_passes=4, seed=0)
    for t in range(1, 4):
        assert (preds.probs[t] == preds.probs[0]).all()


def test_mc_predict_prefix_property():
    # the first T passes of a longer run equal a shorter run exactly
    net = small_net(drop_rate=0.3)
    x = np.random.default_rng(5).normal(size=(4, 3))
    long = mc_predict(net, x, num_passes=10, seed=2)
    short = mc_predict(net, x, num_passes=4, seed=2)
    assert (long.probs[:4] == short.probs).all()


def test_saliency_matches_finite_differences():
    net = small_net(drop_rate=0.2, sizes=(4, 6, 3))
    x = np.random.default_rng(6).normal(size=4)
    grad = input_gradient_saliency(net, x, target_class=1)
    step = 1e-6
    for j in range(4):
        bumped_up = x.copy()
        bumped_up[j] += step
        bumped_down = x.copy()
        bumped_down[j] -= step
        numeric = (math.log(forward(net, bumped_up)[1])
                   - math.log(forward(net, bumped_down)[1])) / (2 * step)
        assert grad[j] == pytest.approx(numeric, abs=1e-5)


def test_saliency_validations():
    net = small_net()
    with pytest.raises(ValidationError):
        input_gradient_saliency(net, np.zeros(3), target_class=5)
    with pytest.raises(ValidationError):
        input_gradient_saliency(net, np.zeros(5), target_class=0)


def test_generate_synthetic_counts_and_determinism():
    data = generate_synthetic(3, [10, 20, 5], 6, 0.4)
    assert data.num_items == 35
    assert data.class_counts == (10, 20, 5)
    assert list(np.bincount(data.labels)) == [10, 20, 5]
    again = generate_synthetic(3, [10, 20, 5], 6, 0.4)
    assert (data.inputs == again.inputs).all()
    other = generate_synthetic(4, [10, 20, 5], 6, 0.4)
    assert (data.inputs != other.inputs).any()


def test_generate_synthetic_zero_overlap_hits_centers():
    data = generate_synthetic(0, [3, 3, 3], 5, 0.0)
    # d >= C puts centers on standard basis vectors
    for c in range(3):
        expected = np.zeros(5)
        expected[c] = 1.0
        assert (data.inputs[data.labels == c] == expected).all()


def test_generate_synthetic_low_dimension_uses_circle():
    data = generate_synthetic(0, [2, 2, 2, 2], 2, 0.0)
    radii = np.linalg.norm(data.inputs, axis=1)
    assert radii == pytest.approx(np.ones(8), abs=1e-12)


def test_generate_synthetic_validations():
    with pytest.raises(ValidationError):
        generate_synthetic(0, [5], 4, 0.1)
    with pytest.raises(ValidationError):
        generate_synthetic(0, [5, 0], 4, 0.1)
    with pytest.raises(ValidationError):
        generate_synthetic(0, [5, 5], 4, -0.1)


def test_checkpoint_roundtrip_is_exact(tmp_path):
    net = init_network([3, 7, 2], drop_rate=0.35, class_weights=[1.5, 3.0], seed=9)
    path = tmp_path / "checkpoint.json"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.layer_sizes == net.layer_sizes
    assert loaded.drop_rate == net.drop_rate
    assert loaded.rng_seed == net.rng_seed
    assert (loaded.class_weights == net.class_weights).all()
    assert all((a == b).all() for a, b in zip(loaded.weights, net.weights))
    assert all((a == b).all() for a, b in zip(loaded.biases, net.biases))


def test_checkpoint_bad_files(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_checkpoint(path)
    path.write_text(json.dumps({"layer_sizes": [2, 2]}))
    with pytest.raises(ParseError):
        load_checkpoint(path)


def test_features_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(10)
    x = rng.normal(size=(6, 3))
    ids = tuple(f"row{i}" for i in range(6))
    path = tmp_path / "features.csv"
    save_features(ids, x, path)
    loaded_ids, loaded = load_features(path)
    assert loaded_ids == ids
    assert (loaded == x).all()
    assert path.read_text().splitlines()[0] == "item_id,x_0,x_1,x_2"


def test_features_bad_files(tmp_path):
    path = tmp_path / "features.csv"
    path.write_text("item_id,a,b\nr,1,2\n")
    with pytest.raises(ParseError):
        load_features(path)
    path.write_text("item_id,x_0\nr,nope\n")
    with pytest.raises(ParseError):
        load_features(path)


def test_synthetic_dataset_validations():
    with pytest.raises(ValidationError):
        SyntheticDataset(np.zeros((3, 2)), np.array([0, 0, 1]), (2, 0, 1))
    with pytest.raises(ValidationError):
        SyntheticDataset(np.zeros((3, 2)), np.array([0, 0, 1]), (2, 2))
