import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckaprune.network import ArchSpec, build, candidate_blocks, forward, remove_block
from ckaprune.network import _weight_tensors
from ckaprune.training import (
    CsvError,
    Dataset,
    TrainConfig,
    evaluate,
    finetune,
    input_gradient,
    load_csv,
    loss_and_grads,
    softmax_cross_entropy,
    synth_dataset,
    train,
)


def toy_net(seed=0):
    return build(ArchSpec(4, (6, 5), (2, 2), 3, seed=seed))


def separable_toy():
    rng = np.random.default_rng(0)
    n = 100
    x = np.concatenate(
        [
            rng.standard_normal((n, 4)) * 0.3 + [2, 0, 0, 0],
            rng.standard_normal((n, 4)) * 0.3 - [2, 0, 0, 0],
        ]
    )
    y = np.repeat([0, 1], n)
    return Dataset(train_x=x, train_y=y, test_x=x[::10], test_y=y[::10])


def nets_equal(a, b):
    return all(np.array_equal(p, q) for p, q in zip(_weight_tensors(a), _weight_tensors(b)))


def test_cross_entropy_uniform_logits():
    logits = np.zeros((6, 4))
    labels = np.array([0, 1, 2, 3, 0, 2])
    loss, _ = softmax_cross_entropy(logits, labels)
    assert loss == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_nonnegative():
    rng = np.random.default_rng(1)
    for _ in range(20):
        logits = rng.standard_normal((5, 3)) * 10
        labels = rng.integers(0, 3, 5)
        loss, _ = softmax_cross_entropy(logits, labels)
        assert loss >= 0.0


def test_epochs_zero_is_bit_exact_noop():
    net = toy_net(1)
    data = separable_toy()
    out, history = train(net, data, TrainConfig(epochs=0, learning_rate=0.01))
    assert nets_equal(net, out)
    assert history.train_loss == []


def test_gradients_match_finite_differences():
    # seed pair chosen so no pre-activation sits within 4e-3 of a ReLU kink,
    # keeping the central difference valid at h = 1e-5
    net = toy_net(6)
    rng = np.random.default_rng(17)
    x = rng.standard_normal((8, 4))
    y = rng.integers(0, 3, 8)
    _, grads = loss_and_grads(net, x, y)
    h = 1e-5
    for p, g in zip(_weight_tensors(net), grads):
        flat_p, flat_g = p.ravel(), g.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            lp, _ = loss_and_grads(net, x, y)
            flat_p[i] = orig - h
            lm, _ = loss_and_grads(net, x, y)
            flat_p[i] = orig
            numeric = (lp - lm) / (2 * h)
            if abs(g.ravel()[i]) > 1e-6:
                assert abs(numeric - flat_g[i]) / abs(flat_g[i]) < 1e-4
            else:
                assert abs(numeric - flat_g[i]) < 1e-6


def test_input_gradient_matches_finite_differences():
    net = toy_net(4)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 4))
    y = rng.integers(0, 3, 6)
    gx = input_gradient(net, x, y)
    h = 1e-5
    for idx in [(0, 0), (2, 3), (5, 1)]:
        orig = x[idx]
        x[idx] = orig + h
        lp, _ = loss_and_grads(net, x, y)
        x[idx] = orig - h
        lm, _ = loss_and_grads(net, x, y)
        x[idx] = orig
        numeric = (lp - lm) / (2 * h)
        assert abs(numeric - gx[idx]) / max(abs(numeric), 1e-6) < 1e-4


def test_loss_decreases_on_separable_toy():
    data = separable_toy()
    net = build(ArchSpec(4, (8,), (2,), 2, seed=5))
    cfg = TrainConfig(epochs=5, batch_size=25, learning_rate=0.01, momentum=0.0, seed=1)
    _, history = train(net, data, cfg)
    assert len(history.train_loss) == len(history.train_accuracy) == 5
    assert len(history.test_accuracy) == 5
    assert all(a > b for a, b in zip(history.train_loss, history.train_loss[1:]))


def test_train_does_not_mutate_input_net():
    net = toy_net(6)
    snapshot = [p.copy() for p in _weight_tensors(net)]
    train(net, separable_toy(), TrainConfig(epochs=2, learning_rate=0.01, seed=0))
    assert all(np.array_equal(p, s) for p, s in zip(_weight_tensors(net), snapshot))


def test_train_determinism_same_seed():
    data = separable_toy()
    cfg = TrainConfig(epochs=3, batch_size=16, learning_rate=0.02, seed=9)
    a, _ = train(toy_net(7), data, cfg)
    b, _ = train(toy_net(7), data, cfg)
    assert nets_equal(a, b)


def test_train_diverging_lr_aborts():
    data = separable_toy()
    with np.errstate(all="ignore"):
        with pytest.raises(RuntimeError, match="learning rate"):
            train(toy_net(8), data, TrainConfig(epochs=200, learning_rate=1e150, seed=0))


def test_training_depends_only_on_visit_order():
    # permuted storage with shuffle off == same visit sequence == same nets
    data = separable_toy()
    perm = np.random.default_rng(10).permutation(len(data.train_x))
    permuted = Dataset(
        train_x=data.train_x[perm],
        train_y=data.train_y[perm],
        test_x=data.test_x,
        test_y=data.test_y,
    )
    cfg = TrainConfig(epochs=2, batch_size=32, learning_rate=0.01, shuffle=False, seed=0)
    a, _ = train(toy_net(11), permuted, cfg)
    b, _ = train(toy_net(11), permuted, cfg)
    assert nets_equal(a, b)
    # full-batch gradient is storage-order invariant up to float summation order
    full = TrainConfig(epochs=1, batch_size=len(data.train_x), learning_rate=0.01, shuffle=False, seed=0)
    c, _ = train(toy_net(11), data, full)
    d, _ = train(toy_net(11), permuted, full)
    for p, q in zip(_weight_tensors(c), _weight_tensors(d)):
        assert np.max(np.abs(p - q)) < 1e-12


def test_finetune_epochs_zero_identity():
    net = toy_net(12)
    out = finetune(net, separable_toy(), TrainConfig(epochs=0, learning_rate=0.01))
    assert nets_equal(net, out)


def test_finetune_recovers_accuracy_on_average():
    deltas = []
    for seed in range(5):
        data = synth_dataset(1500, 8, 5, 0.25, seed=seed)
        net, _ = train(
            build(ArchSpec(8, (16, 16), (3, 3), 5, seed=seed)),
            data,
            TrainConfig(epochs=12, batch_size=64, learning_rate=0.02, seed=seed),
        )
        pruned = remove_block(net, candidate_blocks(net)[0])
        before = evaluate(pruned, data.test_x, data.test_y)
        recovered = finetune(
            pruned, data, TrainConfig(epochs=3, batch_size=64, learning_rate=0.002, seed=seed)
        )
        deltas.append(evaluate(recovered, data.test_x, data.test_y) - before)
    assert np.mean(deltas) >= 0.0


def test_evaluate_perfect_and_tie_cases():
    net = toy_net(13)
    data = synth_dataset(60, 4, 3, 0.2, seed=0)
    x, y = data.train_x, data.train_y
    logits = forward(net, x)
    assert evaluate(net, x, logits.argmax(axis=1)) == 1.0
    # constant logits tie-break to class 0 -> accuracy = share of class 0
    zeroed = build(ArchSpec(4, (6, 5), (2, 2), 3, seed=0))
    zeroed.classifier.w[:] = 0.0
    zeroed.classifier.b[:] = 0.0
    labels = np.tile(np.arange(3), 12)  # exactly balanced
    xs = np.random.default_rng(1).standard_normal((36, 4))
    assert evaluate(zeroed, xs, labels) == pytest.approx(1 / 3, abs=1e-15)


def test_evaluate_matches_naive_recount():
    net = toy_net(14)
    data = synth_dataset(90, 4, 3, 0.3, seed=2)
    x, y = data.train_x, data.train_y
    acc = evaluate(net, x, y)
    logits = forward(net, x)
    hits = sum(int(np.argmax(logits[i]) == y[i]) for i in range(len(y)))
    assert acc == hits / len(y)


def test_evaluate_empty_errors():
    with pytest.raises(ValueError, match="empty"):
        evaluate(toy_net(15), np.zeros((0, 4)), np.zeros(0, dtype=int))


@given(seed=st.integers(0, 50))
@settings(max_examples=15, deadline=None)
def test_evaluate_in_unit_interval(seed):
    net = toy_net(16)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((10, 4))
    y = rng.integers(0, 3, 10)
    assert 0.0 <= evaluate(net, x, y) <= 1.0


def test_synth_dataset_deterministic_and_balanced():
    a = synth_dataset(103, 6, 4, 0.3, seed=5)
    b = synth_dataset(103, 6, 4, 0.3, seed=5)
    assert np.array_equal(a.train_x, b.train_x)
    assert np.array_equal(a.test_y, b.test_y)
    all_y = np.concatenate([a.train_y, a.test_y])
    counts = np.bincount(all_y, minlength=4)
    assert counts.max() - counts.min() <= 1
    assert len(all_y) == 103


def test_synth_dataset_zero_spread_trivially_learnable():
    data = synth_dataset(200, 6, 4, 0.0, seed=3)
    net = build(ArchSpec(6, (8,), (2,), 4, seed=3))
    out, _ = train(net, data, TrainConfig(epochs=20, batch_size=32, learning_rate=0.05, seed=3))
    assert evaluate(out, data.test_x, data.test_y) == 1.0


def test_synth_dataset_validation():
    with pytest.raises(ValueError, match="classes"):
        synth_dataset(10, 4, 1, 0.1, seed=0)
    with pytest.raises(ValueError, match="n >= classes"):
        synth_dataset(3, 4, 5, 0.1, seed=0)


def test_load_csv_hand_fixture(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("a,b,label\n1.0,2.0,cat\n3.5,-1.0,dog\n0.0,0.25,cat\n")
    ds = load_csv(str(path), "label")
    assert np.array_equal(ds.train_x, np.array([[1.0, 2.0], [3.5, -1.0], [0.0, 0.25]]))
    assert ds.label_names == ["cat", "dog"]
    assert list(ds.train_y) == [0, 1, 0]
    assert ds.feature_names == ["a", "b"]


def test_load_csv_label_remap_roundtrip(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("x,label\n1,z\n2,y\n3,z\n4,x\n")
    ds = load_csv(str(path), "label")
    assert [ds.label_names[i] for i in ds.train_y] == ["z", "y", "z", "x"]


def test_load_csv_matches_line_by_line_oracle(tmp_path):
    rng = np.random.default_rng(7)
    rows = [[f"{v:.6f}" for v in rng.standard_normal(3)] + [str(rng.integers(0, 3))] for _ in range(100)]
    text = "f0,f1,f2,label\n" + "\n".join(",".join(r) for r in rows) + "\n"
    path = tmp_path / "big.csv"
    path.write_text(text)
    ds = load_csv(str(path), "label")
    seen = {}
    for i, r in enumerate(rows):
        feats = [float(v) for v in r[:3]]
        assert np.array_equal(ds.train_x[i], np.array(feats))
        label = r[3]
        seen.setdefault(label, len(seen))
        assert ds.train_y[i] == seen[label]


def test_load_csv_error_cases(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(CsvError, match="empty file"):
        load_csv(str(empty), "label")

    missing = tmp_path / "missing.csv"
    missing.write_text("a,b\n1,2\n")
    with pytest.raises(CsvError, match="missing label column"):
        load_csv(str(missing), "label")

    bad = tmp_path / "bad.csv"
    bad.write_text("a,label\n1.0,x\noops,y\n")
    with pytest.raises(CsvError, match="line 3.*'a'"):
        load_csv(str(bad), "label")

    ragged = tmp_path / "ragged.csv"
    ragged.write_text("a,b,label\n1,2,x\n1,2\n")
    with pytest.raises(CsvError, match="line 3"):
        load_csv(str(ragged), "label")


def test_load_csv_stratified_split(tmp_path):
    path = tmp_path / "split.csv"
    lines = ["f,label"] + [f"{i},{i % 2}" for i in range(40)]
    path.write_text("\n".join(lines) + "\n")
    ds = load_csv(str(path), "label", test_fraction=0.25, seed=1)
    assert len(ds.test_x) == 10
    assert np.bincount(ds.test_y).tolist() == [5, 5]
    # no overlap between splits
    train_vals = set(ds.train_x[:, 0])
    test_vals = set(ds.test_x[:, 0])
    assert not train_vals & test_vals
