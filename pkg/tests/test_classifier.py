"""Classifier tests. The analytic gradient is checked against central finite
differences of the loss itself, and blob-set convergence is sanity-bounded by
an independent nearest-centroid oracle before the SGD result is judged."""

import numpy as np
import pytest

from plotgrid.classifier import (
    LinearModel,
    TrainConfig,
    gradient,
    load_model,
    log_softmax,
    nll_loss,
    predict_log_probs,
    save_model,
    train,
)
from plotgrid.core import SpeciesCatalog
from plotgrid.features import EmbeddingRecord


def batch_mean_nll(weights, bias, x, y):
    """Loss as the gradient's oracle sees it: pure float64, no shortcuts."""
    logits = x.astype(np.float64) @ weights.astype(np.float64).T + bias.astype(np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -log_probs[np.arange(len(y)), y].mean()


def fd_gradient(weights, bias, x, y, h=1e-5):
    """Central-difference gradient of the mean NLL in every coordinate."""
    grad_w = np.zeros_like(weights, dtype=np.float64)
    grad_b = np.zeros_like(bias, dtype=np.float64)
    for idx in np.ndindex(weights.shape):
        bumped = weights.astype(np.float64).copy()
        bumped[idx] += h
        up = batch_mean_nll(bumped, bias, x, y)
        bumped[idx] -= 2 * h
        down = batch_mean_nll(bumped, bias, x, y)
        grad_w[idx] = (up - down) / (2 * h)
    for i in range(bias.shape[0]):
        bumped = bias.astype(np.float64).copy()
        bumped[i] += h
        up = batch_mean_nll(weights, bumped, x, y)
        bumped[i] -= 2 * h
        down = batch_mean_nll(weights, bumped, x, y)
        grad_b[i] = (up - down) / (2 * h)
    return grad_w, grad_b


def relative_error(analytic, numeric):
    scale = max(1.0, float(np.abs(numeric).max()))
    return float(np.abs(analytic - numeric).max()) / scale


def make_blob_records(num_classes=10, dim=64, per_class=100, separation=5.0, seed=7):
    """Gaussian blobs with unit noise: class centers sit `separation` sigmas
    from the origin along random directions, which in 64 dimensions leaves
    near-orthogonal, cleanly separable clusters. Species ids are deliberately
    sparse so nothing can treat them as dense indices."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, dim))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    records = []
    for c in range(num_classes):
        points = centers[c] + rng.standard_normal((per_class, dim))
        records.extend(
            EmbeddingRecord(f"blob_{c}_{j}", "dct64", points[j], 100 + 3 * c)
            for j in range(per_class)
        )
    catalog = SpeciesCatalog({100 + 3 * c: per_class for c in range(num_classes)})
    return records, catalog


def training_accuracy(model, records):
    hits = 0
    for rec in records:
        predicted = model.catalog.decode(int(np.argmax(predict_log_probs(model, rec.vector))))
        hits += predicted == rec.species
    return hits / len(records)


class TestLogSoftmax:
    def test_zero_logits_are_uniform(self):
        out = log_softmax(np.zeros(5))
        np.testing.assert_allclose(out, -np.log(5.0), atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            x = rng.standard_normal(int(rng.integers(1, 12))) * 50.0
            shift = float(rng.standard_normal()) * 100.0
            np.testing.assert_allclose(log_softmax(x + shift), log_softmax(x), atol=1e-6)

    def test_handles_extreme_logits(self):
        out = log_softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(out))
        assert abs(out[0]) < 1e-12

    def test_nll_picks_label_entry(self):
        lp = log_softmax(np.array([1.0, 2.0, 3.0]))
        assert nll_loss(lp, 2) == pytest.approx(-lp[2])


class TestGradient:
    def test_hand_computed_two_class_case(self):
        """w=0, b=0, x=1, label 0: softmax is (1/2, 1/2), so db = (-1/2, 1/2)."""
        w = np.zeros((2, 1))
        b = np.zeros(2)
        x = np.ones((1, 1))
        y = np.array([0])
        dw, db = gradient(w, b, x, y)
        np.testing.assert_allclose(db, [-0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(dw, [[-0.5], [0.5]], atol=1e-12)

    def test_gradient_vanishes_at_confident_optimum(self):
        w = np.zeros((3, 2))
        w[1] = 200.0  # class 1 saturates for positive inputs
        x = np.array([[1.0, 1.0]])
        dw, db = gradient(w, np.zeros(3), x, np.array([1]))
        assert np.abs(dw).max() < 1e-12
        assert np.abs(db).max() < 1e-12

    def test_matches_finite_differences_float64(self):
        """50 random shapes, relative error below 1e-6 in 64-bit."""
        rng = np.random.default_rng(42)
        for _ in range(50):
            c = int(rng.integers(2, 11))
            d = int(rng.integers(1, 17))
            n = int(rng.integers(1, 9))
            w = rng.standard_normal((c, d))
            b = rng.standard_normal(c)
            x = rng.standard_normal((n, d))
            y = rng.integers(0, c, size=n)
            dw, db = gradient(w, b, x, y)
            fw, fb = fd_gradient(w, b, x, y)
            assert relative_error(dw, fw) < 1e-6
            assert relative_error(db, fb) < 1e-6

    def test_float32_inputs_stay_float32(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((4, 8)).astype(np.float32)
        b = np.zeros(4, dtype=np.float32)
        x = rng.standard_normal((16, 8)).astype(np.float32)
        y = rng.integers(0, 4, size=16)
        dw, db = gradient(w, b, x, y)
        assert dw.dtype == np.float32 and db.dtype == np.float32
        fw, fb = fd_gradient(w, b, x, y)
        assert relative_error(dw.astype(np.float64), fw) < 1e-4

    def test_rejects_shape_mismatches(self):
        with pytest.raises(ValueError):
            gradient(np.zeros((2, 3)), np.zeros(2), np.zeros((1, 4)), np.array([0]))
        with pytest.raises(ValueError):
            gradient(np.zeros((2, 3)), np.zeros(2), np.zeros((0, 3)), np.array([], dtype=int))


class TestTrain:
    def test_blob_convergence_with_oracle_sanity_bound(self):
        records, catalog = make_blob_records()
        vectors = np.stack([r.vector for r in records])
        labels = np.array([r.species for r in records])

        # The set must be easy before SGD gets credit for solving it.
        centroids = {
            sid: vectors[labels == sid].mean(axis=0) for sid in catalog.species_ids
        }
        ids = list(centroids)
        stack = np.stack([centroids[sid] for sid in ids])
        nearest = np.array(
            [ids[int(np.argmin(((stack - v) ** 2).sum(axis=1)))] for v in vectors]
        )
        assert (nearest == labels).mean() >= 0.99

        result = train(records, catalog, TrainConfig(epochs=200, seed=7))
        assert training_accuracy(result.model, records) >= 0.99
        assert result.epoch_losses[-1] < result.epoch_losses[0]
        assert result.epoch_losses[0] / result.epoch_losses[-1] >= 10.0

    def test_same_seed_bit_identical(self):
        records, catalog = make_blob_records(num_classes=3, per_class=20)
        cfg = TrainConfig(epochs=5, seed=11)
        a = train(records, catalog, cfg).model
        b = train(records, catalog, cfg).model
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)

    def test_different_seed_differs(self):
        records, catalog = make_blob_records(num_classes=3, per_class=20)
        a = train(records, catalog, TrainConfig(epochs=5, seed=1)).model
        b = train(records, catalog, TrainConfig(epochs=5, seed=2)).model
        assert np.abs(a.weights - b.weights).max() > 0

    def test_single_class_saturates(self):
        rng = np.random.default_rng(0)
        catalog = SpeciesCatalog({42: 30})
        records = [
            EmbeddingRecord(f"r{i}", "dct64", rng.standard_normal(64), 42) for i in range(30)
        ]
        result = train(records, catalog, TrainConfig(epochs=3, seed=0))
        assert training_accuracy(result.model, records) == 1.0
        assert result.epoch_losses[-1] == pytest.approx(0.0, abs=1e-12)

    def test_error_cases(self):
        records, catalog = make_blob_records(num_classes=2, per_class=5)
        with pytest.raises(ValueError, match="empty catalog"):
            train(records, SpeciesCatalog({}), TrainConfig())
        with pytest.raises(ValueError, match="no training records"):
            train([], catalog, TrainConfig())
        mixed = records + [EmbeddingRecord("x", "cls768", np.zeros(768), 100)]
        with pytest.raises(ValueError, match="kind mismatch"):
            train(mixed, catalog, TrainConfig())
        with pytest.raises(KeyError, match="not in catalog"):
            train(records, SpeciesCatalog({100: 5, 999: 5}), TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)


class TestPredict:
    def test_zero_model_is_uniform(self):
        catalog = SpeciesCatalog({1: 1, 2: 1, 3: 1})
        model = LinearModel(
            weights=np.zeros((3, 64), dtype=np.float32),
            bias=np.zeros(3, dtype=np.float32),
            catalog=catalog,
            input_kind="dct64",
        )
        np.testing.assert_allclose(
            predict_log_probs(model, np.ones(64)), -np.log(3.0), atol=1e-12
        )

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(42)
        catalog = SpeciesCatalog({i: 1 for i in range(5)})
        w = rng.standard_normal((5, 64)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        model = LinearModel(weights=w, bias=b, catalog=catalog, input_kind="dct64")
        v = rng.standard_normal(64)
        logits = w.astype(np.float64) @ v + b.astype(np.float64)
        expected = logits - logits.max()
        expected = expected - np.log(np.exp(expected).sum())
        np.testing.assert_allclose(predict_log_probs(model, v), expected, atol=1e-12)

    def test_argmax_matches_raw_logits(self):
        rng = np.random.default_rng(9)
        catalog = SpeciesCatalog({i: 1 for i in range(7)})
        for _ in range(20):
            w = rng.standard_normal((7, 64)).astype(np.float32)
            b = rng.standard_normal(7).astype(np.float32)
            model = LinearModel(weights=w, bias=b, catalog=catalog, input_kind="dct64")
            v = rng.standard_normal(64)
            logits = w.astype(np.float64) @ v + b.astype(np.float64)
            assert int(np.argmax(predict_log_probs(model, v))) == int(np.argmax(logits))

    def test_dimension_mismatch(self):
        catalog = SpeciesCatalog({1: 1})
        model = LinearModel(
            weights=np.zeros((1, 64), dtype=np.float32),
            bias=np.zeros(1, dtype=np.float32),
            catalog=catalog,
            input_kind="dct64",
        )
        with pytest.raises(ValueError):
            predict_log_probs(model, np.zeros(63))


class TestModelFile:
    def test_round_trip_is_bit_exact(self, tmp_path):
        records, catalog = make_blob_records(num_classes=4, per_class=10)
        model = train(records, catalog, TrainConfig(epochs=2, seed=3)).model
        path = tmp_path / "model.lin1"
        save_model(path, model)
        loaded = load_model(path)
        np.testing.assert_array_equal(loaded.weights, model.weights)
        np.testing.assert_array_equal(loaded.bias, model.bias)
        assert loaded.catalog == model.catalog
        assert loaded.input_kind == model.input_kind

    def test_save_is_deterministic(self, tmp_path):
        records, catalog = make_blob_records(num_classes=2, per_class=5)
        model = train(records, catalog, TrainConfig(epochs=1, seed=0)).model
        p1, p2 = tmp_path / "a.lin1", tmp_path / "b.lin1"
        save_model(p1, model)
        save_model(p2, model)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_foreign_files(self, tmp_path):
        bad = tmp_path / "bad.lin1"
        bad.write_bytes(b"NOPE" + bytes(32))
        with pytest.raises(ValueError, match="not a LIN1"):
            load_model(bad)

    def test_rejects_trailing_bytes(self, tmp_path):
        records, catalog = make_blob_records(num_classes=2, per_class=5)
        model = train(records, catalog, TrainConfig(epochs=1, seed=0)).model
        path = tmp_path / "model.lin1"
        save_model(path, model)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ValueError, match="truncated or trailing"):
            load_model(path)
