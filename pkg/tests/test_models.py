import json

import numpy as np
import pytest

from moveintent.errors import ConfigError, DataError, DivergenceError, PartialWriteError, ShapeError
from moveintent.models import (
    ModelConfig,
    NaiveAverage,
    SvmConfig,
    TrainConfig,
    build_model,
    config_for,
    evaluate,
    load_checkpoint,
    naive_average,
    save_checkpoint,
    select_lambda,
    spectral_features,
    svm_predict,
    svm_train,
    train,
)
from moveintent.models.checkpoint import manifest
from moveintent.models.svm import objective
from moveintent.models.train import accuracy, classify, make_batch

from conftest import SMALL, make_samples

NETWORKS = ["late_fusion", "early_fusion", "ecog_only", "video_only", "lstm_only",
            "conv1d_nolstm", "conv3d_nolstm"]


@pytest.fixture(scope="module")
def samples():
    return make_samples(40)


def small_config(samples, variant, seed=0, **kw):
    return config_for(samples, variant, seed, **{**SMALL, **kw})


def batch(samples, n=6):
    ecog, frames, y = make_batch(samples, np.arange(n), None, None)
    return ecog, frames, y


class TestBuild:
    @pytest.mark.parametrize("variant", NETWORKS + ["naive_average"])
    def test_forward_probabilities(self, samples, variant):
        m = build_model(small_config(samples, variant))
        ecog, frames, _ = batch(samples)
        p = m.predict_proba(ecog, frames)
        assert p.shape == (6,) and np.all((p > 0) & (p < 1))

    def test_param_count_matches_manifest(self, samples):
        m = build_model(small_config(samples, "late_fusion"))
        man = manifest(m)
        assert m.n_params() == sum(int(np.prod(t["shape"])) for t in man["tensors"])

    def test_default_architecture(self):
        m = build_model(ModelConfig(variant="late_fusion"))
        convs = [k for k in m.layers if "conv" in k]
        assert convs == ["ecog_conv1", "ecog_conv2", "ecog_conv3", "video_conv1", "video_conv2",
                         "video_conv3", "video_conv4"]
        assert m.layers["lstm"].hyper["units"] == 20

    def test_conv3d_needs_grid(self):
        with pytest.raises(ConfigError):
            build_model(ModelConfig(variant="conv3d_nolstm", grid_rows=0, grid_cols=0))
        with pytest.raises(ConfigError):
            build_model(ModelConfig(variant="conv3d_nolstm", grid_rows=4, grid_cols=8))

    def test_svm_is_not_a_network(self):
        with pytest.raises(ConfigError):
            build_model(ModelConfig(variant="svm_spectral"))

    def test_same_seed_same_weights(self, samples):
        a = build_model(small_config(samples, "late_fusion", seed=3)).snapshot()
        b = build_model(small_config(samples, "late_fusion", seed=3)).snapshot()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        c = build_model(small_config(samples, "late_fusion", seed=4)).snapshot()
        assert not all(np.array_equal(a[k], c[k]) for k in a)


class TestForward:
    def test_zero_weights(self, samples):
        m = build_model(small_config(samples, "late_fusion"))
        for p in m.parameters().values():
            p.data = np.zeros_like(p.data)
        ecog, frames, _ = batch(samples)
        assert np.all(m.predict_proba(ecog, frames) == 0.5)

    def test_batch_permutation(self, samples):
        m = build_model(small_config(samples, "late_fusion"))
        ecog, frames, _ = batch(samples)
        perm = np.array([3, 0, 5, 1, 4, 2])
        p = m.predict_proba(ecog, frames)
        q = m.predict_proba(ecog[perm], frames[perm])
        assert np.allclose(q, p[perm], rtol=0, atol=1e-12)

    def test_repeatable(self, samples):
        m = build_model(small_config(samples, "early_fusion"))
        ecog, frames, _ = batch(samples)
        assert np.array_equal(m.predict_proba(ecog, frames), m.predict_proba(ecog, frames))

    def test_shape_error(self, samples):
        m = build_model(small_config(samples, "ecog_only"))
        ecog, frames, _ = batch(samples)
        with pytest.raises(ShapeError):
            m.predict_proba(ecog[:, :, :3], frames)
        with pytest.raises(ShapeError):
            m.predict_proba(ecog, frames[:, :, :4])


class TestNaive:
    @pytest.mark.parametrize("a,b,out", [(0.8, 0.6, 0.7), (0.3, 0.3, 0.3), (0.99, 0.01, 0.5)])
    def test_values(self, a, b, out):
        assert abs(naive_average(a, b) - out) < 1e-15

    def test_symmetric_and_bounded(self, rng):
        p, q = rng.random(100), rng.random(100)
        m = naive_average(p, q)
        assert np.array_equal(m, naive_average(q, p))
        assert np.all((m >= np.minimum(p, q)) & (m <= np.maximum(p, q)))

    def test_model_matches_parts(self, samples):
        m = build_model(small_config(samples, "naive_average"))
        assert isinstance(m, NaiveAverage)
        ecog, frames, _ = batch(samples)
        pe = m.parts["ecog"].predict_proba(ecog, frames)
        pv = m.parts["video"].predict_proba(ecog, frames)
        assert np.array_equal(m.predict_proba(ecog, frames), (pe + pv) / 2)


FAST = TrainConfig(max_epochs=30, patience=30, runs=1, batch_size=8)


class TestTrain:
    def test_separable_reaches_full_accuracy(self, samples):
        # validating on the training set makes the selected epoch the best training epoch
        tr = samples.subset(np.arange(32))
        res = train(build_model(small_config(samples, "ecog_only", dropout=0.0)), tr, tr,
                    FAST.model_copy(update={"max_epochs": 50, "patience": 50}))
        assert res.train_acc == 1.0
        assert res.epochs_ran <= 50

    def test_best_of_runs(self, samples):
        tr, va = samples.subset(np.arange(32)), samples.subset(np.arange(32, 40))
        res = train(build_model(small_config(samples, "video_only")), tr, va,
                    FAST.model_copy(update={"runs": 3, "max_epochs": 3, "patience": 3}))
        best = max(r.best_valid_acc for r in res.runs)
        assert res.valid_acc == best
        assert res.runs[res.selected].best_valid_acc == best
        assert len({r.seed for r in res.runs}) == 3

    def test_bit_reproducible(self, samples):
        tr, va = samples.subset(np.arange(32)), samples.subset(np.arange(32, 40))
        cfg = FAST.model_copy(update={"max_epochs": 2})

        def run():
            res = train(build_model(small_config(samples, "late_fusion", dropout=0.0)), tr, va, cfg)
            return res.model.snapshot(), [h.train_loss for h in res.history]

        (a, la), (b, lb) = run(), run()
        assert la == lb and all(np.array_equal(a[k], b[k]) for k in a)

    def test_empty_sets(self, samples):
        m = build_model(small_config(samples, "ecog_only"))
        with pytest.raises(DataError):
            train(m, samples.subset([]), samples, FAST)
        with pytest.raises(DataError):
            evaluate(m, samples.subset([]))

    def test_divergence(self, samples):
        bad = samples.subset(np.arange(32))
        bad.ecog[:] = np.nan
        with pytest.raises(DivergenceError):
            train(build_model(small_config(samples, "ecog_only")), bad, bad,
                  FAST.model_copy(update={"max_epochs": 2, "runs": 2}))

    def test_naive_trains_both_parts(self, samples):
        tr, va = samples.subset(np.arange(32)), samples.subset(np.arange(32, 40))
        res = train(build_model(small_config(samples, "naive_average")), tr, va,
                    FAST.model_copy(update={"max_epochs": 2}))
        assert isinstance(res.model, NaiveAverage) and len(res.runs) == 2


class TestEvaluate:
    def test_constant_half(self):
        labels = np.array([0, 1] * 10)
        assert accuracy(np.full(20, 0.5), labels) == 0.5
        assert np.all(classify(np.full(3, 0.5)) == 0)

    def test_oracle(self):
        labels = np.array([0, 1, 1, 0])
        assert accuracy(labels * 0.8 + 0.1, labels) == 1.0

    def test_counting(self, samples):
        m = build_model(small_config(samples, "ecog_only"))
        ev = evaluate(m, samples)
        correct = sum(int(p > 0.5) == y for p, y in zip(ev.probabilities, samples.labels))
        assert ev.accuracy == correct / len(samples)


@pytest.fixture(scope="module")
def spectral():
    s = make_samples(40, fs=1000.0)
    return spectral_features(s), s.labels


class TestSvm:
    def test_blobs(self, rng):
        x = np.concatenate([rng.normal(-3, 1, (30, 2)), rng.normal(3, 1, (30, 2))])
        y = np.array([0] * 30 + [1] * 30)
        m = svm_train(x, y)
        assert np.mean(svm_predict(m, x) == y) == 1.0

    def test_zero_objective(self, rng):
        x = rng.normal(size=(10, 3))
        y = np.where(rng.random(10) > 0.5, 1.0, -1.0)
        assert objective(np.zeros(3), 0.0, x, y, 0.1) == 1.0

    def test_flip_labels(self, rng):
        half = rng.normal(size=(20, 3)) + np.array([2.0, 0, 0])
        x = np.concatenate([half, -half])
        y = np.array([1] * 20 + [0] * 20)
        a, b = svm_train(x, y), svm_train(x, 1 - y)
        assert np.allclose(a.w, -b.w, atol=1e-12)

    def test_predict(self):
        m = svm_train(np.array([[-1.0], [1.0]]), [0, 1])
        m.mean[:], m.scale[:], m.w[:], m.b = 0.0, 1.0, 1.0, 0.0
        assert svm_predict(m, [[2.0], [0.0], [-1.0]]).tolist() == [1, 0, 0]

    def test_brute_decision(self, spectral):
        x, y = spectral
        m = svm_train(x, y)
        brute = [sum((x[i, j] - m.mean[j]) / m.scale[j] * m.w[j] for j in range(x.shape[1])) + m.b
                 for i in range(len(x))]
        assert np.array_equal(svm_predict(m, x), (np.array(brute) > 0).astype(np.int8))

    def test_rescale_invariant(self, spectral):
        x, y = spectral
        m = svm_train(x, y)
        before = svm_predict(m, x)
        m.w, m.b = m.w * 3.7, m.b * 3.7
        assert np.array_equal(before, svm_predict(m, x))

    def test_single_class(self, rng):
        with pytest.raises(DataError):
            svm_train(rng.normal(size=(5, 2)), [1] * 5)

    def test_dim_mismatch(self, spectral):
        x, y = spectral
        m = svm_train(x, y)
        with pytest.raises(ShapeError):
            svm_predict(m, x[:, :3])

    def test_features_separate(self, spectral):
        x, y = spectral
        m = svm_train(x, y)
        assert np.mean(svm_predict(m, x) == y) == 1.0
        assert x.shape == (40, 8)

    def test_lambda_deterministic(self, spectral):
        x, y = spectral
        a, sa = select_lambda(x[:30], y[:30], x[30:], y[30:])
        b, sb = select_lambda(x[:30], y[:30], x[30:], y[30:])
        assert sa == sb and a.lam == b.lam and np.array_equal(a.w, b.w)
        assert sorted(sa) == [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0]

    def test_lambda_tie_prefers_larger(self, spectral):
        x, y = spectral
        m, scores = select_lambda(x[:30], y[:30], x[30:], y[30:], grid=(1e-3, 1e-2))
        if scores[1e-3] == scores[1e-2]:
            assert m.lam == 1e-2

    def test_save_load(self, spectral, tmp_path):
        x, y = spectral
        m = svm_train(x, y, SvmConfig(lam=0.1, iterations=50))
        save_checkpoint(m, tmp_path / "svm")
        back = load_checkpoint(tmp_path / "svm")
        assert np.array_equal(svm_predict(back, x), svm_predict(m, x))


class TestCheckpoint:
    @pytest.mark.parametrize("variant", ["late_fusion", "naive_average", "conv3d_nolstm"])
    def test_roundtrip(self, samples, tmp_path, variant):
        m = build_model(small_config(samples, variant, seed=9))
        save_checkpoint(m, tmp_path / variant)
        back = load_checkpoint(tmp_path / variant)
        ecog, frames, _ = batch(samples)
        assert np.array_equal(m.predict_proba(ecog, frames), back.predict_proba(ecog, frames))

    def test_layout(self, samples, tmp_path):
        m = build_model(small_config(samples, "ecog_only"))
        save_checkpoint(m, tmp_path)
        man = json.loads((tmp_path / "model.json").read_text())
        size = sum(int(np.prod(t["shape"])) for t in man["tensors"]) * 8
        assert (tmp_path / "weights.bin").stat().st_size == size
        first = man["tensors"][0]
        raw = np.frombuffer((tmp_path / "weights.bin").read_bytes(), "<f8", int(np.prod(first["shape"])))
        assert np.array_equal(raw, m.parameters()[first["name"]].data.ravel())

    def test_missing_manifest(self, samples, tmp_path):
        save_checkpoint(build_model(small_config(samples, "ecog_only")), tmp_path)
        (tmp_path / "model.json").unlink()
        with pytest.raises(PartialWriteError):
            load_checkpoint(tmp_path)

    def test_truncated_weights(self, samples, tmp_path):
        save_checkpoint(build_model(small_config(samples, "ecog_only")), tmp_path)
        w = tmp_path / "weights.bin"
        w.write_bytes(w.read_bytes()[:-8])
        with pytest.raises(PartialWriteError):
            load_checkpoint(tmp_path)

    def test_empty_dir(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path)
