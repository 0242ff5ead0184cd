import numpy as np
import pytest

from dasloc import nn, selection as sel, training
from dasloc.channels import Dataset
from dasloc.errors import IndexOutOfRange, TooFewSamples, WrongFeatureMode


def planted_dataset(r, seed, n=6, noise_dims=True):
    """Features 0-1 carry the scaled coordinates; the rest is unit noise."""
    rng = np.random.default_rng([seed, 77])
    pos = rng.uniform(-50, 50, size=(r, 2))
    feats = np.empty((r, n))
    feats[:, 0] = pos[:, 0] / 50.0
    feats[:, 1] = pos[:, 1] / 50.0
    if n > 2:
        feats[:, 2:] = rng.standard_normal((r, n - 2)) if noise_dims else 0.0
    return Dataset(positions=pos, features=feats, feature_mode="magnitude", n=n)


def noisy_label_dataset(r, seed, noise_std):
    """Perfectly informative features, labels jittered by noise_std meters."""
    rng = np.random.default_rng([seed, 78])
    pos = rng.uniform(-50, 50, size=(r, 2))
    feats = np.stack([pos[:, 0] / 50.0, pos[:, 1] / 50.0], axis=1)
    noisy = pos + noise_std * rng.standard_normal((r, 2))
    return Dataset(positions=noisy, features=feats, feature_mode="magnitude", n=2)


TOY = training.TrainConfig(epochs=40, batch_size=128, m=2, seed=0,
                           hidden_layers=2, hidden_units=32, patience=40)


class TestSplit:
    def test_sizes(self):
        ds = planted_dataset(100, seed=1)
        tr, va, te = training.split_dataset(ds, 0.8, seed=0)
        assert (tr.r, va.r, te.r) == (72, 8, 20)

    def test_partition_property(self):
        tr, va, te = training.split_indices(137, 0.8, seed=3)
        merged = np.concatenate([tr, va, te])
        assert sorted(merged.tolist()) == list(range(137))

    def test_deterministic(self):
        a = training.split_indices(200, 0.8, seed=9)
        b = training.split_indices(200, 0.8, seed=9)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            training.split_indices(9, 0.8, seed=0)

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            training.split_indices(100, 1.0, seed=0)


class TestEarlyStopper:
    def test_constant_loss_stops_after_two_epochs(self):
        stopper = training.EarlyStopper(patience=1)
        improved, stop = stopper.update(0.5)
        assert improved and not stop
        improved, stop = stopper.update(0.5)
        assert not improved and stop

    def test_improvement_resets_counter(self):
        stopper = training.EarlyStopper(patience=2)
        assert stopper.update(1.0) == (True, False)
        assert stopper.update(1.0) == (False, False)
        assert stopper.update(0.9) == (True, False)
        assert stopper.update(0.9) == (False, False)
        assert stopper.update(0.9) == (False, True)

    def test_strict_improvement_required(self):
        stopper = training.EarlyStopper(patience=1)
        stopper.update(1.0)
        improved, stop = stopper.update(1.0 - 0.0)
        assert not improved and stop


class TestTrainRsd:
    def test_planted_features_recovered(self):
        hits = 0
        for seed in (0, 1):
            ds = planted_dataset(2000, seed=seed)
            cfg = training.TrainConfig(epochs=200, batch_size=128, m=2, seed=seed,
                                       hidden_layers=2, hidden_units=32, patience=200)
            trained = training.train_rsd(ds, cfg)
            picks = set(sel.hard_select(trained.selector).tolist())
            hits += picks == {0, 1}
        assert hits == 2

    def test_loss_decreases(self):
        ds = planted_dataset(800, seed=3)
        trained = training.train_rsd(ds, TOY)
        assert trained.history[-1].train_loss < trained.history[0].train_loss

    def test_temperature_schedule_logged_exactly(self):
        ds = planted_dataset(600, seed=4)
        trained = training.train_rsd(ds, TOY)
        schedule = sel.TemperatureSchedule(TOY.tau_start, TOY.tau_end, TOY.epochs)
        for rec in trained.history:
            assert rec.tau == sel.temperature(rec.epoch, schedule)

    def test_returns_min_validation_parameters(self):
        ds = planted_dataset(600, seed=5)
        trained = training.train_rsd(ds, TOY)
        _, va, _ = training.split_indices(ds.r, TOY.split_ratio, TOY.seed)
        x_va = trained.scaler.transform(ds.features[va])
        y_va = trained.target_scaler.transform(ds.positions[va])
        best = min(trained.history, key=lambda rec: rec.val_loss)
        got = training._rsd_val_loss(trained.selector.logits, trained.trunk, x_va, y_va)
        assert got == best.val_loss

    def test_deterministic(self):
        ds = planted_dataset(600, seed=6)
        a = training.train_rsd(ds, TOY)
        b = training.train_rsd(ds, TOY)
        assert np.array_equal(a.selector.logits, b.selector.logits)
        for wa, wb in zip(a.trunk.parameter_arrays(), b.trunk.parameter_arrays()):
            assert np.array_equal(wa, wb)
        assert a.history == b.history

    def test_rejects_complex_split(self, rng):
        ds = Dataset(positions=rng.uniform(-1, 1, (50, 2)),
                     features=rng.standard_normal((50, 8)),
                     feature_mode="complex_split", n=4)
        with pytest.raises(WrongFeatureMode):
            training.train_rsd(ds, TOY)

    def test_rejects_m_larger_than_n(self):
        ds = planted_dataset(100, seed=0, n=3)
        cfg = training.TrainConfig(epochs=2, batch_size=32, m=4, seed=0,
                                   hidden_layers=1, hidden_units=8, patience=2)
        with pytest.raises(ValueError):
            training.train_rsd(ds, cfg)


class TestRunSelection:
    def test_matches_hard_select(self):
        ds = planted_dataset(600, seed=7)
        trained = training.train_rsd(ds, TOY)
        assert np.array_equal(training.run_selection(trained),
                              sel.hard_select(trained.selector))

    def test_duplicate_reporting(self):
        logits = np.array([[3.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
        trained = training.TrainedRsd(
            selector=sel.SelectorParams(logits=logits),
            trunk=nn.init_mlp([2, 4, 2], seed=0),
            scaler=nn.FeatureScaler(mean=np.zeros(3), std=np.ones(3)),
            target_scaler=nn.TargetScaler(lo=np.array([-1.0, -1.0]),
                                          hi=np.array([1.0, 1.0])),
        )
        with pytest.warns(UserWarning, match="duplicate"):
            indices = training.run_selection(trained)
        assert indices.size - sel.unique_count(indices) == 1


class TestTrainLud:
    def test_learns_invertible_map(self):
        ds = planted_dataset(1500, seed=8, n=2)
        trained = training.train_lud(ds, [0, 1], TOY)
        tr, _, _ = training.split_indices(ds.r, TOY.split_ratio, TOY.seed)
        est, _, _ = training.predict_batch(trained, ds.features[tr])
        train_rmse = float(np.sqrt(np.mean(np.sum((est - ds.positions[tr]) ** 2, axis=1))))
        diag = np.hypot(100.0, 100.0)
        assert train_rmse < 0.05 * diag

    def test_log_variance_tracks_label_noise(self):
        means = []
        for noise in (1.0, 4.0, 16.0):
            ds = noisy_label_dataset(1500, seed=9, noise_std=noise)
            trained = training.train_lud(ds, [0, 1], TOY)
            _, _, te = training.split_indices(ds.r, TOY.split_ratio, TOY.seed)
            _, alea, _ = training.predict_batch(trained, ds.features[te])
            means.append(float(np.mean(alea)))
        assert means[0] < means[1] < means[2]

    def test_identity_selection_consumes_everything(self):
        ds = planted_dataset(400, seed=10, n=4)
        cfg = training.TrainConfig(epochs=5, batch_size=64, m=4, seed=1,
                                   hidden_layers=1, hidden_units=16, patience=5)
        trained = training.train_lud(ds, np.arange(4), cfg)
        assert trained.trunk.weights[0].shape[0] == 4

    def test_index_out_of_range(self):
        ds = planted_dataset(100, seed=11, n=3)
        with pytest.raises(IndexOutOfRange):
            training.train_lud(ds, [0, 5], TOY)

    def test_restores_best_validation_snapshot(self):
        ds = planted_dataset(600, seed=12, n=2)
        cfg = training.TrainConfig(epochs=30, batch_size=64, m=2, seed=2,
                                   hidden_layers=1, hidden_units=16, patience=30)
        full = training.train_lud(ds, [0, 1], cfg)
        best_epoch = min(full.history, key=lambda rec: rec.val_loss).epoch
        rerun_cfg = training.TrainConfig(epochs=best_epoch, batch_size=64, m=2, seed=2,
                                         hidden_layers=1, hidden_units=16,
                                         patience=best_epoch)
        rerun = training.train_lud(ds, [0, 1], rerun_cfg)
        for wa, wb in zip(full.trunk.parameter_arrays(), rerun.trunk.parameter_arrays()):
            assert np.array_equal(wa, wb)


@pytest.fixture(scope="module")
def fitted():
    ds = planted_dataset(700, seed=13, n=2)
    cfg = training.TrainConfig(epochs=20, batch_size=64, m=2, seed=3,
                               hidden_layers=1, hidden_units=16, patience=20,
                               dropout=0.2)
    return ds, training.train_lud(ds, [0, 1], cfg)


class TestPredict:
    def test_aleatoric_nonnegative(self, fitted):
        ds, model = fitted
        _, alea, _ = training.predict_batch(model, ds.features[:50])
        assert np.all(alea >= 0)

    def test_epistemic_zero_without_dropout(self):
        ds = planted_dataset(400, seed=14, n=2)
        cfg = training.TrainConfig(epochs=5, batch_size=64, m=2, seed=4,
                                   hidden_layers=1, hidden_units=16, patience=5,
                                   dropout=0.0)
        model = training.train_lud(ds, [0, 1], cfg)
        p1 = training.predict_batch(model, ds.features[:20])
        p2 = training.predict_batch(model, ds.features[:20])
        assert np.array_equal(p1[2], np.zeros_like(p1[2]))
        for a, b in zip(p1, p2):
            assert np.array_equal(a, b)

    def test_epistemic_positive_with_dropout(self, fitted):
        ds, model = fitted
        _, _, epis = training.predict_batch(model, ds.features[:20])
        assert np.all(epis >= 0)
        assert np.any(epis > 0)

    def test_mc_passes_reproducible(self, fitted):
        ds, model = fitted
        a = training.predict_batch(model, ds.features[:10], seed=5)
        b = training.predict_batch(model, ds.features[:10], seed=5)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_single_sample_wrapper(self, fitted):
        ds, model = fitted
        pos, alea, epis = training.predict(model, ds.features[0])
        batch_pos, batch_alea, _ = training.predict_batch(model, ds.features[:1])
        assert (pos.x, pos.y) == (batch_pos[0, 0], batch_pos[0, 1])
        np.testing.assert_array_equal(alea, batch_alea[0])
