"""Tests for SGD training, paired comparisons and the variance sweep."""

import itertools
import json

import numpy as np
import pytest

from continuous_dropout import train as train_module
from continuous_dropout.data import split, synthetic_gaussian_blobs
from continuous_dropout.errors import ConfigError, PairingError, ValidationError
from continuous_dropout.masks import MaskDistribution
from continuous_dropout.network import NetSpec
from continuous_dropout.train import (
    ComparisonReport,
    RunReport,
    TrainConfig,
    compare_methods,
    evaluate,
    train,
    variance_sweep,
)

SPEC = NetSpec((2, 16, 3))


@pytest.fixture(scope="module")
def blobs():
    ds = synthetic_gaussian_blobs(n_per_class=60, n_classes=3, d=2, separation=4.0, seed=5)
    return split(ds, 150, seed=5)


def _cfg(**changes):
    base = TrainConfig(
        epochs=8,
        batch_size=15,
        lr_initial=0.1,
        lr_decay=0.99,
        momentum_start=0.5,
        momentum_end=0.9,
        momentum_ramp_epochs=4,
        maxnorm_c=3.0,
        init_std=0.1,
    )
    return base.with_updates(**changes)


class TestTrainConfig:
    """Validation, schedules and loading of training settings."""

    def test_schedules(self):
        cfg = _cfg()
        assert cfg.momentum(0) == pytest.approx(0.5)
        assert cfg.momentum(2) == pytest.approx(0.7)
        assert cfg.momentum(10) == pytest.approx(0.9)
        assert cfg.learning_rate(2) == pytest.approx(0.1 * 0.99**2)
        assert _cfg(momentum_ramp_epochs=0).momentum(0) == pytest.approx(0.9)

    @pytest.mark.parametrize(
        "changes",
        [
            {"epochs": -1},
            {"batch_size": 0},
            {"lr_initial": 0.0},
            {"momentum_end": 1.0},
            {"maxnorm_c": 0.0},
            {"init": "xavier"},
            {"dropout": "gaussian:mu=0.5,var=-1"},
        ],
    )
    def test_rejects_bad_values(self, changes):
        with pytest.raises(ValidationError):
            _cfg(**changes)

    def test_dropout_from_strings(self):
        cfg = _cfg(dropout="bernoulli:p=0.5", input_dropout="none")
        assert cfg.dropout == MaskDistribution.bernoulli(0.5)
        assert cfg.input_dropout is None

    def test_json_round_trip(self, tmp_path):
        cfg = _cfg(dropout=MaskDistribution.gaussian(0.5, 0.3), seed=4)
        path = tmp_path / "train.json"
        cfg.save(str(path))
        assert TrainConfig.load(str(path)) == cfg

    def test_toml_train_table(self, tmp_path):
        path = tmp_path / "train.toml"
        path.write_text('[train]\nepochs = 3\ndropout = "uniform"\n', encoding="utf-8")
        cfg = TrainConfig.load(str(path))
        assert cfg.epochs == 3
        assert cfg.dropout == MaskDistribution.uniform()

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "train.json"
        path.write_text(json.dumps({"epochs": 3, "learning_rate": 0.5}), encoding="utf-8")
        with pytest.raises(ConfigError):
            TrainConfig.load(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            TrainConfig.load(str(tmp_path / "absent.toml"))


class TestTrain:
    """End-to-end training on separable blobs."""

    def test_learns_separable_blobs(self, blobs):
        ds_train, ds_val = blobs
        net, report = train(SPEC, ds_train, ds_val, _cfg(epochs=15, dropout=MaskDistribution.gaussian(0.5, 0.2)))
        assert len(report.train_loss) == 15
        assert len(report.validation_error) == 15
        assert report.train_loss[-1] < report.train_loss[0]
        assert evaluate(net, ds_val) < 0.1
        assert report.distribution == "gaussian:mu=0.5,var=0.2"

    def test_zero_epochs_is_untrained(self, blobs):
        ds_train, ds_val = blobs
        net, report = train(SPEC, ds_train, ds_val, _cfg(epochs=0), ds_test=ds_val)
        assert report.train_loss == []
        assert report.test_error == pytest.approx(evaluate(net, ds_val))
        assert report.final_error == report.test_error

    def test_zero_epochs_is_chance_level(self):
        # labels carry no signal when every class shares one centre
        ds = synthetic_gaussian_blobs(n_per_class=400, n_classes=4, d=5, separation=0.0, seed=3)
        _, report = train(NetSpec((5, 16, 4)), ds, None, _cfg(epochs=0), ds_test=ds)
        assert report.test_error == pytest.approx(0.75, abs=0.06)

    def test_linear_net_separates_distant_blobs(self):
        ds = synthetic_gaussian_blobs(n_per_class=50, n_classes=2, d=2, separation=10.0, seed=8)
        net, report = train(NetSpec((2, 2)), ds, None, _cfg(epochs=50))
        assert len(report.train_loss) == 50
        assert report.validation_error == []
        assert evaluate(net, ds) == 0.0

    def test_test_error_every_epoch(self, blobs):
        ds_train, ds_val = blobs
        net, report = train(SPEC, ds_train, ds_val, _cfg(epochs=6), ds_test=ds_val)
        assert len(report.test_errors) == 6
        assert report.test_errors == report.validation_error
        assert report.test_error == report.test_errors[-1] == evaluate(net, ds_val)

    def test_no_test_curve_without_test_set(self, blobs):
        ds_train, ds_val = blobs
        _, report = train(SPEC, ds_train, ds_val, _cfg(epochs=2))
        assert report.test_errors == []
        assert report.test_error is None

    def test_reproducible(self, blobs):
        ds_train, ds_val = blobs
        cfg = _cfg(epochs=3, dropout=MaskDistribution.uniform(), seed=9)
        net_a, report_a = train(SPEC, ds_train, ds_val, cfg)
        net_b, report_b = train(SPEC, ds_train, ds_val, cfg)
        assert report_a == report_b
        for layer_a, layer_b in zip(net_a.layers, net_b.layers):
            assert np.array_equal(layer_a.weights, layer_b.weights)

    def test_maxnorm_holds(self, blobs):
        ds_train, ds_val = blobs
        net, _ = train(SPEC, ds_train, ds_val, _cfg(epochs=3, maxnorm_c=0.5, lr_initial=1.0))
        for layer in net.layers:
            assert np.all(np.linalg.norm(layer.weights, axis=1) <= 0.5 + 1e-9)

    def test_dataset_must_fit(self, blobs):
        ds_train, ds_val = blobs
        with pytest.raises(ValidationError):
            train(NetSpec((3, 4, 3)), ds_train, ds_val, _cfg())

    def test_report_round_trip(self, blobs, tmp_path):
        ds_train, ds_val = blobs
        _, report = train(SPEC, ds_train, ds_val, _cfg(epochs=1))
        path = tmp_path / "run.json"
        report.save(str(path))
        assert RunReport.load(str(path)) == report


class TestCompare:
    """Paired multi-run comparisons."""

    def test_shared_initialisation(self, blobs):
        ds_train, ds_val = blobs
        reports = compare_methods(
            SPEC,
            ds_train,
            ds_val,
            _cfg(epochs=2),
            [None, MaskDistribution.bernoulli(0.5), MaskDistribution.gaussian(0.5, 0.2)],
            n_runs=3,
        )
        assert [(r.method_a, r.method_b) for r in reports] == [
            ("none", "bernoulli:p=0.5"),
            ("none", "gaussian:mu=0.5,var=0.2"),
            ("bernoulli:p=0.5", "gaussian:mu=0.5,var=0.2"),
        ]
        assert len(set(reports[0].init_digests)) == 3
        assert all(0.0 <= r.p_value_t <= 1.0 and 0.0 <= r.p_value_w <= 1.0 for r in reports)

    def test_identical_methods_are_degenerate(self, blobs):
        ds_train, ds_val = blobs
        gaussian = MaskDistribution.gaussian(0.5, 0.2)
        (report,) = compare_methods(SPEC, ds_train, ds_val, _cfg(epochs=1), [gaussian, gaussian], n_runs=2)
        assert report.degenerate
        assert report.p_value_t == 1.0
        assert report.errors_a == report.errors_b

    def test_needs_two_runs_and_methods(self, blobs):
        ds_train, ds_val = blobs
        with pytest.raises(ValidationError):
            compare_methods(SPEC, ds_train, ds_val, _cfg(epochs=1), [None, MaskDistribution.uniform()], n_runs=1)
        with pytest.raises(ValidationError):
            compare_methods(SPEC, ds_train, ds_val, _cfg(epochs=1), [None], n_runs=2)

    def test_unpaired_initialisation_refused(self, blobs, monkeypatch):
        ds_train, ds_val = blobs
        counter = itertools.count()
        monkeypatch.setattr(train_module, "weights_digest", lambda net: f"digest-{next(counter)}")
        with pytest.raises(PairingError):
            compare_methods(SPEC, ds_train, ds_val, _cfg(epochs=1), [None, MaskDistribution.uniform()], n_runs=2)

    def test_report_serializes(self, blobs, tmp_path):
        ds_train, ds_val = blobs
        (report,) = compare_methods(SPEC, ds_train, ds_val, _cfg(epochs=1), [None, MaskDistribution.uniform()], n_runs=2)
        path = tmp_path / "comparison.json"
        report.save(str(path))
        assert ComparisonReport.load(str(path)) == report


class TestVarianceSweep:
    """Error as a function of the Gaussian mask variance."""

    def test_frame_shape(self, blobs):
        ds_train, ds_val = blobs
        frame = variance_sweep(SPEC, ds_train, ds_val, _cfg(epochs=1), [0.0, 0.2, 0.5], n_seeds=2)
        assert list(frame.columns) == ["sigma_sq", "mean_error", "std_error", "n_runs"]
        assert frame["sigma_sq"].tolist() == [0.0, 0.2, 0.5]
        assert frame["n_runs"].tolist() == [2, 2, 2]
        assert frame["mean_error"].between(0.0, 1.0).all()

    def test_single_seed_has_zero_spread(self, blobs):
        ds_train, ds_val = blobs
        frame = variance_sweep(SPEC, ds_train, ds_val, _cfg(epochs=1), [0.3])
        assert frame["std_error"].tolist() == [0.0]

    def test_empty_grid(self, blobs):
        ds_train, ds_val = blobs
        with pytest.raises(ValidationError):
            variance_sweep(SPEC, ds_train, ds_val, _cfg(epochs=1), [])
