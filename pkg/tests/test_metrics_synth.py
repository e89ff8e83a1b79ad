import json

import numpy as np
import pytest

from roadcast.errors import DataError
from roadcast.metrics import MetricsReport, ha_baseline, metrics
from roadcast.synth import SynthSpec, generate_synthetic

from oracles import elementwise_metrics


class TestMetrics:
    def test_perfect_prediction_gives_zeros(self):
        x = np.random.default_rng(0).normal(size=(12, 4, 1)) + 10.0
        report = metrics(x, x)
        assert report.overall.mae == 0.0
        assert report.overall.rmse == 0.0
        assert report.overall.mape_pct == 0.0

    def test_uniform_offset_case(self):
        truth = np.full((12, 3, 1), 2.0)
        report = metrics(truth + 1.0, truth)
        assert report.overall.mae == 1.0
        assert report.overall.rmse == 1.0
        assert report.overall.mape_pct == pytest.approx(50.0, abs=1e-12)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(1)
        pred = rng.normal(size=(3, 2, 1)) * 4
        truth = rng.normal(size=(3, 2, 1)) * 4
        mae, rmse, mape, used = elementwise_metrics(pred, truth)
        report = metrics(pred, truth)
        assert report.overall.mae == pytest.approx(mae, abs=1e-12)
        assert report.overall.rmse == pytest.approx(rmse, abs=1e-12)
        assert report.overall.mape_pct == pytest.approx(mape, abs=1e-12)
        assert report.overall.mape_count == used

    def test_mape_mask_skips_near_zero_truth(self):
        truth = np.array([[[0.0]], [[10.0]], [[1e-4]]])
        pred = truth + 1.0
        report = metrics(pred, truth)
        assert report.overall.mape_count == 1
        assert report.overall.mape_pct == pytest.approx(10.0)

    def test_buckets_cover_horizon_ranges(self):
        rng = np.random.default_rng(2)
        truth = rng.normal(size=(5, 12, 3, 1)) + 20.0
        pred = truth + rng.normal(size=truth.shape)
        report = metrics(pred, truth)
        assert set(report.buckets) == {"15min", "30min", "1hour"}
        manual = metrics(pred[:, 3:6], truth[:, 3:6])
        assert report.buckets["30min"].mae == manual.overall.mae
        for bucket in report.buckets.values():
            assert bucket.mae <= bucket.rmse

    def test_report_round_trips_through_json(self):
        rng = np.random.default_rng(3)
        truth = rng.normal(size=(2, 12, 3, 1)) + 15.0
        report = metrics(truth + rng.normal(size=truth.shape), truth)
        doc = json.loads(json.dumps(report.to_dict()))
        assert MetricsReport.from_dict(doc) == report

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="metrics"):
            metrics(np.zeros((3, 2, 1)), np.zeros((2, 3, 1)))


class TestHaBaseline:
    def test_constant_window(self):
        window = np.full((12, 4, 1), 7.5)
        pred = ha_baseline(window, 12)
        assert pred.shape == (12, 4, 1)
        assert np.all(pred == 7.5)

    def test_arithmetic_mean(self):
        window = np.zeros((2, 1, 1))
        window[1] = 2.0
        pred = ha_baseline(window, 5)
        assert np.all(pred == 1.0)

    def test_batched_windows(self):
        rng = np.random.default_rng(4)
        windows = rng.normal(size=(6, 12, 3, 1))
        pred = ha_baseline(windows, 4)
        assert pred.shape == (6, 4, 3, 1)
        assert np.allclose(pred[2, 0], windows[2].mean(axis=0))


class TestSynthetic:
    def test_deterministic_under_seed(self):
        spec = SynthSpec(n_sensors=8, steps=100, seed=3)
        net1, ds1 = generate_synthetic(spec)
        net2, ds2 = generate_synthetic(spec)
        assert np.array_equal(ds1.values, ds2.values)
        assert net1.edges == net2.edges

    def test_pure_sinusoid_when_noise_and_pulses_off(self):
        spec = SynthSpec(n_sensors=5, steps=576, seed=1, noise_std=0.0, pulse_rate=0.0,
                         require_connected=False)
        _, ds = generate_synthetic(spec)
        x = ds.values[:, 0, 0]
        # a pure sinusoid repeats exactly after one daily period
        assert np.allclose(x[:288], x[288:576], atol=1e-9)
        centered = x - x.mean()
        assert np.ptp(x) > 1.0

    def test_lagged_neighbor_correlation_beats_nonneighbor(self):
        spec = SynthSpec(n_sensors=12, steps=1500, seed=7, radius=0.4, pulse_rate=0.03,
                         pulse_amplitude=10.0, noise_std=0.2, require_connected=False)
        net, ds = generate_synthetic(spec)
        x = ds.values[:, :, 0]
        x = x - x.mean(axis=0)
        x = x / x.std(axis=0)
        edges = {(u, v) for u, v, _ in net.edges}

        def corr(a, b, lag):
            if lag:
                return float(np.mean(a[:-lag] * b[lag:]))
            return float(np.mean(a * b))

        lag1 = [corr(x[:, u], x[:, v], 1) for u, v in edges]
        non_edges = [(u, v) for u in range(12) for v in range(12)
                     if u != v and (u, v) not in edges]
        lag0 = [corr(x[:, u], x[:, v], 0) for u, v in non_edges]
        assert np.mean(lag1) > np.mean(lag0)

    def test_disconnected_spec_rejected(self):
        with pytest.raises(DataError, match="disconnected"):
            generate_synthetic(SynthSpec(n_sensors=30, steps=10, seed=0, radius=0.05))

    def test_size_limits_enforced(self):
        with pytest.raises(DataError):
            SynthSpec(n_sensors=51)
        with pytest.raises(DataError):
            SynthSpec(steps=0)
