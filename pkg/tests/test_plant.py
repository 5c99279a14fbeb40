import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wakeadapt.farm import Ambient, FarmModel, WakeParams, table1_layout
from wakeadapt.plant import (Plant, PlantSpec, PowerSeries, extract_measurement, extract_windows,
                             make_initial_dataset, moving_average, row_bounds_to_turbines,
                             sample_initial_yaws, simulate_op)
from wakeadapt.rng import stream

ROWS = [[0, 1, 2], [3, 4, 5], [6, 7, 8]]


def loop_simulation(spec, yaw, steps, seed_labels=("plant",)):
    """Sample-by-sample re-implementation of the first OP from a fresh plant."""
    gen = stream(spec.seed, *seed_labels)
    greedy = spec.truth.greedy_powers()
    scale = spec.noise_std * greedy
    noise = gen.standard_normal(len(greedy)) * scale
    innov = gen.standard_normal((steps, len(greedy)))
    target = spec.truth.powers(np.asarray(yaw, dtype=float))
    level = greedy.copy()
    rho = spec.ar_coefficient
    a = np.exp(-spec.sample_period / spec.time_constant)
    out = np.empty((steps, len(greedy)))
    for k in range(steps):
        noise = rho * noise + np.sqrt(1 - rho ** 2) * scale * innov[k]
        level = target + (level - target) * a
        out[k] = np.maximum(level + noise, 0.0)
    return out


class TestPlant:
    def test_matches_loop_oracle(self):
        spec = PlantSpec(seed=4)
        yaw = np.repeat([20.0, 8.0, 0.0], 3)
        series = Plant(spec).simulate_op(yaw, 120.0)
        assert np.allclose(series.samples, loop_simulation(spec, yaw, 120), rtol=1e-10, atol=1e-6)

    def test_noise_free_settles_to_truth(self):
        spec = PlantSpec(noise_std=0.0)
        yaw = np.repeat([25.0, 10.0, 0.0], 3)
        series = Plant(spec).simulate_op(yaw, 1200.0)
        assert np.allclose(series.samples[-1], spec.truth.powers(yaw), rtol=1e-8)
        assert np.allclose(series.samples[59], spec.truth.powers(yaw)
                           + (spec.truth.greedy_powers() - spec.truth.powers(yaw)) * np.exp(-1.0),
                           rtol=1e-10)

    def test_ar_statistics(self):
        spec = PlantSpec(truth=FarmModel(table1_layout(), Ambient(), WakeParams()), noise_std=0.02,
                         seed=1)
        plant = Plant(spec)
        x = plant.simulate_op(np.zeros(9), 7200.0).samples
        resid = (x - plant.greedy) / plant.noise_scale
        assert resid.std() == pytest.approx(1.0, abs=0.2)
        lag = np.mean([np.corrcoef(resid[:-60, i], resid[60:, i])[0, 1] for i in range(9)])
        assert lag == pytest.approx(0.99 ** 60, abs=0.1)

    def test_transient_residual_after_cut(self):
        spec = PlantSpec(noise_std=0.0)
        plant = Plant(spec)
        yaw = np.repeat([25.0, 10.0, 0.0], 3)
        step = spec.truth.powers(yaw) - plant.greedy
        bias = extract_measurement(plant.simulate_op(yaw, 600.0)) - spec.truth.powers(yaw)
        assert np.all(np.abs(bias) <= np.exp(-5.0) * np.abs(step) + 1e-9)
        settled = extract_measurement(plant.simulate_op(yaw, 600.0))
        assert np.allclose(settled, spec.truth.powers(yaw), rtol=1e-6)

    def test_state_round_trip_continues_identically(self):
        spec = PlantSpec(seed=2)
        a = Plant(spec)
        a.simulate_op(np.full(9, 10.0), 300.0)
        b = Plant(spec)
        b.set_state(a.get_state())
        yaw = np.repeat([5.0, -5.0, 0.0], 3)
        assert np.array_equal(a.simulate_op(yaw, 300.0).samples, b.simulate_op(yaw, 300.0).samples)

    def test_functional_wrapper(self):
        spec = PlantSpec(seed=5)
        seg, carry = simulate_op(spec, np.zeros(9), 100.0)
        seg2, _ = simulate_op(spec, np.zeros(9), 100.0, carry)
        p = Plant(spec)
        p.simulate_op(np.zeros(9), 100.0)
        assert np.array_equal(seg2.samples, p.simulate_op(np.zeros(9), 100.0).samples)
        assert seg2.start_time == 100.0

    @pytest.mark.parametrize("kwargs", [{"ar_coefficient": 1.0}, {"noise_std": -0.1},
                                        {"time_constant": 0.0}, {"sample_period": 0.0}])
    def test_spec_validation(self, kwargs):
        with pytest.raises(ValueError):
            PlantSpec(**kwargs)


class TestSeries:
    def series(self, n=600, k=2):
        return PowerSeries(1.0, np.arange(n * k, dtype=float).reshape(n, k))

    def test_measurement_is_trailing_mean(self):
        s = self.series()
        assert np.array_equal(extract_measurement(s, 300.0, 300.0), s.samples[300:].mean(axis=0))

    def test_windows_half_horizon(self):
        s = self.series()
        w = extract_windows(s, 150.0, 300.0)
        assert w.shape == (2, 2)
        assert np.array_equal(w[1], s.samples[450:].mean(axis=0))
        assert np.array_equal(w[0], s.samples[300:450].mean(axis=0))

    def test_too_short(self):
        with pytest.raises(ValueError):
            extract_measurement(self.series(n=500))
        with pytest.raises(ValueError):
            extract_windows(self.series(), 250.5)

    def test_moving_average_against_convolution(self):
        rng = np.random.default_rng(0)
        s = PowerSeries(1.0, rng.normal(size=(200, 3)))
        out = moving_average(s, 20.0).samples
        for i in range(3):
            full = np.convolve(s.samples[:, i], np.ones(20) / 20, mode="valid")
            assert np.allclose(out[19:, i], full, atol=1e-12)
        assert out[0, 0] == s.samples[0, 0]

    def test_moving_average_step_and_constant(self):
        x = np.r_[np.zeros(50), np.ones(100)][:, None]
        out = moving_average(PowerSeries(1.0, x), 20.0).samples[:, 0]
        assert np.allclose(out[50:70], np.arange(1, 21) / 20)
        assert np.all(out[69:] == 1.0)
        const = moving_average(PowerSeries(1.0, np.full((30, 2), 3.5)), 10.0).samples
        assert np.allclose(const, 3.5, rtol=0, atol=1e-12)

    def test_moving_average_linear(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(80, 2)), rng.normal(size=(80, 2))
        ma = lambda v: moving_average(PowerSeries(1.0, v), 15.0).samples
        assert np.allclose(ma(2 * a - 3 * b), 2 * ma(a) - 3 * ma(b), atol=1e-12)

    def test_moving_average_variance_reduction(self):
        stds = []
        for seed in range(10):
            x = np.random.default_rng(seed).normal(0, 2.0, (3000, 1))
            stds.append(moving_average(PowerSeries(1.0, x), 300.0).samples[299::300, 0])
        assert np.std(np.concatenate(stds)) == pytest.approx(2.0 / np.sqrt(300), rel=0.1)

    def test_concat_and_segment(self):
        a, b = self.series(10), self.series(5)
        c = a.concat(b)
        assert c.op_starts == (0, 10)
        seg = c.segment(1)
        assert np.array_equal(seg.samples, b.samples) and seg.start_time == 10.0

    def test_csv_export(self, tmp_path):
        s = PowerSeries(1.0, np.array([[1.5, 2.0], [3.0, 4.25]]), start_time=10.0)
        path = tmp_path / "p.csv"
        s.to_csv(path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["time_s", "power_w_0", "power_w_1"]
        assert [float(v) for v in rows[2]] == [12.0, 3.0, 4.25]


class TestInitialDesign:
    def test_bounds_ties_duplicates(self):
        yaws = sample_initial_yaws(ROWS, (-25, -20, -7), (18, 10, 5), 9, 20, 0.25,
                                   np.random.default_rng(1))
        assert yaws.shape == (20, 9)
        assert np.array_equal(yaws[0], np.zeros(9))
        lo, hi = row_bounds_to_turbines(ROWS, (-25, -20, -7), (18, 10, 5), 9)
        assert np.all((yaws >= lo) & (yaws <= hi))
        for r in ROWS:
            assert np.all(yaws[:, r] == yaws[:, r[:1]])
        assert len({tuple(y) for y in yaws}) == 15

    @given(st.integers(0, 10_000))
    def test_distinct_count_and_greedy_first(self, seed):
        yaws = sample_initial_yaws(ROWS, (-25, -20, -7), (18, 10, 5), 9, 12, 0.25,
                                   np.random.default_rng(seed))
        assert len({tuple(y) for y in yaws}) == 9
        assert not np.any(yaws[0])

    def test_latin_hypercube_strata(self):
        yaws = sample_initial_yaws(ROWS, (0, 0, 0), (10, 10, 10), 9, 11, 0.0,
                                   np.random.default_rng(3), decimals=6)
        strata = np.floor(yaws[1:, [0, 3, 6]]).astype(int)
        for col in strata.T:
            assert sorted(col) == list(range(10))

    def test_untied(self):
        yaws = sample_initial_yaws(ROWS, (-5, -5, -5), (5, 5, 5), 9, 6, 0.0,
                                   np.random.default_rng(0), tie_rows=False)
        assert np.any(yaws[1:, 0] != yaws[1:, 1])

    def test_rejects_bad_bounds(self):
        with pytest.raises(ValueError):
            row_bounds_to_turbines(ROWS, (1, 0, 0), (0, 0, 0), 9)
        with pytest.raises(ValueError):
            row_bounds_to_turbines(ROWS, (0, 0), (1, 1), 9)

    def test_dataset_two_windows_per_op(self):
        plant = Plant(PlantSpec(seed=0))
        ops = make_initial_dataset(plant, ROWS, n_ops=4, duplicate_fraction=0.0, horizon=150.0)
        assert len(ops) == 8
        assert np.array_equal(ops[0].yaw, ops[1].yaw)
        assert plant.time == 2400.0
        assert np.allclose(ops[0].normalized * plant.greedy, ops[0].powers)
