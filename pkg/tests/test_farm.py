import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wakeadapt.farm import (Ambient, DomainError, FarmLayout, FarmModel, Turbine, WakeParams,
                            effective_speeds, farm_power, table1_layout, turbine_power,
                            wake_deficit, wake_deflection)

D = 178.3
TURBINE = Turbine(0.0, 0.0)
PARAMS = WakeParams()


def scalar_wake(x, yaw_deg, ct=0.8, ti=0.05, d=D, ka=0.38, kb=0.004, alpha=0.58, beta=0.077):
    """Straight-line re-derivation of the Gaussian wake shape (widths, centre offset)."""
    g = math.radians(yaw_deg)
    c = math.cos(g)
    u_r = 0.5 * (1 + math.sqrt(1 - ct * c))
    sz0 = d / 2 * math.sqrt(u_r / (1 + math.sqrt(1 - ct)))
    sy0 = sz0 * c
    x0 = d * c * (1 + math.sqrt(1 - ct * c)) / (
        math.sqrt(2) * (4 * alpha * ti + 2 * beta * (1 - math.sqrt(1 - ct))))
    k = ka * ti + kb
    theta = 0.3 * g / c * (1 - math.sqrt(1 - ct * c))
    d0 = math.tan(theta) * x0
    if x < x0:
        f = x / x0
        s0 = 0.501 * d * math.sqrt(ct / 2)
        return (1 - f) * s0 + f * sy0, (1 - f) * s0 + f * sz0, f * d0
    sy = k * (x - x0) + sy0
    sz = k * (x - x0) + sz0
    c0 = 1 - math.sqrt(1 - ct)
    m0 = c0 * (2 - c0)
    e0 = c0 ** 2 - 3 * math.exp(1 / 12) * c0 + 3 * math.exp(1 / 3)
    grow = 1.6 * math.sqrt(sy * sz / (sy0 * sz0))
    ln = math.log((1.6 + math.sqrt(m0)) * (grow - math.sqrt(m0))
                  / ((1.6 - math.sqrt(m0)) * (grow + math.sqrt(m0))))
    return sy, sz, d0 + theta * e0 / 5.2 * math.sqrt(sy0 * sz0 / (k * k * m0)) * ln


def scalar_centre_deficit(x, yaw_deg=0.0, ct=0.8, ti=0.05):
    sy, sz, _ = scalar_wake(x, yaw_deg, ct, ti)
    return 1 - math.sqrt(1 - ct * math.cos(math.radians(yaw_deg)) * D * D / (8 * sy * sz))


# values frozen from the scalar oracle above
DEFLECTION_25DEG_5D = 61.21294827002829
DEFLECTION_25DEG_10D = 99.62634854274353
DEFICIT_5D = 0.556015880491699
DEFICIT_10D = 0.26478004120253107


class TestDeflection:
    def test_pinned_near_wake(self):
        assert scalar_wake(5 * D, 25.0)[2] == pytest.approx(DEFLECTION_25DEG_5D, rel=1e-12)
        assert wake_deflection(25.0, 0.8, 5 * D, PARAMS, TURBINE, 0.05) == pytest.approx(
            DEFLECTION_25DEG_5D, rel=1e-10)

    def test_pinned_far_wake(self):
        assert scalar_wake(10 * D, 25.0)[2] == pytest.approx(DEFLECTION_25DEG_10D, rel=1e-12)
        assert wake_deflection(25.0, 0.8, 10 * D, PARAMS, TURBINE, 0.05) == pytest.approx(
            DEFLECTION_25DEG_10D, rel=1e-10)

    @given(x=st.floats(0.1, 30.0), ct=st.floats(0.05, 0.95), ti=st.floats(0.01, 0.3))
    def test_zero_yaw_gives_zero(self, x, ct, ti):
        assert wake_deflection(0.0, ct, x * D, PARAMS, TURBINE, ti) == 0.0

    @given(yaw=st.floats(0.5, 35.0), x=st.floats(0.5, 20.0))
    def test_odd_in_yaw(self, yaw, x):
        pos = wake_deflection(yaw, 0.8, x * D, PARAMS, TURBINE, 0.06)
        neg = wake_deflection(-yaw, 0.8, x * D, PARAMS, TURBINE, 0.06)
        assert pos > 0
        assert neg == pytest.approx(-pos, rel=1e-12)

    def test_magnitude_non_decreasing_downstream(self):
        xs = np.linspace(0.2, 25, 400) * D
        off = wake_deflection(20.0, 0.8, xs, PARAMS, TURBINE, 0.05)
        assert np.all(np.diff(np.abs(off)) >= -1e-9)

    @pytest.mark.parametrize("x", [0.0, -10.0])
    def test_rejects_non_positive_distance(self, x):
        with pytest.raises(DomainError):
            wake_deflection(10.0, 0.8, x, PARAMS, TURBINE, 0.05)

    @pytest.mark.parametrize("ct", [0.0, 1.0, 1.2])
    def test_rejects_bad_thrust(self, ct):
        with pytest.raises(DomainError):
            wake_deflection(10.0, ct, D, PARAMS, TURBINE, 0.05)


class TestDeficit:
    def test_pinned_centreline(self):
        assert scalar_centre_deficit(5 * D) == pytest.approx(DEFICIT_5D, rel=1e-12)
        assert wake_deficit(5 * D, 0, 0, 0, 0.8, PARAMS, TURBINE, 0.05) == pytest.approx(
            DEFICIT_5D, rel=1e-10)
        assert wake_deficit(10 * D, 0, 0, 0, 0.8, PARAMS, TURBINE, 0.05) == pytest.approx(
            DEFICIT_10D, rel=1e-10)

    def test_vanishes_far_off_axis(self):
        assert wake_deficit(5 * D, 50 * D, 0, 0, 0.8, PARAMS, TURBINE, 0.05) < 1e-12

    def test_vanishes_without_thrust(self):
        assert wake_deficit(5 * D, 0, 0, 10.0, 0.0, PARAMS, TURBINE, 0.05) == 0.0
        small = wake_deficit(5 * D, 0, 0, 0, 1e-8, PARAMS, TURBINE, 0.05)
        assert 0 <= small < 1e-7

    def test_gaussian_decay_at_three_sigma(self):
        sy, _, delta = scalar_wake(8 * D, 15.0)
        centre = wake_deficit(8 * D, delta, 0, 15.0, 0.8, PARAMS, TURBINE, 0.05)
        edge = wake_deficit(8 * D, delta + 3 * sy, 0, 15.0, 0.8, PARAMS, TURBINE, 0.05)
        assert edge < 0.02 * centre

    def test_centreline_decays_beyond_near_wake(self):
        xs = np.linspace(6, 30, 200) * D
        d = wake_deficit(xs, 0, 0, 0, 0.8, PARAMS, TURBINE, 0.05)
        assert np.all(np.diff(d) < 0)

    @given(x=st.floats(0.1, 30), y=st.floats(-5, 5), z=st.floats(-2, 2), yaw=st.floats(-35, 35),
           ct=st.floats(0.0, 0.95))
    def test_in_unit_interval(self, x, y, z, yaw, ct):
        v = wake_deficit(x * D, y * D, z * D, yaw, ct, PARAMS, TURBINE, 0.07)
        assert 0.0 <= v < 1.0


class TestEffectiveSpeeds:
    def test_single_turbine_sees_free_stream(self):
        layout = FarmLayout((Turbine(0, 0),))
        assert effective_speeds(layout, Ambient(), [12.0], PARAMS)[0] == 8.0

    def test_side_by_side_unaffected(self):
        layout = FarmLayout((Turbine(0, 0), Turbine(0, 10 * D)))
        u = effective_speeds(layout, Ambient(), [0.0, 0.0], PARAMS)
        assert np.allclose(u, 8.0, atol=1e-9, rtol=0)

    def test_column_is_waked(self):
        layout = FarmLayout(tuple(Turbine(i * 5 * D, 0) for i in range(3)))
        u = effective_speeds(layout, Ambient(), np.zeros(3), PARAMS)
        assert u[0] == 8.0
        assert np.all((u[1:] > 0) & (u[1:] < 0.8 * u[0]))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            effective_speeds(table1_layout(), Ambient(), np.zeros(4), PARAMS)

    def test_no_upstream_influence(self):
        layout = table1_layout()
        rng = np.random.default_rng(3)
        base = rng.uniform(-25, 25, 9)
        u0 = effective_speeds(layout, Ambient(), base, PARAMS)
        for j in (3, 6):
            yaw = base.copy()
            yaw[j] += 17.0
            u1 = effective_speeds(layout, Ambient(), yaw, PARAMS)
            upstream = [i for i, t in enumerate(layout.turbines) if t.x < layout.turbines[j].x]
            assert np.array_equal(u0[upstream], u1[upstream])

    @pytest.mark.parametrize("params", [WakeParams(rotor_points=4), WakeParams(superposition="linear")])
    def test_variants_stay_in_range(self, params):
        u = effective_speeds(table1_layout(), Ambient(), np.full(9, 10.0), params)
        assert np.all((u > 0) & (u <= 8.0))


class TestTurbinePower:
    def test_zero_speed(self):
        assert turbine_power(0.0, 0.0, TURBINE, PARAMS) == 0.0

    def test_actuator_disc_value(self):
        expected = 0.5 * 1.225 * math.pi * (D / 2) ** 2 * 0.45 * 8 ** 3
        assert expected == pytest.approx(3.5236e6, rel=1e-4)
        assert turbine_power(8.0, 0.0, TURBINE, PARAMS) == pytest.approx(expected, rel=1e-12)

    def test_yaw_loss_ratio(self):
        ratio = turbine_power(8.0, 30.0, TURBINE, PARAMS) / turbine_power(8.0, 0.0, TURBINE, PARAMS)
        assert ratio == pytest.approx(math.cos(math.radians(30)) ** 1.88, rel=1e-12)
        assert ratio == pytest.approx(0.763, abs=5e-4)

    def test_rated_clip(self):
        assert turbine_power(30.0, 0.0, TURBINE, PARAMS) == TURBINE.rated_power

    def test_negative_speed(self):
        with pytest.raises(DomainError):
            turbine_power(-1.0, 0.0, TURBINE, PARAMS)

    @given(a=st.floats(0, 40), b=st.floats(0, 40))
    def test_non_increasing_in_abs_yaw(self, a, b):
        lo, hi = sorted((a, b))
        p_lo = turbine_power(9.0, lo, TURBINE, PARAMS)
        assert turbine_power(9.0, hi, TURBINE, PARAMS) <= p_lo
        assert turbine_power(9.0, -lo, TURBINE, PARAMS) == p_lo


class TestFarmPower:
    def test_single_turbine_total(self):
        layout = FarmLayout((Turbine(0, 0),))
        powers, total = farm_power(layout, Ambient(), [10.0], PARAMS)
        assert total == powers[0] == turbine_power(8.0, 10.0, layout.turbines[0], PARAMS)

    def test_greedy_symmetric_rows(self):
        powers, total = farm_power(table1_layout(), Ambient(), np.zeros(9), PARAMS)
        rows = powers.reshape(3, 3)
        for r in rows:
            assert np.allclose(r, r[0], rtol=1e-8, atol=0)
        assert total == powers.sum()

    def test_steering_beats_greedy(self):
        model = FarmModel(table1_layout(), Ambient(), PARAMS)
        assert model.total(np.repeat([30.0, 12.0, 0.0], 3)) > model.total(np.zeros(9))

    def test_permutation_invariance(self):
        layout = table1_layout()
        rng = np.random.default_rng(11)
        yaw = rng.uniform(-20, 20, 9)
        order = rng.permutation(9)
        _, total = farm_power(layout, Ambient(), yaw, PARAMS)
        _, total_p = farm_power(layout.permuted(order), Ambient(), yaw[order], PARAMS)
        assert total_p == pytest.approx(total, rel=1e-12)

    def test_betz_cap(self):
        rng = np.random.default_rng(5)
        cap = 0.5 * 1.225 * TURBINE.rotor_area * 16 / 27 * 8.0 ** 3
        yaws = rng.uniform(-30, 30, (200, 9))
        powers, _ = farm_power(table1_layout(), Ambient(), yaws, PARAMS)
        assert np.all(powers <= cap) and np.all(powers >= 0)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(9)
        yaws = rng.uniform(-30, 30, (5, 9))
        batch, _ = farm_power(table1_layout(), Ambient(), yaws, PARAMS)
        for k in range(5):
            single, _ = farm_power(table1_layout(), Ambient(), yaws[k], PARAMS)
            assert np.allclose(batch[k], single, rtol=1e-12, atol=0)

    def test_ambient_override_matches_rebuilt_model(self):
        model = FarmModel(table1_layout(), Ambient(), PARAMS)
        _, t1 = farm_power(model.layout, model.ambient, np.zeros(9), PARAMS, wind_speed=9.0,
                           turbulence_intensity=0.08)
        rebuilt = model.with_ambient(Ambient(9.0, 0.08))
        assert t1 == pytest.approx(rebuilt.total(np.zeros(9)), rel=1e-12)


class TestLayout:
    def test_grid_indexing_and_rows(self):
        layout = table1_layout()
        assert layout.rows() == [[0, 1, 2], [3, 4, 5], [6, 7, 8]]
        assert layout.turbines[4].x == pytest.approx(5 * D)
        assert layout.turbines[4].y == pytest.approx(3 * D)

    def test_rejects_overlapping_turbines(self):
        with pytest.raises(DomainError):
            FarmLayout((Turbine(0, 0), Turbine(10.0, 0)))

    def test_thrust_curve_interpolates(self):
        t = Turbine(0, 0, ct_curve=((4.0, 12.0), (0.9, 0.5)))
        assert t.thrust_coefficient(8.0) == pytest.approx(0.7)

    @settings(max_examples=20)
    @given(st.floats(-3, 3))
    def test_wind_direction_rotation_keeps_single_turbine(self, phi):
        layout = FarmLayout((Turbine(0, 0),))
        assert effective_speeds(layout, Ambient(wind_direction=phi), [0.0], PARAMS)[0] == 8.0
