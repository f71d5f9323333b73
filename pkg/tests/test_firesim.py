import math

import numpy as np
import pytest

from emberplan import firesim as fs

# Frozen 50-digit evaluations of the closed forms (mpmath oracle).
LB_5 = 3.1889038076243235905
C_1_5 = 0.48706357586688735476
C_10_5 = 4.8706357586688735476
C_1_0 = 0.098330957446511136484


def single_spot_char(fuel=1.0, wind=5.0, azimuth=0.0, seed=7):
    return fs.EnvCharacteristics(fuel_coefficient=fuel, wind_speed=wind,
                                 wind_azimuth=azimuth,
                                 fire_origins=(((0.5, 0.5), 0),), seed=seed)


def manual_state(char, position, age=0.0, azimuth=None, active=True):
    return fs.FireState(
        time=0, characteristics=char,
        positions=np.array([position], dtype=float),
        ages=np.array([age], dtype=float),
        azimuths=np.array([char.wind_azimuth if azimuth is None else azimuth]),
        fire_ids=np.zeros(1, dtype=np.int64),
        active=np.array([active]))


class TestClosedForms:
    def test_length_to_breadth_at_zero_wind(self):
        assert fs.length_to_breadth(0.0) == pytest.approx(1.006, rel=1e-9)

    def test_length_to_breadth_at_wind_five(self):
        assert fs.length_to_breadth(5.0) == pytest.approx(LB_5, rel=1e-12)

    def test_spread_rate_matches_frozen_oracle(self):
        assert fs.spread_rate(1.0, 5.0) == pytest.approx(C_1_5, rel=1e-9)
        assert fs.spread_rate(10.0, 5.0) == pytest.approx(C_10_5, rel=1e-9)
        assert fs.spread_rate(1.0, 0.0) == pytest.approx(C_1_0, rel=1e-9)

    def test_spread_rate_is_linear_in_fuel(self):
        for wind in [0.0, 2.5, 5.0, 10.0]:
            assert fs.spread_rate(10.0, wind) == pytest.approx(
                10.0 * fs.spread_rate(1.0, wind), rel=1e-12)

    def test_length_to_breadth_floor_and_monotonicity(self):
        winds = np.linspace(0.0, 10.0, 10_000)
        values = np.array([fs.length_to_breadth(u) for u in winds])
        assert values.min() >= 1.006 - 1e-12
        assert np.all(np.diff(values) >= -1e-12)

    def test_direction_conventions(self):
        np.testing.assert_allclose(fs.spread_direction(0.0), [0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(fs.spread_direction(math.pi / 2), [1.0, 0.0],
                                   atol=1e-12)

    def test_invalid_arguments_raise(self):
        with pytest.raises(ValueError, match="wind speed"):
            fs.length_to_breadth(-0.1)
        with pytest.raises(ValueError, match="fuel coefficient"):
            fs.spread_rate(0.0, 5.0)
        with pytest.raises(ValueError, match="fuel coefficient"):
            fs.spread_rate(-1.0, 5.0)


class TestStepFire:
    def test_single_spot_downwind_displacement(self):
        char = fs.EnvCharacteristics(1.0, 5.0, 0.0, (), seed=0)
        state = manual_state(char, [0.5, 0.5])
        out = fs.step_fire(state, 1, np.random.default_rng(0))
        np.testing.assert_allclose(out.positions[0],
                                   [0.5, 0.5 + 0.01 * C_1_5], rtol=1e-9)
        assert out.time == 1
        assert out.ages[0] == 1.0

    def test_dt_must_be_a_positive_integer(self):
        char = fs.EnvCharacteristics(1.0, 5.0, 0.0, (), seed=0)
        state = manual_state(char, [0.5, 0.5])
        rng = np.random.default_rng(0)
        for bad in [0, -1, 0.5]:
            with pytest.raises(ValueError, match="dt"):
                fs.step_fire(state, bad, rng)

    def test_exhausted_fuel_extinguishes_spot(self):
        char = fs.EnvCharacteristics(10.0, 5.0, 0.0, (), seed=0)
        state = manual_state(char, [0.5, 0.5], age=fs.fuel_time(10.0))
        out = fs.step_fire(state, 1, np.random.default_rng(0))
        assert fs.spot_intensities(out)[0] == 0.0
        assert not out.active[0]

    def test_escaping_spot_is_clamped_and_deactivated(self):
        char = fs.EnvCharacteristics(10.0, 5.0, 0.0, (), seed=0)
        state = manual_state(char, [0.5, 0.999])
        out = fs.step_fire(state, 1, np.random.default_rng(0))
        assert out.positions[0, 1] == 1.0
        assert not out.active[0]
        assert fs.spot_intensities(out)[0] == 0.0

    def test_spot_count_never_decreases_and_cap_holds(self):
        model = fs.FireModelConfig(spot_cap=40)
        char = single_spot_char()
        state = fs.make_initial_state(char)
        rng = np.random.default_rng(3)
        last = len(state.ages)
        for _ in range(30):
            state = fs.step_fire(state, 1, rng, model)
            count = len(state.ages)
            assert count >= last
            last = count
        assert last == 40

    def test_intensities_stay_in_unit_interval(self):
        char = single_spot_char(fuel=4.0)
        state = fs.make_initial_state(char)
        rng = np.random.default_rng(4)
        for _ in range(60):
            state = fs.step_fire(state, 1, rng)
            vals = fs.spot_intensities(state)
            assert np.all(vals >= 0.0) and np.all(vals <= 1.0)

    def test_delayed_ignition_appears_at_its_step(self):
        char = fs.EnvCharacteristics(1.0, 5.0, 0.0, (((0.2, 0.2), 0), ((0.8, 0.8), 3)),
                                     seed=0)
        state = fs.make_initial_state(char)
        assert len(state.ages) == 1
        rng = np.random.default_rng(5)
        for _ in range(2):
            state = fs.step_fire(state, 1, rng)
        assert not np.any(np.all(state.positions == [0.8, 0.8], axis=-1))
        state = fs.step_fire(state, 1, rng)
        assert np.any(np.all(state.positions == [0.8, 0.8], axis=-1))

    def test_same_seed_reproduces_spot_arrays(self):
        def run():
            state = fs.make_initial_state(single_spot_char(seed=11))
            rng = np.random.default_rng(11)
            for _ in range(25):
                state = fs.step_fire(state, 1, rng)
            return state

        a, b = run(), run()
        assert a.positions.tobytes() == b.positions.tobytes()
        assert a.ages.tobytes() == b.ages.tobytes()
        assert a.azimuths.tobytes() == b.azimuths.tobytes()

    def test_higher_fuel_grows_faster_across_seeds(self):
        wins = 0
        for seed in range(100):
            diagonals = []
            for fuel in [1.0, 10.0]:
                state = fs.make_initial_state(single_spot_char(fuel=fuel, seed=seed))
                rng = np.random.default_rng(seed)
                for _ in range(50):
                    state = fs.step_fire(state, 1, rng)
                span = state.positions.max(axis=0) - state.positions.min(axis=0)
                diagonals.append(float(np.hypot(*span)))
            if diagonals[1] >= diagonals[0]:
                wins += 1
        assert wins >= 95


class TestSampling:
    def test_collapsed_fuel_range_is_constant(self):
        spec = fs.RandomizationSpec(fuel_range=(3.0, 3.0))
        rng = np.random.default_rng(0)
        draws = {fs.sample_environment(rng, spec).fuel_coefficient for _ in range(20)}
        assert draws == {3.0}

    def test_fuel_mean_over_many_draws(self):
        rng = np.random.default_rng(123)
        spec = fs.RandomizationSpec(fuel_range=(1.0, 10.0))
        mean = np.mean([fs.sample_environment(rng, spec).fuel_coefficient
                        for _ in range(10_000)])
        assert abs(mean - 5.5) < 0.1

    def test_ignitions_fall_in_first_half_of_horizon(self):
        rng = np.random.default_rng(9)
        spec = fs.RandomizationSpec(horizon=100, fire_count_range=(5, 5))
        for _ in range(50):
            char = fs.sample_environment(rng, spec)
            for _, t in char.fire_origins:
                assert 0 <= t < 50

    def test_same_seed_same_draw(self):
        a = fs.sample_environment(np.random.default_rng(42))
        b = fs.sample_environment(np.random.default_rng(42))
        assert a == b

    def test_invalid_spec_ranges_raise(self):
        with pytest.raises(ValueError, match="fuel range"):
            fs.RandomizationSpec(fuel_range=(0.0, 5.0))
        with pytest.raises(ValueError, match="fuel range"):
            fs.RandomizationSpec(fuel_range=(5.0, 1.0))
        with pytest.raises(ValueError, match="fire count"):
            fs.RandomizationSpec(fire_count_range=(0, 2))

    def test_invalid_characteristics_raise(self):
        with pytest.raises(ValueError, match="fuel"):
            fs.EnvCharacteristics(0.0, 5.0, 0.0, (), 0)
        with pytest.raises(ValueError, match="azimuth"):
            fs.EnvCharacteristics(1.0, 5.0, fs.TWO_PI, (), 0)
        with pytest.raises(ValueError, match="origin"):
            fs.EnvCharacteristics(1.0, 5.0, 0.0, (((1.5, 0.5), 0),), 0)
        with pytest.raises(ValueError, match="ignition"):
            fs.EnvCharacteristics(1.0, 5.0, 0.0, (((0.5, 0.5), -1),), 0)


class TestField:
    def test_frames_are_normalized_to_unit_interval(self):
        fld = fs.simulate_field(single_spot_char(), horizon=40, resolution=12)
        assert fld.frames.min() >= 0.0
        assert fld.frames.max() == pytest.approx(1.0)

    def test_render_peak_spot_at_grid_point(self):
        char = fs.EnvCharacteristics(1.0, 5.0, 0.0, (), seed=0)
        state = manual_state(char, [0.5, 0.5], age=5.0)
        frame = fs.render_frame(state, resolution=5)
        assert frame[2, 2] == pytest.approx(1.0, abs=1e-12)

    def test_render_far_from_spots_is_negligible(self):
        char = fs.EnvCharacteristics(1.0, 5.0, 0.0, (), seed=0)
        state = manual_state(char, [0.0, 0.0], age=5.0)
        frame = fs.render_frame(state, resolution=5)
        assert frame[4, 4] < 1e-12

    def test_intensity_at_grid_points_equals_cell_values(self):
        fld = fs.simulate_field(single_spot_char(seed=2), horizon=30, resolution=9)
        coords = fld.grid_coords()
        t = 12
        peak = np.unravel_index(np.argmax(fld.frames[t]), fld.frames[t].shape)
        got = fs.intensity_at(fld, (coords[peak[0]], coords[peak[1]]), t)
        assert got == pytest.approx(fld.frames[t][peak], abs=1e-12)

    def test_intensity_at_bilinear_between_cells(self):
        fld = fs.simulate_field(single_spot_char(seed=3), horizon=10, resolution=5)
        coords = fld.grid_coords()
        mid = 0.5 * (coords[1] + coords[2])
        want = 0.5 * (fld.frames[4][1, 2] + fld.frames[4][2, 2])
        assert fs.intensity_at(fld, (mid, coords[2]), 4) == pytest.approx(want, abs=1e-12)

    def test_intensity_at_rejects_bad_queries(self):
        fld = fs.simulate_field(single_spot_char(), horizon=10, resolution=5)
        with pytest.raises(ValueError, match="unit square"):
            fs.intensity_at(fld, (1.2, 0.5), 0)
        with pytest.raises(ValueError, match="horizon"):
            fs.intensity_at(fld, (0.5, 0.5), 10)
        with pytest.raises(ValueError, match="horizon"):
            fs.intensity_at(fld, (0.5, 0.5), 2.5)

    def test_simulation_is_reproducible(self):
        a = fs.simulate_field(single_spot_char(seed=21), horizon=25, resolution=8)
        b = fs.simulate_field(single_spot_char(seed=21), horizon=25, resolution=8)
        assert a.frames.tobytes() == b.frames.tobytes()

    def test_field_dump_round_trip(self, tmp_path):
        fld = fs.simulate_field(single_spot_char(seed=5), horizon=12, resolution=6)
        path = tmp_path / "episode.field"
        fs.save_field(path, fld)
        loaded = fs.load_field(path)
        assert loaded.resolution == fld.resolution
        assert loaded.horizon == fld.horizon
        assert loaded.characteristics == fld.characteristics
        np.testing.assert_allclose(loaded.frames, fld.frames, atol=1e-7)

    def test_field_dump_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "junk.field"
        path.write_bytes(b"???!")
        with pytest.raises(ValueError, match="field dump"):
            fs.load_field(path)
