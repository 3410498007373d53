"""Preprocessing pipeline: cleaning, gridding, sample assembly, scaling,
splitting, and archive round trips."""

import numpy as np
import pytest

from fpnn.dataset import BatteryRecord, CycleCurve, load_canonical_dataset, save_canonical_dataset
from fpnn.datagen import SynthPolicy, fade_for_life, generate_battery, generate_fleet
from fpnn.errors import DataValidationError
from fpnn import preprocess as pp

from oracles import savgol_window_loop


def make_curve(cycle_index=1, n=32, seed=0):
    rng = np.random.default_rng(seed + cycle_index)
    q = np.linspace(0.01, 1.05, n)
    return CycleCurve(
        cycle_index=cycle_index,
        charged_capacity=q,
        voltage=3.0 + 0.5 * q / q[-1] + 0.01 * rng.standard_normal(n),
        current=4.0 - 2.0 * (q / q[-1] > 0.5) + 0.01 * rng.standard_normal(n),
        temperature=30.0 + np.sin(np.pi * q / q[-1]) + 0.05 * rng.standard_normal(n),
    )


def make_battery(battery_id="b0", n_cycles=12, life=500, seed=0):
    cycles = [make_curve(k, seed=seed) for k in range(1, n_cycles + 1)]
    return BatteryRecord(battery_id=battery_id, cycles=cycles, life=life)


class TestHampel:
    def test_constant_unchanged(self):
        x = np.full(20, 3.3)
        np.testing.assert_array_equal(pp.hampel_filter(x), x)

    def test_single_spike_replaced(self):
        x = np.array([1.0, 1.0, 1.0, 100.0, 1.0, 1.0, 1.0])
        out = pp.hampel_filter(x)
        np.testing.assert_array_equal(out, np.ones(7))

    def test_gaussian_untouched(self):
        # seeded draw independently verified to contain no rolling-window
        # outliers (> 3 * 1.4826 * MAD from the local median)
        x = np.random.default_rng(21).standard_normal(100)
        half = 11 // 2
        for i in range(x.size):
            win = x[max(0, i - half) : min(x.size, i + half + 1)]
            med = np.median(win)
            mad = np.median(np.abs(win - med))
            assert abs(x[i] - med) <= 3.0 * 1.4826 * mad
        out = pp.hampel_filter(x)
        assert int((out != x).sum()) == 0

    def test_too_short(self):
        with pytest.raises(ValueError):
            pp.hampel_filter(np.array([1.0, 2.0]))


class TestSavitzkyGolay:
    def test_reproduces_quadratic(self):
        t = np.arange(40, dtype=float)
        x = 0.5 * t**2 - 3.0 * t + 7.0
        out = pp.savitzky_golay(x, window=9, polyorder=2)
        np.testing.assert_allclose(out, x, atol=1e-9)

    def test_reproduces_cubic_at_order3(self):
        t = np.linspace(-1, 1, 31)
        x = t**3 - 0.2 * t
        out = pp.savitzky_golay(x, window=9, polyorder=3)
        np.testing.assert_allclose(out, x, atol=1e-9)

    def test_constant_unchanged(self):
        x = np.full(25, 2.5)
        np.testing.assert_allclose(pp.savitzky_golay(x), x, atol=1e-12)

    def test_matches_window_least_squares_oracle(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(37)
        got = pp.savitzky_golay(x, window=7, polyorder=2)
        want = savgol_window_loop(x, window=7, polyorder=2)
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_invalid_window(self):
        x = np.zeros(30)
        with pytest.raises(ValueError):
            pp.savitzky_golay(x, window=8, polyorder=2)
        with pytest.raises(ValueError):
            pp.savitzky_golay(x, window=7, polyorder=7)
        with pytest.raises(ValueError):
            pp.savitzky_golay(np.zeros(5), window=7, polyorder=2)


class TestResample:
    def test_linear_ramp_is_linear_in_flat_index(self):
        n = 32
        q = np.linspace(0.0, 1.0, n)
        curve = CycleCurve(1, q, 2.0 + q, np.ones(n), np.full(n, 30.0))
        frame = pp.resample_to_grid(curve, 4)
        flat = frame[0].reshape(-1)
        diffs = np.diff(flat)
        np.testing.assert_allclose(diffs, diffs[0], atol=1e-12)

    def test_grid_side_one_probes_center(self):
        n = 16
        q = np.linspace(0.0, 2.0, n)
        curve = CycleCurve(1, q, q * 3.0, np.ones(n), np.full(n, 30.0))
        frame = pp.resample_to_grid(curve, 1)
        # single cell-center sample at q = Q_max / 2
        np.testing.assert_allclose(frame[0, 0, 0], 3.0, atol=1e-12)

    def test_piecewise_linear_manual_probes(self):
        q = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
        v = np.array([3.0, 3.2, 3.1, 3.4, 3.6])
        curve = CycleCurve(1, q, v, np.ones(5), np.full(5, 30.0))
        g = 4  # 16 points at centers (i + 0.5)/16
        frame = pp.resample_to_grid(curve, g)[0].reshape(-1)
        for idx in (0, 3, 7, 11, 15):
            qq = (idx + 0.5) / 16.0
            want = np.interp(qq, q, v)
            np.testing.assert_allclose(frame[idx], want, atol=1e-12)

    def test_too_short(self):
        curve = CycleCurve(1, np.array([0.5]), np.array([3.0]), np.array([1.0]), np.array([30.0]))
        with pytest.raises(DataValidationError):
            pp.resample_to_grid(curve, 4)


class TestAssemble:
    def test_sample_count_ten_cycles(self):
        battery = make_battery(n_cycles=10)
        samples = pp.assemble_samples(battery, 10, grid_side=4)
        assert len(samples) == 7  # anchors 4..10
        assert [s.anchor_cycle for s in samples] == list(range(4, 11))

    def test_earliest_anchor_uses_first_four_cycles(self):
        battery = make_battery(n_cycles=10)
        samples = pp.assemble_samples(battery, 10, grid_side=4, smooth=False)
        s = samples[0]
        f1 = pp.resample_to_grid(battery.cycles[0], 4)
        f2 = pp.resample_to_grid(battery.cycles[1], 4)
        f4 = pp.resample_to_grid(battery.cycles[3], 4)
        np.testing.assert_array_equal(s.raw[:, 0], f1)
        np.testing.assert_array_equal(s.raw[:, 1], f2)
        np.testing.assert_array_equal(s.raw[:, 3], f4)

    def test_diff_is_raw_minus_first_frame(self):
        battery = make_battery(n_cycles=10)
        for s in pp.assemble_samples(battery, 10, grid_side=4, smooth=False):
            assert s.diff.shape == (3, 3, 4, 4)
            first = s.raw[:, 0]
            for d in range(3):
                np.testing.assert_allclose(s.diff[:, d], s.raw[:, d + 1] - first, atol=1e-12)

    def test_labels_and_shapes(self):
        battery = make_battery(n_cycles=12, life=321)
        samples = pp.assemble_samples(battery, 10, grid_side=6)
        for s in samples:
            assert s.raw.shape == (3, 4, 6, 6)
            assert s.label == 321.0
            assert s.battery_id == "b0"

    def test_insufficient_cycles(self):
        with pytest.raises(DataValidationError):
            pp.assemble_samples(make_battery(n_cycles=8), 10, grid_side=4)

    def test_invalid_cycle_count(self):
        with pytest.raises(ValueError):
            pp.assemble_samples(make_battery(n_cycles=20), 15, grid_side=4)


class TestScaler:
    def _samples(self):
        rng = np.random.default_rng(3)
        out = []
        for i in range(5):
            raw = rng.uniform(0.0, 10.0, (3, 4, 4, 4))
            diff = rng.uniform(-2.0, 2.0, (3, 3, 4, 4))
            out.append(pp.SamplePair(raw, diff, 100.0, f"b{i}", 4))
        return out

    def test_midpoint_maps_to_zero(self):
        samples = self._samples()
        params = pp.fit_scaler(samples)
        mid = pp.SamplePair(
            np.broadcast_to(((params.raw_min + params.raw_max) / 2)[:, None, None, None],
                            (3, 4, 4, 4)).copy(),
            np.broadcast_to(((params.diff_min + params.diff_max) / 2)[:, None, None, None],
                            (3, 3, 4, 4)).copy(),
            100.0, "m", 4,
        )
        scaled = pp.apply_scaler(mid, params)
        np.testing.assert_allclose(scaled.raw, 0.0, atol=1e-12)
        np.testing.assert_allclose(scaled.diff, 0.0, atol=1e-12)

    def test_train_extremes_hit_unit_bounds(self):
        samples = self._samples()
        params = pp.fit_scaler(samples)
        scaled = [pp.apply_scaler(s, params) for s in samples]
        raw_all = np.stack([s.raw for s in scaled])
        assert raw_all.min() >= -1.0 - 1e-12 and raw_all.max() <= 1.0 + 1e-12
        np.testing.assert_allclose(raw_all.max(), 1.0, atol=1e-12)
        np.testing.assert_allclose(raw_all.min(), -1.0, atol=1e-12)

    def test_labels_untouched(self):
        samples = self._samples()
        params = pp.fit_scaler(samples)
        assert pp.apply_scaler(samples[0], params).label == samples[0].label

    def test_degenerate_channel_rejected(self):
        s = pp.SamplePair(np.zeros((3, 4, 2, 2)), np.zeros((3, 3, 2, 2)), 1.0, "b", 4)
        with pytest.raises(ValueError):
            pp.fit_scaler([s])


class TestSplit:
    def _fleet(self, n):
        return [make_battery(battery_id=f"b{i:03d}", n_cycles=10) for i in range(n)]

    def test_canonical_124_split(self):
        train, test = pp.split_train_test(self._fleet(124), seed=0)
        assert len(train) == 94 and len(test) == 30

    def test_deterministic(self):
        fleet = self._fleet(30)
        assert pp.split_train_test(fleet, seed=9) == pp.split_train_test(fleet, seed=9)
        assert pp.split_train_test(fleet, seed=9) != pp.split_train_test(fleet, seed=10)

    def test_proportional_rounding(self):
        train, test = pp.split_train_test(self._fleet(62), seed=1)
        assert len(train) == 47 and len(test) == 15

    def test_no_overlap(self):
        train, test = pp.split_train_test(self._fleet(25), seed=4)
        assert not set(train) & set(test)
        assert len(train) + len(test) == 25

    def test_too_few(self):
        with pytest.raises(ValueError):
            pp.split_train_test(self._fleet(1), seed=0)


class TestCanonicalDataset:
    def test_empty_dir(self, tmp_path):
        assert load_canonical_dataset(tmp_path) == []

    def test_round_trip(self, tmp_path):
        policy = SynthPolicy(c1=5.0, q1=40.0, c2=2.0, fade_rate=fade_for_life(400), seed=3)
        record = generate_battery(policy, "rt-000")
        save_canonical_dataset([record], tmp_path)
        (loaded,) = load_canonical_dataset(tmp_path)
        assert loaded.battery_id == record.battery_id
        assert loaded.life == record.life
        assert len(loaded.cycles) == len(record.cycles)
        for a, b in zip(loaded.cycles, record.cycles):
            assert a.cycle_index == b.cycle_index
            np.testing.assert_array_equal(a.charged_capacity, b.charged_capacity)
            np.testing.assert_array_equal(a.voltage, b.voltage)
            np.testing.assert_array_equal(a.current, b.current)
            np.testing.assert_array_equal(a.temperature, b.temperature)

    def test_descending_capacity_names_cycle(self, tmp_path):
        battery = make_battery(battery_id="bad-1", n_cycles=3)
        battery.cycles[1].charged_capacity = battery.cycles[1].charged_capacity[::-1].copy()
        bdir = tmp_path / "bad-1"
        bdir.mkdir()
        import csv as _csv
        import json as _json

        (bdir / "meta.json").write_text(_json.dumps({"battery_id": "bad-1", "life": 500}))
        with open(bdir / "cycles.csv", "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["cycle", "charge_q_ah", "voltage_v", "current_a", "temperature_c"])
            for c in battery.cycles:
                for q, v, i, t in zip(c.charged_capacity, c.voltage, c.current, c.temperature):
                    w.writerow([c.cycle_index, q, v, i, t])
        with pytest.raises(DataValidationError, match="cycle 2"):
            load_canonical_dataset(tmp_path)

    def test_missing_meta(self, tmp_path):
        (tmp_path / "b0").mkdir()
        with pytest.raises(DataValidationError, match="meta.json"):
            load_canonical_dataset(tmp_path)


class TestPipeline:
    def test_deterministic_bitwise(self):
        records = generate_fleet(6, seed=2, life_range=(200, 800))
        a = pp.preprocess_fleet(records, 10, grid_side=8, seed=5)
        b = pp.preprocess_fleet(records, 10, grid_side=8, seed=5)
        np.testing.assert_array_equal(a[0].raw, b[0].raw)
        np.testing.assert_array_equal(a[1].diff, b[1].diff)
        assert a[3] == b[3]

    def test_split_has_no_battery_leak(self):
        records = generate_fleet(8, seed=3, life_range=(200, 800))
        train, test, _, (train_ids, test_ids) = pp.preprocess_fleet(records, 10, grid_side=8, seed=0)
        assert not set(train.battery_ids) & set(test.battery_ids)
        assert set(train.battery_ids) == set(train_ids)
        assert set(test.battery_ids) == set(test_ids)

    def test_train_values_within_unit_range(self):
        records = generate_fleet(6, seed=4, life_range=(200, 800))
        train, _, _, _ = pp.preprocess_fleet(records, 10, grid_side=8, seed=1)
        assert train.raw.min() >= -1.0 - 1e-12 and train.raw.max() <= 1.0 + 1e-12
        assert train.diff.min() >= -1.0 - 1e-12 and train.diff.max() <= 1.0 + 1e-12

    def test_archive_round_trip_bitwise(self, tmp_path):
        records = generate_fleet(5, seed=6, life_range=(200, 800))
        train, test, scaler, _ = pp.preprocess_fleet(records, 10, grid_side=8, seed=2)
        pp.save_sample_archive(tmp_path, {"train": train, "test": test}, scaler, 10, 8, 2)
        splits, scaler2, manifest = pp.load_sample_archive(tmp_path)
        np.testing.assert_array_equal(splits["train"].raw, train.raw)
        np.testing.assert_array_equal(splits["train"].diff, train.diff)
        np.testing.assert_array_equal(splits["test"].labels, test.labels)
        assert splits["test"].battery_ids == test.battery_ids
        np.testing.assert_array_equal(scaler2.raw_min, scaler.raw_min)
        assert manifest["grid_side"] == 8
