"""Vitals ingestion, cleaning, and synthetic cohort generation."""

import numpy as np
import pytest

from ioh_forecast.vitals import (
    CohortConfig,
    VitalSeries,
    VitalsParseError,
    clean_artifacts,
    compute_map,
    in_valid_range,
    ingest_csv,
    synth_cohort,
    write_cohort_csv,
)
from ioh_forecast.windows import label_hypotension


class TestComputeMap:
    def test_standard_values(self):
        assert compute_map(120, 80) == pytest.approx(93.3333, abs=1e-3)

    def test_zero_pulse_pressure(self):
        assert compute_map(100, 100) == 100.0

    def test_sbp_below_dbp_rejected(self):
        with pytest.raises(ValueError):
            compute_map(80, 120)

    def test_nonpositive_dbp_rejected(self):
        with pytest.raises(ValueError):
            compute_map(80, 0)

    def test_vectorized(self):
        out = compute_map(np.array([120.0, 100.0]), np.array([80.0, 100.0]))
        np.testing.assert_allclose(out, [93.3333, 100.0], atol=1e-3)


class TestVitalSeries:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            VitalSeries("p", 1.0, np.zeros(3), np.zeros(2), np.ones(3, bool))


class TestIngestCsv:
    def _write(self, tmp_path, text):
        path = tmp_path / "vitals.csv"
        path.write_text(text)
        return path

    def test_two_row_passthrough(self, tmp_path):
        path = self._write(
            tmp_path,
            "patient_id,timestamp_s,map_mmHg,sbp_mmHg\n"
            "p1,0.0,85.0,120.0\n"
            "p1,1.0,86.0,121.0\n",
        )
        series = ingest_csv(path, interval_s=1.0)
        assert len(series) == 1
        s = series[0]
        assert len(s) == 2
        assert s.valid.all()
        np.testing.assert_allclose(s.map_mmHg, [85.0, 86.0])

    def test_bin_means_match_oracle(self, tmp_path):
        # 10 Hz input binned to 1 s: recompute each bin mean independently
        rng = np.random.default_rng(0)
        ts = np.arange(0, 5, 0.1)
        maps = rng.uniform(70, 100, ts.size)
        sbps = maps + rng.uniform(20, 40, ts.size)
        rows = "".join(
            f"p1,{t:.3f},{m:.6f},{s:.6f}\n" for t, m, s in zip(ts, maps, sbps)
        )
        path = self._write(
            tmp_path, "patient_id,timestamp_s,map_mmHg,sbp_mmHg\n" + rows
        )
        series = ingest_csv(path, interval_s=1.0)[0]
        assert len(series) == 5
        for b in range(5):
            mask = np.floor(ts).astype(int) == b
            assert series.map_mmHg[b] == pytest.approx(maps[mask].mean())
            assert series.sbp_mmHg[b] == pytest.approx(sbps[mask].mean())

    def test_sbp_below_map_marked_invalid(self, tmp_path):
        path = self._write(
            tmp_path,
            "patient_id,timestamp_s,map_mmHg,sbp_mmHg\n"
            "p1,0.0,85.0,120.0\n"
            "p1,1.0,90.0,80.0\n",
        )
        series = ingest_csv(path, interval_s=1.0)[0]
        assert series.valid.tolist() == [True, False]

    def test_empty_bins_invalid(self, tmp_path):
        path = self._write(
            tmp_path,
            "patient_id,timestamp_s,map_mmHg,sbp_mmHg\n"
            "p1,0.0,85.0,120.0\n"
            "p1,3.0,86.0,121.0\n",
        )
        series = ingest_csv(path, interval_s=1.0)[0]
        assert len(series) == 4
        assert series.valid.tolist() == [True, False, False, True]

    def test_malformed_row_names_line(self, tmp_path):
        path = self._write(
            tmp_path,
            "patient_id,timestamp_s,map_mmHg,sbp_mmHg\n"
            "p1,0.0,85.0,120.0\n"
            "p1,1.0,not_a_number,121.0\n",
        )
        with pytest.raises(VitalsParseError, match="line 3"):
            ingest_csv(path, interval_s=1.0)

    def test_non_increasing_timestamps_rejected(self, tmp_path):
        path = self._write(
            tmp_path,
            "patient_id,timestamp_s,map_mmHg,sbp_mmHg\n"
            "p1,1.0,85.0,120.0\n"
            "p1,1.0,86.0,121.0\n",
        )
        with pytest.raises(VitalsParseError, match="line 3"):
            ingest_csv(path, interval_s=1.0)

    def test_empty_file_rejected(self, tmp_path):
        path = self._write(tmp_path, "patient_id,timestamp_s,map_mmHg,sbp_mmHg\n")
        with pytest.raises(VitalsParseError):
            ingest_csv(path, interval_s=1.0)

    def test_bad_header_rejected(self, tmp_path):
        path = self._write(tmp_path, "a,b,c,d\np1,0.0,85.0,120.0\n")
        with pytest.raises(VitalsParseError, match="line 1"):
            ingest_csv(path, interval_s=1.0)

    def test_multiple_patients_keep_order(self, tmp_path):
        path = self._write(
            tmp_path,
            "patient_id,timestamp_s,map_mmHg,sbp_mmHg\n"
            "b,0.0,85.0,120.0\n"
            "a,0.0,84.0,119.0\n"
            "b,1.0,86.0,121.0\n",
        )
        series = ingest_csv(path, interval_s=1.0)
        assert [s.patient_id for s in series] == ["b", "a"]


class TestCleanArtifacts:
    def _series(self, maps, valid=None):
        maps = np.asarray(maps, dtype=float)
        return VitalSeries(
            "p", 1.0, maps, maps + 35.0,
            np.ones(len(maps), bool) if valid is None else np.asarray(valid),
        )

    def test_spike_interpolated(self):
        s = self._series([80.0, 400.0, 82.0])
        cleaned = clean_artifacts(s, max_gap=2)
        assert cleaned.valid.all()
        assert cleaned.map_mmHg[1] == pytest.approx(81.0)

    def test_leading_run_stays_invalid(self):
        s = self._series([400.0, 80.0, 82.0])
        cleaned = clean_artifacts(s, max_gap=2)
        assert cleaned.valid.tolist() == [False, True, True]

    def test_fully_valid_unchanged(self):
        s = self._series([80.0, 81.0, 82.0])
        cleaned = clean_artifacts(s)
        np.testing.assert_array_equal(cleaned.map_mmHg, s.map_mmHg)
        assert cleaned.valid.all()

    def test_long_run_stays_invalid(self):
        maps = [80.0] + [400.0] * 4 + [82.0]
        cleaned = clean_artifacts(self._series(maps), max_gap=3)
        assert cleaned.valid.tolist() == [True] + [False] * 4 + [True]

    def test_does_not_mutate_input(self):
        s = self._series([80.0, 400.0, 82.0])
        before = s.map_mmHg.copy()
        clean_artifacts(s, max_gap=2)
        np.testing.assert_array_equal(s.map_mmHg, before)


class TestSynthCohort:
    def test_same_seed_bit_identical(self):
        cfg = CohortConfig(n_patients=2, duration_s=600, seed=7)
        a = synth_cohort(cfg)
        b = synth_cohort(cfg)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.map_mmHg, sb.map_mmHg)
            np.testing.assert_array_equal(sa.sbp_mmHg, sb.sbp_mmHg)

    def test_zero_episode_rate_yields_no_labels(self):
        cfg = CohortConfig(n_patients=3, duration_s=1800,
                           episode_rate_per_hour=0.0, seed=1)
        for s in synth_cohort(cfg):
            labels = label_hypotension(s.map_mmHg, 65.0, 20)
            assert not labels.any()

    def test_injected_dip_produces_long_label_run(self):
        # depth 50, plateau 90 s at 3 s sampling -> a run of >= 30 ones
        cfg = CohortConfig(
            n_patients=1, duration_s=3600, interval_s=3.0,
            episode_rate_per_hour=3.0,
            episode_depth_range=(50.0, 50.0),
            episode_duration_range_s=(90.0, 90.0),
            noise_std=0.5, seed=3,
        )
        series = synth_cohort(cfg)[0]
        labels = label_hypotension(series.map_mmHg, 65.0, 30)
        assert labels.any()

    def test_output_within_validity_ranges(self):
        cfg = CohortConfig(n_patients=3, duration_s=1800, seed=5)
        for s in synth_cohort(cfg):
            assert s.valid.all()
            assert in_valid_range(s.map_mmHg, s.sbp_mmHg).all()

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            synth_cohort(CohortConfig(n_patients=0))
        with pytest.raises(ValueError):
            synth_cohort(CohortConfig(noise_std=-1.0))
        with pytest.raises(ValueError):
            synth_cohort(CohortConfig(episode_depth_range=(60.0, 50.0)))

    def test_csv_round_trip(self, tmp_path):
        cfg = CohortConfig(n_patients=2, duration_s=300, seed=2)
        series = synth_cohort(cfg)
        path = tmp_path / "cohort.csv"
        write_cohort_csv(series, path)
        back = ingest_csv(path, interval_s=cfg.interval_s)
        assert len(back) == len(series)
        for orig, loaded in zip(series, back):
            np.testing.assert_allclose(loaded.map_mmHg, orig.map_mmHg)
            np.testing.assert_allclose(loaded.sbp_mmHg, orig.sbp_mmHg)
