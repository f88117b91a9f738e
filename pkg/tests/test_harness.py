import csv
import io
import math

import numpy as np
import pytest

from rrsense import harness
from rrsense.errors import EvaluationError, InvalidInputError
from rrsense.frames_io import FrameSequence
from rrsense.harness import (
    CATEGORIES,
    EstimateRecord,
    EvaluationReport,
    GroundTruthSeries,
    RunConfig,
    SubjectScore,
    belt_truth,
    category_of,
    emit_figure_data,
    evaluate,
    evaluate_many,
    read_jsonl,
    run_pipeline,
    stochastically_smaller,
    write_jsonl,
    write_report,
)
from rrsense.spectral import BreathSpectrum, find_peaks
from rrsense.synthesis import SubjectScenario, synthesize_frames

from reference_spectra import MULTI_PEAK_POWER

CFG = RunConfig()


@pytest.fixture(scope="module")
def steady_18():
    return synthesize_frames(CFG.radar, SubjectScenario(breath_rate_bpm=18, duration_s=60.0))


@pytest.fixture(scope="module")
def swaying_14():
    sc = SubjectScenario(breath_rate_bpm=14, duration_s=60.0, sway_components=((0.15, 6e-3, 0.0),),
                         seed=1)
    return synthesize_frames(CFG.radar, sc)


def series(records):
    t = np.array([r.t for r in records])
    v = np.array([np.nan if r.bpm is None else r.bpm for r in records])
    return t, v


class TestPipeline:
    def test_adaptive_locks_on_steady_subject(self, steady_18):
        res = run_pipeline(CFG, steady_18)
        t, v = series(res.records)
        # One record per hop once the first 30 s window is full.
        assert len(res.records) == len(steady_18) - CFG.window_frames + 1
        assert t[0] == pytest.approx(29.95)
        tail = v[t >= t[-1] - 10.0]
        assert np.all(np.abs(tail - 18.0) <= 1.5)
        assert abs(v[-1] - 18.0) < 0.6

    def test_classical_locks_on_sway(self, swaying_14):
        _, v = series(run_pipeline(CFG, swaying_14, estimator="classical").records)
        assert np.any(np.abs(v - 9.0) <= 1.5)

    def test_zero_duration(self):
        frames = synthesize_frames(CFG.radar, SubjectScenario(duration_s=0.0))
        assert run_pipeline(CFG, frames).records == []

    @pytest.mark.parametrize("name", harness.ESTIMATORS[:4])
    def test_other_estimators_run(self, steady_18, name):
        _, v = series(run_pipeline(CFG, steady_18, estimator=name).records)
        assert np.all(np.abs(v - 18.0) < 3.0)

    def test_regressor_needs_model(self, steady_18):
        with pytest.raises(InvalidInputError):
            run_pipeline(CFG, steady_18, estimator="regressor")

    def test_hop(self, steady_18):
        cfg = RunConfig(hop_frames=20)
        res = run_pipeline(cfg, steady_18)
        assert len(res.records) == (len(steady_18) - cfg.window_frames) // 20 + 1

    def test_causal(self, steady_18):
        full = run_pipeline(CFG, steady_18).records
        n = 900
        part = FrameSequence(steady_18.config, steady_18.frames[:n], steady_18.truth[:n])
        prefix = run_pipeline(CFG, part).records
        assert [r.to_json() for r in prefix] == [r.to_json() for r in full[:len(prefix)]]

    def test_target_bin(self, steady_18):
        res = run_pipeline(CFG, steady_18)
        assert res.target_bin.index == int(round(1.2 / CFG.radar.range_resolution_m))

    def test_jsonl_deterministic(self, steady_18):
        outs = []
        for _ in range(2):
            buf = io.StringIO()
            write_jsonl(run_pipeline(CFG, steady_18).records, buf)
            outs.append(buf.getvalue())
        assert outs[0] == outs[1]
        first = outs[0].splitlines()[0]
        assert set(__import__("json").loads(first)) == {"t", "bpm", "cm", "r", "stale"}

    def test_jsonl_roundtrip(self, tmp_path):
        recs = [EstimateRecord(1.0, 15.2, 3.0, 0.5, False), EstimateRecord(1.05, None, None, None, True)]
        p = tmp_path / "e.jsonl"
        with open(p, "w") as fh:
            write_jsonl(recs, fh)
        assert read_jsonl(p) == recs

    def test_latency_recorded(self, steady_18):
        res = run_pipeline(CFG, steady_18)
        assert res.latencies_s.shape == (len(steady_18),)
        assert np.all(res.latencies_s >= 0)

    def test_short_window_rejected(self):
        with pytest.raises(InvalidInputError):
            RunConfig(analysis_window_s=5.0)


class TestTruth:
    def test_belt_constant(self, steady_18):
        tr = belt_truth(steady_18)
        assert np.all(tr.rate_bpm == 18.0)

    def test_belt_window_average(self):
        frames = synthesize_frames(CFG.radar, SubjectScenario(breath_rate_jitter=0.1, duration_s=30.0))
        tr = belt_truth(frames)
        inst = frames.truth_rate_bpm
        assert tr.rate_bpm[-1] == pytest.approx(inst[-200:].mean())
        assert tr.rate_bpm[0] == inst[0]


class TestEvaluate:
    def truth(self):
        t = np.arange(0, 60, 0.05)
        return GroundTruthSeries(t, 15 + np.sin(t / 5))

    def test_identical(self):
        tr = self.truth()
        rep = evaluate((tr.times, tr.rate_bpm), tr)
        assert rep.mae == 0.0
        assert rep.std_values[0] == pytest.approx(np.std(tr.rate_bpm))

    def test_bias(self):
        tr = self.truth()
        rep = evaluate((tr.times, tr.rate_bpm + 2.0), tr)
        assert rep.mae == pytest.approx(2.0)
        assert rep.std_values[0] == pytest.approx(np.std(tr.rate_bpm))

    def test_no_overlap(self):
        with pytest.raises(EvaluationError, match="no time overlap"):
            evaluate((np.array([100.0, 101.0]), np.array([15.0, 15.0])), self.truth())

    def test_skew_limit(self):
        tr = GroundTruthSeries(np.array([0.0, 10.0]), np.array([15.0, 20.0]))
        rep = evaluate((np.array([0.4, 5.0, 9.6]), np.array([15.0, 99.0, 20.0])), tr)
        assert rep.subjects[0].n == 2 and rep.mae == 0.0

    def test_stale_records_skipped(self):
        tr = self.truth()
        recs = [EstimateRecord(1.0, None, None, None, True), EstimateRecord(2.0, 16.0, 1.0, 1.0, False)]
        assert evaluate(recs, tr).subjects[0].n == 1

    def test_categories(self):
        assert CATEGORIES == {"low": (6, 14), "mid": (15, 24), "high": (25, 36)}
        assert [category_of(r) for r in (6, 14.4, 14.5, 24.4, 24.6, 36.4, 40)] == \
            ["low", "low", "mid", "mid", "high", "high", None]

    def test_report_mae_is_sample_weighted(self):
        rng = np.random.default_rng(0)
        items = []
        for i in range(5):
            n = int(rng.integers(10, 100))
            t = np.arange(n) * 0.05
            tr = GroundTruthSeries(t, np.full(n, 10.0 + 5 * i))
            items.append((f"s{i}", (t, tr.rate_bpm + rng.normal(0, 1, n)), tr))
        rep = evaluate_many(items, "x")
        w = np.array([s.n for s in rep.subjects])
        assert rep.mae == pytest.approx((rep.mae_values * w).sum() / w.sum())
        assert set(rep.per_category) <= set(CATEGORIES)

    def test_histogram_counts(self):
        rep = EvaluationReport("x", [SubjectScore(str(i), 1, m, s, 15.0, "mid")
                                     for i, (m, s) in enumerate([(0.2, 0.1), (1.2, 12.0), (0.7, 0.6)])])
        h = rep.histogram("mae")
        assert sum(c for _, _, c in h) == 3
        assert h[0] == (0.0, 0.5, 1) and h[2] == (1.0, 1.5, 1)
        assert rep.histogram("std")[-1] == (10.0, math.inf, 1)


class TestDominance:
    def test_shifted_left(self):
        assert stochastically_smaller([0.1, 0.2, 0.6], [0.4, 0.9, 1.6])

    def test_identical_not_smaller(self):
        assert not stochastically_smaller([0.1, 0.7], [0.1, 0.7])

    def test_crossing(self):
        assert not stochastically_smaller([0.1, 5.0], [0.6, 0.7])

    def test_empty(self):
        with pytest.raises(EvaluationError):
            stochastically_smaller([], [1.0])


class TestFigureData:
    def report(self):
        return EvaluationReport("adaptive_kalman", [SubjectScore("s0", 10, 0.8, 0.3, 15.0, "mid")])

    def test_spectrum_snapshot_schema(self, tmp_path):
        spec = BreathSpectrum(MULTI_PEAK_POWER)
        peaks = find_peaks(spec, 4)
        emit_figure_data(tmp_path, [self.report()], spec, peaks)
        with open(tmp_path / "spectrum_snapshot.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["bpm", "power", "peak_rank", "cm"]
        assert len(rows) == 40
        ranked = [r for r in rows if r["peak_rank"]]
        assert len(ranked) == 4 and all(r["cm"] for r in ranked)
        assert float(ranked[0]["bpm"]) == 8.203125
        with open(tmp_path / "mae_hist.csv") as fh:
            assert fh.readline().strip() == "technique,bin_low,bin_high,count"

    def test_empty_report_header_only(self, tmp_path):
        emit_figure_data(tmp_path, [])
        for name, header in (("spectrum_snapshot.csv", "bpm,power,peak_rank,cm"),
                             ("mae_hist.csv", "technique,bin_low,bin_high,count"),
                             ("std_hist.csv", "technique,bin_low,bin_high,count")):
            assert (tmp_path / name).read_text() == header + "\n"

    def test_byte_stable(self, tmp_path):
        spec = BreathSpectrum(MULTI_PEAK_POWER)
        peaks = find_peaks(spec, 4)
        for d in ("a", "b"):
            write_report(tmp_path / d, [self.report()])
            emit_figure_data(tmp_path / d, [self.report()], spec, peaks)
        for name in ("spectrum_snapshot.csv", "mae_hist.csv", "std_hist.csv", "report.csv", "summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_debug_dumps(self, tmp_path, steady_18):
        res = run_pipeline(CFG, steady_18)
        harness.write_debug_dumps(tmp_path, res)
        with open(tmp_path / "kalman_trace.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "z", "CM_max", "R", "K", "x", "P"]
        assert len(rows) == len(res.records) + 1
        assert (tmp_path / "phase_unwrapped.csv").exists()


class TestEnsembleHelpers:
    def test_standing_scenarios(self):
        scs = harness.standing_scenarios(5, seed=3)
        assert len(scs) == 5
        for sc in scs:
            assert 6 <= sc.breath_rate_bpm <= 50
            assert 2 <= len(sc.sway_components) <= 3
            n = int(sc.duration_s * CFG.radar.frame_rate_hz)
            assert n - CFG.window_frames + 1 == harness.SAMPLES_PER_SUBJECT
        assert harness.standing_scenarios(5, seed=3) == scs

    def test_mid_heavy_rates(self):
        r = harness.mid_heavy_rates(2000, seed=0)
        mid = np.mean((r >= 14.5) & (r < 24.5))
        assert 0.87 < mid < 0.93
        assert r.min() >= 6 and r.max() < 36

    def test_bench(self, steady_18):
        b = harness.bench(CFG, steady_18)
        assert b.n_frames == len(steady_18)
        assert b.budget_ms == pytest.approx(1000 / 17)
        assert b.within_budget
