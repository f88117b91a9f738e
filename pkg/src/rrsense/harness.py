"""Streaming pipeline, belt-style ground truth, scoring and report output."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, spectral
from .errors import EvaluationError, InvalidInputError, NoEstimateError
from .regressor import RegressorModel, regressor_forward
from .synthesis import FrameSequence, RadarConfig, SubjectScenario, synthesize_frames
from .tracking import TrackConfig, TrackState, track_step

logger = logging.getLogger(__name__)

ESTIMATORS = (
    "classical",
    "cm_weighted",
    "power_weighted",
    "power_peaks_weighted",
    "regressor",
    "adaptive_kalman",
)
BELT_WINDOW_S = 10.0
MAX_SKEW_S = 0.5
# Integer-rate categories; a true rate is rounded half up before lookup.
CATEGORIES = {"low": (6, 14), "mid": (15, 24), "high": (25, 36)}
HIST_EDGES = tuple(np.round(np.arange(0.0, 10.01, 0.5), 2)) + (math.inf,)
REALTIME_BUDGET_S = 1.0 / 17.0
SAMPLES_PER_SUBJECT = 500


@dataclass
class RunConfig:
    radar: RadarConfig = field(default_factory=RadarConfig)
    scenarios: list = field(default_factory=list)
    analysis_window_s: float = 30.0
    hop_frames: int = 1
    estimator: str = "adaptive_kalman"
    track: TrackConfig = field(default_factory=TrackConfig)
    bandpass: dsp.BandpassSpec = field(default_factory=dsp.BandpassSpec)
    fft_len: int = spectral.DEFAULT_FFT_LEN
    n_peaks: int = 4
    n_average: int = 3
    search_range_m: tuple = (0.5, 2.0)
    range_window: str = "hann"
    range_fft_size: int | None = None
    model_path: str | None = None
    output_dir: str = "."

    def __post_init__(self):
        if self.analysis_window_s < 10.0:
            raise InvalidInputError("analysis window must be at least 10 s")
        if self.estimator not in ESTIMATORS:
            raise InvalidInputError(
                f"unknown estimator {self.estimator!r}; choose from {', '.join(ESTIMATORS)}"
            )
        if self.hop_frames < 1:
            raise InvalidInputError("hop_frames must be >= 1")
        self.search_range_m = tuple(self.search_range_m)

    @property
    def window_frames(self) -> int:
        return int(round(self.analysis_window_s * self.radar.frame_rate_hz))


@dataclass
class EstimateRecord:
    t: float
    bpm: float | None
    cm: float | None
    r: float | None
    stale: bool

    def to_json(self) -> str:
        return json.dumps(
            {"t": _round(self.t), "bpm": _round(self.bpm), "cm": _round(self.cm),
             "r": _round(self.r), "stale": self.stale},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "EstimateRecord":
        d = json.loads(line)
        return cls(d["t"], d["bpm"], d["cm"], d["r"], bool(d["stale"]))


def _round(x):
    if x is None or not math.isfinite(x):
        return None
    return float(f"{x:.10g}")


@dataclass
class Window:
    """One analysis window handed from the front end to the estimators."""

    t: float
    spectrum: spectral.BreathSpectrum
    peaks: spectral.PeakSet


class PhaseFrontEnd:
    """Frames in, analysis windows out.

    Range profiles are buffered until one full analysis window exists; the
    target bin is then fixed from that buffer, its phase history is unwrapped,
    and every later frame contributes a single-bin DFT. A window is emitted
    every ``hop_frames`` frames once the phase buffer is full.
    """

    def __init__(self, config: RunConfig, radar: RadarConfig | None = None):
        self.config = config
        self.radar = radar or config.radar
        self.n_window = max(int(round(config.analysis_window_s * self.radar.frame_rate_hz)), 1)
        self.n_fft = dsp.fft_size(self.radar, config.range_fft_size)
        self.bin_width = dsp.bin_width_m(self.radar, config.range_fft_size)
        self.frame_index = -1
        self.target: dsp.TargetBin | None = None
        self._pending = []
        self._unwrapper = dsp.StreamingUnwrapper()
        self._phase = deque(maxlen=self.n_window)
        self._last_emit = None
        self._kernel = None
        self.wrapped_history = []
        self.unwrapped_history = []
        self.bin_history = []
        self.mean_profile = None
        self.zero_magnitude_count = 0

    @property
    def sample_rate_hz(self):
        return self.radar.frame_rate_hz

    def _select(self):
        profiles = dsp.range_profiles(np.array(self._pending), self.radar,
                                      self.config.range_window, self.config.range_fft_size)
        mags = np.abs(profiles).mean(axis=0)
        self.mean_profile = mags
        self.target = dsp._select_from_magnitude(mags, self.bin_width, self.config.search_range_m)
        k = self.target.index
        n = np.arange(self.radar.samples_per_chirp)
        win = dsp._fast_time_window(self.config.range_window, n.size)
        self._kernel = win * np.exp(-2j * np.pi * k * n / self.n_fft)
        for value in profiles[:, k]:
            self._append(complex(value))
        self._pending = []

    def _append(self, value: complex):
        if value == 0:
            self.zero_magnitude_count += 1
            wrapped = self.wrapped_history[-1] if self.wrapped_history else 0.0
        else:
            wrapped = math.atan2(value.imag, value.real)
            if wrapped <= -math.pi:
                wrapped = math.pi
        unwrapped = self._unwrapper.push(wrapped)
        self.bin_history.append(value)
        self.wrapped_history.append(wrapped)
        self.unwrapped_history.append(unwrapped)
        self._phase.append(unwrapped)

    def push(self, frame) -> Window | None:
        self.frame_index += 1
        frame = np.asarray(frame)
        if frame.shape != (self.radar.chirps_per_frame, self.radar.samples_per_chirp):
            raise InvalidInputError(f"frame {self.frame_index} has shape {frame.shape}")
        if self.target is None:
            self._pending.append(frame)
            if len(self._pending) < self.n_window:
                return None
            self._select()
        else:
            self._append(complex(frame.mean(axis=0) @ self._kernel))
        if len(self._phase) < self.n_window:
            return None
        if self._last_emit is not None and self.frame_index - self._last_emit < self.config.hop_frames:
            return None
        self._last_emit = self.frame_index
        return self._analyse()

    def _analyse(self) -> Window:
        sig = dsp.PhaseSignal(np.fromiter(self._phase, float, len(self._phase)),
                              self.sample_rate_hz, self.target.index)
        filtered = dsp.bandpass(sig, self.config.bandpass)
        spec = spectral.breath_spectrum(filtered, self.config.fft_len)
        peaks = spectral.find_peaks(spec, self.config.n_peaks)
        return Window(self.frame_index / self.sample_rate_hz, spec, peaks)


class PeakEstimator:
    """Memoryless estimators; repeat the last value (stale) when undefined."""

    def __init__(self, name, config: RunConfig, model: RegressorModel | None = None):
        if name == "regressor" and model is None:
            raise InvalidInputError("the regressor estimator needs a model")
        self.name = name
        self.config = config
        self.model = model
        self.last = None

    def _estimate(self, w: Window):
        n = self.config.n_average
        if self.name == "classical":
            return spectral.classical_estimate(w.peaks)
        if self.name == "cm_weighted":
            return spectral.cm_weighted(w.peaks, n)
        if self.name == "power_weighted":
            return spectral.power_weighted(w.spectrum)
        if self.name == "power_peaks_weighted":
            return spectral.power_peaks_weighted(w.peaks, n)
        if len(w.peaks) == 0:
            raise NoEstimateError("no peaks")
        feats, _ = spectral.feature_vector(w.peaks, w.spectrum)
        return regressor_forward(self.model, feats)

    def step(self, w: Window) -> EstimateRecord:
        cm = max((p.cm for p in w.peaks), default=None)
        try:
            bpm = self._estimate(w)
            stale = False
            self.last = bpm
        except NoEstimateError:
            bpm, stale = self.last, True
        return EstimateRecord(w.t, bpm, cm, None, stale)


class KalmanEstimator:
    """Max-CM measurement, CM-derived R, scalar Kalman filter."""

    name = "adaptive_kalman"

    def __init__(self, config: RunConfig):
        self.track = config.track
        self.state = TrackState()
        self.traces = []

    def step(self, w: Window) -> EstimateRecord:
        self.state, rate, trace = track_step(self.state, w.peaks, self.track)
        self.traces.append(trace)
        cm = None if math.isnan(trace.cm_max) else trace.cm_max
        r = None if math.isnan(trace.r) else trace.r
        return EstimateRecord(w.t, rate, cm, r, trace.stale)


def make_estimator(name, config: RunConfig, model=None):
    if name == "adaptive_kalman":
        return KalmanEstimator(config)
    if name not in ESTIMATORS:
        raise InvalidInputError(f"unknown estimator {name!r}")
    return PeakEstimator(name, config, model)


@dataclass
class PipelineResult:
    records: list
    latencies_s: np.ndarray
    front_end: PhaseFrontEnd
    estimator: object
    last_window: Window | None = None

    @property
    def target_bin(self):
        return self.front_end.target


def run_pipeline(config: RunConfig, frames: FrameSequence, model=None,
                 estimator: str | None = None) -> PipelineResult:
    """Stream ``frames`` through the chain, one record per emitted window.

    Per-frame wall-clock processing time is recorded in ``latencies_s``.
    """
    front = PhaseFrontEnd(config, frames.config)
    est = make_estimator(estimator or config.estimator, config, model)
    records = []
    lat = np.empty(len(frames))
    last = None
    clock = time.perf_counter
    for i, frame in enumerate(frames.frames):
        t0 = clock()
        w = front.push(frame)
        if w is not None:
            records.append(est.step(w))
            last = w
        lat[i] = clock() - t0
    return PipelineResult(records, lat, front, est, last)


def run_multi(config: RunConfig, frames: FrameSequence, names, model=None):
    """Run several estimators over one shared front end."""
    front = PhaseFrontEnd(config, frames.config)
    ests = {n: make_estimator(n, config, model) for n in names}
    out = {n: [] for n in names}
    for frame in frames.frames:
        w = front.push(frame)
        if w is not None:
            for n, e in ests.items():
                out[n].append(e.step(w))
    return out, front


@dataclass
class GroundTruthSeries:
    times: np.ndarray
    rate_bpm: np.ndarray
    window_s: float = BELT_WINDOW_S


def belt_truth(frames: FrameSequence, window_s=BELT_WINDOW_S) -> GroundTruthSeries:
    """Trailing moving average of the instantaneous rate, like a belt's
    reporting window (shorter at the very start of the record)."""
    t = frames.times
    inst = frames.truth_rate_bpm
    if len(t) == 0:
        return GroundTruthSeries(t, inst.copy(), window_s)
    n = max(int(round(window_s * frames.config.frame_rate_hz)), 1)
    c = np.concatenate([[0.0], np.cumsum(inst)])
    idx = np.arange(1, len(inst) + 1)
    lo = np.maximum(idx - n, 0)
    return GroundTruthSeries(t, (c[idx] - c[lo]) / (idx - lo), window_s)


def category_of(rate_bpm):
    r = math.floor(rate_bpm + 0.5)
    for name, (lo, hi) in CATEGORIES.items():
        if lo <= r <= hi:
            return name
    return None


@dataclass
class SubjectScore:
    subject: str
    n: int
    mae: float
    std: float
    true_rate: float
    category: str | None
    abs_errors: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass
class EvaluationReport:
    technique: str
    subjects: list = field(default_factory=list)

    @property
    def n_samples(self):
        return sum(s.n for s in self.subjects)

    @property
    def mae(self):
        """Ensemble MAE: per-subject MAEs weighted by their sample counts."""
        if not self.subjects:
            return math.nan
        return sum(s.mae * s.n for s in self.subjects) / self.n_samples

    @property
    def per_category(self):
        out = {}
        for name in CATEGORIES:
            errs = [s.abs_errors for s in self.subjects if s.category == name and s.abs_errors.size]
            if errs:
                out[name] = float(np.concatenate(errs).mean())
        return out

    @property
    def mae_values(self):
        return np.array([s.mae for s in self.subjects])

    @property
    def std_values(self):
        return np.array([s.std for s in self.subjects])

    def histogram(self, what):
        values = self.mae_values if what == "mae" else self.std_values
        if values.size == 0:
            return []
        counts, _ = np.histogram(values, bins=np.array(HIST_EDGES))
        return [(HIST_EDGES[i], HIST_EDGES[i + 1], int(c)) for i, c in enumerate(counts)]


def stochastically_smaller(a, b, edges=HIST_EDGES) -> bool:
    """True when the histogram of ``a`` is shifted left of the one of ``b``.

    Compares empirical CDFs at the histogram edges: ``a`` must never fall
    below ``b`` and must lie strictly above it at one edge at least.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EvaluationError("empty sample")
    e = np.asarray([x for x in edges if np.isfinite(x)])
    fa = np.searchsorted(a, e, side="right") / a.size
    fb = np.searchsorted(b, e, side="right") / b.size
    return bool(np.all(fa >= fb) and np.any(fa > fb))


def _as_arrays(estimates):
    if isinstance(estimates, tuple) and len(estimates) == 2:
        t, v = estimates
        return np.asarray(t, float), np.asarray(v, float)
    t = [r.t for r in estimates if r.bpm is not None]
    v = [r.bpm for r in estimates if r.bpm is not None]
    return np.asarray(t, float), np.asarray(v, float)


def score_subject(estimates, truth: GroundTruthSeries, subject="subject") -> SubjectScore:
    """Align each estimate with the nearest truth sample (skew <= 0.5 s)."""
    t, v = _as_arrays(estimates)
    tt = np.asarray(truth.times, float)
    if t.size == 0 or tt.size == 0:
        raise EvaluationError(f"{subject}: no time overlap between estimates and truth")
    j = np.clip(np.searchsorted(tt, t), 1, max(tt.size - 1, 1))
    if tt.size == 1:
        j = np.zeros_like(j)
    else:
        left_closer = np.abs(t - tt[j - 1]) <= np.abs(tt[j] - t)
        j = np.where(left_closer, j - 1, j)
    ok = np.abs(tt[j] - t) <= MAX_SKEW_S
    if not ok.any():
        raise EvaluationError(
            f"{subject}: no time overlap between estimates [{t.min():.2f}, {t.max():.2f}] s "
            f"and truth [{tt.min():.2f}, {tt.max():.2f}] s"
        )
    est = v[ok]
    ref = np.asarray(truth.rate_bpm, float)[j[ok]]
    err = np.abs(est - ref)
    true_rate = float(ref.mean())
    return SubjectScore(subject, int(ok.sum()), float(err.mean()), float(est.std()),
                        true_rate, category_of(true_rate), err)


def evaluate(estimates, truth: GroundTruthSeries, technique="estimate", subject="subject"):
    """Single-subject report."""
    return EvaluationReport(technique, [score_subject(estimates, truth, subject)])


def evaluate_many(items, technique="estimate") -> EvaluationReport:
    """``items``: iterable of ``(subject, estimates, truth)``."""
    return EvaluationReport(technique, [score_subject(e, tr, s) for s, e, tr in items])


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.10g}"
    return str(x)


def _write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_spectrum_snapshot(path, spectrum, peaks):
    """One row per bin: bpm, power, peak rank (1 = strongest) and CM for peaks."""
    rank = {p.bin_index: (i + 1, p.cm) for i, p in enumerate(peaks)}
    rows = []
    if spectrum is not None:
        for b, (bpm, pw) in enumerate(zip(spectrum.rates_bpm, spectrum.power)):
            r, cm = rank.get(b, (None, None))
            rows.append((float(bpm), float(pw), r, cm))
    return _write_csv(path, ["bpm", "power", "peak_rank", "cm"], rows)


def emit_figure_data(out_dir, reports=(), spectrum=None, peaks=()):
    """Write ``spectrum_snapshot.csv``, ``mae_hist.csv`` and ``std_hist.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_spectrum_snapshot(out / "spectrum_snapshot.csv", spectrum, peaks)
    header = ["technique", "bin_low", "bin_high", "count"]
    for what in ("mae", "std"):
        rows = [(rep.technique, lo, hi, c) for rep in reports for lo, hi, c in rep.histogram(what)]
        _write_csv(out / f"{what}_hist.csv", header, rows)
    return out


def write_report(out_dir, reports):
    """Per-subject and per-category tables next to the histograms."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(rep.technique, s.subject, s.n, s.mae, s.std, s.true_rate, s.category or "")
            for rep in reports for s in rep.subjects]
    _write_csv(out / "report.csv",
               ["technique", "subject", "n", "mae", "std", "true_rate", "category"], rows)
    cat_rows = []
    for rep in reports:
        cat_rows.append((rep.technique, "all", rep.n_samples, rep.mae))
        for name, v in rep.per_category.items():
            n = sum(s.n for s in rep.subjects if s.category == name)
            cat_rows.append((rep.technique, name, n, v))
    _write_csv(out / "summary.csv", ["technique", "category", "n", "mae"], cat_rows)
    emit_figure_data(out, reports)
    return out


def write_debug_dumps(out_dir, result: PipelineResult):
    """Range profile, phase, spectrum/peaks and tracker trace CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fe = result.front_end
    if fe.mean_profile is not None:
        _write_csv(out / "range_profile.csv", ["index", "value"], enumerate(map(float, fe.mean_profile)))
    _write_csv(out / "bin_series.csv", ["index", "value", "imag"],
               ((i, float(z.real), float(z.imag)) for i, z in enumerate(fe.bin_history)))
    _write_csv(out / "phase_wrapped.csv", ["index", "value"], enumerate(fe.wrapped_history))
    _write_csv(out / "phase_unwrapped.csv", ["index", "value"], enumerate(fe.unwrapped_history))
    w = result.last_window
    spec_rows = []
    peak_rows = []
    if w is not None:
        spec_rows = [(b, float(r), float(p)) for b, (r, p) in
                     enumerate(zip(w.spectrum.rates_bpm, w.spectrum.power))]
        peak_rows = [(i + 1, p.rate_bpm, p.power, p.cm) for i, p in enumerate(w.peaks)]
    _write_csv(out / "spectrum.csv", ["bin", "bpm", "power"], spec_rows)
    _write_csv(out / "peaks.csv", ["rank", "bpm", "power", "cm"], peak_rows)
    traces = getattr(result.estimator, "traces", [])
    _write_csv(out / "kalman_trace.csv", ["step", "z", "CM_max", "R", "K", "x", "P"],
               ((i, tr.z, tr.cm_max, tr.r, tr.k, tr.x, tr.p) for i, tr in enumerate(traces)))
    return out


def write_jsonl(records, fh):
    for r in records:
        fh.write(r.to_json() + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [EstimateRecord.from_json(line) for line in fh if line.strip()]


def standing_scenarios(n_subjects=41, seed=0, rate_range=(6.0, 50.0),
                       samples=SAMPLES_PER_SUBJECT, config: RunConfig | None = None,
                       rates=None):
    """Random standing subjects with balancing sway.

    Each subject breathes with the default 4 mm amplitude and gets two or
    three sway tones (0.1-0.5 Hz, 0.5-2 mm), a mean-reverting random walk, a
    slowly jittering breathing rate and enough
    duration for ``samples`` estimates after the first full analysis window.
    """
    config = config or RunConfig()
    rng = np.random.default_rng(seed)
    n_frames = config.window_frames + (samples - 1) * config.hop_frames
    duration = n_frames / config.radar.frame_rate_hz
    if rates is None:
        rates = rng.uniform(*rate_range, size=n_subjects)
    out = []
    for i, rate in enumerate(rates):
        n_sway = int(rng.integers(2, 4))
        sway = tuple(
            (float(rng.uniform(0.1, 0.5)), float(rng.uniform(0.5e-3, 2e-3)),
             float(rng.uniform(0, 2 * np.pi)))
            for _ in range(n_sway)
        )
        out.append(SubjectScenario(
            distance_m=float(rng.uniform(1.0, 1.5)),
            breath_rate_bpm=float(rate),
            sway_components=sway,
            sway_random_walk_std_m=float(rng.uniform(0.5e-4, 1.5e-4)),
            noise_snr_db=float(rng.uniform(20.0, 30.0)),
            duration_s=duration + 0.5 / config.radar.frame_rate_hz,
            seed=int(rng.integers(0, 2**31 - 1)),
            breath_rate_jitter=float(rng.uniform(0.02, 0.06)),
        ))
    return out


def mid_heavy_rates(n, seed=0, mid_fraction=0.9):
    """Training-corpus rates that are scarce at the extremes.

    A fraction ``mid_fraction`` is uniform over the mid category; the rest is
    split evenly between the low and high categories (category edges are
    half-integers because true rates are rounded before lookup).
    """
    if not 0 <= mid_fraction <= 1:
        raise InvalidInputError("mid_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    side = (1.0 - mid_fraction) / 2.0
    pick = rng.choice(3, size=n, p=[side, mid_fraction, side])
    lo = np.array([6.0, 14.5, 24.5])[pick]
    hi = np.array([14.5, 24.5, 36.0])[pick]
    return rng.uniform(lo, hi)


def run_ensemble(scenarios, config: RunConfig | None = None,
                 techniques=("classical", "adaptive_kalman"), model=None):
    """Score each technique over a list of scenarios; one report per technique."""
    config = config or RunConfig()
    items = {t: [] for t in techniques}
    for i, sc in enumerate(scenarios):
        frames = synthesize_frames(config.radar, sc)
        truth = belt_truth(frames)
        streams, _ = run_multi(config, frames, techniques, model)
        for t in techniques:
            items[t].append((f"s{i:03d}", streams[t], truth))
    return {t: evaluate_many(items[t], t) for t in techniques}


def regressor_corpus(scenarios, config: RunConfig | None = None, every=20):
    """``(features, belt_rate)`` pairs from every ``every``-th analysis window."""
    config = config or RunConfig()
    data = []
    for sc in scenarios:
        frames = synthesize_frames(config.radar, sc)
        truth = belt_truth(frames)
        front = PhaseFrontEnd(config, frames.config)
        count = 0
        for frame in frames.frames:
            w = front.push(frame)
            if w is None:
                continue
            if count % every == 0 and len(w.peaks):
                feats, _ = spectral.feature_vector(w.peaks, w.spectrum)
                data.append((feats, float(truth.rate_bpm[front.frame_index])))
            count += 1
    return data


@dataclass
class BenchResult:
    n_frames: int
    mean_ms: float
    p99_ms: float
    budget_ms: float = REALTIME_BUDGET_S * 1e3

    @property
    def within_budget(self):
        return self.mean_ms < self.budget_ms


def bench(config: RunConfig, frames: FrameSequence, model=None) -> BenchResult:
    res = run_pipeline(config, frames, model)
    lat_ms = res.latencies_s * 1e3
    if lat_ms.size == 0:
        return BenchResult(0, 0.0, 0.0)
    return BenchResult(lat_ms.size, float(lat_ms.mean()), float(np.percentile(lat_ms, 99)))
