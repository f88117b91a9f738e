"""Breath spectrum, peak extraction, confidence metric and averaging estimators.

The confidence metric (CM) of a peak is the power in an 11-bin window centred
on the peak divided by the power in every other bin of the spectrum. Three
averaging estimators combine peaks (or bins) into one rate:

* CM weighted: mean of the top-n peak rates weighted by their CM.
* power weighted: mean of every bin's rate weighted by its power.
* power-peaks weighted: mean of the top-n peak rates weighted by peak power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dsp import PhaseSignal
from .errors import InsufficientDataError, InvalidInputError, NoEstimateError

BAND_BPM = (6.0, 50.0)
DEFAULT_FFT_LEN = 1024
CM_HALF_WINDOW = 5
# CM is unbounded; regressor features cap it here.
CM_FEATURE_CAP = 1e3
N_FEATURES = 12


@dataclass
class BreathSpectrum:
    """One-sided power spectrum of the bandpassed phase.

    Bin ``i`` sits at ``i * bin_spacing_bpm``. Bins outside ``band`` are kept
    but are not eligible as peaks.
    """

    power: np.ndarray
    sample_rate_hz: float = 20.0
    fft_len: int = DEFAULT_FFT_LEN
    band: tuple = BAND_BPM

    def __post_init__(self):
        self.power = np.asarray(self.power, dtype=float)
        if np.any(self.power < 0):
            raise InvalidInputError("power spectrum must be nonnegative")

    def __len__(self):
        return len(self.power)

    @property
    def bin_spacing_bpm(self) -> float:
        return 60.0 * self.sample_rate_hz / self.fft_len

    @property
    def rates_bpm(self) -> np.ndarray:
        return np.arange(len(self.power)) * self.bin_spacing_bpm

    @property
    def in_band(self) -> np.ndarray:
        r = self.rates_bpm
        return (r >= self.band[0]) & (r <= self.band[1])

    def scaled(self, c):
        return BreathSpectrum(self.power * c, self.sample_rate_hz, self.fft_len, self.band)


@dataclass(frozen=True)
class Peak:
    rate_bpm: float
    power: float
    cm: float
    bin_index: int


@dataclass
class PeakSet:
    """Peaks ordered by descending power (ties: lower frequency first)."""

    peaks: list = field(default_factory=list)
    k: int = 4

    def __len__(self):
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    def __getitem__(self, i):
        return self.peaks[i]

    def top(self, n):
        return self.peaks[: max(0, n)]


def breath_spectrum(filtered: PhaseSignal, fft_len=DEFAULT_FFT_LEN, band=BAND_BPM) -> BreathSpectrum:
    """Hann-windowed, zero-padded power spectrum of a mean-removed signal."""
    x = np.asarray(filtered.samples, dtype=float)
    fs = filtered.sample_rate_hz
    if x.size < 2.0 * fs:
        raise InsufficientDataError(f"need at least 2 s of samples, got {x.size / fs:.2f} s")
    if fft_len < x.size:
        raise InvalidInputError(f"fft_len {fft_len} shorter than signal length {x.size}")
    x = x - x.mean()
    spec = np.fft.rfft(x * np.hanning(x.size), n=fft_len)
    return BreathSpectrum(np.abs(spec) ** 2, fs, fft_len, band)


def local_maxima(power) -> np.ndarray:
    """Indices of interior local maxima.

    A maximum is a run of equal values bordered on both sides by strictly
    smaller values; the run is reported at its leftmost bin.
    """
    p = np.asarray(power, dtype=float)
    if p.size < 3:
        return np.zeros(0, dtype=int)
    starts = np.flatnonzero(np.r_[True, p[1:] != p[:-1]])
    v = p[starts]
    if v.size < 3:
        return np.zeros(0, dtype=int)
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])
    return starts[1:-1][inner]


def confidence_metric(spectrum: BreathSpectrum, peak, half_window=CM_HALF_WINDOW) -> float:
    """Window power over the power of all remaining bins.

    ``peak`` is a :class:`Peak` or a bin index. The window is clipped at the
    spectrum edges. Returns ``math.inf`` when no power lies outside the window.
    """
    b = peak.bin_index if isinstance(peak, Peak) else int(peak)
    p = spectrum.power
    if not 0 <= b < len(p):
        raise InvalidInputError(f"bin {b} outside spectrum of length {len(p)}")
    lo, hi = max(0, b - half_window), min(len(p), b + half_window + 1)
    inside = float(p[lo:hi].sum())
    outside = float(p[:lo].sum() + p[hi:].sum())
    if outside == 0.0:
        return math.inf
    return inside / outside


def find_peaks(spectrum: BreathSpectrum, k=4, half_window=CM_HALF_WINDOW) -> PeakSet:
    """Top-``k`` in-band local maxima by power, each with its CM."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    idx = local_maxima(spectrum.power)
    idx = idx[spectrum.in_band[idx]]
    p = spectrum.power[idx]
    order = np.lexsort((idx, -p))[:k]
    spacing = spectrum.bin_spacing_bpm
    peaks = [
        Peak(
            rate_bpm=float(idx[i] * spacing),
            power=float(p[i]),
            cm=confidence_metric(spectrum, int(idx[i]), half_window),
            bin_index=int(idx[i]),
        )
        for i in order
    ]
    return PeakSet(peaks, k)


def classical_estimate(peaks) -> float:
    """Rate of the highest-power peak."""
    peaks = list(peaks)
    if not peaks:
        raise NoEstimateError("no peaks")
    best = min(peaks, key=lambda pk: (-pk.power, pk.rate_bpm))
    return best.rate_bpm


def _weighted_rate(rates, weights, what):
    rates = np.asarray(rates, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(np.isinf(w)):
        # Infinite weights dominate: average the rates that carry them.
        return float(rates[np.isinf(w)].mean())
    total = w.sum()
    if not total > 0:
        raise NoEstimateError(f"all {what} weights are zero")
    return float((rates * w).sum() / total)


def cm_weighted(peaks, n=3) -> float:
    top = list(peaks)[:n]
    if not top:
        raise NoEstimateError("no peaks")
    return _weighted_rate([p.rate_bpm for p in top], [p.cm for p in top], "CM")


def power_weighted(spectrum: BreathSpectrum, band=None) -> float:
    """Power-weighted mean rate over all bins, or over ``band`` (bpm) if given."""
    rates = spectrum.rates_bpm
    p = spectrum.power
    if band is not None:
        sel = (rates >= band[0]) & (rates <= band[1])
        rates, p = rates[sel], p[sel]
    if not p.sum() > 0:
        raise NoEstimateError("spectrum has no power")
    return float((rates * p).sum() / p.sum())


def power_peaks_weighted(peaks, n=3) -> float:
    top = list(peaks)[:n]
    if not top:
        raise NoEstimateError("no peaks")
    return _weighted_rate([p.rate_bpm for p in top], [p.power for p in top], "power")


def feature_vector(peaks, spectrum: BreathSpectrum):
    """Regressor input and a padding flag.

    Layout: ``[RR1..3, log10 P1..3, CM1..3, cm_weighted(3), power_weighted,
    power_peaks_weighted(3)]`` over the three highest-power peaks. Missing
    peaks and undefined estimators contribute zeros and set the flag.
    """
    top = list(peaks)[:3]
    padded = len(top) < 3
    rr = [p.rate_bpm for p in top] + [0.0] * (3 - len(top))
    logp = [math.log10(p.power) if p.power > 0 else 0.0 for p in top] + [0.0] * (3 - len(top))
    cms = [min(p.cm, CM_FEATURE_CAP) for p in top] + [0.0] * (3 - len(top))
    est = []
    for fn in (lambda: cm_weighted(top, 3), lambda: power_weighted(spectrum),
               lambda: power_peaks_weighted(top, 3)):
        try:
            est.append(fn())
        except NoEstimateError:
            est.append(0.0)
            padded = True
    return np.array(rr + logp + cms + est, dtype=float), padded
