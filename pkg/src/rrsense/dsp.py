"""Range FFT, target-bin selection, phase extraction/unwrapping, bandpass."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import InsufficientDataError, InvalidInputError
from .synthesis import SPEED_OF_LIGHT, RadarConfig

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
WINDOWS = ("rect", "hann")
BANDPASS_DESIGNS = ("biquad-cascade", "fir-window")


@dataclass
class RangeProfile:
    bins: np.ndarray
    bin_width_m: float
    frame_index: int = 0


@dataclass
class PhaseSignal:
    """Uniformly sampled slow-time phase in radians.

    ``zero_magnitude_count`` counts samples whose phase was carried forward
    because the complex value was exactly zero.
    """

    samples: np.ndarray
    sample_rate_hz: float
    origin_bin: int = -1
    zero_magnitude_count: int = 0

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = 0.1
    high_hz: float = 0.8
    stopband_atten_db: float = 30.0
    design: str = "biquad-cascade"

    def validate(self, sample_rate_hz):
        if not 0 < self.low_hz < self.high_hz < sample_rate_hz / 2:
            raise InvalidInputError(
                f"band [{self.low_hz}, {self.high_hz}] Hz invalid for fs={sample_rate_hz} Hz"
            )
        if self.design not in BANDPASS_DESIGNS:
            raise InvalidInputError(f"unknown bandpass design {self.design!r}")
        if self.stopband_atten_db <= 0:
            raise InvalidInputError("stopband_atten_db must be positive")


@dataclass(frozen=True)
class TargetBin:
    """Result of :func:`select_target_bin`.

    ``low_power`` is set when the chosen bin does not stand at least
    ``min_snr_db`` above the median bin magnitude (the noise floor).
    """

    index: int
    range_m: float
    mean_magnitude: float
    low_power: bool


def fft_size(config: RadarConfig, n_fft=None) -> int:
    return config.samples_per_chirp if n_fft is None else int(n_fft)


def bin_width_m(config: RadarConfig, n_fft=None) -> float:
    return config.range_resolution_m * config.samples_per_chirp / fft_size(config, n_fft)


def _fast_time_window(kind, n):
    if kind == "rect":
        return np.ones(n)
    if kind == "hann":
        # Symmetric so the chirp-centre phase reference is preserved.
        return signal.windows.hann(n, sym=True)
    raise InvalidInputError(f"unknown window {kind!r}")


def range_profiles(frames, config: RadarConfig, window="hann", n_fft=None) -> np.ndarray:
    """Range FFT of a stack of frames, shape ``(n_frames, n_fft)``.

    Chirps within a frame are averaged coherently before the transform.
    """
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[2] == 0 or frames.shape[1] == 0:
        raise InvalidInputError(f"expected (frames, chirps, samples), got {frames.shape}")
    if frames.shape[1:] != (config.chirps_per_frame, config.samples_per_chirp):
        raise InvalidInputError("frame dimensions do not match radar config")
    avg = frames.mean(axis=1)
    w = _fast_time_window(window, avg.shape[1])
    return np.fft.fft(avg * w, n=fft_size(config, n_fft), axis=1)


def range_fft(frame, config: RadarConfig, window="rect", n_fft=None, frame_index=0) -> RangeProfile:
    frame = np.asarray(frame)
    if frame.size == 0:
        raise InvalidInputError("empty frame")
    prof = range_profiles(frame[None, ...], config, window=window, n_fft=n_fft)[0]
    return RangeProfile(prof, bin_width_m(config, n_fft), frame_index)


def select_target_bin(profiles, search_range_m, min_snr_db=10.0) -> TargetBin:
    """Bin with the greatest mean magnitude inside ``search_range_m``.

    ``profiles`` is a sequence of :class:`RangeProfile` sharing one bin width.
    Ties go to the lower bin index.
    """
    profiles = list(profiles)
    if not profiles:
        raise InvalidInputError("no range profiles")
    width = profiles[0].bin_width_m
    mags = np.mean([np.abs(p.bins) for p in profiles], axis=0)
    return _select_from_magnitude(mags, width, search_range_m, min_snr_db)


def _select_from_magnitude(mags, width, search_range_m, min_snr_db=10.0) -> TargetBin:
    lo, hi = search_range_m
    if lo < 0 or hi <= lo:
        raise InvalidInputError(f"invalid search interval {search_range_m}")
    ranges = np.arange(len(mags)) * width
    idx = np.flatnonzero((ranges >= lo) & (ranges <= hi))
    if idx.size == 0:
        raise InvalidInputError(f"search interval {search_range_m} m contains no range bin")
    best = int(idx[np.argmax(mags[idx])])  # argmax returns the first maximum
    floor = float(np.median(mags))
    peak = float(mags[best])
    if floor > 0:
        low = peak < floor * 10.0 ** (min_snr_db / 20.0)
    else:
        low = peak == 0.0
    if low:
        logger.warning("target bin %d has low power relative to the noise floor", best)
    return TargetBin(best, float(ranges[best]), peak, bool(low))


def extract_phase(bin_series, sample_rate_hz, origin_bin=-1) -> PhaseSignal:
    """Wrapped phase in (-pi, pi]; zero samples repeat the previous phase."""
    z = np.asarray(bin_series, dtype=complex)
    if z.size == 0:
        raise InvalidInputError("empty bin series")
    phase = np.angle(z)
    phase[phase <= -math.pi] = math.pi
    zero = np.abs(z) == 0
    n_zero = int(zero.sum())
    if n_zero:
        if zero[0]:
            phase[0] = 0.0
        for i in np.flatnonzero(zero):
            if i > 0:
                phase[i] = phase[i - 1]
    return PhaseSignal(phase, float(sample_rate_hz), origin_bin, n_zero)


def wrap_to_pi(x):
    """Map angles into (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    return x - TWO_PI * np.ceil((x - math.pi) / TWO_PI)


def unwrap_phase(wrapped: PhaseSignal) -> PhaseSignal:
    """Add integer multiples of 2*pi so successive differences lie in (-pi, pi]."""
    x = np.asarray(wrapped.samples, dtype=float)
    if x.size < 2:
        return PhaseSignal(x.copy(), wrapped.sample_rate_hz, wrapped.origin_bin,
                           wrapped.zero_magnitude_count)
    d = np.diff(x)
    jumps = np.ceil((d - math.pi) / TWO_PI)
    out = x.copy()
    out[1:] -= TWO_PI * np.cumsum(jumps)
    return PhaseSignal(out, wrapped.sample_rate_hz, wrapped.origin_bin,
                       wrapped.zero_magnitude_count)


class StreamingUnwrapper:
    """Sample-by-sample equivalent of :func:`unwrap_phase`."""

    def __init__(self):
        self._last = None
        self._turns = 0.0

    def push(self, wrapped_value: float) -> float:
        if self._last is not None:
            self._turns += math.ceil((wrapped_value - self._last - math.pi) / TWO_PI)
        self._last = wrapped_value
        return wrapped_value - TWO_PI * self._turns


def _butter_edges(spec: BandpassSpec, fs, order):
    """Design edges that put the nominal band edges at -3 dB of the combined
    forward-backward response (each single pass is -1.5 dB there)."""
    wl, wh = (2.0 * fs * math.tan(math.pi * f / fs) for f in (spec.low_hz, spec.high_hz))
    w0 = math.sqrt(wl * wh)
    bw = (wh - wl) / (math.sqrt(2.0) - 1.0) ** (1.0 / (2 * order))
    hi = bw / 2.0 + math.sqrt(bw * bw / 4.0 + w0 * w0)
    lo = hi - bw
    edges = [fs / math.pi * math.atan(w / (2.0 * fs)) for w in (lo, hi)]
    return [max(edges[0], 1e-6 * fs), min(edges[1], 0.4999 * fs)]


def _butter_sos(spec: BandpassSpec, fs, order):
    return signal.butter(order, _butter_edges(spec, fs, order), btype="band", fs=fs, output="sos")


def _butter_order(spec: BandpassSpec, fs) -> int:
    """Smallest prototype order (>= 2) meeting the stopband target at 2x the
    upper edge, counting both passes of forward-backward filtering."""
    f_stop = min(2.0 * spec.high_hz, 0.499 * fs)
    for order in range(2, 9):
        _, h = signal.sosfreqz(_butter_sos(spec, fs, order), worN=[f_stop], fs=fs)
        if -40.0 * math.log10(max(abs(h[0]), 1e-300)) >= spec.stopband_atten_db:
            return order
    return 8


@lru_cache(maxsize=32)
def design_bandpass(spec: BandpassSpec, fs: float):
    """Return ``("sos", sos, order)`` or ``("fir", taps, order)``."""
    spec.validate(fs)
    if spec.design == "biquad-cascade":
        n = _butter_order(spec, fs)
        return "sos", _butter_sos(spec, fs, n), 2 * n
    # Full attenuation per pass keeps the ripple small after squaring. The
    # transition spans DC to twice the low edge so the taps fit a 30 s window.
    numtaps, beta = signal.kaiserord(spec.stopband_atten_db, 2.0 * spec.low_hz / (fs / 2.0))
    numtaps |= 1
    taps = signal.firwin(numtaps, [spec.low_hz, spec.high_hz], pass_zero=False,
                         window=("kaiser", beta), fs=fs)
    return "fir", taps, numtaps - 1


def bandpass(sig: PhaseSignal, spec: BandpassSpec = BandpassSpec()) -> PhaseSignal:
    """Zero-phase (forward-backward) bandpass with the mean removed first."""
    fs = sig.sample_rate_hz
    kind, coeffs, order = design_bandpass(spec, float(fs))
    x = np.asarray(sig.samples, dtype=float)
    if x.size <= 3 * order:
        raise InsufficientDataError(
            f"{x.size} samples is too short for a filter of order {order}"
        )
    x = x - x.mean()
    if kind == "sos":
        y = signal.sosfiltfilt(coeffs, x, padlen=min(3 * order, x.size - 1))
    else:
        y = signal.filtfilt(coeffs, [1.0], x, padlen=min(3 * order, x.size - 1))
    return PhaseSignal(y, fs, sig.origin_bin, sig.zero_magnitude_count)

