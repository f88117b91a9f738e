"""Adaptive peak selection feeding a scalar Kalman filter.

Each analysis window contributes one measurement: the rate of the peak with
the largest confidence metric. The measurement noise variance R is derived
from the CM of the two most confident peaks, so confident windows pull the
estimate harder than ambiguous ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .spectral import BAND_BPM


@dataclass(frozen=True)
class TrackConfig:
    process_noise_q: float = 0.05
    # Calibrated so the filter smooths over seconds at a 20 Hz step rate.
    r_scale_c: float = 2000.0
    dominance_threshold: float = 0.5
    r_floor: float = 0.25
    r_ceiling: float = 400.0
    # Measure the power-dominant CM leader instead of the max-CM peak.
    dominant_power_override: bool = False

    def __post_init__(self):
        for name in ("r_scale_c", "r_floor", "r_ceiling"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.process_noise_q < 0:
            raise ValueError("process_noise_q must be >= 0")
        if not 0 < self.dominance_threshold < 1:
            raise ValueError("dominance_threshold must lie in (0, 1)")
        if self.r_floor > self.r_ceiling:
            raise ValueError("r_floor must not exceed r_ceiling")


@dataclass(frozen=True)
class TrackState:
    rate_bpm: float = 0.0
    variance: float = 0.0
    initialized: bool = False
    stale: bool = False


@dataclass(frozen=True)
class StepTrace:
    """Diagnostics for one :func:`track_step` call (NaN where undefined)."""

    z: float
    cm_max: float
    r: float
    k: float
    x: float
    p: float
    stale: bool


def _cm_leaders(peaks):
    """Peaks by descending CM; ties prefer higher power, then lower rate."""
    return sorted(peaks, key=lambda p: (-p.cm, -p.power, p.rate_bpm))


def _dominance(peaks, config: TrackConfig):
    """The two CM leaders, their power ratios against the top-four total, and
    whether either ratio exceeds the dominance threshold."""
    leaders = _cm_leaders(peaks)[:2]
    total = sum(p.power for p in list(peaks)[:4])
    ratios = [p.power / total if total > 0 else 0.0 for p in leaders]
    return leaders, ratios, any(r > config.dominance_threshold for r in ratios)


def select_measurement(peaks, config: TrackConfig = TrackConfig()):
    """``(rate_bpm, cm)`` of the max-CM peak, or ``None`` with no peaks."""
    peaks = list(peaks)
    if not peaks:
        return None
    best = _cm_leaders(peaks)[0]
    if config.dominant_power_override and len(peaks) > 1:
        leaders, ratios, dominant = _dominance(peaks, config)
        if dominant:
            best = leaders[0] if ratios[0] >= ratios[1] else leaders[1]
    return best.rate_bpm, best.cm


def effective_cm(peaks, config: TrackConfig = TrackConfig()) -> float:
    peaks = list(peaks)
    if not peaks:
        return 0.0
    if len(peaks) == 1:
        return peaks[0].cm
    (a, b), (ra, rb), dominant = _dominance(peaks, config)
    if dominant:
        return a.cm
    if ra + rb == 0:
        return a.cm
    if math.isinf(a.cm) or math.isinf(b.cm):
        return math.inf
    return (a.cm * ra + b.cm * rb) / (ra + rb)


def r_from_cm(cm: float, config: TrackConfig = TrackConfig()) -> float:
    if not cm > 0:
        return config.r_ceiling
    return min(max(config.r_scale_c / cm, config.r_floor), config.r_ceiling)


def estimate_R(peaks, config: TrackConfig = TrackConfig()) -> float:
    """Measurement variance from the confidence of the two CM leaders."""
    return r_from_cm(effective_cm(peaks, config), config)


def kalman_predict(state: TrackState, config: TrackConfig = TrackConfig()) -> TrackState:
    if not state.initialized:
        return state
    return replace(state, variance=state.variance + config.process_noise_q)


def _clamp_rate(x):
    return min(max(x, BAND_BPM[0]), BAND_BPM[1])


def kalman_update(state: TrackState, z: float, r: float):
    """Return ``(new_state, gain)``; a non-finite ``z`` skips the update."""
    if not math.isfinite(z):
        return replace(state, stale=True), 0.0
    if not r > 0:
        raise ValueError("measurement variance must be positive")
    p = state.variance
    k = p / (p + r)
    x = _clamp_rate(state.rate_bpm + k * (z - state.rate_bpm))
    return TrackState(x, (1.0 - k) * p, True, False), k


def track_step(state: TrackState, peaks, config: TrackConfig = TrackConfig()):
    """Predict, pick the max-CM peak, derive R, update.

    Returns ``(new_state, rate_bpm, trace)``. Without peaks the filter only
    predicts and the returned state is flagged stale; ``rate_bpm`` is ``None``
    until the first measurement initialises the track.
    """
    peaks = list(peaks)
    state = kalman_predict(state, config)
    meas = select_measurement(peaks, config)
    nan = math.nan
    if meas is None:
        state = replace(state, stale=True)
        rate = state.rate_bpm if state.initialized else None
        return state, rate, StepTrace(nan, nan, nan, nan, rate if rate is not None else nan,
                                      state.variance if state.initialized else nan, True)
    z, cm = meas
    r = estimate_R(peaks, config)
    if not state.initialized:
        state = TrackState(_clamp_rate(z), r, True, False)
        k = 1.0
    else:
        state, k = kalman_update(state, z, r)
    return state, state.rate_bpm, StepTrace(z, cm, r, k, state.rate_bpm, state.variance, False)
