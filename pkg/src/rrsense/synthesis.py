"""Synthetic FMCW intermediate-frequency frames for a standing subject.

The subject is a single point scatterer at ``distance_m`` whose radial
position is modulated by breathing and by balancing sway. Each chirp is a
dechirped complex tone; its slow-time phase is ``4*pi*r(t)/wavelength`` with
the wavelength taken at the carrier centre frequency. Fast-time samples are
referenced to the chirp midpoint, which makes the range-bin phase free of the
range/phase coupling term.

All magnitudes (breath amplitude, sway amplitudes, random-walk step, rate
jitter) are modelling choices for exercising the estimators; none of them is
a measured physiological value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidScenarioError

SPEED_OF_LIGHT = 299_792_458.0

BREATH_BAND_BPM = (6.0, 50.0)
SWAY_BAND_HZ = (0.05, 1.0)
DISTANCE_RANGE_M = (0.5, 2.0)

# Mean-reversion time constant of the sway random walk, which keeps it bounded.
RANDOM_WALK_TIME_CONSTANT_S = 8.0
# Correlation time of the breathing-rate jitter process.
RATE_JITTER_TIME_CONSTANT_S = 6.0
# Inhale fraction of the cycle for the raised-cosine-inhale shape.
INHALE_FRACTION = 0.4

BREATH_SHAPES = ("sinusoid", "raised-cosine-inhale")


@dataclass(frozen=True)
class RadarConfig:
    """Chirp and frame parametrisation of the radar."""

    carrier_start_hz: float = 60e9
    carrier_stop_hz: float = 64e9
    bandwidth_hz: float = 3.7e9
    chirp_duration_s: float = 57e-6
    samples_per_chirp: int = 200
    chirps_per_frame: int = 2
    frame_rate_hz: float = 20.0

    def __post_init__(self):
        if self.carrier_stop_hz <= self.carrier_start_hz:
            raise InvalidScenarioError("carrier_stop_hz must exceed carrier_start_hz")
        if not 0 < self.bandwidth_hz <= self.carrier_stop_hz - self.carrier_start_hz:
            raise InvalidScenarioError(
                "bandwidth_hz must be positive and fit inside the carrier span"
            )
        if self.chirp_duration_s <= 0:
            raise InvalidScenarioError("chirp_duration_s must be positive")
        if self.samples_per_chirp < 2:
            raise InvalidScenarioError("samples_per_chirp must be >= 2")
        if self.chirps_per_frame < 1:
            raise InvalidScenarioError("chirps_per_frame must be >= 1")
        if not self.frame_rate_hz > 0:
            raise InvalidScenarioError("frame_rate_hz must be positive")

    @property
    def range_resolution_m(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)

    @property
    def center_frequency_hz(self) -> float:
        return 0.5 * (self.carrier_start_hz + self.carrier_stop_hz)

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.center_frequency_hz

    @property
    def max_range_m(self) -> float:
        """Unambiguous range for complex sampling: one full fast-time band."""
        return self.samples_per_chirp * self.range_resolution_m


@dataclass(frozen=True)
class SubjectScenario:
    """A standing subject in front of the radar.

    ``sway_components`` holds ``(freq_hz, amp_m, phase_rad)`` triples.
    ``breath_rate_jitter`` is the relative standard deviation of a slow
    random modulation of the breathing rate (0 gives a constant rate).
    ``noise_snr_db`` is the per-sample SNR against the target tone; ``inf``
    disables noise.
    """

    distance_m: float = 1.2
    breath_rate_bpm: float = 15.0
    breath_amp_m: float = 4e-3
    sway_components: tuple = ()
    sway_random_walk_std_m: float = 0.0
    noise_snr_db: float = 30.0
    duration_s: float = 60.0
    seed: int = 0
    breath_shape: str = "sinusoid"
    breath_rate_jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self,
            "sway_components",
            tuple(tuple(float(v) for v in c) for c in self.sway_components),
        )
        lo, hi = BREATH_BAND_BPM
        if not lo <= self.breath_rate_bpm <= hi:
            raise InvalidScenarioError(
                f"breath_rate_bpm {self.breath_rate_bpm} outside [{lo}, {hi}]"
            )
        if self.breath_amp_m < 0:
            raise InvalidScenarioError("breath_amp_m must be >= 0")
        dlo, dhi = DISTANCE_RANGE_M
        if not dlo <= self.distance_m <= dhi:
            raise InvalidScenarioError(f"distance_m {self.distance_m} outside [{dlo}, {dhi}]")
        _check_sway(self.sway_components)
        if self.sway_random_walk_std_m < 0:
            raise InvalidScenarioError("sway_random_walk_std_m must be >= 0")
        if self.duration_s < 0:
            raise InvalidScenarioError("duration_s must be >= 0")
        if self.breath_shape not in BREATH_SHAPES:
            raise InvalidScenarioError(f"unknown breath_shape {self.breath_shape!r}")
        if not 0 <= self.breath_rate_jitter < 0.5:
            raise InvalidScenarioError("breath_rate_jitter must lie in [0, 0.5)")


@dataclass
class FrameSequence:
    """Time-ordered frames plus per-frame ground truth.

    ``frames`` has shape ``(n_frames, chirps_per_frame, samples_per_chirp)``.
    ``truth`` has shape ``(n_frames, 2)``: instantaneous breathing rate in bpm
    and torso displacement in metres relative to ``distance_m``.
    """

    config: RadarConfig
    frames: np.ndarray
    truth: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        cfg = self.config
        expected = (cfg.chirps_per_frame, cfg.samples_per_chirp)
        if self.frames.ndim != 3 or self.frames.shape[1:] != expected:
            raise InvalidScenarioError(
                f"frames shape {self.frames.shape} does not match config {expected}"
            )
        if self.truth.shape != (len(self.frames), 2):
            raise InvalidScenarioError("truth must hold one (rate, displacement) row per frame")

    def __len__(self):
        return len(self.frames)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.frames)) / self.config.frame_rate_hz

    @property
    def truth_rate_bpm(self) -> np.ndarray:
        return self.truth[:, 0]

    @property
    def truth_displacement_m(self) -> np.ndarray:
        return self.truth[:, 1]


def _check_sway(components):
    lo, hi = SWAY_BAND_HZ
    for comp in components:
        if len(comp) != 3:
            raise InvalidScenarioError("sway components are (freq_hz, amp_m, phase_rad)")
        if not lo <= comp[0] <= hi:
            raise InvalidScenarioError(f"sway frequency {comp[0]} Hz outside [{lo}, {hi}]")


def _shape(cycles, shape):
    """Unit-amplitude, zero-mean breathing shape as a function of cycle count."""
    if shape == "sinusoid":
        return np.sin(2.0 * np.pi * cycles)
    if shape == "raised-cosine-inhale":
        u = np.mod(cycles, 1.0)
        rho = INHALE_FRACTION
        return np.where(
            u < rho,
            -np.cos(np.pi * u / rho),
            np.cos(np.pi * (u - rho) / (1.0 - rho)),
        )
    raise InvalidScenarioError(f"unknown breath shape {shape!r}")


def breathing_waveform(rate_bpm, amp_m, t, shape="sinusoid"):
    """Chest displacement in metres at time(s) ``t`` for a constant rate."""
    lo, hi = BREATH_BAND_BPM
    if not lo <= rate_bpm <= hi:
        raise InvalidScenarioError(f"rate {rate_bpm} bpm outside [{lo}, {hi}]")
    if amp_m < 0:
        raise InvalidScenarioError("amp_m must be >= 0")
    cycles = np.asarray(t, dtype=float) * (rate_bpm / 60.0)
    out = amp_m * _shape(cycles, shape)
    return float(out) if np.ndim(out) == 0 else out


def sway_waveform(components: Sequence, random_walk_std, t, seed=0):
    """Balancing sway: a sum of sinusoids plus a mean-reverting random walk.

    The random walk is driven once per element of ``t`` (taken as successive
    samples); it starts at zero and decays toward zero with time constant
    ``RANDOM_WALK_TIME_CONSTANT_S``, so its variance stays bounded.
    """
    _check_sway(components)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros_like(t_arr)
    for freq, amp, phase in components:
        out += amp * np.sin(2.0 * np.pi * freq * t_arr + phase)
    if random_walk_std > 0 and t_arr.size > 1:
        rng = np.random.default_rng(seed)
        steps = rng.standard_normal(t_arr.size - 1) * random_walk_std
        dt = np.diff(t_arr)
        leak = np.exp(-np.abs(dt) / RANDOM_WALK_TIME_CONSTANT_S)
        walk = np.zeros_like(t_arr)
        for i in range(1, t_arr.size):
            walk[i] = leak[i - 1] * walk[i - 1] + steps[i - 1]
        out += walk
    return float(out[0]) if np.ndim(t) == 0 else out


def _rate_track(scenario: SubjectScenario, t: np.ndarray, rng) -> np.ndarray:
    """Instantaneous breathing rate (bpm) per sample time."""
    rate = np.full(t.shape, float(scenario.breath_rate_bpm))
    if scenario.breath_rate_jitter > 0 and t.size > 1:
        dt = np.diff(t, prepend=t[0])
        a = np.exp(-dt / RATE_JITTER_TIME_CONSTANT_S)
        drive = rng.standard_normal(t.size) * np.sqrt(1.0 - a**2)
        drive[0] = rng.standard_normal()
        j = np.empty_like(t)
        j[0] = drive[0]
        for i in range(1, t.size):
            j[i] = a[i] * j[i - 1] + drive[i]
        rate = rate * (1.0 + scenario.breath_rate_jitter * j)
        rate = np.clip(rate, *BREATH_BAND_BPM)
    return rate


def synthesize_frames(config: RadarConfig, scenario: SubjectScenario) -> FrameSequence:
    """Render the scenario into IF frames with ground truth.

    Deterministic in ``(config, scenario)``; the random streams for sway,
    rate jitter and receiver noise are independent children of
    ``scenario.seed``.
    """
    if scenario.distance_m >= config.max_range_m:
        raise InvalidScenarioError(
            f"distance {scenario.distance_m} m beyond unambiguous range {config.max_range_m:.3f} m"
        )
    n_frames = int(math.floor(scenario.duration_s * config.frame_rate_hz + 1e-9))
    n_chirps, n_samp = config.chirps_per_frame, config.samples_per_chirp
    t = np.arange(n_frames) / config.frame_rate_hz

    sway_seed, jitter_seed, noise_seed = np.random.SeedSequence(scenario.seed).spawn(3)
    rate = _rate_track(scenario, t, np.random.default_rng(jitter_seed))
    cycles = np.concatenate([[0.0], np.cumsum(rate[:-1])]) / (60.0 * config.frame_rate_hz)
    cycles = cycles[:n_frames]
    breath = scenario.breath_amp_m * _shape(cycles, scenario.breath_shape)
    sway = sway_waveform(
        scenario.sway_components, scenario.sway_random_walk_std_m, t, seed=sway_seed
    )
    displacement = breath + sway
    r = scenario.distance_m + displacement

    # Beat tone in cycles per fast-time sample, phase referenced to chirp centre.
    n = np.arange(n_samp) - 0.5 * (n_samp - 1)
    beat = 2.0 * config.bandwidth_hz * r / (SPEED_OF_LIGHT * n_samp)
    carrier_phase = 4.0 * np.pi * r / config.wavelength_m
    tone = np.exp(1j * (2.0 * np.pi * np.outer(beat, n) + carrier_phase[:, None]))
    frames = np.repeat(tone[:, None, :], n_chirps, axis=1)

    if np.isfinite(scenario.noise_snr_db) and n_frames:
        sigma = math.sqrt(10.0 ** (-scenario.noise_snr_db / 10.0) / 2.0)
        rng = np.random.default_rng(noise_seed)
        noise = rng.standard_normal((n_frames, n_chirps, n_samp, 2)) * sigma
        frames = frames + (noise[..., 0] + 1j * noise[..., 1])

    truth = np.column_stack([rate, displacement]) if n_frames else np.zeros((0, 2))
    return FrameSequence(config, frames.astype(np.complex64), truth)
