"""INI configuration files for runs.

Sections mirror the configuration dataclasses::

    [radar]       RadarConfig fields
    [scenario]    SubjectScenario fields (or [scenario.NAME], one per subject)
    [run]         RunConfig scalars: analysis_window_s, hop_frames, estimator, ...
    [track]       TrackConfig fields
    [bandpass]    BandpassSpec fields

Unknown sections and keys are errors. ``sway_components`` is written as
``freq:amp:phase`` triples separated by commas; ``search_range_m`` as two
comma-separated numbers; ``none`` clears optional values.

Any key can be overridden from the environment as
``RRSENSE_<SECTION>_<KEY>`` (upper case), e.g. ``RRSENSE_RUN_HOP_FRAMES=5``.
A scenario override applies to every scenario in the file.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
from pathlib import Path

from .dsp import BandpassSpec
from .errors import ConfigError, RRSenseError
from .harness import RunConfig
from .synthesis import RadarConfig, SubjectScenario
from .tracking import TrackConfig

ENV_PREFIX = "RRSENSE_"

_RUN_KEYS = (
    "analysis_window_s", "hop_frames", "estimator", "fft_len", "n_peaks", "n_average",
    "search_range_m", "range_window", "range_fft_size", "model_path", "output_dir",
)
_OPTIONAL = {"range_fft_size": int, "model_path": str}


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_sway(text):
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        parts = item.split(":")
        if len(parts) != 3:
            raise ValueError(f"sway component {item!r} is not freq:amp:phase")
        out.append(tuple(float(p) for p in parts))
    return tuple(out)


def _convert(key, text, default):
    text = text.strip()
    if key in _OPTIONAL:
        return None if text.lower() in ("", "none") else _OPTIONAL[key](text)
    if key == "sway_components":
        return _parse_sway(text)
    if key == "search_range_m":
        vals = tuple(float(v) for v in text.split(","))
        if len(vals) != 2:
            raise ValueError("search_range_m needs two values")
        return vals
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _defaults(cls):
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


_SECTIONS = {
    "radar": (RadarConfig, tuple(f.name for f in dataclasses.fields(RadarConfig))),
    "scenario": (SubjectScenario, tuple(f.name for f in dataclasses.fields(SubjectScenario))),
    "run": (RunConfig, _RUN_KEYS),
    "track": (TrackConfig, tuple(f.name for f in dataclasses.fields(TrackConfig))),
    "bandpass": (BandpassSpec, tuple(f.name for f in dataclasses.fields(BandpassSpec))),
}


def _kind(section):
    return "scenario" if section == "scenario" or section.startswith("scenario.") else section


def _values(section, items):
    kind = _kind(section)
    if kind not in _SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    cls, keys = _SECTIONS[kind]
    defaults = _defaults(cls)
    out = {}
    for key, text in items:
        if key not in keys:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        try:
            out[key] = _convert(key, text, defaults.get(key))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    return out


def _env_overrides(environ):
    """``{kind: {key: text}}`` from ``RRSENSE_*`` variables."""
    out = {}
    for name, text in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        kind, _, key = rest.partition("_")
        if kind not in _SECTIONS or key not in _SECTIONS[kind][1]:
            raise ConfigError(f"environment variable {name} names no configuration key")
        out.setdefault(kind, {})[key] = text
    return out


def parse_config(text: str, environ=None) -> RunConfig:
    """Build a :class:`RunConfig` from INI text plus environment overrides."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    env = _env_overrides(os.environ if environ is None else environ)

    sections = {}
    scenarios = []
    for name in parser.sections():
        vals = _values(name, parser.items(name))
        if _kind(name) == "scenario":
            scenarios.append(vals)
        else:
            sections[name] = vals
    for kind, items in env.items():
        if kind == "scenario":
            over = _values("scenario", items.items())
            scenarios = [{**s, **over} for s in scenarios] or [over]
        else:
            sections.setdefault(kind, {}).update(_values(kind, items.items()))

    try:
        radar = RadarConfig(**sections.get("radar", {}))
        track = TrackConfig(**sections.get("track", {}))
        band = BandpassSpec(**sections.get("bandpass", {}))
        band.validate(radar.frame_rate_hz)
        scen = [SubjectScenario(**s) for s in scenarios]
        return RunConfig(radar=radar, scenarios=scen, track=track, bandpass=band,
                         **sections.get("run", {}))
    except (RRSenseError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, environ=None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, environ)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def dump_config(config: RunConfig) -> str:
    """INI text that :func:`parse_config` reads back into an equal config."""
    lines = []

    def section(name, obj, keys):
        lines.append(f"[{name}]")
        for k in keys:
            v = getattr(obj, k)
            if k == "sway_components":
                v = ", ".join(":".join(repr(float(x)) for x in c) for c in v)
            elif k == "search_range_m":
                v = ", ".join(repr(float(x)) for x in v)
            lines.append(f"{k} = {_fmt(v)}")
        lines.append("")

    section("radar", config.radar, _SECTIONS["radar"][1])
    section("run", config, _RUN_KEYS)
    section("track", config.track, _SECTIONS["track"][1])
    section("bandpass", config.bandpass, _SECTIONS["bandpass"][1])
    for i, sc in enumerate(config.scenarios):
        section(f"scenario.{i}", sc, _SECTIONS["scenario"][1])
    return "\n".join(lines)
