"""Binary persistence for :class:`FrameSequence` ("RRIQ" files).

Layout, all little-endian::

    offset  size  field
    0       4     magic b"RRIQ"
    4       2     version (u16, currently 1)
    6       2     reserved (u16, zero)
    8       8     carrier_start_hz (f64)
    16      8     carrier_stop_hz (f64)
    24      8     bandwidth_hz (f64)
    32      8     chirp_duration_s (f64)
    40      8     frame_rate_hz (f64)
    48      4     samples_per_chirp (u32)
    52      4     chirps_per_frame (u32)
    56      4     n_frames (u32)
    60      ...   frames: n_frames * chirps_per_frame * samples_per_chirp
                  interleaved (I, Q) f32 pairs, frame-major then chirp-major
    ...     ...   truth: n_frames (rate_bpm, displacement_m) f64 pairs
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidScenarioError
from .synthesis import FrameSequence, RadarConfig

MAGIC = b"RRIQ"
VERSION = 1
_HEADER = struct.Struct("<4sHH5d3I")
HEADER_SIZE = _HEADER.size  # 60


def encode_frames(seq: FrameSequence) -> bytes:
    cfg = seq.config
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        0,
        cfg.carrier_start_hz,
        cfg.carrier_stop_hz,
        cfg.bandwidth_hz,
        cfg.chirp_duration_s,
        cfg.frame_rate_hz,
        cfg.samples_per_chirp,
        cfg.chirps_per_frame,
        len(seq),
    )
    iq = np.ascontiguousarray(seq.frames, dtype="<c8").view("<f4")
    truth = np.ascontiguousarray(seq.truth, dtype="<f8")
    return header + iq.tobytes() + truth.tobytes()


def decode_frames(data: bytes) -> FrameSequence:
    if len(data) < HEADER_SIZE:
        raise FormatError("truncated header", offset=len(data))
    magic, version, _, c0, c1, bw, tc, fr, ns, nc, nf = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    try:
        cfg = RadarConfig(c0, c1, bw, tc, ns, nc, fr)
    except InvalidScenarioError as exc:
        raise FormatError(f"invalid radar header: {exc}", offset=8) from exc
    n_iq = nf * nc * ns
    frames_end = HEADER_SIZE + n_iq * 8
    truth_end = frames_end + nf * 16
    if len(data) < frames_end:
        raise FormatError("truncated frame block", offset=len(data))
    if len(data) < truth_end:
        raise FormatError("truncated truth block", offset=len(data))
    if len(data) > truth_end:
        raise FormatError("trailing bytes after truth block", offset=truth_end)
    frames = (
        np.frombuffer(data, dtype="<c8", count=n_iq, offset=HEADER_SIZE)
        .reshape(nf, nc, ns)
        .astype(np.complex64)
    )
    truth = np.frombuffer(data, dtype="<f8", count=nf * 2, offset=frames_end).reshape(nf, 2)
    return FrameSequence(cfg, frames, truth.astype(float))


def save_frames(seq: FrameSequence, path) -> None:
    Path(path).write_bytes(encode_frames(seq))


def load_frames(path) -> FrameSequence:
    return decode_frames(Path(path).read_bytes())
