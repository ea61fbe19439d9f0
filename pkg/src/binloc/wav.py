"""Minimal RIFF/WAVE reader and writer (PCM-16 and IEEE float-32)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dsp import Waveform

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV files."""


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        yield cid, body, len(body) == size
        pos += 8 + size + (size & 1)


def read_wav(path) -> list[Waveform]:
    """Read a WAV file and return one :class:`Waveform` per channel."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise WavFormatError(f"{path}: truncated file, missing RIFF header")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file (missing RIFF header)")

    fmt = None
    payload = None
    for cid, body, complete in _chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated 'fmt ' chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            payload = body
            if not complete:
                raise WavFormatError(f"{path}: truncated 'data' chunk")
    if fmt is None:
        raise WavFormatError(f"{path}: missing 'fmt ' chunk")
    if payload is None:
        raise WavFormatError(f"{path}: missing 'data' chunk")

    codec, channels, rate, _, _, bits = fmt
    if channels < 1:
        raise WavFormatError(f"{path}: invalid channel count {channels}")
    if codec == WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif codec == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported codec (format tag {codec}, {bits} bits); "
            "only PCM-16 and IEEE float-32 are supported"
        )
    usable = samples.shape[0] - samples.shape[0] % channels
    frames = samples[:usable].reshape(-1, channels)
    return [Waveform(frames[:, c], rate) for c in range(channels)]


def write_wav(path, channels, fmt: str = "float32"):
    """Write equal-length, equal-rate waveforms as one interleaved WAV file.

    ``fmt`` is ``"float32"`` or ``"pcm16"``. PCM values are clipped to the
    representable range.
    """
    if isinstance(channels, Waveform):
        channels = [channels]
    if not channels:
        raise ValueError("write_wav needs at least one channel")
    rate = channels[0].sample_rate
    n = len(channels[0])
    for ch in channels:
        if ch.sample_rate != rate:
            raise ValueError(f"sample-rate mismatch between channels: {ch.sample_rate} vs {rate}")
        if len(ch) != n:
            raise ValueError("all channels must have the same length")
    frames = np.stack([ch.samples for ch in channels], axis=1)
    if fmt == "float32":
        payload = frames.astype("<f4").tobytes()
        codec, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    elif fmt == "pcm16":
        ints = np.clip(np.round(frames * 32768.0), -32768, 32767)
        payload = ints.astype("<i2").tobytes()
        codec, bits = WAVE_FORMAT_PCM, 16
    else:
        raise ValueError(f"unknown WAV sample format {fmt!r}")
    n_ch = len(channels)
    block = n_ch * bits // 8
    header = struct.pack("<HHIIHH", codec, n_ch, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(header)) + header
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
