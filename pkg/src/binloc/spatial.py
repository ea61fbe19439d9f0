"""Geometry, speaker layout and spherical-head HRIR synthesis.

Coordinate frame: +x front, +y left, +z up (right-handed). Azimuth is
measured clockwise from the front when viewed from above, so 90 degrees is
the listener's right (-y) and 270 degrees the left (+y).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy import signal as sps

from .dsp import DEFAULT_SAMPLE_RATE, ImpulseResponse, Waveform, fft_convolve

LEVEL_SIZES = (9, 9, 5, 1)
SINC_HALF_WIDTH = 16  # 33-tap fractional-delay kernel
SHADOW_FLOOR_HZ = 1000.0
NOTCH_LOW_HZ = 6000.0
NOTCH_HIGH_HZ = 10000.0
NOTCH_Q = 2.0


@dataclass(frozen=True)
class Position:
    """Cartesian source location in metres."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"position components must be finite: {self}")

    @classmethod
    def from_array(cls, a) -> "Position":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def unit(self) -> np.ndarray:
        n = self.norm
        if n == 0:
            raise ValueError("zero-length position has no direction")
        return self.as_array() / n


@dataclass(frozen=True)
class SphericalCoord:
    """Azimuth (deg, clockwise from front), elevation (deg) and radius (m)."""

    azimuth: float
    elevation: float
    radius: float

    def __post_init__(self):
        if not 0.0 <= self.azimuth < 360.0:
            raise ValueError(f"azimuth must lie in [0, 360), got {self.azimuth}")
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation must lie in [-90, 90], got {self.elevation}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")


def to_spherical(p: Position) -> SphericalCoord:
    r = p.norm
    if r == 0:
        raise ValueError("cannot convert the zero vector to spherical coordinates")
    az = math.degrees(math.atan2(-p.y, p.x)) % 360.0
    if az >= 360.0:
        az = 0.0
    el = math.degrees(math.atan2(p.z, math.hypot(p.x, p.y)))
    return SphericalCoord(az, el, r)


def to_cartesian(s: SphericalCoord) -> Position:
    az = math.radians(s.azimuth)
    el = math.radians(s.elevation)
    horiz = s.radius * math.cos(el)
    return Position(horiz * math.cos(az), -horiz * math.sin(az), s.radius * math.sin(el))


@dataclass(frozen=True)
class LayoutConfig:
    radius: float = 1.8
    elevations: tuple = (0.0, 30.0, 60.0, 90.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"layout.radius must be positive, got {self.radius}")
        if len(self.elevations) != 4:
            raise ValueError(f"layout.elevations needs 4 levels, got {len(self.elevations)}")
        for el in self.elevations:
            if not -90.0 <= el <= 90.0:
                raise ValueError(f"layout.elevations entries must lie in [-90, 90], got {el}")


@dataclass(frozen=True)
class SpeakerArray:
    """24 speakers, indexed 1..24, in four rings of 9/9/5/1."""

    positions: tuple
    levels: tuple
    config: LayoutConfig = field(default_factory=LayoutConfig)

    def __post_init__(self):
        if len(self.positions) != 24 or len(self.levels) != 24:
            raise ValueError("a speaker array holds exactly 24 speakers")

    def __len__(self):
        return len(self.positions)

    def position(self, index: int) -> Position:
        """Position of speaker ``index`` (1-based)."""
        return self.positions[index - 1]

    def as_array(self) -> np.ndarray:
        return np.array([p.as_array() for p in self.positions])

    def index_of(self, p: Position, tol: float = 1e-6) -> int:
        """1-based index of the speaker at ``p``; raises if none matches."""
        d = np.linalg.norm(self.as_array() - p.as_array(), axis=1)
        k = int(np.argmin(d))
        if d[k] > tol:
            raise ValueError(f"{p} is not a speaker position of this array")
        return k + 1

    def spherical(self) -> list[SphericalCoord]:
        return [to_spherical(p) for p in self.positions]


def speaker_positions(config: LayoutConfig | None = None) -> SpeakerArray:
    """Default 24-speaker layout, numbered from the front going clockwise."""
    config = config or LayoutConfig()
    positions, levels = [], []
    for level, (count, elevation) in enumerate(zip(LEVEL_SIZES, config.elevations), start=1):
        for k in range(count):
            az = 360.0 * k / count
            positions.append(to_cartesian(SphericalCoord(az, float(elevation), config.radius)))
            levels.append(level)
    return SpeakerArray(tuple(positions), tuple(levels), config)


@dataclass(frozen=True)
class HeadModel:
    radius: float = 0.0875
    speed_of_sound: float = 343.0

    def __post_init__(self):
        if not 0.05 <= self.radius <= 0.15:
            raise ValueError(f"head.radius must lie in [0.05, 0.15] m, got {self.radius}")
        if not 300.0 <= self.speed_of_sound <= 360.0:
            raise ValueError(
                f"head.speed_of_sound must lie in [300, 360] m/s, got {self.speed_of_sound}"
            )

    @property
    def max_itd(self) -> float:
        return self.radius / self.speed_of_sound * (math.pi / 2 + 1)


@dataclass(frozen=True)
class HrirPair:
    left: ImpulseResponse
    right: ImpulseResponse
    position: Position

    def __post_init__(self):
        if self.left.sample_rate != self.right.sample_rate:
            raise ValueError("left and right HRIRs must share a sample rate")
        if len(self.left) != len(self.right):
            raise ValueError("left and right HRIRs must have equal length")

    @property
    def sample_rate(self) -> int:
        return self.left.sample_rate


def woodworth_itd(p: Position, head: HeadModel) -> float:
    """Far-field spherical-head ITD in seconds; positive when the left ear leads."""
    lateral = math.asin(max(-1.0, min(1.0, p.unit()[1])))
    mag = abs(lateral)
    return math.copysign(head.radius / head.speed_of_sound * (mag + math.sin(mag)), lateral)


def polar_angle(p: Position) -> float:
    """Angle (deg) around the interaural axis: 0 front, 90 above, 180 behind.

    Sources below the horizontal plane map into [-90, 0) in front and
    (180, 270) behind.
    """
    u = p.unit()
    ang = math.degrees(math.atan2(u[2], u[0]))
    return ang + 360.0 if ang < -90.0 else ang


def notch_frequency(p: Position) -> float:
    """Centre of the pinna-like notch, linear in polar angle over [0, 180] deg."""
    frac = min(max(polar_angle(p), 0.0), 180.0) / 180.0
    return NOTCH_LOW_HZ + (NOTCH_HIGH_HZ - NOTCH_LOW_HZ) * frac


def fractional_delay(delay: float, length: int) -> np.ndarray:
    """33-tap Hann-windowed sinc impulse centred at ``delay`` samples."""
    out = np.zeros(length)
    centre = int(math.floor(delay))
    n = np.arange(centre - SINC_HALF_WIDTH, centre + SINC_HALF_WIDTH + 1)
    t = n - delay
    win = np.cos(np.pi * t / (2 * (SINC_HALF_WIDTH + 1))) ** 2
    out[n] = np.sinc(t) * win
    return out


def _shadow_pole(cos_incidence: float, sample_rate: int) -> float:
    # one-pole coefficient: 0 (no filtering) on the facing side, rising to the
    # 1 kHz-cutoff pole for a source directly opposite the ear
    beyond = max(0.0, math.degrees(math.acos(max(-1.0, min(1.0, cos_incidence)))) - 90.0)
    return beyond / 90.0 * math.exp(-2 * math.pi * SHADOW_FLOOR_HZ / sample_rate)


def base_delay(head: HeadModel, sample_rate: int) -> float:
    """Common onset delay (samples) leaving room for the sinc and half the ITD."""
    return SINC_HALF_WIDTH + math.ceil(head.max_itd * sample_rate / 2) + 1


def min_ir_len(head: HeadModel, sample_rate: int) -> int:
    return int(math.ceil(base_delay(head, sample_rate) + head.max_itd * sample_rate / 2)) + SINC_HALF_WIDTH + 2


def synth_hrir(
    p: Position,
    head: HeadModel | None = None,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    ir_len: int = 256,
) -> HrirPair:
    """Spherical-head HRIR pair for a source at ``p``.

    Each ear gets a fractionally delayed impulse (the Woodworth ITD split
    symmetrically around a common onset), 1/r attenuation, a one-pole
    head-shadow low-pass whose cutoff falls as the ear turns away from the
    source, and a shared notch whose centre tracks the polar angle so that
    front/back and elevation are distinguishable.
    """
    head = head or HeadModel()
    r = p.norm
    if r == 0:
        raise ValueError("HRIR source position must be non-zero")
    need = min_ir_len(head, sample_rate)
    if ir_len < need:
        raise ValueError(
            f"ir_len={ir_len} cannot hold the maximum ITD of "
            f"{head.max_itd * sample_rate:.1f} samples plus the delay kernel; need >= {need}"
        )
    u = p.unit()
    half_itd = woodworth_itd(p, head) * sample_rate / 2
    onset = base_delay(head, sample_rate)
    b_notch, a_notch = sps.iirnotch(notch_frequency(p), NOTCH_Q, fs=sample_rate)

    ears = []
    for delay, cos_inc in ((onset - half_itd, u[1]), (onset + half_itd, -u[1])):
        taps = fractional_delay(delay, ir_len) / r
        pole = _shadow_pole(cos_inc, sample_rate)
        if pole > 0:
            taps = sps.lfilter([1.0 - pole], [1.0, -pole], taps)
        taps = sps.lfilter(b_notch, a_notch, taps)
        ears.append(ImpulseResponse(taps, sample_rate))
    return HrirPair(ears[0], ears[1], p)


def render_binaural(mono: Waveform, hrir: HrirPair) -> tuple[Waveform, Waveform]:
    """Spatialise ``mono`` by convolving it with each ear's HRIR."""
    if mono.sample_rate != hrir.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: source {mono.sample_rate} Hz, HRIR {hrir.sample_rate} Hz"
        )
    return fft_convolve(mono, hrir.left), fft_convolve(mono, hrir.right)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def estimate_itd_ild(left: Waveform, right: Waveform, max_lag: int | None = None):
    """Interaural time and level difference of a binaural pair.

    ITD is the lag of the normalised cross-correlation peak (refined by
    parabolic interpolation), positive when the left channel leads. ILD is
    ``20 log10(rms(left) / rms(right))`` in dB.
    """
    if left.sample_rate != right.sample_rate:
        raise ValueError(f"sample-rate mismatch: {left.sample_rate} vs {right.sample_rate} Hz")
    n = len(left)
    if n != len(right):
        raise ValueError(f"channel lengths differ: {n} vs {len(right)}")
    if n < 64:
        raise ValueError(f"need at least 64 samples per channel, got {n}")
    l, r = left.samples, right.samples
    rl, rr = _rms(l), _rms(r)
    if rl == 0 or rr == 0:
        raise ValueError("ILD undefined: one channel is silent")

    n_fft = sfft.next_fast_len(2 * n - 1, real=True)
    xc = sfft.irfft(np.conj(sfft.rfft(l, n_fft)) * sfft.rfft(r, n_fft), n_fft)
    # lags -(n-1) .. n-1; entry at lag k is sum_t l[t] r[t + k]
    xc = np.concatenate([xc[n_fft - (n - 1):], xc[:n]]) / (n * rl * rr)
    lags = np.arange(-(n - 1), n)
    if max_lag is not None:
        keep = np.abs(lags) <= max_lag
        xc, lags = xc[keep], lags[keep]
    k = int(np.argmax(xc))
    shift = 0.0
    if 0 < k < len(xc) - 1:
        y0, y1, y2 = xc[k - 1], xc[k], xc[k + 1]
        denom = y0 - 2 * y1 + y2
        if denom != 0:
            shift = 0.5 * (y0 - y2) / denom
    itd = (lags[k] + shift) / left.sample_rate
    ild = 20.0 * math.log10(rl / rr)
    return itd, ild


def hrir_itd_ild(hrir: HrirPair):
    """Cue estimate taken directly on an HRIR pair."""
    return estimate_itd_ild(
        Waveform(hrir.left.taps, hrir.sample_rate), Waveform(hrir.right.taps, hrir.sample_rate)
    )


def synth_hrir_set(
    array: SpeakerArray,
    head: HeadModel | None = None,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    ir_len: int = 256,
) -> list[HrirPair]:
    return [synth_hrir(p, head, sample_rate, ir_len) for p in array.positions]


# HRIR set file layout (little-endian):
#   magic b"BLHRIR\0\0", u16 version, u32 sample_rate, u32 ir_len, u32 count,
#   u32 meta_len, meta_len bytes of UTF-8 JSON,
#   count x 3 float64 positions (x, y, z metres),
#   count x 2 x ir_len float32 taps (speaker-major, left then right).
HRIR_MAGIC = b"BLHRIR\0\0"
HRIR_VERSION = 1


def save_hrir_set(path, hrirs: list[HrirPair], meta: dict | None = None):
    if not hrirs:
        raise ValueError("empty HRIR set")
    rate = hrirs[0].sample_rate
    ir_len = len(hrirs[0].left)
    for h in hrirs:
        if h.sample_rate != rate or len(h.left) != ir_len:
            raise ValueError("all HRIR pairs in a set must share sample rate and length")
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [
        HRIR_MAGIC,
        struct.pack("<HIIII", HRIR_VERSION, rate, ir_len, len(hrirs), len(meta_bytes)),
        meta_bytes,
        np.array([h.position.as_array() for h in hrirs], dtype="<f8").tobytes(),
        np.array([[h.left.taps, h.right.taps] for h in hrirs], dtype="<f4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_hrir_set(path) -> tuple[list[HrirPair], dict]:
    data = Path(path).read_bytes()
    if data[:8] != HRIR_MAGIC:
        raise ValueError(f"{path}: not a binloc HRIR set file (bad magic)")
    version, rate, ir_len, count, meta_len = struct.unpack_from("<HIIII", data, 8)
    if version != HRIR_VERSION:
        raise ValueError(f"{path}: unsupported HRIR set version {version}")
    pos = 8 + struct.calcsize("<HIIII")
    meta = json.loads(data[pos:pos + meta_len].decode())
    pos += meta_len
    expected = pos + count * 3 * 8 + count * 2 * ir_len * 4
    if len(data) != expected:
        raise ValueError(f"{path}: HRIR set is {len(data)} bytes, expected {expected}")
    xyz = np.frombuffer(data, dtype="<f8", count=count * 3, offset=pos).reshape(count, 3)
    pos += count * 3 * 8
    taps = np.frombuffer(data, dtype="<f4", count=count * 2 * ir_len, offset=pos)
    taps = taps.reshape(count, 2, ir_len).astype(np.float64)
    hrirs = [
        HrirPair(ImpulseResponse(t[0], rate), ImpulseResponse(t[1], rate), Position.from_array(p))
        for p, t in zip(xyz, taps)
    ]
    return hrirs, meta
