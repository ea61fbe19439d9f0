"""Signal-processing primitives: convolution, STFT, sweeps and spectral analysis.

All functions are pure; arrays are never modified in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

DEFAULT_SAMPLE_RATE = 44100
SWEEP_FLOOR_HZ = 20.0


@dataclass(frozen=True)
class Waveform:
    """Sampled mono signal.

    Parameters
    ----------
    samples : array_like
        Real amplitudes, nominally in [-1, 1].
    sample_rate : int
        Sampling rate in Hz.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform samples must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class ImpulseResponse:
    """Finite impulse response of a linear system."""

    taps: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise ValueError("impulse response needs a non-empty 1-D tap array")
        if not np.all(np.isfinite(taps)):
            raise ValueError("impulse response contains non-finite taps")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.taps.shape[0]


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT matrix of shape ``(window_len // 2 + 1, frames)``."""

    values: np.ndarray
    window_len: int
    hop: int
    sample_rate: int

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate / self.window_len

    def log_magnitude(self) -> np.ndarray:
        return np.log1p(np.abs(self.values))


def _check_rates(a: int, b: int, what: str):
    if a != b:
        raise ValueError(f"sample-rate mismatch in {what}: {a} Hz vs {b} Hz")


def fft_convolve(signal: Waveform, kernel: ImpulseResponse) -> Waveform:
    """Full linear convolution computed in the frequency domain.

    The result has ``len(signal) + len(kernel) - 1`` samples.
    """
    _check_rates(signal.sample_rate, kernel.sample_rate, "fft_convolve")
    if len(signal) == 0:
        raise ValueError("cannot convolve an empty signal")
    out = convolve_arrays(signal.samples, kernel.taps)
    return Waveform(out, signal.sample_rate)


def convolve_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full linear convolution of two 1-D arrays via real FFTs."""
    n_out = a.shape[-1] + b.shape[-1] - 1
    n_fft = sfft.next_fast_len(n_out, real=True)
    spec = sfft.rfft(a, n_fft) * sfft.rfft(b, n_fft)
    return sfft.irfft(spec, n_fft)[..., :n_out]


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window; sums to a constant at hop = length / 4."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def n_frames(signal_len: int, window_len: int = 256, hop: int = 64) -> int:
    """Number of full STFT frames that fit in ``signal_len`` samples."""
    if signal_len < window_len:
        return 0
    return (signal_len - window_len) // hop + 1


def stft_array(x: np.ndarray, window_len: int = 256, hop: int = 64) -> np.ndarray:
    """STFT of the last axis of ``x``; returns ``(..., bins, frames)``."""
    if hop < 1:
        raise ValueError(f"hop must be >= 1, got {hop}")
    if x.shape[-1] < window_len:
        raise ValueError(
            f"signal of {x.shape[-1]} samples is shorter than the {window_len}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, window_len, axis=-1)[..., ::hop, :]
    spec = sfft.rfft(frames * hann_window(window_len), axis=-1)
    return np.swapaxes(spec, -1, -2)


def stft(w: Waveform, window_len: int = 256, hop: int = 64) -> Spectrogram:
    """Hann-windowed short-time Fourier transform without padding.

    Bin ``k`` is centred on ``k * sample_rate / window_len`` Hz; the frame
    count is ``floor((len(w) - window_len) / hop) + 1``.
    """
    values = stft_array(w.samples, window_len, hop)
    return Spectrogram(values, window_len, hop, w.sample_rate)


def istft(spec: Spectrogram, length: int | None = None) -> Waveform:
    """Overlap-add resynthesis of an unmodified Hann STFT.

    Frames are inverse transformed (giving windowed frames), summed at their
    hop positions and divided by the summed analysis window. Samples not
    covered by any frame are left at zero.
    """
    frames = sfft.irfft(spec.values.T, spec.window_len, axis=-1)
    total = (spec.n_frames - 1) * spec.hop + spec.window_len
    out = np.zeros(total)
    norm = np.zeros(total)
    win = hann_window(spec.window_len)
    for i, frame in enumerate(frames):
        start = i * spec.hop
        out[start:start + spec.window_len] += frame
        norm[start:start + spec.window_len] += win
    covered = norm > 1e-8
    out[covered] /= norm[covered]
    if length is not None:
        out = np.pad(out, (0, max(0, length - total)))[:length]
    return Waveform(out, spec.sample_rate)


def sweep_instantaneous_frequency(t, f0: float, f1: float, duration: float):
    """Instantaneous frequency in Hz of an exponential sweep at time ``t``."""
    return f0 * np.exp(np.asarray(t) / duration * np.log(f1 / f0))


def generate_sweep(
    f0: float = 0.0,
    f1: float = 20000.0,
    duration: float = 1.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> Waveform:
    """Exponential sine sweep from ``max(f0, 20 Hz)`` to ``f1``.

    A start frequency of 0 Hz cannot be realised by an exponential law, so
    the sweep starts at the 20 Hz floor instead.
    """
    f0_eff = max(float(f0), SWEEP_FLOOR_HZ)
    if f1 > sample_rate / 2:
        raise ValueError(f"sweep end {f1} Hz exceeds the Nyquist frequency {sample_rate / 2} Hz")
    if not 0 < f0_eff < f1:
        raise ValueError(f"need 0 < f0 < f1, got f0={f0_eff} Hz, f1={f1} Hz")
    if duration <= 0:
        raise ValueError("sweep duration must be positive")
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    rate = np.log(f1 / f0_eff)
    phase = 2 * np.pi * f0_eff * duration / rate * (np.exp(t / duration * rate) - 1.0)
    return Waveform(np.sin(phase), sample_rate)


def deconvolve_sweep(
    recorded: Waveform, sweep: Waveform, ir_len: int, eps: float = 1e-8
) -> ImpulseResponse:
    """Recover the impulse response that maps ``sweep`` onto ``recorded``.

    Uses spectral division ``R / S`` where ``|S|^2`` is floored at ``eps``
    times its peak value, which keeps out-of-band bins from blowing up.
    """
    _check_rates(recorded.sample_rate, sweep.sample_rate, "deconvolve_sweep")
    if len(recorded) < len(sweep):
        raise ValueError(
            f"recording ({len(recorded)} samples) is shorter than the sweep ({len(sweep)})"
        )
    if not np.any(sweep.samples):
        raise ValueError("degenerate sweep: all samples are zero")
    if ir_len < 1:
        raise ValueError("ir_len must be >= 1")
    n_fft = sfft.next_fast_len(len(recorded) + len(sweep), real=True)
    rec = sfft.rfft(recorded.samples, n_fft)
    swp = sfft.rfft(sweep.samples, n_fft)
    power = np.abs(swp) ** 2
    power = np.maximum(power, eps * power.max())
    h = sfft.irfft(rec * np.conj(swp) / power, n_fft)
    taps = h[:ir_len]
    if taps.shape[0] < ir_len:
        taps = np.pad(taps, (0, ir_len - taps.shape[0]))
    return ImpulseResponse(taps, recorded.sample_rate)


def dominant_frequency(w: Waveform) -> float:
    """Centre frequency of the largest-magnitude bin of the full-signal DFT.

    Ties resolve to the lower frequency, so silence maps to 0 Hz.
    """
    if len(w) == 0:
        raise ValueError("dominant_frequency needs a non-empty waveform")
    mag = np.abs(sfft.rfft(w.samples))
    return float(np.argmax(mag) * w.sample_rate / len(w))
