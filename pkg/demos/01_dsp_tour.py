"""Convolution, STFT round trip and sweep-based impulse response measurement."""
import numpy as np

from binloc.dsp import ImpulseResponse, Waveform, deconvolve_sweep, fft_convolve, generate_sweep
from binloc.dsp import istft, stft

sr = 44100
rng = np.random.default_rng(0)

# fft convolution vs numpy's direct one
x, h = rng.standard_normal(2000), rng.standard_normal(300)
y = fft_convolve(Waveform(x, sr), ImpulseResponse(h, sr)).samples
print("conv max |diff| vs np.convolve:", np.max(np.abs(y - np.convolve(x, h))))

# 256-sample Hann frames, hop 64: 8192 samples -> 129 bins x 125 frames
spec = stft(Waveform(rng.standard_normal(8192), sr))
print("spectrogram shape:", spec.values.shape)

# overlap-add gets the signal back away from the edges
sig = rng.standard_normal(8192)
back = istft(stft(Waveform(sig, sr)), len(sig)).samples
print("istft interior error:", np.max(np.abs(back[256:-256] - sig[256:-256])))

# measure a made-up room: play a sweep through it, deconvolve
sweep = generate_sweep(0, 20000, 1.0, sr)
room = np.zeros(200)
room[[0, 37, 120]] = [1.0, -0.4, 0.15]
recorded = fft_convolve(sweep, ImpulseResponse(room, sr))
est = deconvolve_sweep(recorded, sweep, 200).taps
print("recovered taps at 0/37/120:", np.round(est[[0, 37, 120]], 4))
