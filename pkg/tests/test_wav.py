import struct
import wave

import numpy as np
import pytest

from binloc.dsp import Waveform
from binloc.wav import WavFormatError, read_wav, write_wav


def test_float32_round_trip(tmp_path, rng):
    a = Waveform(rng.uniform(-1, 1, 500), 48000)
    b = Waveform(rng.uniform(-1, 1, 500), 48000)
    write_wav(tmp_path / "x.wav", [a, b])
    got = read_wav(tmp_path / "x.wav")
    assert len(got) == 2 and got[0].sample_rate == 48000
    np.testing.assert_allclose(got[0].samples, a.samples.astype(np.float32))
    np.testing.assert_allclose(got[1].samples, b.samples.astype(np.float32))


def test_pcm16_matches_stdlib_reader(tmp_path, rng):
    x = rng.uniform(-0.9, 0.9, 301)
    write_wav(tmp_path / "p.wav", Waveform(x, 22050), fmt="pcm16")
    with wave.open(str(tmp_path / "p.wav")) as fh:
        assert fh.getnchannels() == 1 and fh.getframerate() == 22050 and fh.getsampwidth() == 2
        ref = np.frombuffer(fh.readframes(fh.getnframes()), "<i2") / 32768.0
    got = read_wav(tmp_path / "p.wav")[0].samples
    np.testing.assert_array_equal(got, ref)
    assert np.max(np.abs(got - x)) <= 1 / 32768


def test_reads_stdlib_written_stereo(tmp_path):
    ints = np.array([[0, 100], [-32768, 32767], [5, -5]], dtype="<i2")
    with wave.open(str(tmp_path / "s.wav"), "wb") as fh:
        fh.setnchannels(2)
        fh.setsampwidth(2)
        fh.setframerate(8000)
        fh.writeframes(ints.tobytes())
    left, right = read_wav(tmp_path / "s.wav")
    np.testing.assert_array_equal(left.samples, ints[:, 0] / 32768.0)
    np.testing.assert_array_equal(right.samples, ints[:, 1] / 32768.0)


def test_missing_riff_header(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"JUNKJUNKJUNKJUNK")
    with pytest.raises(WavFormatError, match="RIFF header"):
        read_wav(p)


def test_missing_data_chunk(tmp_path):
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    p = tmp_path / "nodata.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(WavFormatError, match="'data' chunk"):
        read_wav(p)


def test_unsupported_codec(tmp_path):
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 24000, 3, 24)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", 6) + bytes(6)
    p = tmp_path / "s24.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(WavFormatError, match="unsupported codec"):
        read_wav(p)


def test_write_rejects_mismatched_channels(tmp_path):
    with pytest.raises(ValueError, match="sample-rate mismatch"):
        write_wav(tmp_path / "m.wav", [Waveform(np.zeros(4), 8000), Waveform(np.zeros(4), 16000)])
    with pytest.raises(ValueError, match="same length"):
        write_wav(tmp_path / "m.wav", [Waveform(np.zeros(4), 8000), Waveform(np.zeros(5), 8000)])
