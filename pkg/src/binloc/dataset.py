"""Labelled binaural examples rendered from mono sources over the speaker array."""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .dsp import DEFAULT_SAMPLE_RATE, Spectrogram, Waveform, generate_sweep, stft_array
from .models import STFT_HOP, STFT_WINDOW, HybridModelConfig, validate_shapes
from .spatial import (
    HeadModel,
    LayoutConfig,
    Position,
    SpeakerArray,
    render_binaural,
    synth_hrir,
)

NORMALIZE_PEAK = 0.9
SOURCE_KINDS = ("white", "pink", "multitone", "sweep")


@dataclass(frozen=True)
class SourceClip:
    id: str
    mono: Waveform


@dataclass(eq=False)
class BinauralExample:
    """One fixed-length two-ear segment with its ground-truth direction."""

    left: np.ndarray
    right: np.ndarray
    target: Position
    source_id: str
    segment_index: int
    speaker: int
    sample_rate: int = DEFAULT_SAMPLE_RATE
    window_len: int = STFT_WINDOW
    hop: int = STFT_HOP

    def __post_init__(self):
        if self.left.shape != self.right.shape or self.left.ndim != 1:
            raise ValueError("left and right windows must be 1-D and of equal length")

    @property
    def key(self) -> tuple:
        return (self.source_id, self.segment_index, self.target)

    @cached_property
    def spec_left(self) -> Spectrogram:
        return Spectrogram(stft_array(self.left.astype(np.float64), self.window_len, self.hop),
                           self.window_len, self.hop, self.sample_rate)

    @cached_property
    def spec_right(self) -> Spectrogram:
        return Spectrogram(stft_array(self.right.astype(np.float64), self.window_len, self.hop),
                           self.window_len, self.hop, self.sample_rate)

    def mono_equivalent(self) -> Waveform:
        return Waveform((self.left.astype(np.float64) + self.right) / 2, self.sample_rate)


@dataclass
class DatasetManifest:
    examples: list
    layout: SpeakerArray
    segment_len: int
    sample_rate: int = DEFAULT_SAMPLE_RATE
    split: str = "all"
    excluded_source_ids: frozenset = frozenset()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.excluded_source_ids = frozenset(self.excluded_source_ids)
        self.check_contamination()

    def __len__(self):
        return len(self.examples)

    def source_ids(self) -> list[str]:
        return sorted({e.source_id for e in self.examples})

    def check_contamination(self):
        leaked = self.excluded_source_ids.intersection(e.source_id for e in self.examples)
        if leaked:
            raise ValueError(
                f"{self.split} split contains excluded source ids {sorted(leaked)}")

    def fingerprint(self) -> str:
        """Stable digest of the example identities (not the audio)."""
        import hashlib

        h = hashlib.sha256()
        for e in self.examples:
            h.update(f"{e.source_id}|{e.segment_index}|{e.speaker}".encode())
        return h.hexdigest()[:16]

    def arrays(self):
        """``(waves (N, 2, L) float32, targets (N, 3), speakers (N,) 1-based)``."""
        waves = np.stack([np.stack([e.left, e.right]) for e in self.examples]).astype(np.float32)
        targets = np.array([e.target.as_array() for e in self.examples])
        speakers = np.array([e.speaker for e in self.examples])
        return waves, targets, speakers


def check_disjoint(train: DatasetManifest, test: DatasetManifest):
    """Raise if any source id occurs in both manifests."""
    shared = set(train.source_ids()) & set(test.source_ids())
    if shared:
        raise ValueError(f"train and test share source ids {sorted(shared)}")


def make_source(kind: str, n_samples: int, sample_rate: int = DEFAULT_SAMPLE_RATE,
                rng: np.random.Generator | None = None) -> Waveform:
    """Synthetic mono source with peak amplitude 0.5.

    ``white`` and ``pink`` are Gaussian noises, ``multitone`` sums 40 tones at
    random log-spaced frequencies between 100 Hz and 16 kHz, and ``sweep`` is
    an exponential sweep over a random sub-band spanning the clip.
    """
    rng = rng or np.random.default_rng()
    if kind == "white":
        x = rng.standard_normal(n_samples)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n_samples))
        f = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
        spec[1:] /= np.sqrt(f[1:] / f[1])
        spec[0] = 0
        x = np.fft.irfft(spec, n_samples)
    elif kind == "multitone":
        t = np.arange(n_samples) / sample_rate
        freqs = np.exp(rng.uniform(np.log(100.0), np.log(16000.0), 40))
        phases = rng.uniform(0, 2 * np.pi, 40)
        x = np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None]).sum(axis=0)
    elif kind == "sweep":
        f0 = float(np.exp(rng.uniform(np.log(50.0), np.log(500.0))))
        f1 = float(np.exp(rng.uniform(np.log(8000.0), np.log(18000.0))))
        x = generate_sweep(f0, f1, n_samples / sample_rate, sample_rate).samples[:n_samples]
        x = np.pad(x, (0, n_samples - x.shape[0]))
    else:
        raise ValueError(f"unknown synthetic source kind {kind!r}; choose from {SOURCE_KINDS}")
    peak = np.max(np.abs(x))
    return Waveform(0.5 * x / peak if peak > 0 else x, sample_rate)


def synthetic_sources(count: int, n_samples: int, sample_rate: int = DEFAULT_SAMPLE_RATE,
                      seed: int = 0, kinds=SOURCE_KINDS, prefix: str = "syn") -> list[SourceClip]:
    """``count`` clips cycling through ``kinds``; ids are ``{prefix}-{i:03d}-{kind}``."""
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        clips.append(SourceClip(f"{prefix}-{i:03d}-{kind}", make_source(kind, n_samples,
                                                                        sample_rate, rng)))
    return clips


def normalize_pair(left: np.ndarray, right: np.ndarray, peak: float = NORMALIZE_PEAK):
    """Scale both channels by one shared factor so the larger peak equals ``peak``."""
    top = max(np.max(np.abs(left)), np.max(np.abs(right)))
    if top == 0:
        return left, right
    scale = peak / top
    return left * scale, right * scale


def _render_direction(source: SourceClip, speaker: int, hrir, segment_len, layout_pos,
                      window_len, hop):
    left, right = render_binaural(source.mono, hrir)
    l, r = normalize_pair(left.samples, right.samples)
    count = l.shape[0] // segment_len
    out = []
    for k in range(count):
        sl = slice(k * segment_len, (k + 1) * segment_len)
        out.append(BinauralExample(
            l[sl].astype(np.float32), r[sl].astype(np.float32), layout_pos, source.id, k,
            speaker, source.mono.sample_rate, window_len, hop))
    return out


def build_dataset(
    sources: list[SourceClip],
    array: SpeakerArray,
    head: HeadModel | None = None,
    segment_len: int = 8192,
    ir_len: int = 256,
    model_config=None,
    window_len: int = STFT_WINDOW,
    hop: int = STFT_HOP,
    jobs: int = 1,
) -> DatasetManifest:
    """Render every source from every speaker and cut non-overlapping segments.

    Examples are ordered by source id, then speaker index, then segment
    index, regardless of ``jobs``.
    """
    head = head or HeadModel()
    validate_shapes(model_config or HybridModelConfig.from_profile("paper"), segment_len,
                    window_len, hop)
    if not sources:
        raise ValueError("build_dataset needs at least one source")
    ids = [s.id for s in sources]
    if len(set(ids)) != len(ids):
        raise ValueError("source ids must be unique")
    rate = sources[0].mono.sample_rate
    for s in sources:
        if s.mono.sample_rate != rate:
            raise ValueError(f"source {s.id} is at {s.mono.sample_rate} Hz, expected {rate} Hz")
        if len(s.mono) + ir_len - 1 < segment_len:
            raise ValueError(f"source {s.id} renders to fewer than {segment_len} samples "
                             f"(one segment)")
    hrirs = [synth_hrir(p, head, rate, ir_len) for p in array.positions]
    tasks = [(src, k + 1, hrirs[k], segment_len, array.positions[k], window_len, hop)
             for src in sorted(sources, key=lambda s: s.id) for k in range(len(array))]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(lambda t: _render_direction(*t), tasks))
    else:
        chunks = [_render_direction(*t) for t in tasks]
    examples = [e for chunk in chunks for e in chunk]
    meta = {"head_radius": head.radius, "speed_of_sound": head.speed_of_sound, "ir_len": ir_len,
            "window_len": window_len, "hop": hop}
    return DatasetManifest(examples, array, segment_len, rate, "all", frozenset(), meta)


def source_length_for_segments(n_segments: int, segment_len: int = 8192, ir_len: int = 256) -> int:
    """Mono length whose rendering yields exactly ``n_segments`` segments."""
    return n_segments * segment_len - ir_len + 1


def split_by_source(manifest: DatasetManifest, test_source_ids) -> tuple:
    """Partition by source id into ``(train, test)`` manifests."""
    test_ids = frozenset(test_source_ids)
    known = set(manifest.source_ids())
    unknown = test_ids - known
    if unknown:
        raise ValueError(f"unknown test source ids {sorted(unknown)}")
    train_ids = frozenset(known - test_ids)
    train = replace(manifest, examples=[e for e in manifest.examples if e.source_id not in test_ids],
                    split="train", excluded_source_ids=test_ids | manifest.excluded_source_ids)
    test = replace(manifest, examples=[e for e in manifest.examples if e.source_id in test_ids],
                   split="test", excluded_source_ids=train_ids | manifest.excluded_source_ids)
    return train, test


def subsample(manifest: DatasetManifest, fraction: float, seed: int = 0) -> DatasetManifest:
    """Uniform selection of ``round(fraction * N)`` examples, order preserved."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(manifest)
    k = int(np.floor(fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=k, replace=False))
    return replace(manifest, examples=[manifest.examples[i] for i in keep])


def split_validation(manifest: DatasetManifest, fraction: float, seed: int = 0) -> tuple:
    """Random example-level hold-out for learning-rate scheduling and checkpointing."""
    n = len(manifest)
    k = int(np.floor(fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    val_idx = set(rng.choice(n, size=k, replace=False).tolist())
    fit = [e for i, e in enumerate(manifest.examples) if i not in val_idx]
    val = [e for i, e in enumerate(manifest.examples) if i in val_idx]
    return replace(manifest, examples=fit), replace(manifest, examples=val, split="validation")


# Dataset file layout (little-endian):
#   magic b"BLDATA\0\0", u16 version, u32 sample_rate, u32 segment_len,
#   24 x 3 float64 layout positions, u32 meta_len + UTF-8 JSON (split,
#   excluded source ids, layout config, levels, free-form metadata),
#   u32 example count, then per example:
#   u16 id_len + id bytes, u32 segment_index, 3 float64 target,
#   segment_len float32 left, segment_len float32 right.
DATA_MAGIC = b"BLDATA\0\0"
DATA_VERSION = 1


def save_dataset(manifest: DatasetManifest, path):
    meta = {
        "split": manifest.split,
        "excluded_source_ids": sorted(manifest.excluded_source_ids),
        "layout": {"radius": manifest.layout.config.radius,
                   "elevations": list(manifest.layout.config.elevations)},
        "levels": list(manifest.layout.levels),
        "meta": manifest.meta,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [
        DATA_MAGIC,
        struct.pack("<HII", DATA_VERSION, manifest.sample_rate, manifest.segment_len),
        manifest.layout.as_array().astype("<f8").tobytes(),
        struct.pack("<I", len(blob)), blob,
        struct.pack("<I", len(manifest.examples)),
    ]
    for e in manifest.examples:
        sid = e.source_id.encode()
        parts.append(struct.pack("<H", len(sid)) + sid)
        parts.append(struct.pack("<I3d", e.segment_index, *e.target.as_array()))
        parts.append(e.left.astype("<f4").tobytes())
        parts.append(e.right.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_dataset(path) -> DatasetManifest:
    """Read a dataset file; spectrograms are recomputed lazily from the audio."""
    data = Path(path).read_bytes()
    if data[:8] != DATA_MAGIC:
        raise ValueError(f"{path}: not a binloc dataset file (bad magic, expected BLDATA)")
    try:
        version, rate, seg = struct.unpack_from("<HII", data, 8)
        if version != DATA_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version} "
                             f"(this build reads version {DATA_VERSION})")
        pos = 8 + struct.calcsize("<HII")
        xyz = np.frombuffer(data, "<f8", 72, pos).reshape(24, 3)
        pos += 72 * 8
        (mlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        meta = json.loads(data[pos:pos + mlen].decode())
        pos += mlen
        layout = SpeakerArray(tuple(Position.from_array(p) for p in xyz), tuple(meta["levels"]),
                              LayoutConfig(meta["layout"]["radius"],
                                           tuple(meta["layout"]["elevations"])))
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        inner = meta.get("meta", {})
        window_len = inner.get("window_len", STFT_WINDOW)
        hop = inner.get("hop", STFT_HOP)
        examples = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            sid = data[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            idx, x, y, z = struct.unpack_from("<I3d", data, pos)
            pos += struct.calcsize("<I3d")
            left = np.frombuffer(data, "<f4", seg, pos).astype(np.float32)
            pos += 4 * seg
            right = np.frombuffer(data, "<f4", seg, pos).astype(np.float32)
            pos += 4 * seg
            target = Position(x, y, z)
            examples.append(BinauralExample(left, right, target, sid, idx,
                                            layout.index_of(target), rate, window_len, hop))
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: truncated or malformed dataset file ({exc})") from None
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes after the last example")
    return DatasetManifest(examples, layout, seg, rate, meta["split"],
                           frozenset(meta["excluded_source_ids"]), inner)
