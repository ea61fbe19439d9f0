"""Hybrid waveform+spectrogram regressor and the waveform-only benchmark classifier."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dsp import n_frames, stft_array
from .nn import AdamState, LayerSpec, Parameter, Sequential, ShapeError
from .spatial import Position, SpeakerArray

STFT_WINDOW = 256
STFT_HOP = 64
IN_CHANNELS = 2


@dataclass(frozen=True)
class ScaleProfile:
    name: str
    channel_scale: float
    hybrid_dense: tuple
    benchmark_dense: tuple
    segment_len: int = 8192

    def channels(self, c: int) -> int:
        return max(1, int(c * self.channel_scale + 0.5))


PROFILES = {
    "paper": ScaleProfile("paper", 1.0, (1024, 128), (512, 128)),
    "desk": ScaleProfile("desk", 0.25, (256, 64), (128, 32)),
}


def get_profile(name) -> ScaleProfile:
    if isinstance(name, ScaleProfile):
        return name
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown scale profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class HybridModelConfig:
    spectrogram: tuple
    waveform: tuple
    head: tuple
    profile: str = "paper"

    @classmethod
    def from_profile(cls, profile="paper") -> "HybridModelConfig":
        p = get_profile(profile)
        c = p.channels
        spectrogram = (
            LayerSpec("conv2d", (4, 4), c(25)), LayerSpec("relu"),
            LayerSpec("maxpool2d", (3, 3)),
            LayerSpec("conv2d", (5, 5), c(25)), LayerSpec("relu"),
            LayerSpec("maxpool2d", (3, 3)), LayerSpec("maxpool2d", (3, 3)),
            LayerSpec("conv2d", (4, 4), c(40)), LayerSpec("relu"),
            LayerSpec("flatten"),
        )
        waveform = (
            LayerSpec("conv1d", (63,), c(75)), LayerSpec("relu"),
            LayerSpec("conv1d", (59,), c(91)), LayerSpec("tanh"),
            LayerSpec("conv1d", (58,), c(96)), LayerSpec("tanh"),
            LayerSpec("maxpool1d", (10,)),
            LayerSpec("flatten"),
        )
        d1, d2 = p.hybrid_dense
        head = (
            LayerSpec("dense", channels=d1), LayerSpec("relu"),
            LayerSpec("dense", channels=d2), LayerSpec("relu"),
            LayerSpec("dense", channels=3),
        )
        return cls(spectrogram, waveform, head, p.name)


@dataclass(frozen=True)
class BenchmarkModelConfig:
    ear_kernel: int = 512
    ear_channels: int = 16
    merge_kernel: int = 64
    merge_channels: int = 32
    dense: tuple = (512, 128)
    n_classes: int = 24
    profile: str = "paper"

    @classmethod
    def from_profile(cls, profile="paper") -> "BenchmarkModelConfig":
        p = get_profile(profile)
        return cls(ear_channels=p.channels(16), merge_channels=p.channels(32),
                   dense=tuple(p.benchmark_dense), profile=p.name)

    @property
    def ear(self) -> tuple:
        return (LayerSpec("conv1d", (self.ear_kernel,), self.ear_channels),)

    @property
    def trunk(self) -> tuple:
        d1, d2 = self.dense
        return (
            LayerSpec("conv1d", (self.merge_kernel,), self.merge_channels), LayerSpec("relu"),
            LayerSpec("flatten"),
            LayerSpec("dense", channels=d1), LayerSpec("relu"),
            LayerSpec("dense", channels=d2), LayerSpec("relu"),
            LayerSpec("dense", channels=self.n_classes), LayerSpec("softmax"),
        )


@dataclass(frozen=True)
class TraceEntry:
    block: str
    layer: str
    shape_in: tuple
    shape_out: tuple

    def __str__(self):
        fmt = lambda s: "x".join(str(d) for d in s)  # noqa: E731
        return f"{self.block:<12} {self.layer:<18} {fmt(self.shape_in):>14} -> {fmt(self.shape_out)}"


class ShapeValidationError(ShapeError):
    """Raised by :func:`validate_shapes`; carries the trace up to the failure."""

    def __init__(self, message, trace, block, layer):
        super().__init__(message)
        self.trace = trace
        self.block = block
        self.layer = layer

    def format_trace(self) -> str:
        lines = [str(t) for t in self.trace]
        lines.append(f"{self.block:<12} {self.layer:<18} FAILED: {self.args[0]}")
        return "\n".join(lines)


def _walk(block, specs, shape, trace):
    for spec in specs:
        try:
            out = spec.output_shape(shape)
        except ShapeError as exc:
            raise ShapeValidationError(str(exc), list(trace), block, str(spec)) from None
        trace.append(TraceEntry(block, str(spec), tuple(shape), out))
        shape = out
    return shape


def validate_shapes(config, segment_len: int, window_len: int = STFT_WINDOW,
                    hop: int = STFT_HOP) -> list[TraceEntry]:
    """Per-layer dimension trace for ``config`` at input length ``segment_len``.

    Raises :class:`ShapeValidationError` naming the first layer whose output
    would have a non-positive extent.
    """
    trace: list[TraceEntry] = []
    if isinstance(config, BenchmarkModelConfig):
        ear = _walk("ear", config.ear, (1, segment_len), trace)
        merged = (ear[0] * IN_CHANNELS, ear[1])
        trace.append(TraceEntry("merge", "concat", ear, merged))
        _walk("trunk", config.trunk, merged, trace)
        return trace

    frames = n_frames(segment_len, window_len, hop)
    if frames < 1:
        raise ShapeValidationError(
            f"segment of {segment_len} samples holds no {window_len}-sample STFT frame",
            [], "spectrogram", "stft")
    spec_in = (IN_CHANNELS, window_len // 2 + 1, frames)
    trace.append(TraceEntry("spectrogram", f"stft {window_len}/{hop}", (IN_CHANNELS, segment_len),
                            spec_in))
    spec_out = _walk("spectrogram", config.spectrogram, spec_in, trace)
    wave_out = _walk("waveform", config.waveform, (IN_CHANNELS, segment_len), trace)
    if len(spec_out) != 1 or len(wave_out) != 1:
        raise ShapeValidationError("both branches must end flattened", trace, "hybrid", "concat")
    joined = (spec_out[0] + wave_out[0],)
    trace.append(TraceEntry("hybrid", "concat", (spec_out[0], wave_out[0]), joined))
    _walk("hybrid", config.head, joined, trace)
    return trace


def minimal_segment_len(config=None, window_len=STFT_WINDOW, hop=STFT_HOP, upper=1 << 16) -> int:
    """Smallest segment length accepted by :func:`validate_shapes`."""
    config = config or HybridModelConfig.from_profile("paper")
    for n in range(window_len, upper):
        try:
            validate_shapes(config, n, window_len, hop)
            return n
        except ShapeError:
            continue
    raise ValueError("no valid segment length below the search bound")


def spectrogram_features(wave: np.ndarray, window_len=STFT_WINDOW, hop=STFT_HOP) -> np.ndarray:
    """Log-magnitude ``log(1 + |STFT|)`` of each channel: (B, 2, L) -> (B, 2, bins, frames)."""
    return np.log1p(np.abs(stft_array(np.asarray(wave, dtype=np.float64), window_len, hop))).astype(
        np.float32)


class HybridModel:
    """Spectrogram CNN and waveform CNN joined by a dense regression head.

    ``forward`` maps a waveform batch ``(B, 2, L)`` and its log-magnitude
    spectrogram ``(B, 2, 129, frames)`` to Cartesian positions ``(B, 3)``.
    """

    kind = "hybrid"
    needs_spectrogram = True

    def __init__(self, config: HybridModelConfig, segment_len: int, seed: int = 0,
                 dtype=np.float32, window_len=STFT_WINDOW, hop=STFT_HOP):
        self.trace = validate_shapes(config, segment_len, window_len, hop)
        self.config = config
        self.segment_len = segment_len
        self.seed = seed
        self.window_len, self.hop = window_len, hop
        rng = np.random.default_rng(seed)
        spec_in = (IN_CHANNELS, window_len // 2 + 1, n_frames(segment_len, window_len, hop))
        self.spec_branch = Sequential.from_specs(config.spectrogram, spec_in, rng, dtype)
        self.wave_branch = Sequential.from_specs(config.waveform, (IN_CHANNELS, segment_len), rng,
                                                 dtype)
        head_in = (self.trace[-len(config.head) - 1].shape_out[0],)
        self.head = Sequential.from_specs(config.head, head_in, rng, dtype)
        self.spec_branch.set_input_grad(False)
        self.wave_branch.set_input_grad(False)

    def blocks(self):
        return {"spectrogram": self.spec_branch, "waveform": self.wave_branch, "hybrid": self.head}

    def parameters(self) -> list[Parameter]:
        return [p for b in self.blocks().values() for p in b.parameters()]

    def param_counts(self) -> dict:
        return {name: sum(p.size for p in b.parameters()) for name, b in self.blocks().items()}

    def forward(self, wave, spec):
        s = self.spec_branch.forward(np.asarray(spec, dtype=self.dtype))
        w = self.wave_branch.forward(np.asarray(wave, dtype=self.dtype))
        self._split = s.shape[1]
        return self.head.forward(np.concatenate([s, w], axis=1))

    def backward(self, dout):
        d = self.head.backward(np.asarray(dout, dtype=self.dtype))
        self.spec_branch.backward(np.ascontiguousarray(d[:, :self._split]))
        self.wave_branch.backward(np.ascontiguousarray(d[:, self._split:]))

    @property
    def dtype(self):
        return self.head.layers[0].w.value.dtype

    def predict_positions(self, wave, spec) -> np.ndarray:
        return self.forward(wave, spec).astype(np.float64)

    def predict(self, example) -> Position:
        wave = example_waveforms([example])
        return Position.from_array(self.predict_positions(wave, spectrogram_features(wave))[0])


class BenchmarkModel:
    """Waveform-only classifier over the speaker positions.

    One linear conv is shared by both ears, the two feature maps are stacked
    along channels, and a ReLU conv plus dense layers end in a softmax.
    """

    kind = "benchmark"
    needs_spectrogram = False

    def __init__(self, config: BenchmarkModelConfig, array: SpeakerArray, segment_len: int,
                 seed: int = 0, dtype=np.float32):
        if config.n_classes != len(array):
            raise ValueError(
                f"benchmark has {config.n_classes} classes but the array has {len(array)} speakers")
        self.trace = validate_shapes(config, segment_len)
        self.config = config
        self.array = array
        self.segment_len = segment_len
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.ear = Sequential.from_specs(config.ear, (1, segment_len), rng, dtype)
        merged = next(t.shape_out for t in self.trace if t.block == "merge")
        self.trunk = Sequential.from_specs(config.trunk, merged, rng, dtype)
        self.ear.set_input_grad(False)
        self.positions = array.as_array()

    def blocks(self):
        return {"ear": self.ear, "trunk": self.trunk}

    def parameters(self) -> list[Parameter]:
        return self.ear.parameters() + self.trunk.parameters()

    def param_counts(self) -> dict:
        return {name: sum(p.size for p in b.parameters()) for name, b in self.blocks().items()}

    @property
    def dtype(self):
        return self.ear.layers[0].w.value.dtype

    def forward(self, wave, spec=None):
        wave = np.asarray(wave, dtype=self.dtype)
        B, C, L = wave.shape
        e = self.ear.forward(wave.reshape(B * C, 1, L))
        self._ear_shape = e.shape
        return self.trunk.forward(e.reshape(B, C * e.shape[1], e.shape[2]))

    def backward(self, dprobs):
        d = self.trunk.backward(np.asarray(dprobs, dtype=self.dtype))
        self.ear.backward(d.reshape(self._ear_shape))

    def predict_classes(self, wave) -> np.ndarray:
        return np.argmax(self.forward(wave), axis=1)

    def predict_positions(self, wave, spec=None) -> np.ndarray:
        return self.positions[self.predict_classes(wave)]

    def predict(self, example) -> Position:
        return Position.from_array(self.predict_positions(example_waveforms([example]))[0])


def example_waveforms(examples) -> np.ndarray:
    return np.stack([np.stack([e.left, e.right]) for e in examples]).astype(np.float32)


def build_hybrid(config: HybridModelConfig | str = "desk", seed: int = 0,
                 segment_len: int | None = None, dtype=np.float32) -> HybridModel:
    if isinstance(config, str):
        config = HybridModelConfig.from_profile(config)
    segment_len = segment_len or get_profile(config.profile).segment_len
    return HybridModel(config, segment_len, seed, dtype)


def build_benchmark(config: BenchmarkModelConfig | str, array: SpeakerArray, seed: int = 0,
                    segment_len: int | None = None, dtype=np.float32) -> BenchmarkModel:
    if isinstance(config, str):
        config = BenchmarkModelConfig.from_profile(config)
    segment_len = segment_len or get_profile(config.profile).segment_len
    return BenchmarkModel(config, array, segment_len, seed, dtype)


def predict(model, example) -> Position:
    return model.predict(example)


def predict_benchmark(model: BenchmarkModel, example) -> Position:
    return model.predict(example)


# Checkpoint layout (little-endian):
#   magic b"BLMODEL\0", u16 version, u32 header_len, header_len bytes of JSON,
#   then for each parameter in order its values, followed (if present) by the
#   Adam first moments and then second moments, each as raw arrays of the
#   dtype recorded in the header.
CKPT_MAGIC = b"BLMODEL\0"
CKPT_VERSION = 1


def _specs_to_json(specs):
    return [{"kind": s.kind, "size": list(s.size), "channels": s.channels} for s in specs]


def _specs_from_json(items):
    return tuple(LayerSpec(d["kind"], tuple(d["size"]), d["channels"]) for d in items)


def model_header(model) -> dict:
    if model.kind == "hybrid":
        cfg = {
            "spectrogram": _specs_to_json(model.config.spectrogram),
            "waveform": _specs_to_json(model.config.waveform),
            "head": _specs_to_json(model.config.head),
            "profile": model.config.profile,
        }
        extra = {"window_len": model.window_len, "hop": model.hop}
    else:
        cfg = asdict(model.config)
        cfg["dense"] = list(cfg["dense"])
        extra = {
            "array": model.positions.tolist(),
            "levels": list(model.array.levels),
            "layout": {"radius": model.array.config.radius,
                       "elevations": list(model.array.config.elevations)},
        }
    return {"kind": model.kind, "config": cfg, "segment_len": model.segment_len,
            "seed": model.seed, **extra}


def save_model(path, model, adam: AdamState | None = None, meta: dict | None = None):
    params = model.parameters()
    header = model_header(model)
    header["params"] = [{"shape": list(p.shape), "dtype": p.value.dtype.str} for p in params]
    header["adam"] = None if adam is None else {
        "t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps}
    header["meta"] = meta or {}
    blob = json.dumps(header, sort_keys=True).encode()
    chunks = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(blob)), blob]
    le = lambda a: a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()  # noqa: E731
    chunks += [le(p.value) for p in params]
    if adam is not None:
        chunks += [le(m) for m in adam.m] + [le(v) for v in adam.v]
    Path(path).write_bytes(b"".join(chunks))


def load_model(path):
    """Return ``(model, adam_state_or_None, header)`` from a checkpoint file."""
    from .spatial import LayoutConfig  # local: avoids widening the public import surface

    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a binloc model checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<HI", data, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 8 + struct.calcsize("<HI")
    header = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    cfg = header["config"]
    if header["kind"] == "hybrid":
        config = HybridModelConfig(_specs_from_json(cfg["spectrogram"]),
                                   _specs_from_json(cfg["waveform"]),
                                   _specs_from_json(cfg["head"]), cfg["profile"])
        model = HybridModel(config, header["segment_len"], header["seed"],
                            window_len=header["window_len"], hop=header["hop"])
    elif header["kind"] == "benchmark":
        cfg = dict(cfg, dense=tuple(cfg["dense"]))
        config = BenchmarkModelConfig(**cfg)
        layout = LayoutConfig(header["layout"]["radius"], tuple(header["layout"]["elevations"]))
        array = SpeakerArray(tuple(Position.from_array(p) for p in header["array"]),
                             tuple(header["levels"]), layout)
        model = BenchmarkModel(config, array, header["segment_len"], header["seed"])
    else:
        raise ValueError(f"{path}: unknown model kind {header['kind']!r}")

    def take(shape, dtype):
        nonlocal pos
        dt = np.dtype(dtype)
        n = math.prod(shape)
        arr = np.frombuffer(data, dtype=dt, count=n, offset=pos).reshape(shape).copy()
        pos += n * dt.itemsize
        return arr.astype(dt.newbyteorder("="))

    params = model.parameters()
    if len(params) != len(header["params"]):
        raise ValueError(f"{path}: parameter count does not match the recorded architecture")
    for p, desc in zip(params, header["params"]):
        if tuple(desc["shape"]) != p.shape:
            raise ValueError(f"{path}: parameter shape {desc['shape']} != expected {p.shape}")
        p.value = take(desc["shape"], desc["dtype"])
        p.grad = np.zeros_like(p.value)
    adam = None
    if header["adam"] is not None:
        a = header["adam"]
        m = [take(d["shape"], d["dtype"]) for d in header["params"]]
        v = [take(d["shape"], d["dtype"]) for d in header["params"]]
        adam = AdamState(m, v, a["t"], a["beta1"], a["beta2"], a["eps"])
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes after checkpoint payload")
    return model, adam, header
