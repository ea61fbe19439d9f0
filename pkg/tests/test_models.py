import numpy as np
import pytest

from binloc.models import (
    BenchmarkModelConfig,
    HybridModel,
    HybridModelConfig,
    ShapeValidationError,
    build_benchmark,
    build_hybrid,
    load_model,
    minimal_segment_len,
    predict_benchmark,
    save_model,
    spectrogram_features,
    validate_shapes,
)
from binloc.nn import LayerSpec, grad_check
from binloc.nn.optim import AdamState
from binloc.spatial import speaker_positions


def shape_oracle(L, window=256, hop=64):
    """Hand arithmetic for the full-width hybrid: valid convs, floor pools."""
    bins, frames = window // 2 + 1, 1 + (L - window) // hop
    h, w = bins - 3, frames - 3          # conv 4x4
    h, w = h // 3, w // 3                # pool 3x3
    h, w = h - 4, w - 4                  # conv 5x5
    h, w = h // 3 // 3, w // 3 // 3      # two pools 3x3
    h, w = h - 3, w - 3                  # conv 4x4
    t = (L - 62 - 58 - 57) // 10
    return (h, w), t * 96


def small_hybrid_config():
    spec = (LayerSpec("conv2d", (3, 3), 2), LayerSpec("relu"), LayerSpec("maxpool2d", (2, 2)),
            LayerSpec("flatten"))
    wave = (LayerSpec("conv1d", (9,), 3), LayerSpec("tanh"), LayerSpec("maxpool1d", (4,)),
            LayerSpec("flatten"))
    head = (LayerSpec("dense", channels=6), LayerSpec("tanh"), LayerSpec("dense", channels=3))
    return HybridModelConfig(spec, wave, head, "paper")


class JoinedInput:
    """Adapts a two-input hybrid to the single-input grad_check protocol."""

    def __init__(self, model, spec):
        self.model, self.spec = model, spec

    def parameters(self):
        return self.model.parameters()

    def forward(self, wave):
        return self.model.forward(wave, self.spec)

    def backward(self, dy):
        self.model.backward(dy)
        return None


# -- shape validation --------------------------------------------------------------

def test_full_size_trace_at_8192():
    trace = validate_shapes(HybridModelConfig.from_profile("paper"), 8192)
    by_block = {}
    for t in trace:
        by_block.setdefault(t.block, []).append(t)
    spec = [t.shape_out for t in by_block["spectrogram"]]
    assert spec[0] == (2, 129, 125)
    assert [s[1:] for s in spec if len(s) == 3][1:] == [
        (126, 122), (126, 122), (42, 40), (38, 36), (38, 36), (12, 12), (4, 4), (1, 1), (1, 1)]
    assert spec[-2] == (40, 1, 1) and spec[-1] == (40,)
    wave = [t.shape_out for t in by_block["waveform"]]
    assert [s[1] for s in wave if len(s) == 2] == [8130, 8130, 8072, 8072, 8015, 8015, 801]
    assert wave[-1] == (76896,)
    head = [t.shape_out for t in by_block["hybrid"]]
    assert head[0] == (76936,)
    assert [s[0] for s in head[1:]] == [1024, 1024, 128, 128, 3]
    assert shape_oracle(8192) == ((1, 1), 76896)


def test_rejects_4096_at_final_spectrogram_conv():
    with pytest.raises(ShapeValidationError) as info:
        validate_shapes(HybridModelConfig.from_profile("paper"), 4096)
    err = info.value
    assert err.block == "spectrogram" and err.layer == "conv2d 4x4 40ch"
    assert "conv2d 4x4 40ch" in err.format_trace()
    assert shape_oracle(4096)[0][1] < 1


def test_minimal_segment_len():
    n = minimal_segment_len()
    validate_shapes(HybridModelConfig.from_profile("paper"), n)
    with pytest.raises(ShapeValidationError):
        validate_shapes(HybridModelConfig.from_profile("paper"), n - 1)
    assert shape_oracle(n)[0] == (1, 1) and shape_oracle(n - 1)[0][1] == 0


def test_desk_profile_widths():
    cfg = HybridModelConfig.from_profile("desk")
    assert [s.channels for s in cfg.waveform if s.kind == "conv1d"] == [19, 23, 24]
    assert [s.channels for s in cfg.spectrogram if s.kind == "conv2d"] == [6, 6, 10]
    assert [s.channels for s in cfg.head if s.kind == "dense"] == [256, 64, 3]


def test_benchmark_trace():
    trace = validate_shapes(BenchmarkModelConfig(), 8192)
    assert trace[0].shape_out == (16, 7681)
    assert trace[1].shape_out == (32, 7681)
    assert trace[-1].shape_out == (24,)


def test_unknown_profile():
    with pytest.raises(ValueError, match="unknown scale profile"):
        build_hybrid("laptop")


# -- hybrid behaviour ---------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_batch():
    rng = np.random.default_rng(3)
    wave = (0.3 * rng.standard_normal((3, 2, 8192))).astype(np.float32)
    return wave, spectrogram_features(wave)


def test_hybrid_output_and_determinism(desk_batch):
    wave, spec = desk_batch
    a = build_hybrid("desk", seed=5).forward(wave, spec)
    b = build_hybrid("desk", seed=5).forward(wave, spec)
    assert a.shape == (3, 3)
    np.testing.assert_array_equal(a, b)
    c = build_hybrid("desk", seed=6).forward(wave, spec)
    assert not np.array_equal(a, c)


def test_hybrid_batch_order_invariant(desk_batch):
    wave, spec = desk_batch
    m = build_hybrid("desk", seed=1)
    y = m.forward(wave, spec)
    perm = [2, 0, 1]
    np.testing.assert_allclose(m.forward(wave[perm], spec[perm]), y[perm], rtol=1e-5, atol=1e-6)
    single = m.forward(wave[:1], spec[:1])
    np.testing.assert_allclose(single, y[:1], rtol=1e-5, atol=1e-6)


def test_zeroed_final_layer_predicts_origin(desk_batch):
    wave, spec = desk_batch
    m = build_hybrid("desk", seed=0)
    last = m.head.layers[-1]
    last.w.value[:] = 0
    last.b.value[:] = 0
    np.testing.assert_array_equal(m.forward(wave, spec), 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_hybrid_end_to_end_gradients(seed):
    L, window, hop = 200, 32, 16
    model = HybridModel(small_hybrid_config(), L, seed=seed, dtype=np.float64, window_len=window,
                        hop=hop)
    rng = np.random.default_rng(seed)
    wave = rng.standard_normal((2, 2, L))
    spec = spectrogram_features(wave, window, hop).astype(np.float64)
    assert grad_check(JoinedInput(model, spec), wave, probes=10, seed=seed) < 1e-4


# -- benchmark ---------------------------------------------------------------------

def test_benchmark_uniform_logits_pick_first_speaker(desk_batch):
    wave, _ = desk_batch
    arr = speaker_positions()
    m = build_benchmark("desk", arr, seed=0)
    final = [l for l in m.trunk.layers if l.spec.kind == "dense"][-1]
    final.w.value[:] = 0
    final.b.value[:] = 0
    probs = m.forward(wave)
    np.testing.assert_allclose(probs, 1 / 24, rtol=1e-6)
    assert np.all(m.predict_classes(wave) == 0)
    np.testing.assert_allclose(m.predict_positions(wave), np.tile(arr.as_array()[0], (3, 1)))


def test_benchmark_ears_share_weights(desk_batch):
    wave, _ = desk_batch
    m = build_benchmark("desk", speaker_positions(), seed=0)
    feats = m.ear.forward(wave.reshape(-1, 1, 8192)).reshape(3, 2, -1)
    swapped = m.ear.forward(wave[:, ::-1].reshape(-1, 1, 8192)).reshape(3, 2, -1)
    np.testing.assert_array_equal(swapped[:, 0], feats[:, 1])
    np.testing.assert_array_equal(swapped[:, 1], feats[:, 0])


def test_benchmark_class_count_must_match_array():
    with pytest.raises(ValueError, match="24 speakers"):
        build_benchmark(BenchmarkModelConfig(n_classes=10), speaker_positions())


def test_predict_benchmark_returns_speaker_position():
    from binloc.dataset import BinauralExample

    arr = speaker_positions()
    m = build_benchmark("desk", arr, seed=0)
    rng = np.random.default_rng(0)
    ex = BinauralExample(rng.standard_normal(8192), rng.standard_normal(8192),
                         arr.position(3), "s", 0, 3)
    p = predict_benchmark(m, ex)
    assert arr.index_of(p) in range(1, 25)


# -- checkpoints -----------------------------------------------------------------------

def test_hybrid_checkpoint_round_trip(tmp_path, desk_batch):
    wave, spec = desk_batch
    m = build_hybrid("desk", seed=2)
    state = AdamState.for_params([p.value for p in m.parameters()])
    state.t = 7
    state.m[0][:] = 0.25
    save_model(tmp_path / "m.bin", m, state, {"note": "x"})
    m2, adam, header = load_model(tmp_path / "m.bin")
    assert header["meta"] == {"note": "x"} and adam.t == 7
    np.testing.assert_array_equal(adam.m[0], state.m[0])
    np.testing.assert_array_equal(m2.forward(wave, spec), m.forward(wave, spec))


def test_benchmark_checkpoint_round_trip(tmp_path, desk_batch):
    wave, _ = desk_batch
    m = build_benchmark("desk", speaker_positions(), seed=4)
    save_model(tmp_path / "b.bin", m)
    m2, adam, _ = load_model(tmp_path / "b.bin")
    assert adam is None
    np.testing.assert_array_equal(m2.forward(wave), m.forward(wave))


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"garbage" * 10)
    with pytest.raises(ValueError, match="bad magic"):
        load_model(tmp_path / "x")
