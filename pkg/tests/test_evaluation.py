import json

import numpy as np
import pytest

from binloc.dataset import BinauralExample, DatasetManifest
from binloc.evaluation import (
    N_BANDS,
    OraclePredictor,
    band_index,
    compare,
    evaluate,
    horizontal_errors,
    load_report,
    write_report,
)
from binloc.spatial import speaker_positions
from binloc.training import angular_errors

SR = 44100
ARRAY = speaker_positions()
L = 1024


def tone_manifest(freqs_by_speaker, source="s"):
    t = np.arange(L) / SR
    ex = []
    for k, (speaker, f) in enumerate(freqs_by_speaker):
        x = np.sin(2 * np.pi * f * t).astype(np.float32)
        ex.append(BinauralExample(x, 0.5 * x, ARRAY.position(speaker), source, k, speaker,
                                  SR, 256, 64))
    return DatasetManifest(ex, ARRAY, L, SR, "test")


@pytest.fixture(scope="module")
def all_speakers():
    return tone_manifest([(s, 500.0 + 800.0 * (s % 20)) for s in range(1, 25)])


def test_oracle_predictor_reports_zero(all_speakers):
    waves, targets, _ = all_speakers.arrays()
    rep = evaluate(OraclePredictor(targets), all_speakers)
    assert rep.mean_angular <= 0.03 and rep.mean_euclidean == 0.0
    assert all(v is None or v <= 0.03 for v in rep.per_speaker)
    assert rep.per_speaker_count == [1] * 24


def test_north_pole_predictor_on_level_one():
    m = tone_manifest([(s, 1000.0) for s in range(1, 10)])
    pred = np.tile([0.0, 0.0, 1.8], (9, 1))
    rep = evaluate(None, m, predictions=pred)
    assert rep.mean_angular == pytest.approx(90.0, abs=1e-9)
    # every horizontal projection of the prediction vanishes, so no theta bin has data
    assert rep.metadata["n_horizontal_excluded"] == 9
    assert all(v is None for v in rep.per_theta)


def test_uniform_random_predictor_monte_carlo():
    # E[angle] between a uniform random direction and a fixed one is 90 deg
    rng = np.random.default_rng(0)
    n = 10_000
    pred = rng.standard_normal((n, 3))
    targets = np.tile(ARRAY.as_array()[:1], (n, 1))
    mean = angular_errors(pred, targets).mean()
    assert mean == pytest.approx(90.0, abs=2.0)
    # oracle: the angle's density is sin(a)/2 on [0, pi]; its mean is pi/2
    from scipy.integrate import quad

    assert quad(lambda a: a * np.sin(a) / 2, 0, np.pi)[0] == pytest.approx(np.pi / 2, rel=1e-12)


def test_empty_groups_are_none_not_nan():
    m = tone_manifest([(1, 1000.0), (2, 1000.0)])
    waves, targets, _ = m.arrays()
    rep = evaluate(OraclePredictor(targets), m)
    assert rep.per_speaker[5] is None and rep.per_speaker_count[5] == 0
    assert rep.per_band.count(None) == N_BANDS - 1
    text = json.dumps(rep.to_dict())
    assert "NaN" not in text


def test_band_grouping_uses_dominant_frequency():
    m = tone_manifest([(1, 2500.0), (2, 2600.0), (3, 7300.0)])
    waves, targets, _ = m.arrays()
    rep = evaluate(OraclePredictor(targets), m)
    assert rep.per_band_count[2] == 2 and rep.per_band_count[7] == 1
    assert band_index(19500) == 19 and band_index(21000) == 19 and band_index(0) == 0


def test_horizontal_error():
    err = horizontal_errors([[1.0, 1.0, 5.0], [0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert err[0] == pytest.approx(45.0)
    assert np.isnan(err[1])


def test_theta_bins_follow_target_azimuth(all_speakers):
    waves, targets, _ = all_speakers.arrays()
    rep = evaluate(OraclePredictor(targets), all_speakers)
    # level 1 and 2 azimuths 0..320 step 40 and level 3 at 0..288 step 72; speaker 24 excluded
    assert rep.metadata["n_horizontal_excluded"] == 1
    assert rep.per_theta_count[0] == 3      # 0 deg on three levels
    assert rep.per_theta_count[4] == 2      # 40 deg on levels 1 and 2
    assert rep.per_theta_count[7] == 1      # 72 deg on level 3
    assert sum(rep.per_theta_count) == 23


def test_report_files(tmp_path, all_speakers):
    waves, targets, _ = all_speakers.arrays()
    rep = evaluate(OraclePredictor(targets), all_speakers)
    write_report(rep, tmp_path, {"config_hash": "abc"})
    for name in ("report.json", "per_speaker.csv", "per_band.csv", "per_theta.csv", "samples.csv"):
        assert (tmp_path / name).exists()
    got = load_report(tmp_path)
    assert got.mean_angular == rep.mean_angular
    assert got.metadata["config_hash"] == "abc"
    assert len((tmp_path / "per_speaker.csv").read_text().splitlines()) == 25
    assert len(rep.samples) == 10


def test_compare_reflexive_and_reference_rows(tmp_path, all_speakers):
    waves, targets, _ = all_speakers.arrays()
    rep = evaluate(OraclePredictor(targets), all_speakers)
    cmp = compare({"a": rep, "b": rep})
    a, b = cmp.rows[0], cmp.rows[1]
    assert (a["mean_angular_deg"], a["mean_euclidean_m"]) == (b["mean_angular_deg"],
                                                            b["mean_euclidean_m"])
    ref = {r["model"]: r for r in cmp.rows[2:]}
    assert ref["reference:hybrid"]["mean_angular_deg"] == 0.24
    assert ref["reference:benchmark"]["mean_angular_deg"] == 19.07
    cmp.to_csv(tmp_path / "cmp.csv")
    assert len((tmp_path / "cmp.csv").read_text().splitlines()) == 5


def test_compare_rejects_mismatched_test_sets(all_speakers):
    other = tone_manifest([(1, 1000.0)], source="other")
    r1 = evaluate(OraclePredictor(all_speakers.arrays()[1]), all_speakers)
    r2 = evaluate(OraclePredictor(other.arrays()[1]), other)
    with pytest.raises(ValueError, match="different test sets"):
        compare({"a": r1, "b": r2})
    with pytest.raises(ValueError, match="at least two"):
        compare({"a": r1})


def test_evaluate_rejects_empty():
    with pytest.raises(ValueError, match="non-empty"):
        evaluate(None, DatasetManifest([], ARRAY, L, SR))
