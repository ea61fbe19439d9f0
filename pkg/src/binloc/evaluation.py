"""Evaluation reports: overall, per-speaker, per-frequency-band and per-azimuth errors."""

from __future__ import annotations

import copy
import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import Waveform, dominant_frequency
from .models import spectrogram_features
from .spatial import SpeakerArray, to_spherical
from .training import angular_errors, euclidean_errors

BAND_WIDTH_HZ = 1000.0
N_BANDS = 20
THETA_BIN_DEG = 10.0
N_SAMPLES = 10

# full-scale figures from a measured-HRIR setup, kept as context rows
REFERENCE_ROWS = (
    {"model": "reference:hybrid", "mean_angular_deg": 0.24, "mean_euclidean_m": 0.01},
    {"model": "reference:benchmark", "mean_angular_deg": 19.07, "mean_euclidean_m": 1.08},
)


def _mean_or_none(values):
    return float(np.mean(values)) if len(values) else None


@dataclass
class EvalReport:
    mean_angular: float
    mean_euclidean: float
    n: int
    per_speaker: list
    per_speaker_count: list
    per_band: list
    per_band_count: list
    per_theta: list
    per_theta_count: list
    samples: list
    test_fingerprint: str = ""
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(**d)


def horizontal_errors(pred, target) -> np.ndarray:
    """Angle (deg) between azimuth-plane projections; NaN where either projection vanishes."""
    p = np.asarray(pred, dtype=np.float64)[:, :2]
    t = np.asarray(target, dtype=np.float64)[:, :2]
    pn = np.linalg.norm(p, axis=1)
    tn = np.linalg.norm(t, axis=1)
    ok = (pn > 1e-9) & (tn > 1e-9)
    cos = np.full(len(p), np.nan)
    cos[ok] = np.sum(p[ok] * t[ok], axis=1) / (pn[ok] * tn[ok])
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def band_index(freq_hz: float) -> int:
    """1-kHz band of ``freq_hz``; everything at or above 19 kHz lands in the last band."""
    return min(int(freq_hz // BAND_WIDTH_HZ), N_BANDS - 1)


def _predict_chunk(model, w):
    spec = spectrogram_features(w) if model.needs_spectrogram else None
    return model.predict_positions(w, spec)


def predict_all(model, waves, chunk: int = 32, jobs: int = 1) -> np.ndarray:
    """Predicted positions for every example, in input order.

    With ``jobs > 1`` chunks are spread over threads, each holding its own
    copy of the model (layers keep per-call caches); results are gathered in
    chunk order, so the output does not depend on ``jobs``.
    """
    starts = range(0, len(waves), chunk)
    if jobs <= 1:
        return np.concatenate([_predict_chunk(model, waves[s:s + chunk]) for s in starts], axis=0)
    copies = [copy.deepcopy(model) for _ in range(jobs)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(lambda i_s: _predict_chunk(copies[i_s[0] % jobs],
                                                         waves[i_s[1]:i_s[1] + chunk]),
                              enumerate(starts)))
    return np.concatenate(parts, axis=0)


class OraclePredictor:
    """Returns the true target of every example; used to self-test the metric path."""

    kind = "oracle"

    def __init__(self, targets):
        self.targets = np.asarray(targets, dtype=np.float64)


def evaluate(model, test_set, array: SpeakerArray | None = None, predictions=None,
             seed: int = 0, jobs: int = 1) -> EvalReport:
    """Score ``model`` (or precomputed ``predictions``) on ``test_set``.

    Pass ``OraclePredictor`` as the model to score the ground truth itself.
    """
    if len(test_set) == 0:
        raise ValueError("evaluate needs a non-empty test set")
    array = array or test_set.layout
    waves, targets, speakers = test_set.arrays()
    if predictions is None:
        if isinstance(model, OraclePredictor):
            predictions = model.targets
        else:
            predictions = predict_all(model, waves, jobs=jobs)
    predictions = np.asarray(predictions, dtype=np.float64)
    return report_from_predictions(predictions, targets, speakers, waves, test_set, array, seed)


def report_from_predictions(pred, targets, speakers, waves, test_set, array, seed=0):
    ang = angular_errors(pred, targets)
    euc = euclidean_errors(pred, targets)
    hor = horizontal_errors(pred, targets)

    per_speaker = [ang[speakers == k] for k in range(1, len(array) + 1)]

    rate = test_set.sample_rate
    bands = np.array([band_index(dominant_frequency(Waveform(w.mean(axis=0).astype(np.float64),
                                                             rate))) for w in waves])
    per_band = [ang[bands == b] for b in range(N_BANDS)]

    az = np.array([to_spherical(array.position(int(k))).azimuth for k in speakers])
    theta_bins = np.minimum((az // THETA_BIN_DEG).astype(int), int(360 / THETA_BIN_DEG) - 1)
    n_theta = int(360 / THETA_BIN_DEG)
    valid = ~np.isnan(hor)
    per_theta = [hor[(theta_bins == b) & valid] for b in range(n_theta)]

    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(pred), size=min(N_SAMPLES, len(pred)), replace=False))
    samples = [{
        "index": int(i), "source_id": test_set.examples[i].source_id,
        "speaker": int(speakers[i]), "target": targets[i].tolist(),
        "prediction": pred[i].tolist(), "angular_deg": float(ang[i]),
        "target_azimuth": float(to_spherical(array.position(int(speakers[i]))).azimuth),
        "predicted_azimuth": _azimuth_or_none(pred[i]),
    } for i in pick]

    meta = {
        "band_edges_hz": [b * BAND_WIDTH_HZ for b in range(N_BANDS + 1)],
        "band_note": "the last band also holds dominant frequencies >= 20 kHz",
        "theta_bin_deg": THETA_BIN_DEG,
        "theta_note": "bins by target azimuth; targets with no horizontal projection excluded",
        "layout": {"radius": array.config.radius, "elevations": list(array.config.elevations)},
        "n_horizontal_excluded": int((~valid).sum()),
    }
    return EvalReport(
        mean_angular=float(ang.mean()), mean_euclidean=float(euc.mean()), n=int(len(pred)),
        per_speaker=[_mean_or_none(g) for g in per_speaker],
        per_speaker_count=[len(g) for g in per_speaker],
        per_band=[_mean_or_none(g) for g in per_band],
        per_band_count=[len(g) for g in per_band],
        per_theta=[_mean_or_none(g) for g in per_theta],
        per_theta_count=[len(g) for g in per_theta],
        samples=samples, test_fingerprint=test_set.fingerprint(), metadata=meta,
    )


def _azimuth_or_none(v):
    if math.hypot(v[0], v[1]) < 1e-9:
        return None
    return float(math.degrees(math.atan2(-v[1], v[0])) % 360.0)


def write_report(report: EvalReport, out_dir, extra_meta: dict | None = None,
                 comment: str | None = None):
    """Write ``report.json`` plus one CSV per breakdown into ``out_dir``.

    ``comment``, if given, becomes a leading ``#`` line of every CSV.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    if extra_meta:
        d["metadata"] = {**d["metadata"], **extra_meta}
    (out / "report.json").write_text(json.dumps(d, indent=2, sort_keys=True))
    _write_csv(out / "per_speaker.csv", ("speaker", "mean_angular_deg", "count"),
               [(k + 1, v, c) for k, (v, c) in
                enumerate(zip(report.per_speaker, report.per_speaker_count))], comment)
    _write_csv(out / "per_band.csv", ("band_low_hz", "band_high_hz", "mean_angular_deg", "count"),
               [(b * BAND_WIDTH_HZ, (b + 1) * BAND_WIDTH_HZ, v, c) for b, (v, c) in
                enumerate(zip(report.per_band, report.per_band_count))], comment)
    _write_csv(out / "per_theta.csv", ("theta_low_deg", "theta_high_deg", "mean_horizontal_deg",
                                       "count"),
               [(b * THETA_BIN_DEG, (b + 1) * THETA_BIN_DEG, v, c) for b, (v, c) in
                enumerate(zip(report.per_theta, report.per_theta_count))], comment)
    _write_csv(out / "samples.csv", ("index", "source_id", "speaker", "target_azimuth",
                                     "predicted_azimuth", "angular_deg"),
               [(s["index"], s["source_id"], s["speaker"], s["target_azimuth"],
                 s["predicted_azimuth"], s["angular_deg"]) for s in report.samples], comment)


def load_report(path) -> EvalReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return EvalReport.from_dict(json.loads(path.read_text()))


def _write_csv(path, header, rows, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])


@dataclass
class Comparison:
    rows: list
    per_theta: dict
    theta_bin_deg: float = THETA_BIN_DEG

    def to_csv(self, path, comment=None):
        _write_csv(path, ("model", "mean_angular_deg", "mean_euclidean_m", "n"),
                   [(r["model"], r["mean_angular_deg"], r["mean_euclidean_m"], r.get("n"))
                    for r in self.rows], comment)

    def to_json(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    def theta_csv(self, path, comment=None):
        names = list(self.per_theta)
        n_bins = len(next(iter(self.per_theta.values())))
        _write_csv(path, ["theta_low_deg"] + names,
                   [[b * self.theta_bin_deg] + [self.per_theta[n][b] for n in names]
                    for b in range(n_bins)], comment)


def compare(reports: dict, include_reference: bool = True) -> Comparison:
    """Side-by-side table of mean angular and Euclidean errors.

    All reports must come from the same test set (matching fingerprints).
    """
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    prints = {name: r.test_fingerprint for name, r in reports.items()}
    if len(set(prints.values())) != 1:
        raise ValueError(f"reports were computed on different test sets: {prints}")
    rows = [{"model": name, "mean_angular_deg": r.mean_angular,
             "mean_euclidean_m": r.mean_euclidean, "n": r.n} for name, r in reports.items()]
    if include_reference:
        rows += [dict(r, n=None) for r in REFERENCE_ROWS]
    return Comparison(rows, {name: r.per_theta for name, r in reports.items()})
