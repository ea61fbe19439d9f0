"""``binloc`` command-line interface.

Exit codes: 0 success, 2 configuration or input error, 3 shape error,
4 numeric failure (non-finite values, failed physics verification).
"""

from __future__ import annotations

import argparse
import fnmatch
import logging
import os
import sys
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_SHAPE, EXIT_NUMERIC = 0, 2, 3, 4
DATA_DIR_ENV = "BINLOC_DATA_DIR"
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("binloc")


class InputError(ValueError):
    """Upstream artifacts are missing or do not fit together."""


def _cap_threads(jobs: int):
    # must run before numpy is first imported to take effect
    for var in THREAD_VARS:
        os.environ.setdefault(var, str(max(1, jobs)))


def _stamp(cfg) -> dict:
    return {"tool": "binloc", "version": __version__, "config_hash": cfg.hash()}


def _comment(cfg) -> str:
    return f"binloc {__version__} config {cfg.hash()}"


def _env_root():
    return os.environ.get(DATA_DIR_ENV)


def _out_path(cfg, explicit, key) -> Path:
    p = Path(explicit) if explicit else cfg.path(key, _env_root())
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _in_path(cfg, explicit, key) -> Path:
    p = Path(explicit) if explicit else cfg.path(key, _env_root())
    if not p.exists():
        raise InputError(f"{p} does not exist (run the upstream command first)")
    return p


def _array(cfg):
    from .spatial import LayoutConfig, speaker_positions

    lay = cfg["layout"]
    return speaker_positions(LayoutConfig(lay["radius"], tuple(lay["elevations"])))


def _head(cfg):
    from .spatial import HeadModel

    return HeadModel(cfg["head"]["radius"], cfg["head"]["speed_of_sound"])


# -- synth-hrir ---------------------------------------------------------------

def cmd_synth_hrir(cfg, args) -> int:
    from .spatial import hrir_itd_ild, save_hrir_set, synth_hrir_set, to_spherical, woodworth_itd

    rate = cfg["audio"]["sample_rate"]
    array, head = _array(cfg), _head(cfg)
    hrirs = synth_hrir_set(array, head, rate, cfg["head"]["ir_len"])
    out = _out_path(cfg, args.out, "hrir")
    save_hrir_set(out, hrirs, {**_stamp(cfg), "head": cfg["head"], "layout": cfg["layout"]})
    print(f"wrote {len(hrirs)} HRIR pairs to {out}")
    if not args.verify:
        return EXIT_OK
    failures = 0
    print(f"{'spk':>3} {'az':>6} {'el':>5} {'itd_est':>8} {'itd_ref':>8}  (samples)")
    for k, (p, h) in enumerate(zip(array.positions, hrirs), start=1):
        est, _ = hrir_itd_ild(h)
        ref = woodworth_itd(p, head)
        ok = abs(est - ref) * rate <= 1.0
        failures += not ok
        s = to_spherical(p)
        print(f"{k:>3} {s.azimuth:6.1f} {s.elevation:5.1f} {est * rate:8.2f} {ref * rate:8.2f}  "
              f"{'PASS' if ok else 'FAIL'}")
    print(f"woodworth check: {len(hrirs) - failures}/{len(hrirs)} within 1 sample")
    return EXIT_OK if failures == 0 else EXIT_NUMERIC


# -- build-dataset --------------------------------------------------------------

def _sources(cfg):
    from .dataset import SourceClip, source_length_for_segments, synthetic_sources
    from .wav import read_wav
    from .dsp import Waveform

    rate = cfg["audio"]["sample_rate"]
    seg = cfg["audio"]["segment_len"]
    ir_len = cfg["head"]["ir_len"]
    clips = []
    for entry in cfg["dataset"]["sources"]:
        if "synthetic" in entry:
            s = entry["synthetic"]
            n = source_length_for_segments(s["segments"], seg, ir_len)
            clips += synthetic_sources(s["count"], n, rate, s["seed"], tuple(s["kinds"]),
                                       s["prefix"])
        else:
            path = Path(entry["wav"])
            if not path.is_absolute() and _env_root():
                path = Path(_env_root()) / path
            chans = read_wav(path)
            if chans[0].sample_rate != rate:
                raise InputError(f"{path} is at {chans[0].sample_rate} Hz, config says {rate} Hz")
            mono = sum(c.samples for c in chans) / len(chans)
            clips.append(SourceClip(str(entry.get("id") or path.stem), Waveform(mono, rate)))
    return clips


def _resolve_test_ids(patterns, ids):
    chosen = set()
    for pat in patterns:
        hits = fnmatch.filter(ids, str(pat))
        if not hits:
            raise InputError(f"dataset.test_source_ids: {pat!r} matches no source id")
        chosen.update(hits)
    return sorted(chosen)


def cmd_build_dataset(cfg, args) -> int:
    from .dataset import build_dataset, save_dataset, split_by_source, subsample
    from .models import HybridModelConfig

    clips = _sources(cfg)
    test_ids = _resolve_test_ids(cfg["dataset"]["test_source_ids"], [c.id for c in clips])
    full = build_dataset(clips, _array(cfg), _head(cfg), cfg["audio"]["segment_len"],
                         cfg["head"]["ir_len"],
                         HybridModelConfig.from_profile(cfg["model"]["profile"]), jobs=args.jobs)
    train_set, test_set = split_by_source(full, test_ids)
    seed = cfg["dataset"]["seed"]
    frac = cfg["dataset"]["subsample"]
    if frac["train"] < 1 and len(train_set):
        train_set = subsample(train_set, frac["train"], seed)
    if frac["test"] < 1 and len(test_set):
        test_set = subsample(test_set, frac["test"], seed + 1)
    for m in (train_set, test_set):
        m.meta.update(_stamp(cfg))
    out_dir = Path(args.out) if args.out else None
    paths = {}
    for key, m in (("train_set", train_set), ("test_set", test_set)):
        dest = out_dir / Path(cfg["paths"][key]).name if out_dir else _out_path(cfg, None, key)
        dest.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(m, dest)
        paths[key] = dest
    print(f"wrote {len(train_set)} train examples ({len(train_set.source_ids())} sources) "
          f"to {paths['train_set']}")
    print(f"wrote {len(test_set)} test examples ({len(test_set.source_ids())} sources) "
          f"to {paths['test_set']}")
    return EXIT_OK


# -- train ------------------------------------------------------------------------

def _build_model(cfg, segment_len, array):
    from .models import build_benchmark, build_hybrid

    m = cfg["model"]
    seed = cfg["train"]["seed"]
    if m["type"] == "hybrid":
        return build_hybrid(m["profile"], seed=seed, segment_len=segment_len)
    return build_benchmark(m["profile"], array, seed=seed, segment_len=segment_len)


def cmd_train(cfg, args) -> int:
    from .dataset import load_dataset, split_validation
    from .models import save_model
    from .training import TrainConfig, train, train_config_dict, write_history

    data = load_dataset(_in_path(cfg, args.dataset, "train_set"))
    if data.segment_len != cfg["audio"]["segment_len"] or \
            data.sample_rate != cfg["audio"]["sample_rate"]:
        raise InputError(f"dataset has segment_len {data.segment_len} at {data.sample_rate} Hz; "
                         f"config expects {cfg['audio']['segment_len']} at "
                         f"{cfg['audio']['sample_rate']} Hz")
    fit, val = split_validation(data, cfg["dataset"]["validation_fraction"], cfg["dataset"]["seed"])
    model = _build_model(cfg, data.segment_len, data.layout)
    tcfg = TrainConfig(**cfg["train"])
    hist_path = _out_path(cfg, args.history, "history")
    try:
        res = train(model, fit, val, tcfg)
    except FloatingPointError as exc:
        history = getattr(exc, "history", [])
        if history:
            write_history(history, hist_path, _comment(cfg) + " (diverged)")
        raise
    out = _out_path(cfg, args.out, "model")
    meta = {**_stamp(cfg), "sample_rate": data.sample_rate, "train": train_config_dict(tcfg),
            "best_epoch": res.best_epoch, "train_fingerprint": data.fingerprint()}
    save_model(out, model, res.optimizer.state, meta)
    write_history(res.history, hist_path, _comment(cfg))
    best = res.history[res.best_epoch - 1]
    print(f"trained {model.kind} for {len(res.history)} epochs; best epoch {res.best_epoch} "
          f"(val angular {best['val_angular']:.2f} deg, euclidean {best['val_euclidean']:.3f} m)")
    print(f"wrote model to {out} and history to {hist_path}")
    return EXIT_OK


# -- eval -------------------------------------------------------------------------

def cmd_eval(cfg, args) -> int:
    from .dataset import load_dataset
    from .evaluation import OraclePredictor, evaluate, write_report
    from .models import load_model

    test_set = load_dataset(_in_path(cfg, args.dataset, "test_set"))
    if len(test_set) == 0:
        raise InputError("the test set is empty")
    extra = dict(_stamp(cfg))
    if args.oracle:
        model = OraclePredictor(test_set.arrays()[1])
        extra["model"] = "oracle"
    else:
        model_path = _in_path(cfg, args.model, "model")
        model, _, header = load_model(model_path)
        rate = header.get("meta", {}).get("sample_rate")
        if header["segment_len"] != test_set.segment_len or \
                (rate is not None and rate != test_set.sample_rate):
            raise InputError(
                f"model expects segment_len {header['segment_len']} at {rate} Hz but the "
                f"dataset has {test_set.segment_len} at {test_set.sample_rate} Hz")
        extra.update(model=model.kind, model_path=str(model_path),
                     model_config_hash=header.get("meta", {}).get("config_hash"))
    report = evaluate(model, test_set, seed=cfg["dataset"]["seed"], jobs=args.jobs)
    out = Path(args.out) if args.out else cfg.path("report", _env_root())
    write_report(report, out, extra, _comment(cfg))
    print(f"{extra['model']}: mean angular {report.mean_angular:.3f} deg, "
          f"mean euclidean {report.mean_euclidean:.4f} m over {report.n} examples")
    print(f"wrote report to {out}")
    return EXIT_OK


# -- compare ----------------------------------------------------------------------

def cmd_compare(cfg, args) -> int:
    import json

    from .evaluation import compare, load_report

    if not args.reports:
        raise InputError("compare needs --reports NAME=DIR [NAME=DIR ...]")
    reports = {}
    for item in args.reports:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).name, item
        reports[name] = load_report(_in_existing(path))
    cmp = compare(reports)
    out = Path(args.out) if args.out else cfg.path("comparison", _env_root())
    out.mkdir(parents=True, exist_ok=True)
    cmp.to_csv(out / "comparison.csv", _comment(cfg))
    cmp.theta_csv(out / "per_theta.csv", _comment(cfg))
    cmp.to_json(out / "comparison.json")
    doc = json.loads((out / "comparison.json").read_text())
    doc["metadata"] = _stamp(cfg)
    (out / "comparison.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    width = max(len(r["model"]) for r in cmp.rows)
    print(f"{'model':<{width}}  {'angular_deg':>11}  {'euclidean_m':>11}")
    for r in cmp.rows:
        print(f"{r['model']:<{width}}  {r['mean_angular_deg']:11.2f}  {r['mean_euclidean_m']:11.3f}")
    print(f"wrote comparison to {out}")
    return EXIT_OK


def _in_existing(path) -> Path:
    p = Path(path)
    if not p.is_absolute() and not p.exists() and _env_root():
        p = Path(_env_root()) / p
    if not p.exists():
        raise InputError(f"{p} does not exist")
    return p


COMMANDS = {
    "synth-hrir": cmd_synth_hrir,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binloc", description="Binaural source localisation pipeline.")
    parser.add_argument("--version", action="version", version=f"binloc {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults used if omitted)")
    common.add_argument("--seed", type=int, help="override dataset and training seeds")
    common.add_argument("--jobs", type=int, default=1, help="worker thread cap (default 1)")
    common.add_argument("--profile", choices=("paper", "desk"), help="override model.profile")
    common.add_argument("--out", help="output file or directory (default from paths.*)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-hrir", parents=[common], help="write the HRIR set of the array")
    p.add_argument("--verify", action="store_true", help="check ITDs against the Woodworth model")
    sub.add_parser("build-dataset", parents=[common], help="render and split the dataset")
    p = sub.add_parser("train", parents=[common], help="train the configured model")
    p.add_argument("--dataset", help="training dataset file (default paths.train_set)")
    p.add_argument("--history", help="history CSV (default paths.history)")
    p = sub.add_parser("eval", parents=[common], help="evaluate a model on the test set")
    p.add_argument("--model", help="model checkpoint (default paths.model)")
    p.add_argument("--dataset", help="test dataset file (default paths.test_set)")
    p.add_argument("--oracle", action="store_true",
                   help="score the ground truth itself to self-test the metrics")
    p = sub.add_parser("compare", parents=[common], help="tabulate several reports")
    p.add_argument("--reports", nargs="+", metavar="NAME=DIR", help="report directories")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("binloc: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    _cap_threads(args.jobs)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")

    from .config import ConfigError, default_config, load_config, with_overrides
    from .models import ShapeValidationError
    from .nn import ShapeError

    try:
        cfg = load_config(args.config) if args.config else default_config()
        cfg = with_overrides(cfg, args.seed, args.profile)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"binloc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ShapeValidationError as exc:
        print(f"binloc: shape error: {exc}\n{exc.format_trace()}", file=sys.stderr)
        return EXIT_SHAPE
    except ShapeError as exc:
        print(f"binloc: shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except FloatingPointError as exc:
        print(f"binloc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"binloc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
