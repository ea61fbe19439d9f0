"""YAML run configuration with strict key checking and line-numbered errors."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """A configuration value or key is invalid; the message names key and line."""


# section -> key -> default (None means "no default, optional")
SCHEMA = {
    "audio": {"sample_rate": 44100, "segment_len": 8192},
    "layout": {"radius": 1.8, "elevations": [0.0, 30.0, 60.0, 90.0]},
    "head": {"radius": 0.0875, "speed_of_sound": 343.0, "ir_len": 256},
    "dataset": {
        "sources": [
            {"synthetic": {"count": 8, "kinds": ["white", "pink"], "segments": 4,
                           "prefix": "train", "seed": 1}},
            {"synthetic": {"count": 4, "kinds": ["white", "pink"], "segments": 4,
                           "prefix": "test", "seed": 2}},
        ],
        "test_source_ids": ["test-*"],
        "subsample": {"train": 1.0, "test": 1.0},
        "validation_fraction": 0.125,
        "seed": 0,
    },
    "model": {"profile": "desk", "type": "hybrid"},
    "train": {
        "lr": 1e-3, "batch_size": 128, "max_epochs": 100, "lr_factor": 0.5, "lr_patience": 5,
        "lr_floor": 1e-5, "seed": 0, "early_stop_patience": None, "micro_batch": 32,
    },
    "paths": {
        "root": None, "hrir": "hrir.bin", "train_set": "train.bin", "test_set": "test.bin",
        "model": "model.bin", "history": "history.csv", "report": "report",
        "comparison": "comparison",
    },
}

SOURCE_KEYS = {
    "synthetic": {"count", "kinds", "segments", "prefix", "seed"},
    "wav": None,
}
MODEL_TYPES = ("hybrid", "benchmark")


def _line(node) -> int:
    return node.start_mark.line + 1


class _Locator:
    """Maps dotted key paths to 1-based line numbers in the source text."""

    def __init__(self, root_node):
        self.lines = {}
        if root_node is not None:
            self._walk(root_node, "")

    def _walk(self, node, prefix):
        self.lines[prefix] = _line(node)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                self.lines[path] = _line(k)
                self._walk(v, path)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, f"{prefix}[{i}]")

    def get(self, path) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path.rsplit(".", 1)[0] if "." in path else ""
        return None


@dataclass
class RunConfig:
    data: dict
    source: str = "<defaults>"

    def __getitem__(self, section):
        return self.data[section]

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        """Short digest of the resolved configuration (after overrides)."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]

    def root(self, env_root: str | None = None) -> Path:
        r = self.data["paths"]["root"] or env_root or "."
        return Path(r)

    def path(self, key: str, env_root: str | None = None) -> Path:
        p = Path(self.data["paths"][key])
        return p if p.is_absolute() else self.root(env_root) / p


def default_config() -> RunConfig:
    return RunConfig(copy.deepcopy(SCHEMA))


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    loc = _Locator(node)

    def fail(path, msg):
        line = loc.get(path)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {path}: {msg}")

    raw = raw if raw is not None else {}
    if not isinstance(raw, dict):
        fail("", "top level must be a mapping of sections")
    data = copy.deepcopy(SCHEMA)
    for section, body in raw.items():
        if section not in SCHEMA:
            fail(str(section), f"unknown section (expected one of {sorted(SCHEMA)})")
        if body is None:
            continue
        if not isinstance(body, dict):
            fail(section, "section must be a mapping")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                fail(f"{section}.{key}", f"unknown key (expected one of {sorted(SCHEMA[section])})")
            data[section][key] = value
    _validate(data, fail)
    return RunConfig(data, source)


def _number(fail, path, value, kind=float, lo=None, hi=None, lo_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        fail(path, f"expected a number, got {value!r}")
    if kind is int and int(value) != value:
        fail(path, f"expected an integer, got {value!r}")
    if lo is not None and (value <= lo if lo_open else value < lo):
        fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {value!r}")
    if hi is not None and value > hi:
        fail(path, f"must be <= {hi}, got {value!r}")
    return kind(value)


def _validate(d, fail):
    a = d["audio"]
    a["sample_rate"] = _number(fail, "audio.sample_rate", a["sample_rate"], int, 1)
    a["segment_len"] = _number(fail, "audio.segment_len", a["segment_len"], int, 1)

    lay = d["layout"]
    lay["radius"] = _number(fail, "layout.radius", lay["radius"], float, 0, lo_open=True)
    els = lay["elevations"]
    if not isinstance(els, list) or len(els) != 4:
        fail("layout.elevations", f"expected a list of 4 level elevations, got {els!r}")
    lay["elevations"] = [_number(fail, f"layout.elevations[{i}]", e, float, -90, 90)
                         for i, e in enumerate(els)]

    h = d["head"]
    h["radius"] = _number(fail, "head.radius", h["radius"], float, 0.05, 0.15)
    h["speed_of_sound"] = _number(fail, "head.speed_of_sound", h["speed_of_sound"], float, 300, 360)
    h["ir_len"] = _number(fail, "head.ir_len", h["ir_len"], int, 1)

    ds = d["dataset"]
    if not isinstance(ds["sources"], list) or not ds["sources"]:
        fail("dataset.sources", "expected a non-empty list of source entries")
    for i, entry in enumerate(ds["sources"]):
        p = f"dataset.sources[{i}]"
        if not isinstance(entry, dict) or len(entry) != 1 and "wav" not in entry:
            fail(p, "each source entry is {synthetic: {...}} or {wav: path, id: name}")
        if "synthetic" in entry:
            if len(entry) != 1:
                fail(p, "a synthetic entry takes no sibling keys")
            body = entry["synthetic"] or {}
            extra = set(body) - SOURCE_KEYS["synthetic"]
            if extra:
                fail(f"{p}.synthetic.{sorted(extra)[0]}",
                     f"unknown key (expected one of {sorted(SOURCE_KEYS['synthetic'])})")
            merged = {"count": 1, "kinds": ["white"], "segments": 4, "prefix": "syn", "seed": 0,
                      **body}
            merged["count"] = _number(fail, f"{p}.synthetic.count", merged["count"], int, 1)
            merged["segments"] = _number(fail, f"{p}.synthetic.segments", merged["segments"], int, 1)
            merged["seed"] = _number(fail, f"{p}.synthetic.seed", merged["seed"], int, 0)
            if not isinstance(merged["kinds"], list) or not merged["kinds"]:
                fail(f"{p}.synthetic.kinds", "expected a non-empty list")
            entry["synthetic"] = merged
        elif "wav" in entry:
            extra = set(entry) - {"wav", "id"}
            if extra:
                fail(f"{p}.{sorted(extra)[0]}", "unknown key (expected 'wav' and optional 'id')")
        else:
            fail(p, f"unknown source type {next(iter(entry))!r}")
    if not isinstance(ds["test_source_ids"], list):
        fail("dataset.test_source_ids", "expected a list of ids or glob patterns")
    sub = ds["subsample"]
    if not isinstance(sub, dict) or set(sub) - {"train", "test"}:
        fail("dataset.subsample", "expected a mapping with keys 'train' and/or 'test'")
    ds["subsample"] = {k: _number(fail, f"dataset.subsample.{k}", sub.get(k, 1.0), float, 0, 1,
                                  lo_open=True) for k in ("train", "test")}
    ds["validation_fraction"] = _number(fail, "dataset.validation_fraction",
                                        ds["validation_fraction"], float, 0, 0.9, lo_open=True)
    ds["seed"] = _number(fail, "dataset.seed", ds["seed"], int, 0)

    m = d["model"]
    if m["profile"] not in ("paper", "desk"):
        fail("model.profile", f"expected 'paper' or 'desk', got {m['profile']!r}")
    if m["type"] not in MODEL_TYPES:
        fail("model.type", f"expected one of {MODEL_TYPES}, got {m['type']!r}")

    t = d["train"]
    t["lr"] = _number(fail, "train.lr", t["lr"], float, 0, lo_open=True)
    t["lr_factor"] = _number(fail, "train.lr_factor", t["lr_factor"], float, 0, 1, lo_open=True)
    t["lr_floor"] = _number(fail, "train.lr_floor", t["lr_floor"], float, 0)
    for k in ("batch_size", "max_epochs", "lr_patience", "micro_batch"):
        t[k] = _number(fail, f"train.{k}", t[k], int, 1)
    t["seed"] = _number(fail, "train.seed", t["seed"], int, 0)
    if t["early_stop_patience"] is not None:
        t["early_stop_patience"] = _number(fail, "train.early_stop_patience",
                                           t["early_stop_patience"], int, 1)

    for k, v in d["paths"].items():
        if v is not None and not isinstance(v, str):
            fail(f"paths.{k}", f"expected a path string, got {v!r}")


def with_overrides(cfg: RunConfig, seed=None, profile=None) -> RunConfig:
    """Copy of ``cfg`` with command-line overrides applied."""
    data = copy.deepcopy(cfg.data)
    if seed is not None:
        data["dataset"]["seed"] = seed
        data["train"]["seed"] = seed
    if profile is not None:
        data["model"]["profile"] = profile
    return RunConfig(data, cfg.source)
