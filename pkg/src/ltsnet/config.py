"""Experiment configuration: INI sections flattened to dotted keys.

A config file looks like::

    [run]
    profile = semi
    seed = 3

    [student]
    d_z = 4

and ``--student.d_z=4`` on the command line addresses the same key. Values
are parsed as JSON when possible (``[64, 64]``, ``true``, ``0.5``) and fall
back to bare strings. Precedence, lowest first: built-in defaults, the
selected profile, the file, command-line overrides.
"""

from __future__ import annotations

import configparser
import io
import json
from dataclasses import dataclass, fields

from .replay import TrainConfig
from .student import StudentConfig
from .teacher import TeacherConfig


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


# Student/Teacher fields derived from the data and the task count.
_DERIVED = {"student": {"input_shape", "n_classes", "k_max", "mode"}, "teacher": {"data_shape", "k_max"}}


def _dataclass_defaults(cls, section: str) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in _DERIVED.get(section, ()):
            continue
        value = f.default
        out[f"{section}.{f.name}"] = list(value) if isinstance(value, tuple) else value
    return out


DEFAULTS: dict = {
    "run.profile": "",
    "run.mode": "supervised",
    "run.seed": 0,
    "run.output_dir": "",
    "data.source": "glyph",
    "data.manifest": "",
    "data.task_order": [],
    "data.task_count": 2,
    "data.classes_per_task": 5,
    "data.samples_per_class": 200,
    "data.size": 8,
    "data.noise": 0.05,
    "data.components": 3,
    "data.dim": 2,
    "data.separation": 4.0,
    "data.n": 600,
    "data.pad32": False,
    **_dataclass_defaults(StudentConfig, "student"),
    **_dataclass_defaults(TeacherConfig, "teacher"),
    **_dataclass_defaults(TrainConfig, "train"),
    "eval.samples_per_datum": 64,
    "eval.checkpoint": "",
    "traverse.index": 0,
    "traverse.task": 1,
    "traverse.lo": -2.0,
    "traverse.hi": 2.0,
    "traverse.steps": 10,
    "interpolate.index_a": 0,
    "interpolate.index_b": 0,
    "interpolate.task_a": 1,
    "interpolate.task_b": 2,
    "interpolate.steps": 10,
    "bounds.n_theorem1": 200,
    "bounds.n_theorem2": 100,
    "bounds.n_tasks": 3,
}
DEFAULTS["student.arch"] = "mlp"

PROFILES: dict[str, dict] = {
    "supervised": {"run.mode": "supervised", "student.beta1": 1.0, "student.beta2": 0.01, "student.beta3": 0.01},
    "semi": {"run.mode": "semi", "student.a": 1.0, "train.labeled_per_class": 20,
             "student.beta1": 1.0, "student.beta2": 0.01, "student.beta3": 0.01},
    "unsupervised": {"run.mode": "unsupervised", "student.beta1": 1.0, "student.beta2": 0.01},
    "disentangle": {"run.mode": "supervised", "student.beta1": 4.0, "student.beta2": 1.0, "student.beta3": 1.0},
}

NULLABLE = {"train.train_teacher"}
SOURCES = ("glyph", "gaussian", "manifest")


def parse_value(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if value is None:
        if key in NULLABLE:
            return None
        raise ConfigError(f"{key} may not be null", key)
    if key in NULLABLE or isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}", key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"{key} expects an integer, got {value!r}", key)
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}", key)
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} expects a list, got {value!r}", key)
        return value
    if not isinstance(value, str):
        return str(value)
    return value


def read_config_text(text: str, origin: str = "<config>") -> dict:
    parser = configparser.ConfigParser(interpolation=None, default_section="\0none")
    parser.optionxform = str
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    flat = {}
    for section in parser.sections():
        for name, raw in parser.items(section):
            flat[f"{section}.{name}"] = parse_value(raw)
    return flat


def read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            return read_config_text(fh.read(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def parse_overrides(args) -> dict:
    """``--key=value`` strings to a flat dict."""
    out = {}
    for arg in args:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(f"override {arg!r} is not of the form --section.key=value")
        key, raw = arg[2:].split("=", 1)
        out[key] = parse_value(raw)
    return out


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    @property
    def mode(self) -> str:
        return self.values["run.mode"]

    @property
    def seed(self) -> int:
        return self.values["run.seed"]

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for key in sorted(self.values):
            section, name = key.split(".", 1)
            if not parser.has_section(section):
                parser.add_section(section)
            value = self.values[key]
            verbatim = isinstance(value, str) and parse_value(value) == value
            parser.set(section, name, value if verbatim else json.dumps(value))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def student_config(self, input_shape, n_classes: int, k_max: int) -> StudentConfig:
        return _build(StudentConfig, self.section("student"), "student",
                      input_shape=tuple(input_shape), n_classes=n_classes, k_max=k_max, mode=self.mode)

    def teacher_config(self, data_shape, k_max: int) -> TeacherConfig:
        return _build(TeacherConfig, self.section("teacher"), "teacher", data_shape=tuple(data_shape), k_max=k_max)

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, self.section("train"), "train")


def _build(cls, values: dict, section: str, **fixed):
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
    kwargs.update(fixed)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _validate(values: dict) -> None:
    if values["run.mode"] not in ("supervised", "semi", "unsupervised"):
        raise ConfigError(f"run.mode must be supervised, semi or unsupervised; got {values['run.mode']!r}",
                          "run.mode")
    if values["data.source"] not in SOURCES:
        raise ConfigError(f"data.source must be one of {SOURCES}; got {values['data.source']!r}", "data.source")
    if values["data.source"] == "manifest" and not values["data.manifest"]:
        raise ConfigError("data.source = manifest requires data.manifest", "data.manifest")
    for key in ("data.task_count", "data.classes_per_task", "data.samples_per_class", "data.size",
                "data.components", "data.dim", "data.n", "eval.samples_per_datum", "traverse.steps",
                "interpolate.steps", "bounds.n_theorem1", "bounds.n_theorem2", "bounds.n_tasks"):
        if values[key] < 1:
            raise ConfigError(f"{key} must be >= 1", key)
    if values["data.noise"] < 0:
        raise ConfigError("data.noise must be nonnegative", "data.noise")
    if any(not isinstance(i, int) or i < 1 for i in values["data.task_order"]):
        raise ConfigError("data.task_order lists 1-based task indices", "data.task_order")


def resolve_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge defaults, profile, file and overrides; reject unknown keys and bad values."""
    file_values = dict(file_values or {})
    overrides = dict(overrides or {})
    for key in list(file_values) + list(overrides):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}", key)
    explicit = {**file_values, **overrides}
    profile = explicit.get("run.profile") or ""
    if profile and profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}", "run.profile")
    if not profile:
        profile = explicit.get("run.mode", "supervised")
        profile = profile if profile in PROFILES else "supervised"
    merged = {**DEFAULTS, **PROFILES[profile], **explicit, "run.profile": profile}
    values = {k: _coerce(k, v) for k, v in merged.items()}
    _validate(values)
    cfg = ExperimentConfig(values)
    # build each model config once with placeholder shapes so range errors surface before any work starts
    cfg.train_config()
    cfg.teacher_config((1,), 1)
    cfg.student_config((8, 8, 1), 2, 1)
    return cfg


def load_config(path=None, override_args=()) -> ExperimentConfig:
    file_values = read_config_file(path) if path else {}
    return resolve_config(file_values, parse_overrides(override_args))
