"""Flat ``key = value`` experiment configs with a typed default table."""

from __future__ import annotations

from dataclasses import dataclass, field

from .analysis import ProbeConfig
from .autoencoder import TrainConfig
from .datasets import NOISE_KINDS, NoiseSpec
from .regularizers import RegularizerSpec

REQUIRED = object()

TABLE1_MODELS = ("cae", "sosae", "ksparse", "contractive_ksparse", "l1", "l2")
MODEL_KINDS = {
    "cae": "contractive",
    "sosae": "push_contractive",
    "ksparse": "ksparse",
    "contractive_ksparse": "ksparse_contractive",
    "l1": "l1",
    "l2": "l2",
    "dae": "none",
    "plain": "none",
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _positive(v):
    return None if v > 0 else "must be > 0"


def _non_negative(v):
    return None if v >= 0 else "must be >= 0"


def _unit(v):
    return None if 0 <= v <= 1 else "must lie in [0, 1]"


def _unit_open(v):
    return None if 0 <= v < 1 else "must lie in [0, 1)"


def _one_of(options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"
    return check


def _each(check):
    def run(values):
        for v in values:
            problem = check(v)
            if problem:
                return f"every entry {problem}"
        return None
    return run


def _models(values):
    if not values:
        return "must name at least one model"
    bad = [v for v in values if v not in MODEL_KINDS]
    return f"unknown models {bad}; expected any of {sorted(MODEL_KINDS)}" if bad else None


# key: (type, default, check). Types: int, float, bool, str, "ints", "floats", "strs".
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0, _non_negative),
    "output_dir": (str, "out", None),
    "dataset.kind": (str, "idx", _one_of(("idx", "synth"))),
    "dataset.images": (str, "", None),
    "dataset.labels": (str, "", None),
    "dataset.test_images": (str, "", None),
    "dataset.test_labels": (str, "", None),
    "dataset.limit": (int, 0, _non_negative),
    "dataset.val_fraction": (float, 1 / 6, _unit_open),
    "dataset.test_fraction": (float, 0.0, _unit_open),
    "dataset.synth_n": (int, 1200, _positive),
    "dataset.synth_d": (int, 32, _positive),
    "dataset.synth_classes": (int, 4, _positive),
    "dataset.synth_spread": (float, 0.03, _positive),
    "model.kind": (str, "sosae", _one_of(tuple(MODEL_KINDS))),
    "model.h_start": (int, 400, _positive),
    "regularizer.lambda": (float, REQUIRED, _non_negative),
    "regularizer.beta": (float, REQUIRED, _non_negative),
    "regularizer.alpha": (float, 0.01, _positive),
    "regularizer.k": (int, 100, _positive),
    "training.epochs": (int, 30, _positive),
    "training.batch_size": (int, 100, _positive),
    "training.learning_rate": (float, 1e-3, _positive),
    "training.adam_beta1": (float, 0.9, _unit_open),
    "training.adam_beta2": (float, 0.999, _unit_open),
    "training.adam_eps": (float, 1e-8, _positive),
    "training.shuffle": (bool, True, None),
    "training.recon": (str, "mae", _one_of(("mae", "mse"))),
    "noise.kind": (str, "none", _one_of(NOISE_KINDS)),
    "noise.nu": (float, 0.0, _unit),
    "noise.sigma": (float, 0.0, _non_negative),
    "analysis.eps": (float, 1e-3, _positive),
    "analysis.lengths": ("ints", [], _each(_positive)),
    "analysis.probe_epochs": (int, 100, _positive),
    "analysis.probe_learning_rate": (float, 1e-2, _positive),
    "analysis.probe_batch_size": (int, 100, _positive),
    "table1.models": ("strs", list(TABLE1_MODELS), _models),
    "fig2.models": ("strs", ["sosae", "cae", "ksparse", "l1", "l2"], _models),
    "fig3.nu_levels": ("floats", [0.10, 0.25, 0.55], _each(_unit)),
    "fig3.sigma_levels": ("floats", [0.05, 0.10, 0.15, 0.30, 0.50], _each(_non_negative)),
    "fig3.seeds": (int, 1, _positive),
    "search.h_min": (int, 1, _positive),
    "search.grid_step": (int, 4, _positive),
    "search.n_iters": (int, 50, _positive),
    "search.tau": (float, 0.05, _non_negative),
}


def _parse_scalar(kind, raw: str):
    if kind is bool:
        low = raw.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {raw!r}")
        return low == "true"
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _parse_value(kind, raw: str):
    if isinstance(kind, str):
        item = {"ints": int, "floats": float, "strs": str}[kind]
        parts = [p.strip() for p in raw.split(",")] if raw.strip() else []
        return [_parse_scalar(item, p) for p in parts]
    return _parse_scalar(kind, raw)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


_TYPE_NAMES = {int: "an integer", float: "a number", bool: "a boolean", str: "a string",
               "ints": "a comma-separated list of integers",
               "floats": "a comma-separated list of numbers",
               "strs": "a comma-separated list of names"}


@dataclass
class ExperimentConfig:
    values: dict
    lines: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        values = dict(self.values)
        for key, value in overrides.items():
            key = key.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = value
        return ExperimentConfig(values, dict(self.lines))

    def regularizer(self, model: str | None = None, h: int | None = None) -> RegularizerSpec:
        kind = MODEL_KINDS[model or self["model.kind"]]
        k = min(self["regularizer.k"], h or self["model.h_start"])
        return RegularizerSpec(kind=kind, lam=self["regularizer.lambda"],
                               beta=self["regularizer.beta"],
                               alpha=self["regularizer.alpha"], k=k)

    def noise(self) -> NoiseSpec:
        return NoiseSpec(self["noise.kind"], self["noise.nu"], self["noise.sigma"])

    def train_config(self, model: str | None = None, seed: int | None = None,
                     noise: NoiseSpec | None = None, h: int | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=self["training.epochs"],
            batch_size=self["training.batch_size"],
            learning_rate=self["training.learning_rate"],
            adam_beta1=self["training.adam_beta1"],
            adam_beta2=self["training.adam_beta2"],
            adam_eps=self["training.adam_eps"],
            seed=self["seed"] if seed is None else seed,
            regularizer=self.regularizer(model, h),
            noise=self.noise() if noise is None else noise,
            shuffle=self["training.shuffle"],
            recon=self["training.recon"],
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(epochs=self["analysis.probe_epochs"],
                           learning_rate=self["analysis.probe_learning_rate"],
                           batch_size=self["analysis.probe_batch_size"],
                           seed=self["seed"])

    def echo(self) -> str:
        """The resolved config in parseable form, one key per line in table order."""
        return "".join(f"{key} = {_format_value(self.values[key])}\n" for key in SCHEMA)


def default_table() -> str:
    rows = []
    for key, (kind, default, _) in SCHEMA.items():
        shown = "(required)" if default is REQUIRED else _format_value(default)
        rows.append(f"{key} = {shown}")
    return "\n".join(rows) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    values: dict = {}
    lines: dict = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", number)
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", number)
        if key in lines:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", number)
        kind, _, check = SCHEMA[key]
        try:
            value = _parse_value(kind, raw)
        except ValueError:
            raise ConfigError(f"{key} must be {_TYPE_NAMES[kind]}, got {raw!r}", number) from None
        problem = check(value) if check else None
        if problem:
            raise ConfigError(f"{key} {problem}, got {raw}", number)
        values[key] = value
        lines[key] = number
    for key, (_, default, _) in SCHEMA.items():
        if key in values:
            continue
        if default is REQUIRED:
            raise ConfigError(f"missing required key {key!r}", len(text.splitlines()) + 1)
        values[key] = list(default) if isinstance(default, list) else default
    config = ExperimentConfig(values, lines)
    _cross_check(config)
    return config


def _cross_check(config: ExperimentConfig) -> None:
    v = config.values
    if v["dataset.val_fraction"] + v["dataset.test_fraction"] >= 1:
        raise ConfigError("dataset.val_fraction + dataset.test_fraction must be < 1",
                          config.lines.get("dataset.test_fraction"))
    if v["dataset.kind"] == "idx" and not (v["dataset.images"] and v["dataset.labels"]):
        raise ConfigError("dataset.kind = idx needs dataset.images and dataset.labels",
                          config.lines.get("dataset.kind"))
    if bool(v["dataset.test_images"]) != bool(v["dataset.test_labels"]):
        raise ConfigError("dataset.test_images and dataset.test_labels go together",
                          config.lines.get("dataset.test_images") or config.lines.get("dataset.test_labels"))
    if v["dataset.kind"] == "synth" and v["dataset.synth_classes"] < 2:
        raise ConfigError("dataset.synth_classes must be >= 2", config.lines.get("dataset.synth_classes"))
    h = v["model.h_start"]
    for length in v["analysis.lengths"]:
        if length > h:
            raise ConfigError(f"analysis.lengths entry {length} exceeds model.h_start = {h}",
                              config.lines.get("analysis.lengths"))
    if v["search.h_min"] > h:
        raise ConfigError(f"search.h_min exceeds model.h_start = {h}", config.lines.get("search.h_min"))
    if v["search.n_iters"] > h - v["search.h_min"] + 1:
        raise ConfigError("search.n_iters exceeds the number of candidate sizes",
                          config.lines.get("search.n_iters"))
