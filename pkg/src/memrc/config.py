"""Experiment configuration: JSON files with explicit physical units.

Physical quantities are strings with a unit suffix ("160mV", "3ms",
"0.8nA", "10kHz"); bare numbers are rejected so millivolt/volt mix-ups
cannot slip through silently.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .device import DeviceParams, NoiseSpec, load_presets
from .readout import TrainConfig
from .reservoir import NORM_MODES, ReservoirConfig
from .search import GridSpec
from .tasks import EncodingParams

_PREFIX = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "m": 1e-3, "": 1.0, "k": 1e3}
_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QTY = re.compile(rf"^\s*({_NUM})\s*([a-zA-Zµ/]+)\s*$")


def parse_quantity(text, unit: str) -> float:
    """Parse '<number><prefix><unit>' into SI, e.g. parse_quantity('90mV', 'V') == 0.09."""
    if not isinstance(text, str):
        raise ValueError(f"{text!r}: expected a string with a {unit} unit suffix")
    m = _QTY.match(text)
    if not m:
        raise ValueError(f"{text!r}: expected a number followed by a {unit} unit (e.g. '5m{unit}')")
    value, suffix = float(m.group(1)), m.group(2)
    if not suffix.endswith(unit):
        raise ValueError(f"{text!r}: unit must be {unit} with an optional prefix")
    prefix = suffix[: len(suffix) - len(unit)]
    if prefix not in _PREFIX:
        raise ValueError(f"{text!r}: unknown prefix {prefix!r}")
    return value * _PREFIX[prefix]


def parse_list(text: str, unit: str) -> list[float]:
    return [parse_quantity(x, unit) for x in text.split(",") if x.strip()]


def format_quantity(value: float, unit: str, prefix: str = "m") -> str:
    return f"{value / _PREFIX[prefix]:.12g}{prefix}{unit}"


_Q = {"type": "string"}
_DEVICE = {
    "oneOf": [
        {"type": "string"},
        {"type": "object", "required": ["n0", "ve", "tau01", "vtau1", "tau02", "vtau2", "vt"],
         "properties": {"label": {"type": "string"}, "n0": {"type": "number"}, "ve": _Q, "tau01": _Q,
                        "vtau1": _Q, "tau02": _Q, "vtau2": _Q, "vt": _Q, "g_scale": {"type": "number"},
                        "v_high": _Q},
         "additionalProperties": False},
    ]
}

SCHEMA = {
    "type": "object",
    "required": ["task", "bank"],
    "additionalProperties": False,
    "properties": {
        "task": {"enum": ["sonds", "neuro"]},
        "bank": {"type": "array", "minItems": 1, "items": _DEVICE},
        "offsets": {"type": "array", "items": _Q},
        "presets": {"type": "string"},
        "method": {"enum": ["euler", "rk4", "exact"]},
        "dt": _Q,
        "noise": {"type": "object", "additionalProperties": False,
                  "properties": {"current_rms": _Q, "seed": {"type": "integer"}}},
        "encoding": {"type": "object", "additionalProperties": False,
                     "properties": {"gamma": _Q, "delta": _Q, "dt_hold": _Q, "sample_rate": _Q}},
        "neural": {"type": "object", "additionalProperties": False,
                   "properties": {"scale": {"type": "number", "exclusiveMinimum": 0},
                                  "nodes": {"type": "integer", "minimum": 1},
                                  "per_class": {"type": "integer", "minimum": 2},
                                  "n_train_per_class": {"type": "integer", "minimum": 1},
                                  "norm": {"enum": list(NORM_MODES)},
                                  "sample_rate": _Q}},
        "readout": {"type": "object", "additionalProperties": False,
                    "properties": {"kind": {"enum": ["linear", "fc", "convfc"]},
                                   "f": {"type": "integer", "minimum": 1}}},
        "train": {"type": "object", "additionalProperties": False,
                  "properties": {"learning_rate": {"type": "number", "exclusiveMinimum": 0},
                                 "epochs": {"type": "integer", "minimum": 1},
                                 "seed": {"type": "integer"},
                                 "init_scale": {"type": "number", "exclusiveMinimum": 0},
                                 "batch_size": {"type": ["integer", "null"], "minimum": 1}}},
        "grid": {"type": "object", "additionalProperties": False,
                 "properties": {"gamma_range": {"type": "array", "items": _Q, "minItems": 2, "maxItems": 2},
                                "delta_range": {"type": "array", "items": _Q, "minItems": 2, "maxItems": 2},
                                "dt_range": {"type": "array", "items": _Q, "minItems": 2, "maxItems": 2},
                                "gamma_points": {"type": "integer", "minimum": 1},
                                "delta_points": {"type": "integer", "minimum": 1},
                                "dt_points": {"type": "integer", "minimum": 1}}},
        "seed": {"type": "integer"},
        "washout": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}

_DEVICE_UNITS = {"ve": "V", "tau01": "s", "vtau1": "V", "tau02": "s", "vtau2": "V", "vt": "V", "v_high": "V"}


@dataclass
class ExperimentConfig:
    task: str
    bank: list[DeviceParams]
    offsets: list[float] | None = None
    method: str = "rk4"
    dt: float = 1e-4
    noise: NoiseSpec = NoiseSpec()
    encoding: EncodingParams = EncodingParams()
    scale: float = 1.8
    nodes: int = 20
    per_class: int = 400
    n_train_per_class: int = 320
    norm: str = "log-zscore"
    neural_sample_rate: float = 1e4
    readout: str = "linear"
    kernel_f: int = 9
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    seed: int = 0
    washout: int = 50
    output_dir: str = "out"
    raw: dict = field(default_factory=dict, repr=False)

    def reservoir(self) -> ReservoirConfig:
        return ReservoirConfig(tuple(self.bank), None if self.offsets is None else tuple(self.offsets),
                               self.method, self.dt, self.noise)


def _device(entry, presets) -> DeviceParams:
    if isinstance(entry, str):
        if entry not in presets:
            raise ValueError(f"unknown device label {entry!r}; known: {', '.join(sorted(presets))}")
        return presets[entry]
    d = dict(entry)
    for k, unit in _DEVICE_UNITS.items():
        if k in d:
            d[k] = parse_quantity(d[k], unit)
    return DeviceParams.from_dict(d)


def _qs(d: dict, spec: dict) -> dict:
    return {k: parse_quantity(d[k], unit) for k, unit in spec.items() if k in d}


def parse_config(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate against the schema and convert units to SI."""
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ValueError(f"config invalid at {where}: {exc.message}") from None
    preset_path = data.get("presets")
    if preset_path and base_dir is not None and not Path(preset_path).is_absolute():
        preset_path = str(base_dir / preset_path)
    if preset_path and not Path(preset_path).exists():
        raise ValueError(f"preset file not found: {preset_path}")
    presets = load_presets(preset_path)
    kw = {"task": data["task"], "bank": [_device(e, presets) for e in data["bank"]], "raw": data}
    if "offsets" in data:
        kw["offsets"] = [parse_quantity(x, "V") for x in data["offsets"]]
    if "method" in data:
        kw["method"] = data["method"]
    if "dt" in data:
        kw["dt"] = parse_quantity(data["dt"], "s")
    if "noise" in data:
        n = data["noise"]
        kw["noise"] = NoiseSpec(parse_quantity(n.get("current_rms", "0A"), "A"), n.get("seed", 0))
    if "encoding" in data:
        kw["encoding"] = EncodingParams(**_qs(data["encoding"], {"gamma": "V", "delta": "V", "dt_hold": "s",
                                                                 "sample_rate": "Hz"}))
    nn = data.get("neural", {})
    for key, attr in (("scale", "scale"), ("nodes", "nodes"), ("per_class", "per_class"),
                      ("n_train_per_class", "n_train_per_class"), ("norm", "norm")):
        if key in nn:
            kw[attr] = nn[key]
    if "sample_rate" in nn:
        kw["neural_sample_rate"] = parse_quantity(nn["sample_rate"], "Hz")
    ro = data.get("readout", {})
    kw["readout"] = ro.get("kind", "linear" if data["task"] == "sonds" else "convfc")
    if "f" in ro:
        kw["kernel_f"] = ro["f"]
    if "train" in data:
        kw["train"] = TrainConfig(**data["train"])
    if "grid" in data:
        g = data["grid"]
        args = {}
        for ax, unit in (("gamma", "V"), ("delta", "V"), ("dt", "s")):
            if f"{ax}_points" in g:
                args[f"{ax}_points"] = g[f"{ax}_points"]
            if f"{ax}_range" in g:
                args[f"{ax}_range"] = tuple(parse_quantity(x, unit) for x in g[f"{ax}_range"])
        kw["grid"] = GridSpec.default(**args)
    for k in ("seed", "washout", "output_dir"):
        if k in data:
            kw[k] = data[k]
    cfg = ExperimentConfig(**kw)
    if cfg.task == "sonds" and cfg.readout != "linear":
        raise ValueError("the sonds task uses the linear readout")
    if cfg.task == "neuro" and cfg.readout == "linear":
        raise ValueError("the neuro task needs an fc or convfc readout")
    if cfg.offsets is not None and len(cfg.offsets) != len(cfg.bank):
        raise ValueError(f"{len(cfg.offsets)} offsets for {len(cfg.bank)} devices")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(data, path.parent)


def sonds_config_dict(labels, gamma: float, delta: float, dt_hold: float, seed: int = 0,
                      sample_rate: float = 1e4, washout: int = 50, output_dir: str = "out") -> dict:
    """A ready-to-run SONDS config with the given encoding (as written by grid search)."""
    return {"task": "sonds", "bank": list(labels),
            "encoding": {"gamma": format_quantity(gamma, "V"), "delta": format_quantity(delta, "V"),
                         "dt_hold": format_quantity(dt_hold, "s"), "sample_rate": format_quantity(sample_rate, "Hz", "")},
            "seed": seed, "washout": washout, "output_dir": output_dir}


def train_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
