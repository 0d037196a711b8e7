"""Drive a bank of independent memristors and collect virtual-node states.

Devices share one input waveform, each shifted by its own DC offset. Their
conductances, sampled at chosen instants, are the reservoir features.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .device import (
    DEFAULT_DT,
    METHODS,
    DeviceParams,
    NoiseSpec,
    ParamArrays,
    integrate_runs,
    integrate_samples,
    run_lengths,
    steady_state_pores,
)
from .errors import DegenerateInputError, TraceFormatError
from .tasks import (
    PATTERN_DURATION,
    REST_POTENTIAL,
    EncodingParams,
    NeuralPattern,
    SondsDataset,
    VoltageWaveform,
    encode_hold,
    labels_of,
    neural_voltage,
    seeded_rng,
)

NORM_MODES = ("none", "zscore", "max", "log-zscore")


@dataclass(frozen=True)
class ReservoirConfig:
    devices: tuple[DeviceParams, ...]
    offsets: tuple[float, ...] | None = None
    method: str = "rk4"
    dt: float = DEFAULT_DT
    noise: NoiseSpec = NoiseSpec()

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        if not self.devices:
            raise ValueError("a reservoir needs at least one device")
        if self.offsets is not None:
            object.__setattr__(self, "offsets", tuple(float(o) for o in self.offsets))
            if len(self.offsets) != len(self.devices):
                raise ValueError(f"{len(self.offsets)} offsets for {len(self.devices)} devices")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")

    @property
    def m(self) -> int:
        return len(self.devices)

    @property
    def offset_array(self) -> np.ndarray:
        return np.zeros(self.m) if self.offsets is None else np.asarray(self.offsets)

    @property
    def params(self) -> ParamArrays:
        return ParamArrays.stack(self.devices)

    def device_labels(self, offsets=None) -> list[str]:
        """Unique column labels; offsets disambiguate repeated presets."""
        offsets = self.offset_array if offsets is None else np.asarray(offsets, float)
        base = [d.label or f"d{i}" for i, d in enumerate(self.devices)]
        counts = Counter(base)
        labels = [b if counts[b] == 1 else f"{b}@{o * 1e3:g}mV" for b, o in zip(base, offsets)]
        counts = Counter(labels)
        return [lbl if counts[lbl] == 1 else f"{lbl}#{i}" for i, lbl in enumerate(labels)]

    def substeps(self, sample_dt: float) -> int:
        return max(1, math.ceil(sample_dt / self.dt - 1e-9))


@dataclass
class NormStats:
    mode: str
    center: np.ndarray
    scale: np.ndarray
    zero_variance: list[int] = field(default_factory=list)
    floor: float = 1e-300

    def apply(self, values: np.ndarray) -> np.ndarray:
        if self.mode == "none":
            return np.array(values, dtype=float)
        x = np.log(np.maximum(values, self.floor)) if self.mode == "log-zscore" else values
        return (x - self.center) / self.scale


@dataclass
class StateMatrix:
    """Rows are time steps or patterns; columns are device-major, then node."""

    values: np.ndarray
    columns: list[str]
    normalized: bool = False
    stats: NormStats | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column names do not match matrix width")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("state matrix contains non-finite values")

    @property
    def shape(self):
        return self.values.shape

    def column_devices(self) -> list[str]:
        return [c[3:].rsplit("_n", 1)[0] for c in self.columns]

    def __getitem__(self, rows) -> "StateMatrix":
        return StateMatrix(self.values[rows], list(self.columns), self.normalized, self.stats)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.values:
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "StateMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if not rows:
            raise TraceFormatError("empty state matrix file", row=1)
        header = rows[0]
        try:
            vals = [[float(x) for x in r] for r in rows[1:]]
        except ValueError as e:
            raise TraceFormatError(str(e)) from None
        return cls(np.array(vals).reshape(len(vals), len(header)), header)


def node_column(device: str, node: int) -> str:
    return f"dev{device}_n{node}"


@dataclass
class FeatureTensor:
    """Per-pattern feature blocks, shape (patterns, devices, nodes)."""

    values: np.ndarray
    devices: list[str]
    labels: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return self.values.shape[0]

    def flatten(self) -> StateMatrix:
        p, m, n = self.values.shape
        cols = [node_column(d, j) for d in self.devices for j in range(n)]
        return StateMatrix(self.values.reshape(p, m * n), cols)

    def with_values(self, values) -> "FeatureTensor":
        return FeatureTensor(np.asarray(values).reshape(self.values.shape), self.devices, self.labels)

    def to_json(self) -> str:
        p, m, n = self.values.shape
        return json.dumps({
            "shape": {"pattern": p, "device": m, "node": n},
            "devices": self.devices,
            "index_order": ["pattern", "device", "node"],
            "patterns": [
                {"pattern": i,
                 "label": None if self.labels is None else int(self.labels[i]),
                 "features": [{"device": self.devices[d], "nodes": self.values[i, d].tolist()}
                              for d in range(m)]}
                for i in range(p)
            ],
        })

    @classmethod
    def from_json(cls, text: str) -> "FeatureTensor":
        d = json.loads(text)
        pats = sorted(d["patterns"], key=lambda r: r["pattern"])
        vals = np.array([[f["nodes"] for f in r["features"]] for r in pats], dtype=float)
        labels = None if pats and pats[0]["label"] is None else np.array([r["label"] for r in pats])
        return cls(vals, list(d["devices"]), labels)


# --- driving ----------------------------------------------------------------

def _observe(config: ReservoirConfig, na: np.ndarray, volts: np.ndarray, params, rng):
    """Conductance read-out; noise enters as current noise divided by the bias."""
    g = params.g_scale * na
    if not config.noise.enabled:
        return g
    if np.any(volts == 0):
        raise DegenerateInputError("cannot observe conductance through current at 0 V")
    return g + rng.normal(0.0, config.noise.current_rms, size=g.shape) / volts


def _sample_indices(waveform: VoltageWaveform, sample_times) -> np.ndarray:
    t = np.asarray(sample_times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("sample_times must be a non-empty 1-D sequence")
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample_times must be strictly increasing")
    if t[0] < 0 or t[-1] > waveform.duration * (1 + 1e-12):
        raise ValueError(f"sample time outside waveform duration {waveform.duration:g}s")
    # state at t is the one after the last sample interval ending at or before t
    return np.floor(t / waveform.dt + 1e-9).astype(int) - 1


def _drive_shared(config: ReservoirConfig, v: np.ndarray, sample_dt: float, idx: np.ndarray, rng):
    """States of every device at sample indices ``idx`` (-1 = initial state)."""
    params = config.params
    off = config.offset_array
    na0 = steady_state_pores(params, off)
    levels, counts = run_lengths(v)
    # split runs so every requested sample index ends a run
    ends = np.cumsum(counts) - 1
    cuts = np.union1d(ends, idx[idx >= 0])
    starts = np.concatenate([[0], cuts[:-1] + 1])
    seg_levels = v[starts]
    seg_counts = cuts - starts + 1
    n_sub = config.substeps(sample_dt)
    h = sample_dt / n_sub
    states = integrate_runs(params, seg_levels[:, None] + off[None, :], seg_counts * n_sub, h, na0, config.method)
    pos = np.searchsorted(cuts, idx)
    out = np.empty((len(idx), config.m))
    init = idx < 0
    out[init] = na0
    out[~init] = states[pos[~init]]
    volts = np.where(init[:, None], off[None, :], v[np.maximum(idx, 0)][:, None] + off[None, :])
    return _observe(config, out, volts, params, rng)


def drive(config: ReservoirConfig, waveform: VoltageWaveform, sample_times, stream: int = 0) -> StateMatrix:
    """One row: conductance of every device at every sample time (device-major).

    Devices start at equilibrium for their offset voltage.
    """
    idx = _sample_indices(waveform, sample_times)
    rng = seeded_rng(config.noise.seed, stream)
    g = _drive_shared(config, waveform.v, waveform.dt, idx, rng)
    labels = config.device_labels()
    cols = [node_column(d, j) for d in labels for j in range(len(idx))]
    return StateMatrix(g.T.reshape(1, -1), cols)


def run_sonds(config: ReservoirConfig, dataset: SondsDataset, enc: EncodingParams = EncodingParams(),
              washout: int = 50, stream: int = 0) -> tuple[StateMatrix, np.ndarray]:
    """Encode, drive once, read every device at the end of each held interval."""
    n = len(dataset)
    if not 0 <= washout < n:
        raise ValueError(f"washout must be in [0, {n})")
    wf = encode_hold(dataset.u, enc)
    per = enc.samples_per_hold
    idx = np.arange(1, n + 1) * per - 1
    rng = seeded_rng(config.noise.seed, stream)
    g = _drive_shared(config, wf.v, wf.dt, idx, rng)
    cols = [node_column(d, 0) for d in config.device_labels()]
    return StateMatrix(g[washout:], cols), np.asarray(dataset.y[washout:], dtype=float)


def node_indices(n_samples: int, nodes: int) -> np.ndarray:
    """End-of-sample indices for ``nodes`` equally spaced reads, endpoint included."""
    if nodes < 1:
        raise ValueError("nodes_per_pattern must be >= 1")
    return np.floor(np.arange(1, nodes + 1) * n_samples / nodes + 1e-9).astype(int) - 1


def run_neural(config: ReservoirConfig, patterns: Sequence[NeuralPattern], scale: float = 1.8,
               offsets=None, nodes_per_pattern: int = 20, sample_rate: float = 1e4,
               stream: int = 0, batch: int = 256) -> FeatureTensor:
    """Per-pattern (devices x nodes) conductance blocks.

    Every device is reset to equilibrium at its biased resting level before
    each pattern, so patterns are independent.
    """
    off = config.offset_array if offsets is None else np.asarray(offsets, dtype=float)
    if off.shape != (config.m,):
        raise ValueError(f"need {config.m} offsets, got {off.shape}")
    n_samples = int(round(PATTERN_DURATION * sample_rate))
    idx = node_indices(n_samples, nodes_per_pattern)
    params_one = config.params
    m = config.m
    out = np.empty((len(patterns), m, nodes_per_pattern))
    rest = scale * REST_POTENTIAL + off
    rng = seeded_rng(config.noise.seed, stream)
    n_sub = config.substeps(1.0 / sample_rate)
    for b0 in range(0, len(patterns), batch):
        chunk = patterns[b0:b0 + batch]
        bio = np.stack([neural_voltage(p, sample_rate) for p in chunk], axis=1)  # (T, P)
        v = scale * np.repeat(bio, m, axis=1) + np.tile(off, len(chunk))[None, :]
        params = params_one.tile(len(chunk))
        na0 = steady_state_pores(params, np.tile(rest, len(chunk)))
        na = integrate_samples(params, v, 1.0 / sample_rate, na0, config.method, n_sub, record=idx)
        g = _observe(config, na, v[idx], params, rng)  # (n, P*m)
        out[b0:b0 + len(chunk)] = g.T.reshape(len(chunk), m, nodes_per_pattern)
    return FeatureTensor(out, config.device_labels(off), labels_of(patterns) if patterns else None)


# --- normalization ------------------------------------------------------------

def fit_normalization(values: np.ndarray, mode: str, devices: Sequence[str] | None = None) -> NormStats:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    ncol = values.shape[1]
    if mode not in NORM_MODES:
        raise ValueError(f"unknown normalization {mode!r}; expected one of {NORM_MODES}")
    if mode == "none":
        return NormStats(mode, np.zeros(ncol), np.ones(ncol))
    if mode == "max":
        devices = list(devices) if devices is not None else [str(i) for i in range(ncol)]
        scale = np.ones(ncol)
        zero = []
        for d in dict.fromkeys(devices):
            cols = [i for i, x in enumerate(devices) if x == d]
            peak = np.max(np.abs(values[:, cols]))
            if peak > 0:
                scale[cols] = peak
            else:
                zero += cols
        return NormStats(mode, np.zeros(ncol), scale, zero)
    if values.shape[0] < 2:
        raise ValueError("z-score normalization needs at least two rows")
    stats = NormStats(mode, np.zeros(ncol), np.ones(ncol))
    x = np.log(np.maximum(values, stats.floor)) if mode == "log-zscore" else values
    center = x.mean(axis=0)
    spread = x.std(axis=0)
    zero = np.flatnonzero(spread <= 1e-12 * np.maximum(np.abs(center), 1e-300)).tolist()
    spread[zero] = 1.0
    stats.center, stats.scale, stats.zero_variance = center, spread, zero
    return stats


def normalize_features(matrix: StateMatrix, mode: str = "zscore",
                       stats: NormStats | None = None) -> StateMatrix:
    """Normalize columns; pass ``stats`` from the training set to reuse them.

    Modes: ``none``, ``zscore`` (per column), ``max`` (per device),
    ``log-zscore`` (per-column z-score of log conductance). Zero-variance
    columns are centered and recorded in ``stats.zero_variance``.
    """
    if stats is None:
        stats = fit_normalization(matrix.values, mode, matrix.column_devices())
    elif stats.mode != mode:
        raise ValueError(f"stats were fitted for {stats.mode!r}, not {mode!r}")
    return StateMatrix(stats.apply(matrix.values), list(matrix.columns), mode != "none", stats)


def normalize_tensor(tensor: FeatureTensor, mode: str, stats: NormStats | None = None
                     ) -> tuple[FeatureTensor, NormStats]:
    flat = normalize_features(tensor.flatten(), mode, stats)
    return tensor.with_values(flat.values), flat.stats
