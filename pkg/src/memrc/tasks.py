"""Benchmark datasets and their voltage encodings.

Two tasks: the second-order nonlinear dynamical system (SONDS) prediction
benchmark, and four-class classification of emulated neural spike patterns.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import TraceFormatError

CLASSES = ("tonic", "bursting", "adapting", "irregular")
PATTERN_DURATION = 0.62
REST_POTENTIAL = -0.070
MAX_JITTER = 4e-3


def seeded_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for a (seed, keys...) stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


# --- SONDS ------------------------------------------------------------------

@dataclass(frozen=True)
class SondsDataset:
    u: np.ndarray
    y: np.ndarray
    seed: int = 0

    def __len__(self):
        return len(self.u)

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "u": self.u.tolist(), "y": self.y.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "SondsDataset":
        d = json.loads(text)
        return cls(np.asarray(d["u"], float), np.asarray(d["y"], float), int(d.get("seed", 0)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "u", "y"])
        for k, (u, y) in enumerate(zip(self.u, self.y)):
            w.writerow([k, repr(float(u)), repr(float(y))])
        return buf.getvalue()


def sonds_target(u) -> np.ndarray:
    """y[k] = 0.4 y[k-1] + 0.4 y[k-1] y[k-2] + 0.6 u[k]^3 + 0.1, zero history."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("u must be finite")
    y = np.zeros_like(u)
    y1 = y2 = 0.0
    for k, uk in enumerate(u):
        yk = 0.4 * y1 + 0.4 * y1 * y2 + 0.6 * uk**3 + 0.1
        y[k] = yk
        y1, y2 = yk, y1
    return y


def gen_sonds(n_train: int = 300, n_test: int = 300, seed: int = 0) -> tuple[SondsDataset, SondsDataset]:
    if n_train <= 0 or n_test <= 0:
        raise ValueError("dataset sizes must be positive")
    u_train = seeded_rng(seed, 0).uniform(0.0, 0.5, n_train)
    u_test = seeded_rng(seed, 1).uniform(0.0, 0.5, n_test)
    return (SondsDataset(u_train, sonds_target(u_train), seed),
            SondsDataset(u_test, sonds_target(u_test), seed))


# --- waveforms --------------------------------------------------------------

@dataclass(frozen=True)
class VoltageWaveform:
    """Sample k holds ``v[k]`` over [k*dt, (k+1)*dt)."""

    dt: float
    v: np.ndarray

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be finite and > 0")
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if not np.all(np.isfinite(self.v)):
            raise ValueError("waveform samples must be finite")

    def __len__(self):
        return len(self.v)

    @property
    def duration(self) -> float:
        return len(self.v) * self.dt

    def shifted(self, offset: float) -> "VoltageWaveform":
        return VoltageWaveform(self.dt, self.v + offset)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "v_V"])
        for k, v in enumerate(self.v):
            w.writerow([repr(k * self.dt), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "VoltageWaveform":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise TraceFormatError("empty waveform file", row=1)
        if [c.strip() for c in rows[0]] != ["t_s", "v_V"]:
            raise TraceFormatError("expected header 't_s,v_V'", row=1)
        t, v = [], []
        for n, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 2:
                raise TraceFormatError(f"expected 2 fields, got {len(row)}", row=n)
            try:
                t.append(float(row[0]))
                v.append(float(row[1]))
            except ValueError:
                raise TraceFormatError(f"non-numeric value {row!r}", row=n) from None
        if len(t) < 2:
            raise TraceFormatError("need at least two samples", row=len(rows))
        t = np.asarray(t)
        dts = np.diff(t)
        if np.any(dts <= 0):
            raise TraceFormatError("t_s must be strictly increasing", row=int(np.argmax(dts <= 0)) + 3)
        if not np.allclose(dts, dts[0], rtol=1e-6, atol=0):
            raise TraceFormatError("samples must be uniformly spaced")
        return cls(float(dts.mean()), np.asarray(v))


@dataclass(frozen=True)
class EncodingParams:
    gamma: float = 0.160
    delta: float = 0.090
    dt_hold: float = 3e-3
    sample_rate: float = 1e4

    def __post_init__(self):
        if not self.dt_hold > 0:
            raise ValueError("dt_hold must be > 0")
        if not self.sample_rate > 0 or self.sample_rate * self.dt_hold < 1 - 1e-9:
            raise ValueError("sample_rate * dt_hold must be >= 1")

    @property
    def samples_per_hold(self) -> int:
        n = self.dt_hold * self.sample_rate
        k = round(n)
        if abs(n - k) > 1e-6 * max(1.0, n):
            raise ValueError(f"dt_hold={self.dt_hold:g}s is not a whole number of samples "
                             f"at {self.sample_rate:g} Hz")
        return k


def encode_hold(u, enc: EncodingParams) -> VoltageWaveform:
    """Hold gamma*u[k] + delta for dt_hold per input value."""
    u = np.asarray(u, dtype=float)
    levels = enc.gamma * u + enc.delta
    return VoltageWaveform(1.0 / enc.sample_rate, np.repeat(levels, enc.samples_per_hold))


# --- neural activity patterns -------------------------------------------------

@dataclass(frozen=True)
class NeuralTemplates:
    """Spike-timing templates for the four activity classes (seconds)."""

    tonic_count: int = 20
    tonic_isi: float = 0.031
    burst_count: int = 5
    burst_size: int = 4
    burst_isi: float = 0.006
    burst_period: float = 0.120
    burst_start: float = 0.010
    adapt_count: int = 12
    adapt_first_isi: float = 0.010
    adapt_growth: float = 1.35
    adapt_start: float = 0.005
    irregular_rate: float = 32.0
    irregular_min: int = 10
    irregular_max: int = 30
    margin: float = 0.004
    duration: float = PATTERN_DURATION

    @property
    def latest(self) -> float:
        # room for the jitter and one full action potential before the window ends
        return self.duration - MAX_JITTER - ActionPotential().duration

    def template(self, label: str, rng: np.random.Generator) -> np.ndarray:
        if label == "tonic":
            t = (np.arange(self.tonic_count) + 0.5) * self.tonic_isi
        elif label == "bursting":
            t = np.concatenate([self.burst_start + b * self.burst_period + self.burst_isi * np.arange(self.burst_size)
                                for b in range(self.burst_count)])
        elif label == "adapting":
            isi = self.adapt_first_isi * self.adapt_growth ** np.arange(self.adapt_count - 1)
            t = self.adapt_start + np.concatenate([[0.0], np.cumsum(isi)])
        elif label == "irregular":
            while True:
                n = rng.poisson(self.irregular_rate * self.duration)
                if self.irregular_min <= n <= self.irregular_max:
                    break
            t = np.sort(rng.uniform(self.margin, self.latest, n))
        else:
            raise ValueError(f"unknown class {label!r}; expected one of {CLASSES}")
        return t[(t >= self.margin) & (t <= self.latest)]


DEFAULT_TEMPLATES = NeuralTemplates()


@dataclass(frozen=True)
class NeuralPattern:
    class_label: str
    spike_times: np.ndarray
    seed: int = 0
    template_times: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.class_label not in CLASSES:
            raise ValueError(f"unknown class {self.class_label!r}")
        st = np.asarray(self.spike_times, dtype=float)
        object.__setattr__(self, "spike_times", st)
        if st.size and (st[0] < 0 or st[-1] > PATTERN_DURATION or np.any(np.diff(st) <= 0)):
            raise ValueError("spike_times must be strictly increasing within the pattern window")

    @property
    def class_index(self) -> int:
        return CLASSES.index(self.class_label)

    @property
    def duration(self) -> float:
        return PATTERN_DURATION

    def __eq__(self, other):
        return (isinstance(other, NeuralPattern) and self.class_label == other.class_label
                and self.seed == other.seed and np.array_equal(self.spike_times, other.spike_times))

    def __hash__(self):
        return hash((self.class_label, self.seed, self.spike_times.tobytes()))

    def to_dict(self) -> dict:
        return {"class": self.class_label, "seed": self.seed, "spike_times": self.spike_times.tolist()}


def gen_neural_patterns(label: str, count: int, seed: int = 0,
                        templates: NeuralTemplates = DEFAULT_TEMPLATES) -> list[NeuralPattern]:
    """``count`` jittered spike trains of one class; each spike moves by at most 4 ms."""
    if count <= 0:
        raise ValueError("count must be positive")
    if label not in CLASSES:
        raise ValueError(f"unknown class {label!r}; expected one of {CLASSES}")
    children = np.random.SeedSequence([int(seed), CLASSES.index(label)]).spawn(count)
    out = []
    for child in children:
        pseed = int(child.generate_state(1)[0])
        rng = np.random.default_rng(child)
        tmpl = templates.template(label, rng)
        # sorting keeps every spike within MAX_JITTER of its template slot
        jittered = np.sort(tmpl + rng.uniform(-MAX_JITTER, MAX_JITTER, tmpl.size))
        keep = np.concatenate([[True], np.diff(jittered) > 0])
        out.append(NeuralPattern(label, jittered[keep], pseed, tmpl[keep]))
    return out


@dataclass(frozen=True)
class ActionPotential:
    """Piecewise-linear stereotyped spike: breakpoints in seconds and volts."""

    times: tuple = (0.0, 1e-3, 2.5e-3, 4e-3)
    volts: tuple = (REST_POTENTIAL, 0.040, -0.080, REST_POTENTIAL)

    @property
    def duration(self) -> float:
        return self.times[-1]

    def deviation(self, t):
        """Deviation from rest at times since spike onset (zero outside)."""
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.duration)
        return np.where(inside, np.interp(t, self.times, self.volts) - REST_POTENTIAL, 0.0)


DEFAULT_AP = ActionPotential()


def neural_voltage(pattern: NeuralPattern, sample_rate: float = 1e4,
                   ap: ActionPotential = DEFAULT_AP) -> np.ndarray:
    """Biological membrane trace (volts) sampled at the start of each sample interval."""
    n = int(round(pattern.duration * sample_rate))
    t = np.arange(n) / sample_rate
    v = np.full(n, REST_POTENTIAL)
    span = int(math.ceil(ap.duration * sample_rate)) + 1
    for s in pattern.spike_times:
        k0 = int(math.ceil(s * sample_rate - 1e-9))
        sl = slice(k0, min(k0 + span, n))
        v[sl] += ap.deviation(t[sl] - s)
    return v


def render_neural_waveform(pattern: NeuralPattern, scale: float = 1.8, offset: float = 0.090,
                           sample_rate: float = 1e4, ap: ActionPotential = DEFAULT_AP) -> VoltageWaveform:
    """Affine map ``scale * v + offset`` of the membrane trace; overlapping spikes add."""
    if sample_rate < 1e3:
        raise ValueError("sample_rate must be >= 1 kHz")
    return VoltageWaveform(1.0 / sample_rate, scale * neural_voltage(pattern, sample_rate, ap) + offset)


def split_neural_dataset(patterns: Sequence[NeuralPattern], seed: int = 0, n_train_per_class: int = 320,
                         ) -> tuple[list[NeuralPattern], list[NeuralPattern]]:
    """Stratified split; both halves shuffled deterministically."""
    rng = seeded_rng(seed, 99)
    train, test = [], []
    for label in CLASSES:
        members = [p for p in patterns if p.class_label == label]
        if len(members) <= n_train_per_class:
            raise ValueError(f"class {label!r} has {len(members)} patterns; need more than {n_train_per_class}")
        order = rng.permutation(len(members))
        train += [members[i] for i in order[:n_train_per_class]]
        test += [members[i] for i in order[n_train_per_class:]]
    train = [train[i] for i in rng.permutation(len(train))]
    test = [test[i] for i in rng.permutation(len(test))]
    return train, test


def gen_neural_dataset(per_class: int = 400, seed: int = 0, n_train_per_class: int = 320,
                       templates: NeuralTemplates = DEFAULT_TEMPLATES):
    """All four classes, split into (train, test)."""
    patterns = [p for label in CLASSES for p in gen_neural_patterns(label, per_class, seed, templates)]
    return split_neural_dataset(patterns, seed, n_train_per_class)


def labels_of(patterns: Sequence[NeuralPattern]) -> np.ndarray:
    return np.array([p.class_index for p in patterns], dtype=int)


def patterns_to_json(patterns: Sequence[NeuralPattern]) -> str:
    return json.dumps({"duration_s": PATTERN_DURATION, "classes": list(CLASSES),
                       "patterns": [p.to_dict() for p in patterns]})


def patterns_from_json(text: str) -> list[NeuralPattern]:
    d = json.loads(text)
    return [NeuralPattern(p["class"], np.asarray(p["spike_times"], float), int(p["seed"]))
            for p in d["patterns"]]
