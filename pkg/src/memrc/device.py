"""Alamethicin ion-channel memristor model.

The state is the pore density ``na`` (pores per m^2). For a held voltage it
relaxes exponentially toward ``n0 * exp(v / ve)`` with a voltage-dependent
time constant that switches exponent above the insertion threshold ``vt``.
Conductance is ``g_scale * na``.

All quantities are SI: volts, seconds, siemens, amps.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PRESETS_ENV = "MEMRC_PRESETS"
METHODS = ("euler", "rk4", "exact")
DEFAULT_DT = 1e-4


class StiffnessWarning(RuntimeWarning):
    """Integration step is large relative to the device time constant."""


@dataclass(frozen=True)
class DeviceParams:
    n0: float
    ve: float
    tau01: float
    vtau1: float
    tau02: float
    vtau2: float
    vt: float
    g_scale: float = 1.0
    label: str = ""
    v_high: float | None = None  # calibration operating point, informational

    def __post_init__(self):
        for name in ("ve", "vtau1", "vtau2", "tau01", "tau02", "g_scale"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be finite and > 0, got {val!r}")
        if not (math.isfinite(self.n0) and self.n0 >= 0):
            raise ValueError(f"n0 must be finite and >= 0, got {self.n0!r}")
        if not (math.isfinite(self.vt) and self.vt >= 0):
            raise ValueError(f"vt must be finite and >= 0, got {self.vt!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown DeviceParams fields: {sorted(unknown)}")
        d = dict(d)
        for name in ("n0", "ve", "tau01", "vtau1", "tau02", "vtau2", "vt", "g_scale"):
            if name in d:
                d[name] = float(d[name])
        if d.get("v_high") is not None:
            d["v_high"] = float(d["v_high"])
        return cls(**d)


@dataclass(frozen=True)
class MemristorState:
    na: float
    t: float = 0.0


@dataclass(frozen=True)
class NoiseSpec:
    current_rms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.current_rms) and self.current_rms >= 0):
            raise ValueError("current_rms must be finite and >= 0")

    @property
    def enabled(self) -> bool:
        return self.current_rms > 0


@dataclass(frozen=True)
class ParamArrays:
    """Per-lane parameter arrays, duck-compatible with DeviceParams."""

    n0: np.ndarray
    ve: np.ndarray
    tau01: np.ndarray
    vtau1: np.ndarray
    tau02: np.ndarray
    vtau2: np.ndarray
    vt: np.ndarray
    g_scale: np.ndarray

    @classmethod
    def stack(cls, params: Sequence[DeviceParams]) -> "ParamArrays":
        names = [f.name for f in fields(cls)]
        return cls(**{n: np.array([getattr(p, n) for p in params], dtype=float) for n in names})

    def tile(self, reps: int) -> "ParamArrays":
        """Repeat the whole bank ``reps`` times along the lane axis."""
        return ParamArrays(**{f.name: np.tile(getattr(self, f.name), reps) for f in fields(self)})

    def __len__(self):
        return len(self.n0)


def steady_state_pores(params, v):
    """Equilibrium pore density at a held voltage."""
    if isinstance(params, DeviceParams) and isinstance(v, (float, int)):
        return params.n0 * math.exp(v / params.ve)
    return params.n0 * np.exp(v / params.ve)


def time_constant(params, v):
    """Relaxation time constant; the supra-threshold branch owns ``v == vt``."""
    if isinstance(params, DeviceParams) and isinstance(v, (float, int)):
        if v < params.vt:
            return params.tau01 * math.exp(v / params.vtau1)
        return params.tau02 * math.exp(v / params.vtau2)
    v = np.asarray(v, dtype=float)
    sub = params.tau01 * np.exp(v / params.vtau1)
    sup = params.tau02 * np.exp(v / params.vtau2)
    out = np.where(v < params.vt, sub, sup)
    return out[()] if out.ndim == 0 else out


def _rate(params, na, v):
    return (steady_state_pores(params, v) - na) / time_constant(params, v)


def derivative(params: DeviceParams, state: MemristorState, v: float) -> float:
    return _rate(params, state.na, v)


def step(params: DeviceParams, state: MemristorState, v: float, dt: float,
         method: str = "rk4") -> MemristorState:
    """Advance one fixed step with ``v`` held; ``na`` is clamped at zero."""
    if not (math.isfinite(v) and math.isfinite(dt)):
        raise ValueError("v and dt must be finite")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    na = state.na
    if method == "euler":
        if dt > time_constant(params, v) / 2:
            warnings.warn(f"dt={dt:g}s exceeds tau/2 at v={v:g}V", StiffnessWarning, stacklevel=2)
        new = na + dt * _rate(params, na, v)
    elif method == "rk4":
        k1 = _rate(params, na, v)
        k2 = _rate(params, na + 0.5 * dt * k1, v)
        k3 = _rate(params, na + 0.5 * dt * k2, v)
        k4 = _rate(params, na + dt * k3, v)
        new = na + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    elif method == "exact":
        new = analytic_hold(params, state, v, dt).na
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return MemristorState(na=max(float(new), 0.0), t=state.t + dt)


def analytic_hold(params: DeviceParams, state: MemristorState, v: float,
                  duration: float) -> MemristorState:
    """Exact solution for a constant voltage held for ``duration``."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    nss = steady_state_pores(params, v)
    na = nss + (state.na - nss) * math.exp(-duration / time_constant(params, v))
    return MemristorState(na=float(na), t=state.t + duration)


def conductance(params, state_or_na):
    na = state_or_na.na if isinstance(state_or_na, MemristorState) else state_or_na
    return params.g_scale * na


def current(params: DeviceParams, state: MemristorState, v: float,
            noise: NoiseSpec | None = None, rng: np.random.Generator | None = None) -> float:
    """Observed current; additive Gaussian noise never feeds back into the state."""
    i = conductance(params, state) * v
    if noise is not None and noise.enabled:
        rng = rng if rng is not None else np.random.default_rng(noise.seed)
        i = i + rng.normal(0.0, noise.current_rms)
    return float(i)


# --- bulk integration -------------------------------------------------------
#
# With v held, the ODE is linear in na, so one step of any of the supported
# schemes maps na -> nss + (na - nss) * a(h) with h = dt / tau. Holding v for
# c steps applies a(h)**c, which equals c repeated step() calls whenever
# 0 <= a <= 1 (no clamping can occur). Other cases fall back to stepping.

def decay_factor(h, method: str):
    h = np.asarray(h, dtype=float)
    if method == "rk4":
        return 1.0 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
    if method == "euler":
        return 1.0 - h
    if method == "exact":
        return np.exp(-h)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _hold_lanes(params, na, v, dt, count, method):
    nss = steady_state_pores(params, v)
    tau = time_constant(params, v)
    h = dt / tau
    if method == "euler" and np.any(h > 0.5):
        warnings.warn(f"dt={dt:g}s exceeds tau/2 on some lanes", StiffnessWarning, stacklevel=3)
    a = decay_factor(h, method)
    if count == 1 or np.all((a >= 0) & (a <= 1)):
        return np.maximum(nss + (na - nss) * a**count, 0.0)
    for _ in range(count):
        na = np.maximum(nss + (na - nss) * a, 0.0)
    return na


def integrate_runs(params, levels, counts, dt: float, na0, method: str = "rk4"):
    """Integrate piecewise-constant drives with shared run boundaries.

    ``levels`` has shape (R, L): run r holds lane l at ``levels[r, l]`` for
    ``counts[r]`` steps of ``dt``. Returns pore densities at the end of every
    run, shape (R, L).
    """
    levels = np.atleast_2d(np.asarray(levels, dtype=float))
    counts = np.asarray(counts, dtype=int)
    if levels.shape[0] != counts.shape[0]:
        raise ValueError("levels and counts disagree on the number of runs")
    if np.any(counts < 1):
        raise ValueError("run counts must be >= 1")
    if not np.all(np.isfinite(levels)):
        raise ValueError("non-finite voltage in drive")
    na = np.array(np.broadcast_to(na0, levels.shape[1]), dtype=float)
    out = np.empty_like(levels)
    for r in range(levels.shape[0]):
        na = _hold_lanes(params, na, levels[r], dt, int(counts[r]), method)
        out[r] = na
    return out


def integrate_samples(params, v, dt: float, na0, method: str = "rk4", substeps: int = 1,
                      record=None):
    """Integrate per-lane sampled drives, shape (T, L), sample spacing ``dt``.

    Each sample is held for ``substeps`` integration steps of ``dt/substeps``.
    Returns the state at the end of every sample (or only at ``record``
    indices, in order).
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite voltage in drive")
    na = np.array(np.broadcast_to(na0, v.shape[1]), dtype=float)
    h = dt / substeps
    if record is None:
        out = np.empty_like(v)
        for k in range(v.shape[0]):
            na = _hold_lanes(params, na, v[k], h, substeps, method)
            out[k] = na
        return out
    record = np.asarray(record, dtype=int)
    out = np.empty((len(record), v.shape[1]))
    j = 0
    # index -1 means "before the first sample"
    while j < len(record) and record[j] < 0:
        out[j] = na
        j += 1
    for k in range(v.shape[0]):
        if j >= len(record):
            break
        na = _hold_lanes(params, na, v[k], h, substeps, method)
        while j < len(record) and record[j] == k:
            out[j] = na
            j += 1
    return out


def run_lengths(v) -> tuple[np.ndarray, np.ndarray]:
    """Collapse a 1-D sampled waveform into (levels, counts)."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return v, np.zeros(0, dtype=int)
    change = np.flatnonzero(np.diff(v) != 0) + 1
    starts = np.concatenate([[0], change])
    counts = np.diff(np.concatenate([starts, [v.size]]))
    return v[starts], counts


# --- presets ----------------------------------------------------------------

def _default_preset_text() -> str:
    path = os.environ.get(PRESETS_ENV)
    if path:
        return Path(path).read_text()
    return resources.files("memrc").joinpath("presets.json").read_text()


def load_presets(path: str | os.PathLike | None = None) -> dict[str, DeviceParams]:
    """Load device presets keyed by label.

    Falls back to ``$MEMRC_PRESETS`` and then to the bundled parameter table.
    """
    text = Path(path).read_text() if path is not None else _default_preset_text()
    raw = json.loads(text)
    if not isinstance(raw, dict):
        raise ValueError("preset document must be an object keyed by label")
    out = {}
    for label, entry in raw.items():
        entry = dict(entry)
        entry.setdefault("label", label)
        out[label] = DeviceParams.from_dict(entry)
    return out


def save_presets(presets: dict[str, DeviceParams], path) -> None:
    Path(path).write_text(json.dumps({k: p.to_dict() for k, p in presets.items()}, indent=2) + "\n")


def get_preset(label: str, presets: dict[str, DeviceParams] | None = None) -> DeviceParams:
    presets = load_presets() if presets is None else presets
    try:
        return presets[label]
    except KeyError:
        raise KeyError(f"unknown device {label!r}; known: {', '.join(presets)}") from None


STANDARD_BANK = ("1.0uM", "1.5uM", "2.0uM", "2.5uM", "3.0uM")


def standard_bank(labels: Iterable[str] = STANDARD_BANK) -> list[DeviceParams]:
    presets = load_presets()
    return [get_preset(lbl, presets) for lbl in labels]
