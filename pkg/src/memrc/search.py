"""Encoding-parameter grid search over (gamma, delta, dt_hold) for SONDS.

All (gamma, delta) cells that share a hold time are simulated together as
parallel lanes, so one pass over the input sequence serves the whole slice.
Each held value is integrated as ``n_sub = ceil(dt_hold / config.dt)`` steps
of ``dt_hold / n_sub``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .device import integrate_runs, steady_state_pores
from .errors import DegenerateInputError, SingularFitError
from .metrics import nmse
from .readout import predict_linear, train_linear
from .reservoir import ReservoirConfig
from .tasks import SondsDataset, seeded_rng

CSV_HEADER = ("gamma_V", "delta_V", "dt_s", "nmse_train", "nmse_test")


def _axis(values) -> tuple[float, ...]:
    out = tuple(float(x) for x in np.atleast_1d(values))
    if not out:
        raise ValueError("grid axes must be non-empty")
    return out


@dataclass(frozen=True)
class GridSpec:
    gamma_grid: tuple = tuple(np.linspace(0.020, 0.200, 20))
    delta_grid: tuple = tuple(np.linspace(0.0, 0.150, 20))
    dt_grid: tuple = tuple(np.geomspace(0.5e-3, 20e-3, 20))

    def __post_init__(self):
        for name in ("gamma_grid", "delta_grid", "dt_grid"):
            object.__setattr__(self, name, _axis(getattr(self, name)))
        if min(self.dt_grid) <= 0:
            raise ValueError("hold times must be > 0")

    @classmethod
    def default(cls, gamma_points=20, delta_points=20, dt_points=20,
                gamma_range=(0.020, 0.200), delta_range=(0.0, 0.150), dt_range=(0.5e-3, 20e-3)):
        return cls(tuple(np.linspace(*gamma_range, gamma_points)),
                   tuple(np.linspace(*delta_range, delta_points)),
                   tuple(np.geomspace(*dt_range, dt_points)))

    @property
    def size(self) -> int:
        return len(self.gamma_grid) * len(self.delta_grid) * len(self.dt_grid)

    def cells(self):
        return [(g, d, t) for t in self.dt_grid for g in self.gamma_grid for d in self.delta_grid]

    def neighborhood(self, gamma, delta, dt_hold, points=5, span=0.5) -> "GridSpec":
        """A finer grid centred on a cell; the cell itself is always included."""
        def around(x, lo_floor=None):
            lo = x * (1 - span) if x > 0 else -span * 0.01
            hi = x * (1 + span) if x > 0 else span * 0.01
            pts = np.linspace(lo, hi, points)
            if lo_floor is not None:
                pts = pts[pts > lo_floor]
            return tuple(np.unique(np.append(pts, x)))
        return GridSpec(around(gamma), around(delta), around(dt_hold, 0.0))


@dataclass
class GridResult:
    gamma: float
    delta: float
    dt_hold: float
    nmse_train: float = math.nan
    nmse_test: float = math.nan
    nmse_test_variance: float = math.nan
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and math.isfinite(self.nmse_test)

    def key(self):
        return (self.gamma, self.delta, self.dt_hold)


@dataclass
class GridReport:
    results: list[GridResult]  # ranked, failures last
    spec: GridSpec | None = None
    failures: list[GridResult] = field(default_factory=list)

    @property
    def best(self) -> GridResult:
        return self.results[0]

    def percentile_of(self, nmse_test: float) -> float:
        """Fraction of successful cells strictly better than ``nmse_test``."""
        vals = np.array([r.nmse_test for r in self.results if r.ok])
        return float(np.mean(vals < nmse_test)) if vals.size else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.results:
            w.writerow([repr(r.gamma), repr(r.delta), repr(r.dt_hold), repr(r.nmse_train), repr(r.nmse_test)])
        return buf.getvalue()


def _slice_states(config: ReservoirConfig, u: np.ndarray, pairs: np.ndarray, dt_hold: float,
                  washout: int, rng) -> np.ndarray:
    """End-of-hold conductances, shape (len(u) - washout, cells, m)."""
    m, c = config.m, len(pairs)
    n_sub = config.substeps(dt_hold)
    off = config.offset_array
    params = config.params.tile(c)
    levels = (u[:, None, None] * pairs[None, :, 0, None] + pairs[None, :, 1, None] + off[None, None, :])
    levels = levels.reshape(len(u), c * m)
    na0 = np.tile(steady_state_pores(config.params, off), c)
    na = integrate_runs(params, levels, np.full(len(u), n_sub), dt_hold / n_sub, na0, config.method)
    g = params.g_scale * na
    if config.noise.enabled:
        if np.any(levels == 0):
            raise DegenerateInputError("cannot observe conductance through current at 0 V")
        g = g + rng.normal(0.0, config.noise.current_rms, size=g.shape) / levels
    return g[washout:].reshape(len(u) - washout, c, m)


def score_slice(config: ReservoirConfig, train: SondsDataset, test: SondsDataset, dt_hold: float,
                pairs, washout: int = 50, slice_index: int = 0) -> list[GridResult]:
    """Evaluate every (gamma, delta) pair at one hold time."""
    pairs = np.atleast_2d(np.asarray(pairs, dtype=float))
    rng = seeded_rng(config.noise.seed, 1000 + slice_index)
    x_tr = _slice_states(config, np.asarray(train.u, float), pairs, dt_hold, washout, rng)
    x_te = _slice_states(config, np.asarray(test.u, float), pairs, dt_hold, washout, rng)
    y_tr = np.asarray(train.y[washout:], float)
    y_te = np.asarray(test.y[washout:], float)
    out = []
    for k, (g, d) in enumerate(pairs):
        res = GridResult(float(g), float(d), float(dt_hold))
        try:
            model = train_linear(x_tr[:, k], y_tr)
            res.nmse_train = nmse(predict_linear(model, x_tr[:, k]), y_tr, "power")
            p = predict_linear(model, x_te[:, k])
            res.nmse_test = nmse(p, y_te, "power")
            res.nmse_test_variance = nmse(p, y_te, "variance")
            if not math.isfinite(res.nmse_test):
                res.error = "non-finite prediction"
        except (SingularFitError, DegenerateInputError, ValueError, FloatingPointError) as exc:
            res.error = f"{type(exc).__name__}: {exc}"
        out.append(res)
    return out


def evaluate_cell(config, train, test, gamma, delta, dt_hold, washout=50) -> GridResult:
    return score_slice(config, train, test, dt_hold, [(gamma, delta)], washout)[0]


def _slice_job(args):
    return score_slice(*args)


def rank_results(results) -> list[GridResult]:
    """Sort by test NMSE; failed cells go last, ties by (delta_t, gamma, delta)."""
    def sort_key(r):
        return (not r.ok, r.nmse_test if r.ok else 0.0, r.dt_hold, r.gamma, r.delta)
    return sorted(results, key=sort_key)


def grid_search(config: ReservoirConfig, grid: GridSpec, train: SondsDataset, test: SondsDataset,
                washout: int = 50, workers: int = 1, progress=None) -> GridReport:
    """Run the simulated SONDS pipeline on every grid cell and rank them.

    ``workers > 1`` evaluates hold-time slices in a process pool; results do
    not depend on the worker count.
    """
    if not 0 <= washout < min(len(train), len(test)):
        raise ValueError("washout must be shorter than both datasets")
    pairs = [(g, d) for g in grid.gamma_grid for d in grid.delta_grid]
    jobs = [(config, train, test, t, pairs, washout, i) for i, t in enumerate(grid.dt_grid)]
    results: list[GridResult] = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, part in enumerate(pool.map(_slice_job, jobs)):
                results.extend(part)
                if progress:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            results.extend(_slice_job(job))
            if progress:
                progress(i + 1, len(jobs))
    ranked = rank_results(results)
    return GridReport(ranked, grid, [r for r in ranked if not r.ok])
