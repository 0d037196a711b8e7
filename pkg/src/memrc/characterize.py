"""Simulated device characterization and the parameter-fitting routine.

Traces follow a zero-order-hold convention: sample k at ``t = k*dt`` holds
``v[k]`` over ``[t, t + dt)`` and reports the current through the state at
``t``, so a voltage step shows up as an instantaneous Ohmic jump.

Fitting works on conductance ``g = i / v``. Since current fixes only the
product ``g_scale * n0``, the pore-density prefactor is recovered given the
device's conductance scale.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .device import DeviceParams, NoiseSpec, run_lengths, steady_state_pores, time_constant
from .errors import DegenerateInputError, InsufficientDataError, SingularFitError, TraceFormatError

TRACE_HEADER = ("t_s", "v_V", "i_A")
TARGET_CURRENT = 190e-9


@dataclass
class IvTrace:
    t: np.ndarray
    v: np.ndarray
    i: np.ndarray

    def __post_init__(self):
        self.t, self.v, self.i = (np.asarray(x, dtype=float) for x in (self.t, self.v, self.i))
        if not (self.t.ndim == self.v.ndim == self.i.ndim == 1):
            raise ValueError("trace arrays must be 1-D")
        if not len(self.t) == len(self.v) == len(self.i):
            raise ValueError("trace arrays differ in length")
        if len(self.t) < 2:
            raise ValueError("a trace needs at least two samples")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trace times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t)))

    def conductance(self) -> np.ndarray:
        """i / v, NaN where v == 0."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.v != 0, self.i / np.where(self.v != 0, self.v, 1.0), np.nan)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in zip(self.t, self.v, self.i):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "IvTrace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise TraceFormatError("empty file", 1)
        if tuple(c.strip() for c in rows[0]) != TRACE_HEADER:
            raise TraceFormatError(f"expected header {','.join(TRACE_HEADER)}", 1)
        data = []
        for n, r in enumerate(rows[1:], start=2):
            if not r:
                continue
            if len(r) != 3:
                raise TraceFormatError(f"expected 3 fields, got {len(r)}", n)
            try:
                vals = [float(x) for x in r]
            except ValueError:
                raise TraceFormatError(f"non-numeric field in {r!r}", n) from None
            if not all(math.isfinite(x) for x in vals):
                raise TraceFormatError("non-finite value", n)
            if data and vals[0] <= data[-1][0]:
                raise TraceFormatError("time not strictly increasing", n)
            data.append(vals)
        if len(data) < 2:
            raise TraceFormatError("need at least two data rows", len(rows))
        a = np.array(data)
        return cls(a[:, 0], a[:, 1], a[:, 2])


# --- simulation ------------------------------------------------------------------

def _factor(h: float, method: str) -> float:
    if method == "exact":
        return math.exp(-h)
    if method == "rk4":
        return 1.0 - h + h * h / 2 - h ** 3 / 6 + h ** 4 / 24
    if method == "euler":
        return 1.0 - h
    raise ValueError(f"unknown method {method!r}")


def hold_trace(params: DeviceParams, v, dt: float, na0: float | None = None,
               method: str = "exact") -> np.ndarray:
    """Pore density at the start of every sample of a zero-order-hold drive."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite voltage")
    na = np.empty(len(v))
    cur = steady_state_pores(params, float(v[0])) if na0 is None else float(na0)
    k = 0
    levels, counts = run_lengths(v)
    for lvl, c in zip(levels.tolist(), counts.tolist()):
        nss = steady_state_pores(params, lvl)
        a = _factor(dt / time_constant(params, lvl), method)
        if c == 1:
            na[k] = cur
            cur = max(nss + (cur - nss) * a, 0.0)
        elif 0.0 <= a <= 1.0:
            na[k:k + c] = nss + (cur - nss) * a ** np.arange(c)
            cur = nss + (cur - nss) * a ** c
        else:
            for j in range(c):
                na[k + j] = cur
                cur = max(nss + (cur - nss) * a, 0.0)
        k += c
    return na


def simulate_trace(params: DeviceParams, v, dt: float, na0: float | None = None, method: str = "exact",
                   noise: NoiseSpec = NoiseSpec(), t0: float = 0.0) -> IvTrace:
    """Current response to a sampled voltage; starts at equilibrium with v[0]."""
    v = np.asarray(v, dtype=float)
    i = params.g_scale * hold_trace(params, v, dt, na0, method) * v
    if noise.enabled:
        i = i + np.random.default_rng(noise.seed).normal(0.0, noise.current_rms, len(i))
    return IvTrace(t0 + dt * np.arange(len(v)), v, i)


def _triangle(v_max: float, half_period: float, dt: float) -> np.ndarray:
    m = int(round(half_period / dt))
    if m < 1:
        raise ValueError("dt too coarse for the requested ramp")
    up = v_max * np.arange(m + 1) / m
    return np.concatenate([up, up[-2::-1]])


def simulate_sweep(params: DeviceParams, rate: float = 2e-3, v_max: float = 0.170, dt: float = 1e-3,
                   method: str = "exact", noise: NoiseSpec = NoiseSpec()) -> IvTrace:
    """Triangular 0 -> v_max -> 0 ramp at ``rate`` V/s."""
    if not (rate > 0 and v_max > 0):
        raise ValueError("rate and v_max must be > 0")
    return simulate_trace(params, _triangle(v_max, v_max / rate, dt), dt, method=method, noise=noise)


def simulate_hysteresis(params: DeviceParams, freq: float = 0.2, v_max: float = 0.170, dt: float = 1e-3,
                        bipolar: bool = True, method: str = "exact", noise: NoiseSpec = NoiseSpec()) -> IvTrace:
    """One triangular period; bipolar runs 0 -> +v -> 0 -> -v -> 0."""
    if not freq > 0:
        raise ValueError("freq must be > 0")
    period = 1.0 / freq
    if bipolar:
        lobe = _triangle(v_max, period / 4, dt)
        v = np.concatenate([lobe, -lobe[1:]])
    else:
        v = _triangle(v_max, period / 2, dt)
    return simulate_trace(params, v, dt, method=method, noise=noise)


def loop_area(trace: IvTrace, normalize: bool = True) -> float:
    """Enclosed I-V area summed over lobes (sign-insensitive).

    Normalized by peak |i| times peak |v| when ``normalize``.
    """
    v, i = trace.v, trace.i
    sign = np.sign(v)
    area = 0.0
    # split at returns to 0 V so opposite-polarity lobes do not cancel
    zeros = np.flatnonzero(v == 0)
    bounds = np.unique(np.concatenate([[0], zeros, [len(v) - 1]]))
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a < 2 or not np.any(sign[a:b + 1]):
            continue
        vv, ii = v[a:b + 1], i[a:b + 1]
        area += abs(0.5 * np.sum((ii[1:] + ii[:-1]) * np.diff(vv)))
    if normalize:
        peak = np.max(np.abs(i)) * np.max(np.abs(v))
        return area / peak if peak > 0 else 0.0
    return area


@dataclass
class PpfResult:
    peak_a: float
    peak_b: float
    ppf_percent: float
    pw: float = math.nan
    ipi: float = math.nan

    def to_dict(self):
        return {"peak_a_A": self.peak_a, "peak_b_A": self.peak_b, "ppf_percent": self.ppf_percent,
                "pw_s": self.pw, "ipi_s": self.ipi}


def ppf_waveform(v_pulse, v_off, pw, ipi, dt, lead=None, tail=None):
    k_pw, k_ipi = int(round(pw / dt)), int(round(ipi / dt))
    if k_pw < 1 or k_ipi < 1:
        raise ValueError("pw and ipi must span at least one sample")
    lead = k_ipi if lead is None else int(round(lead / dt))
    tail = k_ipi if tail is None else int(round(tail / dt))
    parts = [(v_off, lead), (v_pulse, k_pw), (v_off, k_ipi), (v_pulse, k_pw), (v_off, tail)]
    v = np.concatenate([np.full(k, x, dtype=float) for x, k in parts if k > 0])
    a0 = lead
    b0 = lead + k_pw + k_ipi
    return v, (a0, a0 + k_pw), (b0, b0 + k_pw)


def ppf(params: DeviceParams, v_pulse: float = 0.170, v_off: float = 0.0, pw: float = 5e-3,
        ipi: float = 5e-3, dt: float = 1e-5, method: str = "exact", noise: NoiseSpec = NoiseSpec()) -> PpfResult:
    """Paired-pulse facilitation from the peak current in each pulse window.

    The device starts at the exact rest state for ``v_off``. Each window
    includes the sample just after the pulse so the end-of-pulse state is
    seen through the pulse voltage.
    """
    if not (pw > 0 and ipi > 0 and dt > 0):
        raise ValueError("pw, ipi and dt must be > 0")
    v, (a0, a1), (b0, b1) = ppf_waveform(v_pulse, v_off, pw, ipi, dt)
    na = hold_trace(params, v, dt, steady_state_pores(params, v_off), method)
    # state after the final pulse step lives at index a1 / b1
    i = params.g_scale * na * v_pulse
    if noise.enabled:
        i = i + np.random.default_rng(noise.seed).normal(0.0, noise.current_rms, len(i))
    peak_a = float(np.max(i[a0 + 1:a1 + 1]))
    peak_b = float(np.max(i[b0 + 1:b1 + 1]))
    if not peak_a > 0:
        raise DegenerateInputError("first-pulse peak is zero; PPF undefined")
    return PpfResult(peak_a, peak_b, (peak_b - peak_a) / peak_a * 100.0, pw, ipi)


def ppf_surface(params: DeviceParams, pw_grid, ipi_grid, v_pulse: float = 0.170, v_off: float = 0.0,
                dt: float = 1e-5, method: str = "exact") -> np.ndarray:
    """PPF percent with rows indexed by pulse width and columns by interval."""
    pw_grid, ipi_grid = np.atleast_1d(pw_grid), np.atleast_1d(ipi_grid)
    if pw_grid.size == 0 or ipi_grid.size == 0:
        raise ValueError("grids must be non-empty")
    return np.array([[ppf(params, v_pulse, v_off, float(pw), float(ipi), dt, method).ppf_percent
                      for ipi in ipi_grid] for pw in pw_grid])


def step_decay_waveform(v_high: float, v_lows, hold_high: float, hold_low: float, dt: float):
    k_hi, k_lo = int(round(hold_high / dt)), int(round(hold_low / dt))
    if k_hi < 1 or k_lo < 1:
        raise ValueError("holds must span at least one sample")
    parts = []
    for vl in np.atleast_1d(v_lows):
        parts += [np.full(k_hi, v_high), np.full(k_lo, float(vl))]
    return np.concatenate(parts)


def simulate_step_decay(params: DeviceParams, v_high: float | None = None, v_lows=None,
                        hold_high: float = 0.5, hold_low: float = 0.3, dt: float = 1e-4,
                        method: str = "exact", noise: NoiseSpec = NoiseSpec()) -> IvTrace:
    """Alternate v_high and each v_low; starts at equilibrium at v_high."""
    if not (hold_high > 0 and hold_low > 0):
        raise ValueError("holds must be > 0")
    v_high = params.v_high if v_high is None else v_high
    if v_high is None:
        raise ValueError("v_high required (device has no preset value)")
    v_lows = default_v_lows(v_high) if v_lows is None else v_lows
    v = step_decay_waveform(v_high, v_lows, hold_high, hold_low, dt)
    return simulate_trace(params, v, dt, method=method, noise=noise)


def default_v_lows(v_high: float, start: float = 0.010, step: float = 0.005, gap: float = 0.010) -> np.ndarray:
    """Low levels from 10 mV up to 10 mV below v_high, every 5 mV."""
    return np.arange(start, v_high - gap + 1e-12, step)


def calibrate_scale(params: DeviceParams, v_high: float, target_current: float = TARGET_CURRENT) -> float:
    """Conductance scale that makes the steady-state current at v_high equal the target."""
    if not (v_high > 0 and target_current > 0):
        raise ValueError("v_high and target_current must be > 0")
    return target_current / (v_high * steady_state_pores(params, v_high))


# --- fitting ---------------------------------------------------------------------

@dataclass
class DecayFit:
    g0: float
    tau: float
    residual: float
    n_points: int = 0
    v: float = math.nan


def _loglinear(x, y, w=None):
    """Weighted least squares of ln y on x; returns (intercept, slope, rms residual)."""
    x = np.asarray(x, float)
    ly = np.log(np.asarray(y, float))
    w = np.ones_like(x) if w is None else np.asarray(w, float)
    A = np.column_stack([np.ones_like(x), x]) * np.sqrt(w)[:, None]
    if np.ptp(x) == 0:
        raise SingularFitError("all abscissae identical", ["x"])
    coef, *_ = np.linalg.lstsq(A, ly * np.sqrt(w), rcond=None)
    res = ly - coef[0] - coef[1] * x
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.average(res ** 2, weights=w)))


def fit_decay(t, g, weights=None) -> DecayFit:
    """Log-linear fit of g(t) = g0 * exp(-t / tau)."""
    t, g = np.asarray(t, float), np.asarray(g, float)
    if len(t) < 3 or len(t) != len(g):
        raise InsufficientDataError("a decay fit needs at least 3 aligned points")
    if np.any(~np.isfinite(g)) or np.any(g <= 0):
        raise DegenerateInputError("decay fit needs strictly positive conductance")
    b, s, rms = _loglinear(t, g, weights)
    if not s < 0:
        raise SingularFitError("segment does not decay (slope >= 0)", ["g"])
    return DecayFit(math.exp(b), -1.0 / s, rms, len(t))


def fit_steady_state(v, n_ss) -> tuple[float, float]:
    """(n0, ve) from points on N = n0 * exp(v / ve)."""
    v, n_ss = np.asarray(v, float), np.asarray(n_ss, float)
    if np.any(n_ss <= 0):
        raise DegenerateInputError("steady-state values must be > 0")
    if len(np.unique(v)) < 2:
        raise SingularFitError("need at least two distinct voltages", ["v"])
    b, s, _ = _loglinear(v, n_ss)
    if s <= 0:
        raise SingularFitError("steady state does not grow with voltage", ["v"])
    return math.exp(b), 1.0 / s


def fit_tau_voltage(v, tau, vt: float) -> tuple[float, float, float, float]:
    """(tau01, vtau1, tau02, vtau2) from independent fits below / at-or-above vt."""
    v, tau = np.asarray(v, float), np.asarray(tau, float)
    sub = v < vt
    out = []
    for mask, name in ((sub, "sub-threshold"), (~sub, "supra-threshold")):
        if len(np.unique(v[mask])) < 2:
            raise InsufficientDataError(f"{name} branch has fewer than 2 distinct voltages")
        b, s, _ = _loglinear(v[mask], tau[mask])
        if s == 0:
            raise SingularFitError(f"{name} branch has no voltage dependence", ["tau"])
        out += [math.exp(b), 1.0 / s]
    return tuple(out)


def estimate_threshold(v, tau, min_branch: int = 2) -> float:
    """Knee of log tau vs v.

    Tries every split between consecutive voltages, keeps the one with the
    smallest total squared residual of the two branch line fits, and returns
    the intersection of those lines (clamped to the split interval).
    """
    order = np.argsort(v)
    v, lt = np.asarray(v, float)[order], np.log(np.asarray(tau, float)[order])
    if len(v) < 2 * min_branch:
        raise InsufficientDataError("not enough points to locate the threshold")
    best = None
    for k in range(min_branch, len(v) - min_branch + 1):
        if v[k] == v[k - 1]:
            continue
        fits, sse = [], 0.0
        for sl in (slice(0, k), slice(k, None)):
            A = np.column_stack([np.ones(len(v[sl])), v[sl]])
            coef, *_ = np.linalg.lstsq(A, lt[sl], rcond=None)
            sse += float(np.sum((lt[sl] - A @ coef) ** 2))
            fits.append(coef)
        if best is None or sse < best[0]:
            best = (sse, k, fits)
    if best is None:
        raise InsufficientDataError("no valid split point")
    _, k, ((b1, s1), (b2, s2)) = best
    lo, hi = v[k - 1], v[k]
    cross = (b2 - b1) / (s1 - s2) if s1 != s2 else 0.5 * (lo + hi)
    # keep the estimate inside the interval so branch membership stays as chosen
    return float(min(max(cross, lo + 1e-9), hi))


def sweep_steady_points(sweep: IvTrace, noise_rms: float = 0.0, agree: float = 0.02, snr: float = 20.0):
    """Quasi-steady (v, g) points from a triangular sweep.

    Up- and down-ramp samples at the same voltage are paired and their log
    conductances averaged, which cancels first-order lag. Pairs whose
    branches disagree beyond ``agree`` (plus a noise allowance) are dropped,
    as are low-SNR samples.
    """
    p = int(np.argmax(sweep.v))
    k = np.arange(1, min(p, len(sweep) - 1 - p) + 1)
    up, dn = p - k, p + k
    v = sweep.v[up]
    ok = (v > 0) & np.isclose(sweep.v[dn], v, rtol=1e-9, atol=1e-12)
    iu, idn = sweep.i[up], sweep.i[dn]
    ok &= (iu > 0) & (idn > 0)
    if noise_rms > 0:
        ok &= np.minimum(iu, idn) > snr * noise_rms
    with np.errstate(divide="ignore", invalid="ignore"):
        lu, ld = np.log(iu / v), np.log(idn / v)
        rel = noise_rms / np.minimum(iu, idn) if noise_rms > 0 else 0.0
    ok &= np.abs(lu - ld) < agree + 4 * np.sqrt(2) * rel
    if ok.sum() < 2:
        raise InsufficientDataError("sweep has fewer than 2 quasi-steady points")
    return v[ok], np.exp(0.5 * (lu[ok] + ld[ok]))


def decay_segments(trace: IvTrace, v_high: float | None = None):
    """(v_low, t_rel, g) for every low segment that follows a v_high hold."""
    levels, counts = run_lengths(trace.v)
    v_high = float(np.max(levels)) if v_high is None else v_high
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    out = []
    for r in range(1, len(levels)):
        if levels[r - 1] == v_high and levels[r] < v_high and levels[r] != 0:
            s, c = starts[r], counts[r]
            out.append((float(levels[r]), trace.t[s:s + c] - trace.t[s], trace.i[s:s + c] / levels[r]))
    return out


def fit_segment(t, g, dt: float, noise_g: float = 0.0, rel_floor: float = 1e-3,
                tail_frac: float = 0.2, iterations: int = 4) -> DecayFit:
    """Decay constant of one low segment with its baseline removed.

    The baseline starts as the mean of the segment tail and is corrected for
    the fitted exponential's remaining contribution there. Only the leading
    run of samples whose excess clears the floor is used, skipping 2*dt.
    """
    t, g = np.asarray(t, float), np.asarray(g, float)
    keep = t >= 2 * dt - 1e-12
    t, g = t[keep], g[keep]
    n_tail = max(3, int(len(g) * tail_frac))
    tt, gt = t[-n_tail:], g[-n_tail:]
    base = float(gt.mean())
    fit = None
    for _ in range(iterations):
        ex = g - base
        if not ex[0] > 0:
            raise DegenerateInputError("segment does not decay toward a lower baseline")
        floor = max(rel_floor * ex[0], 4.0 * noise_g)
        bad = np.flatnonzero(ex <= floor)
        n = bad[0] if bad.size else len(ex)
        if n < 3:
            raise InsufficientDataError("fewer than 3 samples above the noise floor")
        fit = fit_decay(t[:n], ex[:n], weights=ex[:n] ** 2)
        new = float(np.mean(gt - fit.g0 * np.exp(-tt / fit.tau)))
        if abs(new - base) <= 1e-12 * abs(base) + 1e-30:
            break
        base = new
    return fit


@dataclass
class FitReport:
    params: DeviceParams
    residuals: dict
    decays: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "residuals": self.residuals,
                "decays": [{"v_V": d.v, "tau_s": d.tau, "g0_S": d.g0, "rms": d.residual, "n": d.n_points}
                           for d in self.decays],
                "skipped": self.skipped}


def fit_device(sweep: IvTrace, decay: IvTrace, g_scale: float, v_high: float | None = None,
               noise_rms: float = 0.0, vt: float | None = None, label: str = "") -> FitReport:
    """Full pipeline: sweep -> (n0, ve); decays -> tau(v) -> threshold and branches."""
    vs, gs = sweep_steady_points(sweep, noise_rms)
    n0g, ve = fit_steady_state(vs, gs)
    n0 = n0g / g_scale
    ss_rms = _loglinear(vs, gs)[2]

    fits, skipped = [], []
    for vl, t, g in decay_segments(decay, v_high):
        try:
            f = fit_segment(t, g, decay.dt, noise_rms / abs(vl))
            f.v = vl
            fits.append(f)
        except (InsufficientDataError, DegenerateInputError, SingularFitError) as exc:
            skipped.append({"v_V": vl, "reason": str(exc)})
    if len(fits) < 4:
        raise InsufficientDataError(f"only {len(fits)} usable decay segments")
    v = np.array([f.v for f in fits])
    tau = np.array([f.tau for f in fits])
    vt_est = estimate_threshold(v, tau) if vt is None else vt
    tau01, vtau1, tau02, vtau2 = fit_tau_voltage(v, tau, vt_est)
    params = DeviceParams(n0=n0, ve=ve, tau01=tau01, vtau1=vtau1, tau02=tau02, vtau2=vtau2, vt=vt_est,
                          g_scale=g_scale, label=label,
                          v_high=v_high if v_high is not None else float(np.max(decay.v)))
    model_tau = time_constant(params, v)
    residuals = {"steady_state_log_rms": ss_rms, "steady_state_points": int(len(vs)),
                 "tau_log_rms": float(np.sqrt(np.mean(np.log(tau / model_tau) ** 2))),
                 "decay_segments": len(fits)}
    return FitReport(params, residuals, fits, skipped)


def synthetic_traces(params: DeviceParams, noise: NoiseSpec = NoiseSpec(), v_lows=None,
                     sweep_dt: float = 1e-3, decay_dt: float = 1e-4, method: str = "exact"):
    """The (sweep, step-decay) pair the fitting pipeline consumes."""
    sweep = simulate_sweep(params, dt=sweep_dt, method=method, noise=noise)
    decay = simulate_step_decay(params, v_lows=v_lows, dt=decay_dt, method=method,
                                noise=replace(noise, seed=noise.seed + 1) if noise.enabled else noise)
    return sweep, decay
