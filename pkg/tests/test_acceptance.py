"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
happen; they are also collected in the terminal summary.
"""

import time

import numpy as np

from memrc.characterize import fit_device, ppf, synthetic_traces
from memrc.device import STANDARD_BANK, MemristorState, NoiseSpec, analytic_hold, steady_state_pores, step
from memrc.metrics import nmse
from memrc.pipelines import neuro_features, neuro_readout, sonds_experiment
from memrc.readout import ConvFcArch, FcArch, TrainConfig, init_convfc, init_fc, one_hot, param_count
from memrc.reservoir import ReservoirConfig
from memrc.search import GridSpec, evaluate_cell, grid_search
from memrc.tasks import EncodingParams, gen_sonds

PARAM_NAMES = ("n0", "ve", "tau01", "vtau1", "tau02", "vtau2", "vt")


def test_criterion_01_sonds_five_device_nmse(bank5, record):
    enc = EncodingParams(gamma=0.160, delta=0.090, dt_hold=3e-3)
    vals, times = [], []
    for seed in range(5):
        t0 = time.perf_counter()
        vals.append(sonds_experiment(ReservoirConfig(bank5), enc, seed=seed, washout=50).nmse_test)
        times.append(time.perf_counter() - t0)
    ok = max(vals) <= 1e-3 and max(times) < 30
    record(1, ok, f"test NMSE per seed {[f'{v:.2e}' for v in vals]} (need <= 1e-3), "
                  f"slowest run {max(times):.2f}s (need < 30s)")
    assert ok


def test_criterion_02_device_count_trend(presets, bank5, record):
    enc = EncodingParams(gamma=0.160, delta=0.090, dt_hold=3e-3)
    one = sonds_experiment(ReservoirConfig([presets["3.0uM"]]), enc, seed=0).nmse_test
    five = sonds_experiment(ReservoirConfig(bank5), enc, seed=0).nmse_test
    ok = five < 0.5 * one
    record(2, ok, f"NMSE(1 device)={one:.3e}, NMSE(5 devices)={five:.3e}, ratio {five / one:.3f} (need < 0.5)")
    assert ok


def test_criterion_03_neural_classification(presets, record):
    t0 = time.perf_counter()
    rc = ReservoirConfig([presets["3.0uM"]] * 3, offsets=(0.085, 0.090, 0.095))
    feats = neuro_features(rc, seed=0)
    fc = neuro_readout(feats, "fc", cfg=TrainConfig())
    conv = neuro_readout(feats, "convfc", f=9, cfg=TrainConfig())
    elapsed = time.perf_counter() - t0
    ok = (fc.test_accuracy >= 0.90 and conv.test_accuracy >= 0.94
          and conv.test_accuracy > fc.test_accuracy and elapsed < 300)
    record(3, ok, f"FC {fc.test_accuracy:.2%} (need >= 90%), conv+FC {conv.test_accuracy:.2%} (need >= 94% "
                  f"and > FC), {elapsed:.0f}s (need < 300s)")
    assert ok


def test_criterion_04_parameter_counts(record):
    got = (param_count(FcArch(60)), param_count(FcArch(465)),
           param_count(ConvFcArch(3, 20, 9)), param_count(ConvFcArch(1, 20, 13)))
    # the instantiated models must agree with the formula
    cfg = TrainConfig()
    built = (init_fc(60, cfg).n_params, init_fc(465, cfg).n_params,
             init_convfc(3, 20, 9, cfg).n_params, init_convfc(1, 20, 13, cfg).n_params)
    ok = got == built == (244, 1864, 80, 50)
    record(4, ok, f"fc(60), fc(465), convfc(3,20,9), convfc(1,20,13) = {got}; models report {built}")
    assert ok


def test_criterion_05_ppf_orderings(presets, record):
    labels = list(STANDARD_BANK)
    p5 = [ppf(presets[k], v_pulse=0.170, pw=5e-3, ipi=5e-3).ppf_percent for k in labels]
    p20 = [ppf(presets[k], v_pulse=0.170, pw=20e-3, ipi=5e-3).ppf_percent for k in labels]
    inc = bool(np.all(np.diff(p5) > 0))
    dec = bool(np.all(np.diff(p20) < 0))
    p3 = p5[labels.index("3.0uM")]
    in_band = 60.0 <= p3 <= 140.0
    ok = inc and dec and in_band
    record(5, ok, f"PPF% pw=5ms {[round(x, 2) for x in p5]} increasing={inc}; "
                  f"pw=20ms {[round(x, 2) for x in p20]} decreasing={dec}; 3uM {p3:.2f}% in [60,140]={in_band}")
    assert ok


def test_criterion_06_fit_roundtrip(presets, record):
    t0 = time.perf_counter()
    worst_clean, worst_noisy, notes = 0.0, 0.0, []
    for k in STANDARD_BANK:
        p = presets[k]
        clean = fit_device(*synthetic_traces(p), g_scale=p.g_scale).params
        errs = {n: abs(getattr(clean, n) / getattr(p, n) - 1) for n in PARAM_NAMES}
        noise = NoiseSpec(0.8e-9, seed=0)
        noisy = fit_device(*synthetic_traces(p, noise), g_scale=p.g_scale, noise_rms=noise.current_rms).params
        nerr = {n: abs(getattr(noisy, n) / getattr(p, n) - 1) for n in ("ve", "tau01")}
        worst_clean = max(worst_clean, max(errs.values()))
        worst_noisy = max(worst_noisy, max(nerr.values()))
        notes.append(f"{k}: {max(errs, key=errs.get)} {max(errs.values()):.2%} / noisy {max(nerr.values()):.2%}")
    elapsed = time.perf_counter() - t0
    ok = worst_clean < 0.05 and worst_noisy < 0.10 and elapsed < 60
    record(6, ok, f"worst noiseless {worst_clean:.2%} (need < 5%), worst noisy V_e/tau01 {worst_noisy:.2%} "
                  f"(need < 10%), {elapsed:.1f}s (need < 60s); " + "; ".join(notes))
    assert ok


def test_criterion_07_integration_oracle(presets, record):
    dt, worst = 1e-4, 0.0
    for k in STANDARD_BANK:
        p = presets[k]
        rng = np.random.default_rng([7, STANDARD_BANK.index(k)])
        for _ in range(100):
            n_seg = int(rng.integers(3, 12))
            s = ref = MemristorState(steady_state_pores(p, 0.0))
            for v, c in zip(rng.uniform(0.0, 0.170, n_seg), rng.integers(1, 60, n_seg)):
                for _ in range(int(c)):
                    s = step(p, s, float(v), dt, "rk4")
                    ref = analytic_hold(p, ref, float(v), dt)
                    # conductance is g_scale * na, so the relative error is the same
                    worst = max(worst, abs(s.na - ref.na) / ref.na)
    ok = worst < 1e-4
    record(7, ok, f"max relative conductance error {worst:.2e} over 5 x 100 waveforms (need < 1e-4)")
    assert ok


def _numeric_grad(model, X, Y, eps=1e-5):
    theta = model.flat()
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = eps
        g[k] = (model.with_flat(theta + e).grad(X, Y)[0] - model.with_flat(theta - e).grad(X, Y)[0]) / (2 * eps)
    return g


def test_criterion_08_gradient_checks(record):
    worst = {"fc": 0.0, "convfc": 0.0}
    for point in range(20):
        rng = np.random.default_rng([8, point])
        Y = one_hot(rng.integers(0, 4, 16))
        cfg = TrainConfig(seed=point, init_scale=1.0)
        for kind, model, X in (("fc", init_fc(12, cfg), rng.normal(size=(16, 12))),
                               ("convfc", init_convfc(3, 10, 4, cfg), rng.normal(size=(16, 3, 10)))):
            analytic = model.grad(X, Y)[1]
            numeric = _numeric_grad(model, X, Y)
            rel = np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric))
            worst[kind] = max(worst[kind], rel)
    ok = max(worst.values()) < 1e-4
    record(8, ok, f"max relative gradient error FC {worst['fc']:.1e}, conv+FC {worst['convfc']:.1e} "
                  f"at 20 points each (need < 1e-4)")
    assert ok


def test_criterion_09_grid_search_decile(bank5, record):
    t0 = time.perf_counter()
    cfg = ReservoirConfig(bank5)
    train, test = gen_sonds(seed=0)
    report = grid_search(cfg, GridSpec(), train, test, washout=50)
    # the named cell is not a node of the default axes, so it is scored on its own
    cell = evaluate_cell(cfg, train, test, 0.070, 0.050, 3e-3, washout=50)
    frac = report.percentile_of(cell.nmse_test)
    elapsed = time.perf_counter() - t0
    ok = cell.ok and frac <= 0.10 and elapsed < 1800 and len(report.results) == 8000
    record(9, ok, f"cell (70mV, 50mV, 3ms) NMSE {cell.nmse_test:.2e} beaten by {frac:.1%} of "
                  f"{len(report.results)} cells (need <= 10%), {elapsed:.0f}s (need < 1800s)")
    assert ok


def test_criterion_10_nmse_definitions(record):
    rng = np.random.default_rng(10)
    same, unit = True, True
    for _ in range(50):
        # dyadic values keep every partial sum exact, so the mean is exactly zero
        half = rng.integers(-4096, 4097, size=int(rng.integers(1, 40))) / 1024.0
        y = rng.permutation(np.concatenate([half, -half]))
        if not np.any(y):
            continue
        assert np.mean(y) == 0.0
        p = rng.normal(size=y.size)
        same &= nmse(p, y, "power") == nmse(p, y, "variance")
        unit &= nmse(np.zeros_like(y), y, "power") == 1.0
    ok = bool(same and unit)
    record(10, ok, f"power == variance on zero-mean targets: {bool(same)}; zero predictor gives exactly 1: {bool(unit)}")
    assert ok
