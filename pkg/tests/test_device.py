import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memrc.device import (
    DeviceParams,
    MemristorState,
    NoiseSpec,
    ParamArrays,
    StiffnessWarning,
    analytic_hold,
    conductance,
    current,
    decay_factor,
    derivative,
    integrate_runs,
    integrate_samples,
    load_presets,
    run_lengths,
    steady_state_pores,
    step,
    time_constant,
)

# Parameter table values, SI units.
TABLE = {
    "1.0uM": (0.0054, 0.044, 0.0454, 1e-3, 0.0114, 0.00085e-3, 0.107),
    "1.5uM": (0.0055, 1.3, 0.0454, 1e-3, 0.0142, 0.017e-3, 0.085),
    "2.0uM": (0.0056, 5.4, 0.0464, 1.1e-3, 0.0139, 0.019e-3, 0.079),
    "2.5uM": (0.0055, 22.4, 0.0444, 1e-3, 0.0165, 0.076e-3, 0.069),
    "3.0uM": (0.0057, 140.0, 0.0432, 1.1e-3, 0.019, 0.2e-3, 0.057),
}


@pytest.mark.parametrize("label", sorted(TABLE))
def test_presets_match_table(presets, label):
    ve, n0, vtau1, tau01, vtau2, tau02, vt = TABLE[label]
    p = presets[label]
    assert (p.ve, p.n0, p.vtau1, p.tau01, p.vtau2, p.tau02, p.vt) == pytest.approx(
        (ve, n0, vtau1, tau01, vtau2, tau02, vt), rel=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        DeviceParams(n0=1, ve=0, tau01=1, vtau1=1, tau02=1, vtau2=1, vt=0)
    with pytest.raises(ValueError):
        DeviceParams(n0=-1, ve=1, tau01=1, vtau1=1, tau02=1, vtau2=1, vt=0)
    with pytest.raises(ValueError):
        DeviceParams.from_dict({"n0": 1, "bogus": 2})


def test_params_roundtrip(p3):
    assert DeviceParams.from_dict(p3.to_dict()) == p3


# --- steady state -----------------------------------------------------------

def test_steady_state_at_zero(p3):
    assert steady_state_pores(p3, 0.0) == 140


def test_steady_state_one_efold(p3):
    assert steady_state_pores(p3, p3.ve) == pytest.approx(math.e * p3.n0, rel=1e-14)


def test_steady_state_57mV(p3):
    # 140 * exp(57 / 5.7)
    assert steady_state_pores(p3, 0.057) == pytest.approx(3083705.2112729405, rel=1e-12)


# --- time constant ----------------------------------------------------------

def test_tau_at_zero(p3):
    assert time_constant(p3, 0.0) == pytest.approx(1.1e-3, rel=1e-14)


def test_tau_supra_branch_owns_threshold(p3):
    at_vt = time_constant(p3, 0.057)
    assert at_vt == pytest.approx(0.0040171073846375, rel=1e-12)
    just_below = time_constant(p3, np.nextafter(0.057, 0))
    assert just_below == pytest.approx(0.0041154765039294, rel=1e-9)
    assert just_below != at_vt


def test_tau_sub_branch_1uM(p1):
    assert time_constant(p1, 0.050) == pytest.approx(0.0030081389120924, rel=1e-12)


def test_tau_vectorized_matches_scalar(p3):
    vs = np.linspace(-0.05, 0.2, 41)
    vec = time_constant(p3, vs)
    assert vec == pytest.approx([time_constant(p3, float(v)) for v in vs], rel=1e-14)


# --- derivative -------------------------------------------------------------

def test_derivative_zero_at_fixed_point(p3):
    v = 0.08
    assert derivative(p3, MemristorState(steady_state_pores(p3, v)), v) == 0


def test_derivative_from_empty(p3):
    assert derivative(p3, MemristorState(0.0), 0.0) == pytest.approx(127272.72727272726, rel=1e-12)


def test_derivative_negative_above_steady_state(p3):
    v = 0.05
    assert derivative(p3, MemristorState(2 * steady_state_pores(p3, v)), v) < 0


# --- step -------------------------------------------------------------------

@pytest.mark.parametrize("method", ["euler", "rk4", "exact"])
def test_step_fixed_point(p3, method):
    v = 0.03
    s = MemristorState(steady_state_pores(p3, v))
    assert step(p3, s, v, 1e-4, method).na == pytest.approx(s.na, rel=1e-14)


def test_step_rk4_reaches_steady_state(p3):
    v = 0.095
    s = MemristorState(0.0)
    dt = 1e-4
    n = math.ceil(10 * time_constant(p3, v) / dt)
    for _ in range(n):
        s = step(p3, s, v, dt)
    oracle = analytic_hold(p3, MemristorState(0.0), v, n * dt).na
    assert s.na == pytest.approx(oracle, rel=1e-4)
    assert s.na == pytest.approx(steady_state_pores(p3, v), rel=1e-4)
    assert s.t == pytest.approx(n * dt)


def test_euler_first_order_convergence(p3):
    v, dur = 0.02, 4e-3
    exact = analytic_hold(p3, MemristorState(0.0), v, dur).na
    errs = []
    for n in (40, 80, 160):
        s = MemristorState(0.0)
        for _ in range(n):
            s = step(p3, s, v, dur / n, "euler")
        errs.append(abs(s.na - exact))
    # halving dt halves the error for a first-order scheme
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)


def test_step_rejects_bad_input(p3):
    s = MemristorState(1.0)
    with pytest.raises(ValueError):
        step(p3, s, float("nan"), 1e-4)
    with pytest.raises(ValueError):
        step(p3, s, 0.1, float("inf"))
    with pytest.raises(ValueError):
        step(p3, s, 0.1, 0.0)
    with pytest.raises(ValueError):
        step(p3, s, 0.1, 1e-4, "midpoint")


def test_euler_stiffness_warning(p3):
    with pytest.warns(StiffnessWarning):
        step(p3, MemristorState(0.0), 0.0, 5e-3, "euler")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        step(p3, MemristorState(0.0), 0.0, 5e-3, "rk4")


# --- analytic hold ----------------------------------------------------------

def test_hold_zero_duration(p3):
    s = MemristorState(123.0, 0.5)
    assert analytic_hold(p3, s, 0.1, 0.0) == s


def test_hold_one_time_constant(p3):
    v = 0.07
    out = analytic_hold(p3, MemristorState(0.0), v, time_constant(p3, v))
    assert out.na == pytest.approx((1 - 1 / math.e) * steady_state_pores(p3, v), rel=1e-12)


def test_hold_asymptote(p3):
    v = 0.07
    out = analytic_hold(p3, MemristorState(0.0), v, 1e3)
    assert out.na == pytest.approx(steady_state_pores(p3, v), rel=1e-14)


# --- observation ------------------------------------------------------------

def test_conductance_zero_and_linear(p3):
    assert conductance(p3, MemristorState(0.0)) == 0
    g1 = conductance(p3, MemristorState(1e9))
    assert conductance(p3, MemristorState(2e9)) == pytest.approx(2 * g1, rel=1e-15)


def test_calibrated_conductance_at_v_high(p3):
    s = MemristorState(steady_state_pores(p3, 0.095))
    assert conductance(p3, s) == pytest.approx(0.190e-6 / 0.095, rel=1e-9)


def test_current_noiseless(p3):
    s = MemristorState(5e8)
    assert current(p3, s, 0.0) == 0
    assert current(p3, MemristorState(0.0), 0.15) == 0
    assert current(p3, s, 0.1) == pytest.approx(2 * current(p3, s, 0.05), rel=1e-15)


def test_current_noise_statistics(p3):
    s = MemristorState(5e8)
    rng = np.random.default_rng(3)
    noise = NoiseSpec(0.8e-9, seed=3)
    draws = np.array([current(p3, s, 0.1, noise, rng) for _ in range(4000)])
    clean = current(p3, s, 0.1)
    assert abs(draws.mean() - clean) < 4 * 0.8e-9 / math.sqrt(4000)
    assert draws.std() == pytest.approx(0.8e-9, rel=0.05)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)
    assert not NoiseSpec().enabled


# --- properties -------------------------------------------------------------

voltages = st.floats(min_value=-0.1, max_value=0.2, allow_nan=False)


@given(v=voltages, na0=st.floats(min_value=0, max_value=1e12))
@settings(max_examples=60, deadline=None)
def test_monotone_convergence(v, na0):
    p = load_presets()["2.0uM"]
    target = steady_state_pores(p, v)
    s = MemristorState(na0)
    gaps = []
    for _ in range(200):
        s = step(p, s, v, 1e-4)
        gaps.append(abs(s.na - target))
    assert all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(gaps, gaps[1:]))


@given(st.lists(st.tuples(st.floats(-0.3, 0.3), st.floats(1e-5, 5e-2)), min_size=1, max_size=8),
       st.sampled_from(["euler", "rk4", "exact"]))
@settings(max_examples=60, deadline=None)
def test_non_negative(segments, method):
    p = load_presets()["3.0uM"]
    s = MemristorState(0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StiffnessWarning)
        for v, dt in segments:
            s = step(p, s, v, dt, method)
            assert s.na >= 0


@given(st.floats(0.0, 0.25), st.floats(0.001, 0.05))
def test_steady_state_increasing_and_convex(v, dv):
    p = load_presets()["1.5uM"]
    a, b, c = (steady_state_pores(p, x) for x in (v - dv, v, v + dv))
    assert a < b < c
    assert b <= (a + c) / 2


@given(st.floats(-0.1, 0.3), st.floats(1e-4, 0.02))
def test_tau_increasing_within_branch(v, dv):
    p = load_presets()["2.5uM"]
    w = v + dv
    if (v < p.vt) == (w < p.vt):
        assert time_constant(p, w) > time_constant(p, v)


def test_pinched_at_zero_voltage(p3):
    rng = np.random.default_rng(0)
    for na in rng.uniform(0, 1e10, 20):
        assert current(p3, MemristorState(na), 0.0) == 0.0


# --- bulk engine vs. single steps ---------------------------------------------

@pytest.mark.parametrize("method", ["euler", "rk4", "exact"])
def test_integrate_runs_matches_repeated_steps(bank5, method):
    rng = np.random.default_rng(7)
    levels = rng.uniform(0.0, 0.17, size=(12, 1))
    counts = rng.integers(1, 40, size=12)
    dt = 1e-4
    params = ParamArrays.stack(bank5)
    na0 = np.array([steady_state_pores(p, 0.0) for p in bank5])
    lanes = np.repeat(levels, len(bank5), axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StiffnessWarning)
        got = integrate_runs(params, lanes, counts, dt, na0, method)
        for j, p in enumerate(bank5):
            s = MemristorState(na0[j])
            for r, (v, c) in enumerate(zip(levels[:, 0], counts)):
                for _ in range(c):
                    s = step(p, s, float(v), dt, method)
                assert got[r, j] == pytest.approx(s.na, rel=1e-10, abs=1e-300)


def test_integrate_samples_matches_runs(p3):
    params = ParamArrays.stack([p3])
    v = np.repeat([0.05, 0.12, 0.0, 0.09], [7, 3, 11, 5])
    na0 = steady_state_pores(p3, 0.05)
    per_sample = integrate_samples(params, v[:, None], 1e-4, na0)
    levels, counts = run_lengths(v)
    runs = integrate_runs(params, levels[:, None], counts, 1e-4, na0)
    ends = np.cumsum(counts) - 1
    assert per_sample[ends, 0] == pytest.approx(runs[:, 0], rel=1e-12)
    rec = integrate_samples(params, v[:, None], 1e-4, na0, record=[-1, 3, 25])
    assert rec[0, 0] == na0
    assert rec[1:, 0] == pytest.approx(per_sample[[3, 25], 0], rel=1e-15)


def test_substeps_equal_finer_sampling(p3):
    params = ParamArrays.stack([p3])
    v = np.array([0.08, 0.02, 0.15])
    coarse = integrate_samples(params, v, 1e-3, 0.0, substeps=10)
    fine = integrate_samples(params, np.repeat(v, 10), 1e-4, 0.0)
    assert coarse[:, 0] == pytest.approx(fine[9::10, 0], rel=1e-12)


def test_decay_factor_rk4_polynomial():
    h = np.array([0.0, 0.1, 1.0])
    assert decay_factor(h, "rk4") == pytest.approx([1.0, 0.9048375, 0.375], rel=1e-6)
    with pytest.raises(ValueError):
        decay_factor(h, "bogus")


def test_run_lengths():
    levels, counts = run_lengths([1, 1, 2, 2, 2, 1])
    assert list(levels) == [1, 2, 1]
    assert list(counts) == [2, 3, 1]
