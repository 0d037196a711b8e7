import math

import numpy as np
import pytest

from memrc.pipelines import sonds_experiment
from memrc.reservoir import ReservoirConfig
from memrc.search import CSV_HEADER, GridReport, GridResult, GridSpec, evaluate_cell, grid_search, rank_results
from memrc.tasks import EncodingParams, gen_sonds


@pytest.fixture(scope="module")
def data():
    return gen_sonds(120, 120, seed=0)


@pytest.fixture(scope="module")
def cfg(bank5):
    return ReservoirConfig(bank5)


def test_default_grid_shape():
    g = GridSpec()
    assert g.size == 8000
    assert g.gamma_grid[0] == pytest.approx(0.02) and g.gamma_grid[-1] == pytest.approx(0.2)
    assert g.dt_grid[0] == pytest.approx(0.5e-3) and g.dt_grid[-1] == pytest.approx(20e-3)
    assert np.allclose(np.diff(np.log(g.dt_grid)), np.log(40) / 19)
    with pytest.raises(ValueError):
        GridSpec(dt_grid=(0.0,))
    with pytest.raises(ValueError):
        GridSpec(gamma_grid=())


def test_single_cell_grid_matches_pipeline(cfg, data):
    tr, te = data
    rep = grid_search(cfg, GridSpec((0.07,), (0.05,), (3e-3,)), tr, te, washout=20)
    assert len(rep.results) == 1 and rep.best.ok
    res = sonds_experiment(cfg, EncodingParams(0.07, 0.05, 3e-3), seed=0, washout=20, n_train=120, n_test=120)
    assert rep.best.nmse_test == pytest.approx(res.nmse_test, rel=1e-9)
    assert rep.best.nmse_train == pytest.approx(res.nmse_train, rel=1e-9)
    cell = evaluate_cell(cfg, tr, te, 0.07, 0.05, 3e-3, washout=20)
    assert cell.nmse_test == rep.best.nmse_test


def test_lanes_independent_of_grid_composition(cfg, data):
    tr, te = data
    big = grid_search(cfg, GridSpec((0.05, 0.1), (0.0, 0.08), (1e-3, 4e-3)), tr, te, washout=20)
    assert len(big.results) == 8
    for r in big.results:
        alone = evaluate_cell(cfg, tr, te, r.gamma, r.delta, r.dt_hold, washout=20)
        assert alone.nmse_test == pytest.approx(r.nmse_test, rel=1e-10)


def test_ranking_and_order_invariance(cfg, data):
    tr, te = data
    a = grid_search(cfg, GridSpec((0.05, 0.1), (0.0, 0.08), (1e-3,)), tr, te, washout=20)
    b = grid_search(cfg, GridSpec((0.1, 0.05), (0.08, 0.0), (1e-3,)), tr, te, washout=20)
    assert [r.key() for r in a.results] == [r.key() for r in b.results]
    vals = [r.nmse_test for r in a.results]
    assert vals == sorted(vals)
    assert a.to_csv() == b.to_csv()


def test_refinement_never_worse(cfg, data):
    tr, te = data
    coarse = grid_search(cfg, GridSpec((0.05, 0.1), (0.0, 0.08), (2e-3,)), tr, te, washout=20)
    b = coarse.best
    fine = grid_search(cfg, GridSpec().neighborhood(b.gamma, b.delta, b.dt_hold, points=3), tr, te, washout=20)
    assert fine.best.nmse_test <= b.nmse_test


def test_neighborhood_contains_centre():
    g = GridSpec().neighborhood(0.07, 0.0, 3e-3, points=5)
    assert 0.07 in g.gamma_grid and 0.0 in g.delta_grid and 3e-3 in g.dt_grid
    assert min(g.dt_grid) > 0


def test_failures_recorded_and_ranked_last(p3, data):
    tr, te = data
    # gamma = delta = 0 pins the device at rest; the constant column must fail the fit, not the search
    rep = grid_search(ReservoirConfig([p3]), GridSpec((0.0, 0.1), (0.0,), (1e-3,)), tr, te, washout=20)
    assert len(rep.results) == 2 and len(rep.failures) == 1
    assert rep.results[-1].gamma == 0.0 and not rep.results[-1].ok
    assert "SingularFitError" in rep.failures[0].error
    assert rep.best.ok


def test_percentile_of():
    rs = [GridResult(0, 0, 1, nmse_test=v) for v in (0.1, 0.2, 0.3, 0.4)]
    rep = GridReport(rank_results(rs + [GridResult(0, 0, 1, error="x")]))
    assert rep.percentile_of(0.25) == 0.5
    assert rep.percentile_of(0.1) == 0.0
    assert rep.percentile_of(1.0) == 1.0
    assert math.isnan(GridReport([]).percentile_of(0.1))


def test_csv_header_and_rows(cfg, data):
    tr, te = data
    rep = grid_search(cfg, GridSpec((0.05,), (0.0, 0.08), (1e-3,)), tr, te, washout=20)
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 3
    assert float(lines[1].split(",")[4]) == rep.best.nmse_test


def test_workers_do_not_change_results(cfg, data):
    tr, te = data
    spec = GridSpec((0.06,), (0.05,), (1e-3, 2e-3))
    one = grid_search(cfg, spec, tr, te, washout=20)
    two = grid_search(cfg, spec, tr, te, washout=20, workers=2)
    assert one.to_csv() == two.to_csv()


def test_washout_validation(cfg, data):
    tr, te = data
    with pytest.raises(ValueError):
        grid_search(cfg, GridSpec((0.05,), (0.0,), (1e-3,)), tr, te, washout=120)
