import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastrevert.experiments import (ExperimentReport, bessel_dominance_fraction, bootstrap_ci,
                                    cir_constants, cir_max_bound_check,
                                    concatenation_identity_check, ergodic_horizon_study,
                                    ergodic_time_average, exp_inequality_check,
                                    incomplete_gamma_bound_check, inequality_suite,
                                    lhs_functional, local_window_average, moment_growth_check,
                                    sandwich_check, sp_error_study)
from fastrevert.grids import NoiseSource, TimeGrid
from fastrevert.model import CoefficientModel, ScalingConfig
from fastrevert.sde import CirParams, MisuseError, SamplePath, simulate_X


def _path(rf, eps=0.1, n=1000, n_paths=3, seed=0, cm=None):
    cm = cm or CoefficientModel.constant()
    return simulate_X(cm, rf, ScalingConfig(eps), TimeGrid.uniform(1.0, n), rng=NoiseSource(seed),
                      n_paths=n_paths)


def test_lhs_functional_constant_observable(linear, one):
    p = _path(linear)
    curve = lhs_functional(p, None, None, one, 0.1)
    assert np.allclose(curve.lhs_values, p.grid.nodes)


def test_lhs_functional_zero_coefficients(linear, square):
    p = _path(linear)
    zero = np.zeros_like(p.values)
    assert np.all(lhs_functional(p, zero, None, square, 0.1).lhs_values == 0)
    # K = 0 evaluates f at the origin, which is 0 for x^2
    assert np.all(lhs_functional(p, None, zero, square, 0.1).lhs_values == 0)


def test_lhs_functional_is_additive_in_H(linear, square):
    p = _path(linear)
    h1 = np.full_like(p.values, 0.7)
    h2 = np.full_like(p.values, 1.9)
    a = lhs_functional(p, h1, None, square, 0.1).lhs_values
    b = lhs_functional(p, h2, None, square, 0.1).lhs_values
    c = lhs_functional(p, h1 + h2, None, square, 0.1).lhs_values
    assert np.allclose(a + b, c, rtol=1e-13)


def test_lhs_functional_grid_mismatch(linear, one):
    p = _path(linear)
    with pytest.raises(ValueError):
        lhs_functional(p, np.ones((3, 10)), None, one, 0.1)


def test_local_window_average(linear, one, square):
    p = _path(linear)
    assert np.allclose(local_window_average(p, None, None, one, 0.5, 0.1), 1.0)
    assert local_window_average(p, None, None, square, 0.5, 0.1).shape == (3,)
    with pytest.raises(ValueError):
        local_window_average(p, None, None, one, 0.95, 0.1)
    with pytest.raises(MisuseError):
        local_window_average(p, None, None, one, 0.5, 0.10005)


def test_sp_study_constant_observable_is_exact(linear, one):
    r = sp_error_study(CoefficientModel.constant(), linear, one, [0.2, 0.1], dt=1e-3,
                       n_paths=10, n_boot=50)
    assert all(row["sp_norm"] == 0.0 for row in r.rows)
    assert r.flags["max_abs_error"] == 0.0


def test_sp_study_single_path_has_no_ci(linear, square):
    r = sp_error_study(CoefficientModel.constant(), linear, square, [0.2], dt=1e-3, n_paths=1,
                       n_boot=50)
    assert r.flags["ci_usable"] is False


def test_sp_study_same_seed_is_bit_stable(linear, square):
    kw = dict(dt=1e-3, n_paths=8, n_boot=50, rng=5)
    cm = CoefficientModel.constant()
    a = sp_error_study(cm, linear, square, [0.2, 0.1], **kw)
    b = sp_error_study(cm, linear, square, [0.2, 0.1], **kw)
    c = sp_error_study(cm, linear, square, [0.2, 0.1], workers=2, **kw)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict()) == json.dumps(c.to_dict())


def test_report_csv(tmp_path):
    r = ExperimentReport("demo", [{"a": 0.1, "b": True, "c": float("nan")}], {"pass_x": True},
                         {}, ("a", "b", "c"))
    r.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines() == ["a,b,c", "0.10000000000000001,true,nan"]
    assert r.passed


def test_bootstrap_ci_brackets_mean():
    gen = np.random.default_rng(0)
    x = gen.normal(size=400)
    lo, hi = bootstrap_ci(x, lambda b: b.mean(axis=1), 500, np.random.default_rng(1))
    assert lo < x.mean() < hi
    assert hi - lo == pytest.approx(2 * 1.96 / 20, rel=0.2)


def test_cir_constants_reference_instance():
    c = cir_constants(1.0, 1.0, 1.0, 0)
    assert (c.c1, c.c2) == (216.0, 54.0)
    assert not c.overflow


def test_cir_constants_monotone_in_n():
    vals = [cir_constants(1.0, 0.5, 1.0, n).c1 for n in range(6)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_cir_constants_overflow_and_validation():
    c = cir_constants(1.0, 1e-3, 1.0, 200)
    assert c.overflow and math.isinf(c.c1)
    with pytest.raises(ValueError):
        cir_constants(1.0, 1.0, 1.0, -1)
    with pytest.raises(ValueError):
        cir_constants(0.0, 1.0, 1.0, 1)


def test_cir_bound_trivial_cases():
    params = CirParams(1.0, 0.25, 2.0, 1.0)
    r = cir_max_bound_check(params, 0, horizon=1.0, n_paths=20, dt=0.01)
    assert r.mc_estimate == 1.0 and r.passed
    r = cir_max_bound_check(params, 1, horizon=1.0, n_paths=50, dt=0.01)
    # log(1 v 1) = 0: the bound reduces to C1
    assert r.bound == r.C1 and r.passed


def test_incomplete_gamma_examples():
    lhs, rhs, ok = incomplete_gamma_bound_check(2.0, 0, 0.5)
    assert lhs / rhs == pytest.approx(1 / 3, rel=1e-14) and ok
    lhs, rhs, ok = incomplete_gamma_bound_check(1.0, 1, 1.0)
    assert lhs == pytest.approx(2 / math.e, rel=1e-14)
    assert rhs == pytest.approx(3 / math.e, rel=1e-14)
    with pytest.raises(ValueError):
        incomplete_gamma_bound_check(1.0, 1, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10), st.integers(0, 6), st.floats(1.0, 50.0))
def test_incomplete_gamma_bound_property(gamma, n, mult):
    lhs, rhs, ok = incomplete_gamma_bound_check(gamma, n, mult / gamma)
    assert ok


def test_exp_inequalities_at_boundary():
    rows = exp_inequality_check(1.0, 0.0, offsets=(0.0,))
    pos = [r for r in rows if r["form"] == "positive"][0]
    # at x = y + log 2 / gamma the positive form is an equality
    assert abs(pos["margin"]) < 1e-15
    assert all(r["passed"] for r in rows)
    with pytest.raises(ValueError):
        exp_inequality_check(0.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 20), st.floats(0, 20), st.floats(0, 1000))
def test_exp_inequalities_property(gamma, y, off):
    assert all(r["margin"] >= -1e-14 for r in exp_inequality_check(gamma, y, offsets=(off,)))


def test_inequality_suite_passes():
    r = inequality_suite()
    assert r.passed
    assert r.flags["max_gamma_ratio"] <= 1.0


def test_concatenation_identity(linear, square):
    p = _path(linear, n=1000)
    assert concatenation_identity_check(p, None, None, square, 0.01, 0.0) == 0.0
    assert concatenation_identity_check(p, None, None, square, 0.01, 0.5) < 1e-10
    assert concatenation_identity_check(p, None, None, square, 0.01, 1.0) < 1e-10
    with pytest.raises(MisuseError):
        concatenation_identity_check(p, None, None, square, 0.0105, 0.5)


def test_concatenation_identity_constant_observable(linear, one):
    p = _path(linear, n=1000)
    assert concatenation_identity_check(p, None, None, one, 0.01, 0.3) < 1e-13


def test_sandwich_constant_observable_factors(linear, one):
    r = sandwich_check(linear, one, CoefficientModel.constant(), 0.1, 0.1, n_windows=3)
    row = r.rows[0]
    assert row["lower"] == pytest.approx(0.81)
    assert row["average"] == pytest.approx(1.0)
    assert row["upper"] == pytest.approx(1.21)
    assert r.passed


def test_sandwich_orders_windows(cubic, square):
    r = sandwich_check(cubic, square, CoefficientModel.constant(), 0.1, 0.2, n_windows=5, rng=3)
    assert r.flags["n_violations"] == 0


def test_sandwich_requires_zero_b(linear, one):
    with pytest.raises(MisuseError):
        sandwich_check(linear, one, CoefficientModel.constant(b=1.0), 0.1, 0.1, n_windows=2)
    with pytest.raises(ValueError):
        sandwich_check(linear, one, CoefficientModel.constant(), 0.1, 1.5, n_windows=2)


def test_bessel_dominance_short_run(linear):
    frac = bessel_dominance_fraction(linear, horizon=1.0, dt=1e-3, n_paths=10)
    assert 0.5 < frac <= 1.0
    assert bessel_dominance_fraction(linear, horizon=1.0, dt=1e-3, n_paths=10) == frac


def test_ergodic_time_average_is_reproducible(linear, square):
    a = ergodic_time_average(linear, square, 1, 1, 1, 0.0, "+", horizon=50, dt=0.01, rng=1,
                             checkpoints=(10,))
    b = ergodic_time_average(linear, square, 1, 1, 1, 0.0, "+", horizon=50, dt=0.01, rng=1)
    assert a.time_average == b.time_average
    assert a.target == pytest.approx(0.5, rel=1e-8)
    assert len(a.checkpoint_averages) == 1


def test_ergodic_study_report_fields(linear, square):
    r = ergodic_horizon_study(linear, square, horizons=(10, 100), n_repeats=3, dt=0.05, rng=0)
    assert set(r.flags) >= {"pass_within_tolerance", "pass_deviation_shrinks", "shrink_count"}
    assert len(r.rows) == 3


def test_moment_growth_small(linear):
    r = moment_growth_check(CoefficientModel.constant(horizon=0.05, kappa=1.0), linear, 2, [0.1],
                            n_paths=400, dt=1e-4, block=200)
    row = r.rows[0]
    assert row["sup_pointwise_moment"] == pytest.approx(0.5, rel=0.15)
    assert row["running_max_moment"] < row["theoretical_bound"]


def test_misaligned_window_path(linear, one):
    g = TimeGrid(np.array([0.0, 0.3, 1.0]))
    p = SamplePath(g, np.zeros((1, 3)), np.zeros((1, 2)), "W", "x",
                   coefficients={"H": np.ones((1, 3)), "K": np.ones((1, 3))})
    with pytest.raises(MisuseError):
        local_window_average(p, None, None, one, 0.0, 0.3)
