import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastrevert.grids import NoiseSource, TimeGrid
from fastrevert.model import (ClippedOU, CoefficientModel, Polynomial, ScalingConfig,
                              reversion_from_name)
from fastrevert.sde import (AdditiveDiffusion, BlowUpError, CirParams, MisuseError, SamplePath,
                            SchemeSelector, SqrtDiffusion, StabilityWarning, TimeChange,
                            _monotone_implicit, coupled_pair, implicit_step, simulate_cir,
                            simulate_squared_bessel, simulate_X, simulate_X_timechanged,
                            simulate_Y_pm, sqrt_process, time_change_grid, y_pm_drift)


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50), st.floats(0, 100), st.floats(0.01, 10))
def test_implicit_step_solves_equation(rhs, a, s):
    rf = reversion_from_name("odd_power", power=3)
    x = implicit_step(rf, np.array([a]), np.array([s]), np.array([rhs]), 1.0)
    resid = x + a * rf(s * x) - rhs
    assert abs(resid[0]) <= 1e-9 * max(1.0, abs(rhs))
    assert min(0.0, rhs) <= x[0] <= max(0.0, rhs)


def test_implicit_step_map_is_monotone(cubic):
    rhs = np.linspace(-20, 20, 2001)
    x = implicit_step(cubic, np.full_like(rhs, 3.0), np.full_like(rhs, 2.0), rhs, 1.0)
    assert np.all(np.diff(x) >= 0)


def test_simulate_X_is_deterministic_and_replayable(cubic, unit_model):
    g = TimeGrid.uniform(1.0, 500)
    sc = ScalingConfig(0.1, z0=0.5)
    a = simulate_X(unit_model, cubic, sc, g, rng=NoiseSource(4), n_paths=3)
    b = simulate_X(unit_model, cubic, sc, g, rng=NoiseSource(4), n_paths=3)
    assert np.array_equal(a.values, b.values)
    c = simulate_X(unit_model, cubic, sc, g, increments=a.noise_increments)
    assert np.array_equal(a.values, c.values)
    assert a.values[0, 0] == pytest.approx(0.05)


def test_simulate_X_blocks_match_full_run(linear, unit_model):
    g = TimeGrid.uniform(1.0, 200)
    sc = ScalingConfig(0.2)
    full = simulate_X(unit_model, linear, sc, g, rng=NoiseSource(9), n_paths=4)
    tail = simulate_X(unit_model, linear, sc, g, rng=NoiseSource(9), n_paths=2, path_offset=2)
    assert np.array_equal(full.values[2:], tail.values)


def test_discrete_ou_stationary_variance(linear, unit_model):
    # implicit Euler x' = (x + dW)/(1 + h) for X/eps has stationary variance 1/(2 + h)
    eps, dt = 0.1, 1e-3
    h = dt / eps ** 2
    g = TimeGrid.uniform(1.0, dt=dt)
    p = simulate_X(unit_model, linear, ScalingConfig(eps), g, rng=NoiseSource(1), n_paths=400)
    z = p.values[:, 200:] / eps
    var = float(np.mean(z ** 2))
    # time-averaged estimate; autocorrelation time ~ 1/h steps, effective sample large
    assert var == pytest.approx(1.0 / (2.0 + h), rel=0.03)
    assert abs(float(np.mean(z))) < 0.03


def test_explicit_em_warns_beyond_stability(linear):
    g = TimeGrid.uniform(0.01, 10)
    with pytest.warns(StabilityWarning):
        simulate_X(CoefficientModel.constant(horizon=0.01), linear, ScalingConfig(0.01), g, "explicit_em", NoiseSource(0))


def test_explicit_em_blows_up_on_stiff_cubic(cubic):
    unit_model = CoefficientModel.constant(horizon=0.1)
    g = TimeGrid.uniform(0.1, 100)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(BlowUpError):
            simulate_X(unit_model, cubic, ScalingConfig(0.01, z0=5.0), g, "explicit_em",
                       NoiseSource(0))


def test_tamed_em_stays_finite(cubic):
    unit_model = CoefficientModel.constant(horizon=0.1)
    g = TimeGrid.uniform(0.1, 100)
    p = simulate_X(unit_model, cubic, ScalingConfig(0.01, z0=5.0), g, "tamed_em", NoiseSource(0))
    assert np.all(np.isfinite(p.values))


def test_unknown_scheme():
    with pytest.raises(ValueError):
        SchemeSelector("rk4")


def test_strong_error_shrinks_with_dt(linear):
    eps, T = 0.5, 0.5
    unit_model = CoefficientModel.constant(horizon=T)
    fine = TimeGrid.uniform(T, 1600)
    z = NoiseSource(3).normals("W", 1600, 20) * math.sqrt(fine.dt[0])
    ref = simulate_X(unit_model, linear, ScalingConfig(eps), fine, "explicit_em",
                     increments=z).values[:, -1]
    errs = []
    for n in (25, 50, 100):
        g = TimeGrid.uniform(T, n)
        inc = z.reshape(20, n, -1).sum(axis=2)
        end = simulate_X(unit_model, linear, ScalingConfig(eps), g, "explicit_em",
                         increments=inc).values[:, -1]
        errs.append(float(np.sqrt(np.mean((end - ref) ** 2))))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= errs[0] * 0.5 * 1.2  # at least order 1/2 over a factor 4 in dt


@pytest.mark.parametrize("name", ["linear", "cubic"])
@pytest.mark.parametrize("c", [1.0, 2.5])
def test_time_change_matches_direct_simulation(name, c, request):
    rf = request.getfixturevalue(name)
    eps, n = 0.1, 2000
    cm = CoefficientModel.constant(c=c, L=1.3, M=0.7, b=0.4)
    sc = ScalingConfig(eps, z0=0.3)
    t_grid = TimeGrid.uniform(1.0, n)
    xi_grid = TimeGrid.uniform(c / eps ** 2, n)
    z = NoiseSource(5).normals("W", n, 3)
    direct = simulate_X(cm, rf, sc, t_grid, increments=z * math.sqrt(t_grid.dt[0]))
    changed = simulate_X_timechanged(cm, rf, sc, xi_grid, increments=z * math.sqrt(xi_grid.dt[0]))
    assert np.max(np.abs(direct.values - eps * changed.values)) < 1e-10
    assert np.allclose(changed.meta["t_nodes"], t_grid.nodes)


def test_time_change_drift_scales_with_eps(linear):
    cm = CoefficientModel.constant(b=1.0)
    out = []
    for eps in (0.1, 0.05):
        g = TimeGrid.uniform(50.0, 5000)
        cm_e = CoefficientModel.constant(b=1.0, horizon=50.0 * eps ** 2)
        p = simulate_X_timechanged(cm_e, linear, ScalingConfig(eps), g,
                                   increments=np.zeros((1, 5000)))
        out.append(p.values[0, -1])
    assert out[0] == pytest.approx(0.1, rel=1e-3)  # equilibrium eps b / (c L M)
    assert out[0] / out[1] == pytest.approx(2.0, rel=1e-6)
    del cm


def test_time_change_clock_for_varying_c(linear):
    cm = CoefficientModel(c=Polynomial((1.0, 1.0)))
    g = TimeGrid.uniform(1.0, 1000)
    tc = time_change_grid(cm.c.sample(g.nodes)[0], g, 0.1)
    # int_0^1 (1 + t) dt / eps^2 = 150
    assert tc.xi_total == pytest.approx(150.0, rel=1e-6)
    assert tc(tc.forward(0.3)) == pytest.approx(0.3, rel=1e-9)
    p = simulate_X_timechanged(cm, linear, ScalingConfig(0.1), rng=NoiseSource(0), n_steps=300)
    assert p.meta["t_nodes"][-1] == pytest.approx(1.0)
    assert np.allclose(p.coefficients["c"][0], 1.0 + p.meta["t_nodes"])


def test_time_change_stochastic_c_needs_single_path(linear):
    cm = CoefficientModel(c=ClippedOU(1.0, 1.0, 1.0, 0.3, 0.5, 2.0))
    with pytest.raises(MisuseError):
        simulate_X_timechanged(cm, linear, ScalingConfig(0.1), rng=NoiseSource(0),
                               n_steps=100, n_paths=2)
    p = simulate_X_timechanged(cm, linear, ScalingConfig(0.1), rng=NoiseSource(0), n_steps=100)
    assert p.values.shape == (1, 101)


def test_time_change_rejects_overlong_grid(linear, unit_model):
    with pytest.raises(ValueError):
        simulate_X_timechanged(unit_model, linear, ScalingConfig(0.1),
                               TimeGrid.uniform(200.0, 10), rng=NoiseSource(0))


def test_sample_path_outputs(tmp_path, linear, unit_model):
    p = simulate_X(unit_model, linear, ScalingConfig(0.1), TimeGrid.uniform(1.0, 10),
                   rng=NoiseSource(0))
    p.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,value,dW" and len(lines) == 12
    p.to_npz(tmp_path / "p.npz")
    assert np.array_equal(np.load(tmp_path / "p.npz")["values"], p.values)
    with pytest.raises(ValueError):
        SamplePath(p.grid, p.values[:, :-1], p.noise_increments, "W", "x")


def test_Y_first_step_is_pure_drift(cubic):
    g = TimeGrid.uniform(0.1, 10)
    p = simulate_Y_pm(cubic, 0.0, 1.0, 1.0, 0.1, "+", g, increments=np.zeros((1, 10)))
    assert p.values[0, 1] == pytest.approx(0.01)


def test_Y_linear_is_cir_type(linear):
    drift = y_pm_drift(linear, 1.0, 2.0, 0.1, "-")
    y = np.array([0.0, 0.5, 3.0])
    assert np.allclose(drift(0.0, y), 1 - 2 * 1.1 * 2.1 * y)


def test_Y_paths_nonnegative(cubic):
    g = TimeGrid.uniform(5.0, 500)
    p = simulate_Y_pm(cubic, 0.3, 1.0, 1.0, 0.2, "-", g, NoiseSource(2), n_paths=50)
    assert p.values.min() >= 0.0


def test_Y_rejects_bad_inputs(linear):
    g = TimeGrid.uniform(1.0, 10)
    with pytest.raises(ValueError):
        simulate_Y_pm(linear, -1.0, 1, 1, 0.1, "+", g, NoiseSource(0))
    with pytest.raises(ValueError):
        simulate_Y_pm(linear, 0.0, 0.1, 1, 0.2, "+", g, NoiseSource(0))


def test_cir_params():
    p = CirParams(1.0, 0.25, 2.0, 1.0)
    assert p.gamma == 0.5 and p.feller_ratio == 0.125
    with pytest.raises(ValueError):
        CirParams(1.0, 1.0, 1.0, 1.0)


def test_cir_equilibrium_and_deterministic_limit():
    g = TimeGrid.uniform(2.0, 200)
    p = simulate_cir(CirParams(1.0, 0.25, 2.0, 0.25), g, increments=np.zeros((1, 200)))
    assert np.all(p.values == 0.25)
    # without noise the scheme tracks the mean-reversion ODE
    q = simulate_cir(CirParams(1.0, 0.25, 2.0, 1.0), TimeGrid.uniform(2.0, 2000),
                     increments=np.zeros((1, 2000)))
    ode = 0.25 + 0.75 * np.exp(-q.grid.nodes)
    assert np.max(np.abs(q.values[0] - ode)) < 1e-3


def test_cir_long_run_mean():
    params = CirParams(1.0, 0.25, 2.0, 1.0)
    p = simulate_cir(params, TimeGrid.uniform(20.0, dt=0.005), NoiseSource(8), n_paths=2000)
    tail = p.values[:, -1]
    se = tail.std() / math.sqrt(tail.size)
    assert abs(tail.mean() - 0.25) < 4 * se + 0.01


def test_squared_bessel_mean_and_zero_noise():
    g = TimeGrid.uniform(1.0, 200)
    p = simulate_squared_bessel(0.5, g, NoiseSource(1), n_paths=4000)
    end = p.values[:, -1]
    assert abs(end.mean() - 1.5) < 4 * end.std() / math.sqrt(end.size)
    z = simulate_squared_bessel(0.0, g, increments=np.zeros((1, 200)))
    assert np.allclose(z.values[0], g.nodes)


def test_sqrt_process_unknown_scheme():
    with pytest.raises(ValueError):
        sqrt_process(lambda t, y: y, 1.0, 1.0, TimeGrid.uniform(1.0, 2), np.zeros((1, 2)), "x")


def test_coupled_pair_identical_drifts_are_identical():
    d = lambda t, y: 0.5 - y  # noqa: E731
    lo, hi = coupled_pair(d, d, TimeGrid.uniform(1.0, 100), 0.3, 0.3, NoiseSource(0), n_paths=3)
    assert np.array_equal(lo.values, hi.values)


@pytest.mark.parametrize("y0_high", [0.2, 0.7])
def test_coupled_pair_orders_paths(y0_high):
    low = lambda t, y: 0.5 - 2 * y  # noqa: E731
    high = lambda t, y: 1.5 - 2 * y  # noqa: E731
    lo, hi = coupled_pair(low, high, TimeGrid.uniform(2.0, 400), 0.2, y0_high, NoiseSource(1),
                          n_paths=50)
    assert np.all(hi.values >= lo.values)


def test_coupled_pair_additive_noise():
    low = lambda t, y: -y - 1.0  # noqa: E731
    high = lambda t, y: -y  # noqa: E731
    lo, hi = coupled_pair(low, high, TimeGrid.uniform(1.0, 200), 0.0, 0.0, NoiseSource(2),
                          diffusion=AdditiveDiffusion(1.0), n_paths=20)
    assert np.all(hi.values >= lo.values)


def test_coupled_pair_misuse():
    low = lambda t, y: 1.0 - y  # noqa: E731
    high = lambda t, y: 0.5 - y  # noqa: E731
    g = TimeGrid.uniform(1.0, 10)
    with pytest.raises(MisuseError):
        coupled_pair(low, high, g, 0.0, 0.0, NoiseSource(0))
    with pytest.raises(MisuseError):
        coupled_pair(high, low, g, 1.0, 0.0, NoiseSource(0))


def test_monotone_implicit_step_map_is_nondecreasing():
    drift = lambda t, y: 1.0 - 2.0 * np.sqrt(np.maximum(y, 0)) ** 4  # noqa: E731
    y = np.linspace(0.0, 5.0, 501)
    for dW in (-0.5, 0.0, 0.3):
        out = _monotone_implicit(drift, SqrtDiffusion(2.0), 0.0, 0.05, y, np.full_like(y, dW))
        assert np.all(np.diff(out) >= 0)
        assert out.min() >= 0


def test_time_change_inverse():
    tc = TimeChange(np.array([0.0, 1.0, 2.0]), np.array([0.0, 10.0, 30.0]))
    assert tc.xi_total == 30.0
    assert tc(20.0) == pytest.approx(1.5)
    assert tc.forward(1.5) == pytest.approx(20.0)
