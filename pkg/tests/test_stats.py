import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from electroperm.stats import (
    averaging_grid,
    ensemble_statistics,
    ensemble_std,
    l2_norm_sq_gamma,
    loglog_slope,
    running_time_average,
    time_average,
)


def test_norm_examples(mesh05):
    n = mesh05.n_trace
    assert l2_norm_sq_gamma(np.ones(n), mesh05) == pytest.approx(2 * math.pi * 0.25, rel=0.01)
    assert l2_norm_sq_gamma(np.zeros(n), mesh05) == 0.0
    assert l2_norm_sq_gamma(np.cos(mesh05.interface_theta), mesh05) == pytest.approx(math.pi * 0.25, rel=0.02)
    with pytest.raises(ValueError):
        l2_norm_sq_gamma(np.ones(n + 1), mesh05)


def test_time_average_examples():
    t = np.linspace(30, 300, 271)
    assert time_average(np.full_like(t, 2.5), 30, 300, t) == 2.5
    assert time_average(t, 30, 300, t) == pytest.approx(165.0, rel=1e-14)
    assert time_average([4.2], 30, 30) == 4.2
    with pytest.raises(ValueError):
        time_average([], 0, 1)
    with pytest.raises(ValueError):
        time_average(t, 10, 300, t)


def test_running_average_matches_direct():
    t = np.arange(0, 50.001, 0.05)
    s = np.sin(t) ** 2 + 0.1 * t
    grid = averaging_grid(t, 5.0, stride=7)
    run = running_time_average(s, t, 5.0, grid)
    direct = np.array([time_average(s, 5.0, T, t) for T in grid])
    assert np.abs(run - direct).max() <= 1e-12
    assert run[-1] == pytest.approx(time_average(s, 5.0, t[-1], t), abs=1e-12)


def test_running_average_off_grid_points():
    t = np.arange(0, 10.001, 0.1)
    s = np.cos(t)
    grid = np.array([2.0, 2.05, 3.333, 9.99])
    run = running_time_average(s, t, 2.0, grid)
    direct = np.array([time_average(s, 2.0, T, t) for T in grid])
    assert np.abs(run - direct).max() <= 1e-12


def test_running_average_converges():
    t = np.linspace(0, 200, 4001)
    s = 3.0 + np.exp(-t)
    grid = averaging_grid(t, 10.0)
    run = running_time_average(s, t, 10.0, grid)
    err = np.abs(run - 3.0)
    assert (np.diff(err) <= 1e-15).all()
    assert err[-1] < 1e-5


def test_running_average_grid_errors():
    t = np.linspace(0, 10, 11)
    with pytest.raises(ValueError):
        running_time_average(t, t, 2.0, [3.0, 3.0])
    with pytest.raises(ValueError):
        running_time_average(t, t, 2.0, [1.0, 3.0])


def test_ensemble_std_examples():
    assert (ensemble_std(np.ones((5, 4))) == 0).all()
    x = np.vstack([np.full(3, 1.0), np.full(3, 4.0)])
    assert np.allclose(ensemble_std(x), 3 / math.sqrt(2))
    z = np.random.default_rng(0).standard_normal((10_000, 3))
    assert np.allclose(ensemble_std(z), 1.0, rtol=0.03)
    with pytest.raises(ValueError):
        ensemble_std(np.ones((1, 4)))


def test_loglog_examples():
    x = np.linspace(1, 100, 50)
    fit = loglog_slope(x, 3 * x**-0.5)
    assert abs(fit.slope + 0.5) <= 1e-12 and fit.r2 == pytest.approx(1.0)
    assert loglog_slope(x, np.full_like(x, 2.0)).slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        loglog_slope(x, x - 5)
    assert loglog_slope(x, x - 5, window=(10, 50)).n_points == 40


@settings(max_examples=50)
@given(
    y=arrays(np.float64, 20, elements=st.floats(0.01, 100)),
    c=st.floats(1e-3, 1e3),
)
def test_loglog_scale_invariant(y, c):
    x = np.arange(1.0, 21.0)
    assert loglog_slope(x, c * y).slope == pytest.approx(loglog_slope(x, y).slope, abs=1e-12)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8))
def test_ensemble_std_permutation(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 6))
    assert np.allclose(ensemble_std(x), ensemble_std(x[rng.permutation(n)]), rtol=1e-14, atol=0)


@settings(max_examples=30)
@given(knots=arrays(np.float64, 6, elements=st.floats(-10, 10)), refine=st.integers(2, 5))
def test_time_average_refinement_invariant(knots, refine):
    # piecewise-linear series resampled on a finer grid keeps its trapezoid integral
    t = np.linspace(0, 5, 6)
    tf = np.linspace(0, 5, 5 * refine + 1)
    sf = np.interp(tf, t, knots)
    a = time_average(knots, 1.0, 4.0, t)
    b = time_average(sf, 1.0, 4.0, tf)
    assert a == pytest.approx(b, abs=1e-12 * (1 + np.abs(knots).max()))


def test_ensemble_statistics_shapes():
    t = np.arange(0, 20.001, 0.1)
    rng = np.random.default_rng(3)
    nv = 5 + rng.standard_normal((4, len(t)))
    st_ = ensemble_statistics(t, nv, nv**2, 2.0, stride=5)
    assert st_.T[0] >= 2.2 - 1e-9 and st_.T[-1] == t[-1]
    assert st_.avg_v.shape == (4, len(st_.T)) and st_.std_v.shape == st_.T.shape
    assert st_.fit_v is not None
    one = ensemble_statistics(t, nv[:1], nv[:1], 2.0)
    assert one.std_v is None and one.fit_v is None
