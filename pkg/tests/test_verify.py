import numpy as np
import pytest

from onoffnet import arrivals as arr
from onoffnet import distributions as dists
from onoffnet import verify
from onoffnet.analysis import analyze
from onoffnet.desim import simulate
from onoffnet.model import NetworkSpec, StationSpec, env_derived

from .conftest import exp_station, tandem


def saturated(service, on, off, q0=100_000):
    return NetworkSpec([StationSpec(service, on, off)], [[0.0]], arr.IndependentRenewal((None,)), (q0,))


def test_rate_diagnostic_synthetic_power():
    t = np.array([1e2, 1e3, 1e4, 1e5])
    d = verify.rate_diagnostic(t, 3.0 * t ** 0.25, np.inf)
    assert d.slope == pytest.approx(0.25, abs=1e-12)
    assert d.p_prime == 3.9 and d.threshold == pytest.approx(1 / 3.9 + 0.1)
    assert d.passed


def test_rate_diagnostic_constant_and_zero():
    t = [1e2, 1e3, 1e4, 1e5]
    assert verify.rate_diagnostic(t, [2.0] * 4, 3).slope == pytest.approx(0.0, abs=1e-12)
    assert verify.rate_diagnostic(t, [0.0] * 4, 3).passed


def test_rate_diagnostic_fails_on_fast_growth():
    t = np.array([1e2, 1e3, 1e4, 1e5])
    assert not verify.rate_diagnostic(t, t ** 0.5, 3).passed


def test_rate_diagnostic_preconditions():
    with pytest.raises(ValueError):
        verify.rate_diagnostic([1e2, 1e3, 1e4], [1, 2, 3], 3)
    with pytest.raises(ValueError):
        verify.rate_diagnostic([1e2, 2e2, 5e2, 9e2], [1, 2, 3, 4], 3)


def test_p_prime():
    assert verify.p_prime(2.5) == 2.5
    assert verify.p_prime(10) == 3.9


def test_ks_self_test():
    x = np.random.default_rng(0).normal(size=500)
    assert verify.ks_distance(x, x) == 0.0
    assert verify.ks_distance(x, x + 10) == 1.0


def test_run_replications_independent_of_workers():
    jobs = [(tandem(), 50.0, s) for s in range(6)]
    a = verify.run_replications(verify.final_state, jobs, 1)
    b = verify.run_replications(verify.final_state, jobs, 2)
    for x, y in zip(a, b):
        for u, v in zip(x, y):
            np.testing.assert_array_equal(u, v)


def test_lln_saturated_reliable_deterministic_exact():
    spec = saturated(dists.Deterministic(0.5), dists.Exponential(1.0), dists.ZERO)
    p = simulate(spec, 1000.0, 1000.0, 0)
    rows = verify.lln_checks(p, env_derived(spec), spec)
    s_rate = [r for r in rows if r.quantity == "S/t"][0]
    assert s_rate.value == 2.0 and s_rate.residual == 0.0


def test_lln_on_fraction_width():
    spec = saturated(dists.Exponential(0.5), dists.Exponential(1.0), dists.Exponential(1.0))
    fails = 0
    for seed in range(20):
        p = simulate(spec, 1e4, 1e4, seed)
        row = verify.lln_checks(p, env_derived(spec), spec)[0]
        assert row.quantity == "C/t"
        fails += row.residual >= 0.02
    assert fails == 0


def test_lln_saturated_unreliable_service_rate():
    spec = saturated(dists.Exponential(0.5), dists.Exponential(1.0), dists.Exponential(1.0))
    p = simulate(spec, 1e4, 1e4, 3)
    rows = verify.lln_checks(p, env_derived(spec), spec)
    s = [r for r in rows if r.quantity == "S/t"][0]
    assert s.target == 1.0 and s.residual < 0.05 and s.passed


def test_lln_nonbottleneck_uses_busy_time():
    spec = tandem()
    p = simulate(spec, 2e3, 2e3, 1)
    rows = verify.lln_checks(p, env_derived(spec), spec)
    assert [r.quantity for r in rows] == ["C/t", "S/B", "C/t", "S/B"]
    assert all(r.passed for r in rows)
    assert "S/B" in verify.format_lln(rows)


def test_zero_arrival_network_distances_vanish():
    spec = NetworkSpec([exp_station(0.5, 1.0, 1.0)], [[0.0]], arr.IndependentRenewal((None,)))
    rep = verify.scaled_compare(spec, 1.0, [10, 100], 20, 0, coupled_reps=2)
    for r in rep.results:
        assert r.ks == [0.0] and r.ks_closed_form == [0.0]
        assert r.sup_distance == 0.0
    assert rep.sup_growth_exponent == 0.0


def test_strict_bottleneck_is_excluded():
    spec = NetworkSpec([exp_station(2.0), exp_station(0.5)], [[0, 1], [0, 0]], arr.poisson(1.0, 0.0))
    _, tr, _ = analyze(spec)
    rep = verify.scaled_compare(spec, 1.0, [50], 20, 1, rbm_dt=1e-2, coupled_reps=1)
    r = rep.results[0]
    assert r.excluded == [True, False] and r.ks[0] is None
    # fluid growth of the strict bottleneck at rate gamma - capacity
    assert r.fluid_rate[0] == pytest.approx(tr.gamma[0] - tr.capacity[0], abs=0.3)
    assert "excluded" in rep.summary()


def test_report_is_reproducible():
    spec = tandem()
    a = verify.scaled_compare(spec, 1.0, [20, 40], 10, 3, rbm_dt=1e-2, coupled_reps=1)
    b = verify.scaled_compare(spec, 1.0, [20, 40], 10, 3, rbm_dt=1e-2, coupled_reps=1, threads=2)
    assert a.to_csv() == b.to_csv()
    assert a.summary() == b.summary()
    assert a.to_csv().splitlines()[0] == "n,station,statistic,value"


def test_rbm_marginals_do_not_depend_on_chunking():
    _, _, params = analyze(tandem())
    rng = lambda: np.random.default_rng(4)  # noqa: E731
    a = verify.rbm_marginals(params, 10.0, np.zeros(2), 1.0, 0.01, 50, rng())
    b = verify.rbm_marginals(params, 10.0, np.zeros(2), 1.0, 0.01, 50, rng())
    np.testing.assert_array_equal(a, b)
    assert (a >= -1e-9).all()


def test_coupled_sup_distances_shape_and_prefix():
    spec = NetworkSpec([exp_station(0.5, 0.5, 0.5)], [[0.0]], arr.poisson(1.0))
    full = verify.coupled_sup_distances(spec, [10, 100], 3, 0)
    part = verify.coupled_sup_distances(spec, [10, 100], 2, 0)
    assert full.shape == (3, 2)
    np.testing.assert_array_equal(full[:2], part)
    assert (np.diff(full, axis=1) >= 0).all()
