import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onoffnet import arrivals as arr
from onoffnet import distributions as dists
from onoffnet import model

FAMILIES = {
    "independent-renewal": arr.IndependentRenewal(
        (dists.Exponential(1.0), dists.Erlang(3, 0.5), None)),
    "shared-bursts": arr.SharedBurstPoisson((1.0, 0.5), 0.4, (1, 2)),
    "markov-modulated": arr.MarkovModulatedPoisson(
        [[-1.0, 1.0], [0.5, -0.5]], [[2.0, 0.0], [0.2, 1.0]]),
    "batch-renewal": arr.BatchRenewal(
        dists.Uniform(0.5, 1.5), ((0.5, (1, 0)), (0.3, (2, 1)), (0.2, (0, 3)))),
}


def test_zero_horizon_gives_empty_path():
    path = arr.generate(arr.poisson(1.0, 2.0), 0.0, np.random.default_rng(0))
    assert path.times.size == 0
    np.testing.assert_array_equal(path.counts_at(0.0), [0, 0])


def test_poisson_counts_follow_lln():
    t = 1e4
    path = arr.generate(arr.poisson(1.0), t, np.random.default_rng(1))
    assert abs(path.counts_at(t)[0] / t - 1.0) < 5 * 1e-2


def test_analytic_poisson():
    lam, V = arr.poisson(1.0, 2.0).analytic_lv()
    np.testing.assert_allclose(lam, [1, 2])
    np.testing.assert_allclose(V, np.diag([1, 2]))


def test_analytic_deterministic_renewal():
    lam, V = arr.IndependentRenewal((dists.Deterministic(1.0),)).analytic_lv()
    assert lam[0] == 1.0 and V[0, 0] == 0.0


def test_analytic_shared_burst_covariance():
    r = 0.7
    lam, V = arr.SharedBurstPoisson((0.0, 0.0), r, (1, 1)).analytic_lv()
    assert V[0, 1] == pytest.approx(r) and V[1, 0] == pytest.approx(r)
    np.testing.assert_allclose(lam, [r, r])


def test_analytic_batch_renewal_by_hand():
    # epochs every 1 time unit; batch (1,0) or (0,2) with probability 1/2
    spec = arr.BatchRenewal(dists.Deterministic(1.0), ((0.5, (1, 0)), (0.5, (0, 2))))
    lam, V = spec.analytic_lv()
    np.testing.assert_allclose(lam, [0.5, 1.0])
    # per-epoch covariance of the batch vector
    np.testing.assert_allclose(V, [[0.25, -0.5], [-0.5, 1.0]])


def test_analytic_markov_modulated_single_state_is_poisson():
    lam, V = arr.MarkovModulatedPoisson([[0.0]], [[1.5, 0.5]]).analytic_lv()
    np.testing.assert_allclose(lam, [1.5, 0.5])
    np.testing.assert_allclose(V, np.diag([1.5, 0.5]), atol=1e-12)


def test_analytic_markov_modulated_against_brute_force_variance():
    # Var A(t)/t from the exact transient formula integrated numerically
    from scipy.linalg import expm

    G = np.array([[-1.0, 1.0], [2.0, -2.0]])
    r = np.array([3.0, 0.5])
    spec = arr.MarkovModulatedPoisson(G, r[:, None])
    lam, V = spec.analytic_lv()
    pi = np.array([2 / 3, 1 / 3])
    assert lam[0] == pytest.approx(pi @ r)
    # stationary Var A(t) = lam t + 2 int_0^t (t - s) Cov(r(X_0), r(X_s)) ds
    t = 400.0
    s = np.linspace(0, t, 40001)
    cov = np.array([pi @ np.diag(r) @ expm(G * x) @ r - (pi @ r) ** 2 for x in s])
    var = lam[0] * t + 2 * np.trapezoid((t - s) * cov, s)
    assert V[0, 0] == pytest.approx(var / t, rel=1e-2)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_estimate_matches_analytic(name):
    spec = FAMILIES[name]
    lam, V = spec.analytic_lv()
    path = spec.generate(40_000.0, np.random.default_rng(11))
    est = arr.estimate_lv(path)
    # two 95% half-widths
    tol_l = 2 * est.lam_radius + 1e-12
    tol_V = 2 * est.V_radius + 1e-12
    assert (np.abs(est.lam - lam) <= tol_l).all(), (est.lam, lam)
    assert (np.abs(est.V - V) <= tol_V).all(), (est.V, V)


def test_shared_burst_sample_cross_covariance():
    spec = FAMILIES["shared-bursts"]
    _, V = spec.analytic_lv()
    est = arr.estimate_lv(spec.generate(20_000.0, np.random.default_rng(5)))
    assert abs(est.V[0, 1] - V[0, 1]) < 2 * est.V_radius[0, 1]


def test_deterministic_renewal_estimate_has_no_variance():
    path = arr.IndependentRenewal((dists.Deterministic(1.0),)).generate(1000.0, np.random.default_rng(0))
    est = arr.estimate_lv(path)
    assert est.lam[0] == pytest.approx(1.0)
    assert abs(est.V[0, 0]) < 1e-12


def test_poisson_intensity_estimate_precision():
    path = arr.poisson(1.0).generate(1e4, np.random.default_rng(2))
    est = arr.estimate_lv(path)
    assert est.n_cycles > 9000
    assert abs(est.lam[0] - 1.0) < 0.05


def test_too_few_cycles():
    path = arr.IndependentRenewal((dists.Deterministic(1.0),)).generate(10.5, np.random.default_rng(0))
    with pytest.raises(arr.InsufficientCycles):
        arr.estimate_lv(path)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), horizon=st.floats(0.0, 200.0))
def test_path_invariants(seed, horizon):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 4))
    spec = model.random_arrival(rng, K)
    path = spec.generate(horizon, rng)
    assert (np.diff(path.times) >= 0).all()
    assert path.regen_marks[0] == 0 and (np.diff(path.regen_marks) > 0).all()
    assert (path.regen_marks <= horizon).all()
    assert (path.batches > 0).all()
    grid = np.linspace(0, horizon, 50)
    counts = path.counts_at(grid)
    assert (counts[0] == 0).all()
    assert (np.diff(counts, axis=0) >= 0).all()


def test_cycle_sums_are_exchangeable():
    # permutation test: first-half and second-half cycle sums are alike
    spec = FAMILIES["markov-modulated"]
    Y, tau = spec.generate(20_000.0, np.random.default_rng(8)).cycles()
    s = Y.sum(axis=1).astype(float)
    half = s.size // 2
    obs = abs(s[:half].mean() - s[half:].mean())
    rng = np.random.default_rng(9)
    perm = np.array([abs(np.diff([x[:half].mean(), x[half:].mean()]))[0]
                     for x in (rng.permutation(s) for _ in range(500))])
    pvalue = (1 + (perm >= obs).sum()) / 501
    assert pvalue > 0.001


def test_dict_round_trip_all_families():
    for spec in FAMILIES.values():
        back = arr.from_dict(spec.to_dict())
        for x, y in zip(back.analytic_lv(), spec.analytic_lv()):
            np.testing.assert_array_equal(x, y)


def test_csv_export():
    path = arr.poisson(1.0, 1.0).generate(5.0, np.random.default_rng(0))
    lines = path.to_csv().splitlines()
    assert lines[0] == "t,station,batch"
    assert len(lines) == path.times.size + 1


def test_independent_renewal_rejects_two_general_streams():
    with pytest.raises(ValueError):
        arr.IndependentRenewal((dists.Deterministic(1.0), dists.Uniform(0.5, 1.0))).generate(
            10.0, np.random.default_rng(0))
