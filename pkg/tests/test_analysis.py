import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onoffnet import analysis
from onoffnet import arrivals as arr
from onoffnet import distributions as dists
from onoffnet import model
from onoffnet.model import NetworkSpec, StationSpec

from .conftest import exp_station, mm1, tandem


def traffic_by_enumeration(lam, cap, P):
    """Solve the traffic equations by trying every set of capped stations.

    With S the capped set, gamma = lam + (gamma on S^c, cap on S) P is linear;
    the solution is the one consistent with S = {gamma >= cap}.
    """
    K = lam.size
    sols = []
    for S in itertools.product([False, True], repeat=K):
        S = np.array(S)
        free = ~S
        # gamma_free (I - P_ff) = lam_free + cap_S P_Sf
        Pff = P[np.ix_(free, free)]
        rhs = lam[free] + cap[S] @ P[np.ix_(S, free)]
        g = np.empty(K)
        if free.any():
            g[free] = np.linalg.solve((np.eye(free.sum()) - Pff).T, rhs)
        g[S] = (lam + np.where(free, g, cap) @ P)[S]
        if (g[free] <= cap[free] + 1e-12).all() and (g[S] >= cap[S] - 1e-12).all():
            sols.append(g)
    return sols


def gamma_reliable_elementwise(spec, gamma):
    """Covariance coded term by term for reliable servers (alpha = 1, D = 0)."""
    lam, V = spec.arrival.analytic_lv()
    P = spec.routing
    K = spec.K
    mu = spec.mu
    s2 = spec.service_var
    rho = gamma / mu
    G = np.array(V, dtype=float)
    for k in range(K):
        for l in range(K):
            for j in range(K):
                flow = min(gamma[j], mu[j])
                G[k, l] += flow * P[j, k] * ((k == l) - P[j, l])
                G[k, l] += s2[j] * mu[j] ** 3 * min(rho[j], 1.0) * (P[j, k] - (j == k)) * (P[j, l] - (j == l))
    return G


def gamma_elementwise(spec, envd, gamma):
    lam, V = spec.arrival.analytic_lv()
    P = spec.routing
    K = spec.K
    mu, s2, a, D = spec.mu, spec.service_var, envd.alpha, envd.D
    rho = gamma / (a * mu)
    G = np.array(V, dtype=float)
    for k, l, j in itertools.product(range(K), repeat=3):
        G[k, l] += min(gamma[j], a[j] * mu[j]) * P[j, k] * ((k == l) - P[j, l])
        G[k, l] += ((s2[j] * mu[j] ** 3 * a[j] + mu[j] ** 2 * D[j]) * min(rho[j], 1.0)
                    * (P[j, k] - (j == k)) * (P[j, l] - (j == l)))
    return G


def test_single_station_no_feedback():
    spec = NetworkSpec([exp_station(0.5, 1.0, 1.0)], [[0.0]], arr.poisson(0.7))
    envd, tr, _ = analysis.analyze(spec)
    assert tr.gamma[0] == pytest.approx(0.7, abs=1e-12)
    assert tr.rho[0] == pytest.approx(0.7 / (0.5 * 2.0), abs=1e-12)


def test_tandem():
    _, tr, _ = analysis.analyze(tandem())
    np.testing.assert_allclose(tr.gamma, [1, 1], atol=1e-12)
    np.testing.assert_allclose(tr.rho, [0.5, 0.5], atol=1e-12)
    assert tr.classes == (analysis.NONBOTTLENECK, analysis.NONBOTTLENECK)


def test_tandem_with_slow_first_station():
    _, tr, _ = analysis.analyze(tandem(mu1=0.5))
    np.testing.assert_allclose(tr.gamma, [1, 0.5], atol=1e-12)
    np.testing.assert_allclose(tr.rho, [2, 0.25], atol=1e-12)
    assert tr.classes[0] == analysis.STRICT
    np.testing.assert_allclose(tr.throughput, [0.5, 0.5])


def test_mm1_covariance_is_twice_lambda():
    lam, mu = 0.6, 1.5
    _, _, params = analysis.analyze(mm1(lam, mu))
    assert params.cov[0, 0] == pytest.approx(2 * lam, abs=1e-12)
    assert params.drift[0] == pytest.approx(lam - mu, abs=1e-12)


def test_no_routing_means_no_middle_term():
    rng = np.random.default_rng(2)
    for _ in range(10):
        spec = model.random_network(rng)
        spec = NetworkSpec(spec.stations, np.zeros((spec.K, spec.K)), spec.arrival, spec.initial_queue)
        envd, tr, params = analysis.analyze(spec)
        _, V = spec.arrival.analytic_lv()
        service = (spec.service_var * spec.mu ** 3 * envd.alpha + spec.mu ** 2 * envd.D) * np.minimum(tr.rho, 1)
        np.testing.assert_allclose(params.cov, V + np.diag(service), atol=1e-12)


@pytest.mark.parametrize("lam", [0.2, 0.5, 0.8])
def test_unreliable_deterministic_service(lam):
    mu = 1.0
    spec = NetworkSpec([StationSpec(dists.Deterministic(1 / mu), dists.Exponential(1.0), dists.Exponential(1.0))],
                       [[0.0]], arr.poisson(lam))
    envd, tr, params = analysis.analyze(spec)
    assert envd.alpha[0] == 0.5 and envd.D[0] == pytest.approx(0.25)
    rho = lam / 0.5
    assert params.cov[0, 0] == pytest.approx(lam + mu ** 2 * 0.25 * min(rho, 1.0), abs=1e-12)


def test_classification_tolerance():
    assert analysis.classify(1 - 2e-9) == analysis.NONBOTTLENECK
    assert analysis.classify(1 - 5e-10) == analysis.BALANCED
    assert analysis.classify(1 + 5e-10) == analysis.BALANCED
    assert analysis.classify(1 + 2e-9) == analysis.STRICT


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_traffic_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    spec = model.random_network(rng, max_K=5)
    envd, tr, _ = analysis.analyze(spec)
    sols = traffic_by_enumeration(spec.lam, envd.alpha * spec.mu, spec.routing)
    assert sols
    assert any(np.allclose(tr.gamma, g, atol=1e-9) for g in sols)
    assert tr.residual < 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(1.0, 1e3))
def test_traffic_independent_of_initialization(seed, shift):
    spec = model.random_network(np.random.default_rng(seed))
    a = analysis.solve_traffic(spec)
    b = analysis.solve_traffic(spec, gamma0=spec.lam + shift)
    np.testing.assert_allclose(a.gamma, b.gamma, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_covariance_reduces_to_reliable_formula(seed):
    rng = np.random.default_rng(seed)
    spec = model.random_network(rng, max_K=5)
    reliable = [StationSpec(s.service, s.on) for s in spec.stations]
    spec = NetworkSpec(reliable, spec.routing, spec.arrival, spec.initial_queue)
    envd, tr, params = analysis.analyze(spec)
    assert (envd.alpha == 1).all() and (envd.D == 0).all()
    np.testing.assert_allclose(params.cov, gamma_reliable_elementwise(spec, tr.gamma), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_covariance_elementwise_symmetric_psd(seed):
    spec = model.random_network(np.random.default_rng(seed))
    envd, tr, params = analysis.analyze(spec)
    np.testing.assert_allclose(params.cov, gamma_elementwise(spec, envd, tr.gamma), atol=1e-10)
    np.testing.assert_array_equal(params.cov, params.cov.T)
    assert np.linalg.eigvalsh(params.cov).min() >= -1e-10
    np.testing.assert_allclose(params.drift, spec.lam - envd.alpha * spec.mu @ (np.eye(spec.K) - spec.routing))
    np.testing.assert_array_equal(params.reflection, np.eye(spec.K) - spec.routing)


def test_nonconvergence_is_reported():
    # near-unit feedback with a huge capacity contracts too slowly for the bound
    spec = NetworkSpec([exp_station(1e-9)], [[1 - 1e-7]], arr.poisson(1.0))
    with pytest.raises(analysis.TrafficNotConverged):
        analysis.solve_traffic(spec, max_iter=1000)


def test_capacity_cap_keeps_unit_feedback_finite():
    spec = NetworkSpec([exp_station(0.5)], [[1.0]], arr.poisson(1.0))
    tr = analysis.solve_traffic(spec)
    assert tr.gamma[0] == pytest.approx(3.0) and tr.classes[0] == analysis.STRICT


def test_tables_and_csv():
    spec = tandem()
    envd, tr, params = analysis.analyze(spec)
    text = analysis.format_tables(spec, envd, tr, params)
    assert "nonbottleneck" in text and "covariance" in text
    rows = analysis.to_csv(spec, envd, tr, params).splitlines()
    assert rows[0].startswith("station,lambda,alpha,D,gamma,rho,class,drift")
    assert rows[1].split(",")[4:6] == ["1.0", "0.5"]
