from pathlib import Path

from onoffnet import arrivals as arr
from onoffnet import distributions as dists
from onoffnet.model import NetworkSpec, StationSpec

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def exp_station(mean_service, on=None, off=None):
    """Station with exponential service and optional exponential ON/OFF means."""
    if on is None:
        return StationSpec(dists.Exponential(mean_service), dists.Exponential(1.0))
    return StationSpec(dists.Exponential(mean_service), dists.Exponential(on), dists.Exponential(off))


def tandem(mu1=2.0, mu2=2.0):
    return NetworkSpec([exp_station(1 / mu1), exp_station(1 / mu2)],
                       [[0.0, 1.0], [0.0, 0.0]], arr.poisson(1.0, 0.0))


def mm1(lam, mu, q0=0):
    return NetworkSpec([exp_station(1 / mu)], [[0.0]], arr.poisson(lam), (q0,))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
