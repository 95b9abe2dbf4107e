import sys
import warnings
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import ACCEPTANCE, REFERENCE_FIT, city_config, small_config  # noqa: E402

from zigzag import (PowerLawFit, RawCosts, fit_powerlaw, mc_estimate_rates,  # noqa: E402
                    powerlaw_rate_table)



@pytest.fixture(scope="session")
def small_rates():
    """Monte-Carlo table for the 20-driver setting (about a minute)."""
    return mc_estimate_rates(small_config(), 100_000, seed=2024)


@pytest.fixture(scope="session")
def city_raw_costs():
    # these default weights price pickup waits below queue waits, which the constructor flags
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return RawCosts(0.5, 0.2, 0.2, 0.5)


@pytest.fixture(scope="session")
def pickup_corpus(city_raw_costs):
    """Pickup corpus from 24 constant-radius runs at T = 20,000."""
    from zigzag.sim import SimConfig, collect_pickup_samples
    from zigzag import LinearDemand
    sim = SimConfig(city_config(), T=20_000, seed=500)
    return collect_pickup_samples(sim, city_raw_costs, LinearDemand(40.0, 2.0))


@pytest.fixture(scope="session")
def fitted(pickup_corpus):
    return fit_powerlaw(pickup_corpus, 100)


@pytest.fixture(scope="session")
def fitted_rates(fitted):
    return powerlaw_rate_table(fitted, city_config())


@pytest.fixture(scope="session")
def reference_fit_rates():
    C, a1, a2 = REFERENCE_FIT
    return powerlaw_rate_table(PowerLawFit(C, a1, a2, 0, 0, 0, 0, 0, 100), city_config())


@pytest.fixture(autouse=True)
def _quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
