import pytest

from lowrank_thb.assembly import WeightFields
from lowrank_thb.cli import scheme_space
from lowrank_thb.geometry_interp import identity_map, interpolate_weight_and_metric, weight_space
from lowrank_thb.tensor_train import TTVector


def random_tt(rng, modes, rmax):
    ranks = [1] + [int(rng.integers(1, rmax + 1)) for _ in modes[1:]] + [1]
    return TTVector([rng.standard_normal((ranks[d], n, ranks[d + 1])) for d, n in enumerate(modes)])


@pytest.fixture(scope="session")
def geometry():
    return identity_map(3)


@pytest.fixture(scope="session")
def weights(geometry):
    w, q = interpolate_weight_and_metric(geometry, weight_space(geometry), 1e-12)
    return WeightFields.from_fields(w, q)


@pytest.fixture(scope="session")
def slab_p2():
    return scheme_space("slab", 2, 2, 4)


@pytest.fixture(scope="session")
def corners_p2():
    return scheme_space("two-corners", 2, 2, 5)




ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
