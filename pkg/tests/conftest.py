import numpy as np
import pytest

from cgolab.mesh import build_domain
from cgolab.recovery import gaussian_bump
from cgolab.weights import make_weight


@pytest.fixture(scope="session")
def half32():
    return build_domain("halfdisk", 32)


@pytest.fixture(scope="session")
def half48():
    return build_domain("halfdisk", 48)


@pytest.fixture(scope="session")
def half64():
    return build_domain("halfdisk", 64)


@pytest.fixture(scope="session")
def disk48():
    return build_domain("disk", 48, allow_empty_gamma0=True)


@pytest.fixture(scope="session")
def bump_setup64(half64):
    w = make_weight(half64, (0.0, 0.5))
    q = gaussian_bump(half64, 0.5, (0.0, 0.5), 0.2)
    return half64, w, q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
