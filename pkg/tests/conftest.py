import numpy as np
import pytest

from robinlab.forms import ScalarField, assemble
from robinlab.mesh import build_interval_mesh, build_rectangle_mesh
from robinlab.spectrum import principal_eigenpair

# continuum lambda_hat_1 for (0,1), xi = 0, beta = 1: t^2 with tan t = 2t/(t^2-1),
# from the bisection oracle in test_spectrum.py
ROBIN_LAMBDA1 = 1.7070529755509227


def robin_forms(n, beta=1.0, xi=0.0):
    mesh = build_interval_mesh(0.0, 1.0, n)
    return assemble(mesh, ScalarField.constant(xi), ScalarField.constant(beta, "boundary"))


@pytest.fixture(scope="session")
def robin():
    """The interval benchmark at n = 2048 with its principal pair."""
    forms = robin_forms(2048)
    return forms, principal_eigenpair(forms)


@pytest.fixture(scope="session")
def robin_small():
    forms = robin_forms(128)
    return forms, principal_eigenpair(forms)


@pytest.fixture(scope="session")
def square():
    mesh = build_rectangle_mesh(1.0, 1.0, 16, 16)
    return assemble(mesh, ScalarField.constant(0.0), ScalarField.constant(1.0, "boundary"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
