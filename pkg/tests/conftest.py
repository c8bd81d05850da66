import numpy as np
import pytest

from elastodensity.medium import Ball, Constant, GaussianBumps, MediumModel, RadialPolynomial


def bump_medium(contrast=0.2, width=0.4, center=(0.1, -0.05, 0.0)):
    """Shear modulus (hence c_S^2) with a Gaussian bump; lambda + 2 mu keeps a coupling gap."""
    mu = GaussianBumps(1.0, (contrast,), (center,), (width,))
    lam = GaussianBumps(1.0, (0.5 * contrast,), ((-0.2, 0.1, 0.1),), (0.5,))
    return MediumModel(lam, mu, Constant(1.0), Ball(), "gaussian-bump-sum")


def radial_medium():
    """c = 1 + 0.2 |x|^2 in both modes' conformal factor (mu = c^2, rho = 1)."""
    mu = RadialPolynomial((1.0, 0.4, 0.04))
    return MediumModel(Constant(1.0), mu, Constant(1.0), Ball(), "radial-polynomial")


def bump_rho_medium(amplitude=0.3):
    rho = GaussianBumps(1.0, (amplitude,), ((0.1, 0.2, -0.1),), (0.35,))
    return MediumModel(Constant(2.0), Constant(1.0), rho, Ball(), "gaussian-bump-sum")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def interior_points(rng):
    p = rng.normal(size=(40, 3))
    return p / np.linalg.norm(p, axis=1, keepdims=True) * rng.uniform(0, 0.9, size=(40, 1))
