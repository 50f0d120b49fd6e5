"""Shared environments for the test suite.

Session-scoped because sampling is deterministic in (spec, seed) and the
solves in the slower tests dominate the clock anyway.
"""

import numpy as np
import pytest

from hjhomog import environment as env


@pytest.fixture(scope="session")
def env1d_smooth():
    """Smooth periodic 1D potential, no diffusion: oracle territory."""
    spec = env.EnvSpec(d=1, model="spectral-field", L=4.0, h=0.01,
                       hamiltonian="power-model", q=2.0,
                       v_range=(0.0, 1.0), lambda1=4.0,
                       spectral_exponent=4.0, corr_length=0.8)
    return env.sample_environment(spec, seed=3)


@pytest.fixture(scope="session")
def env2d_shot():
    """2D shot-noise potential, first-order Hamiltonian."""
    spec = env.EnvSpec(d=2, model="shot-noise-potential", L=8.0, h=0.1,
                       hamiltonian="power-model", q=2.0,
                       bump_height=1.0, bump_radius=0.8, intensity=0.3,
                       lambda1=8.0)
    return env.sample_environment(spec, seed=7)


@pytest.fixture(scope="session")
def env2d_diffusive():
    """2D shot-noise potential with sigma = sqrt(2) I and zero drift."""
    spec = env.EnvSpec(d=2, model="shot-noise-potential", L=8.0, h=0.1,
                       hamiltonian="quadratic-drift-model",
                       sigma0=np.sqrt(2.0), lambda2=2.5,
                       bump_height=1.0, bump_radius=0.8, intensity=0.3,
                       lambda1=8.0)
    return env.sample_environment(spec, seed=7)


@pytest.fixture(scope="session")
def env2d_const():
    """Constant-coefficient 2D power model: H(p) = |p|^2."""
    spec = env.EnvSpec(d=2, model="constant", L=1.0, h=0.05,
                       hamiltonian="power-model", q=2.0, a0=1.0, v0=0.0,
                       lambda1=1.0)
    return env.sample_environment(spec, seed=0)


@pytest.fixture(scope="session")
def env2d_gaussian():
    """Free diffusion with generator tr(D^2): sigma = sqrt(2) I, V = 0."""
    spec = env.EnvSpec(d=2, model="constant", L=1.0, h=0.05,
                       hamiltonian="quadratic-drift-model",
                       sigma0=np.sqrt(2.0), lambda2=2.5, v0=0.0,
                       lambda1=2.0)
    return env.sample_environment(spec, seed=0)
