import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from episafe.models import SihrdParams, SirParams, build_sihrd, build_sir

settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

# Fitted US COVID-19 parameter sets used throughout the suite.
SIR_US = SirParams(beta0=0.33, gamma=0.2, N=33e6)
SIHRD_US = SihrdParams(beta0=0.53, gamma=0.14, N=15e6, lam=0.03, nu=0.14, mu=0.01)


@pytest.fixture(scope="session")
def sir_spec():
    return build_sir(SIR_US)


@pytest.fixture(scope="session")
def sihrd_spec():
    return build_sihrd(SIHRD_US)


def sample_sir_states(spec, count, seed, s_frac=(0.05, 1.0), i_frac=(1e-5, 0.5)):
    """Epidemiologically sane random SIR states (S and I bounded away from
    the degenerate corners so control authority stays well conditioned)."""
    rng = np.random.default_rng(seed)
    N = spec.params.N
    S = rng.uniform(s_frac[0] * N, s_frac[1] * N, count)
    I = rng.uniform(i_frac[0] * N, i_frac[1] * N, count)
    R = rng.uniform(0.0, 0.5 * N, count)
    return [spec.state([S[k], I[k], R[k]]) for k in range(count)]


def sample_sihrd_states(spec, count, seed, s_frac=(0.05, 1.0), i_frac=(1e-5, 0.5)):
    rng = np.random.default_rng(seed)
    N = spec.params.N
    S = rng.uniform(s_frac[0] * N, s_frac[1] * N, count)
    I = rng.uniform(i_frac[0] * N, i_frac[1] * N, count)
    H = rng.uniform(0.0, 0.02 * N, count)
    R = rng.uniform(0.0, 0.5 * N, count)
    D = rng.uniform(0.0, 0.05 * N, count)
    return [spec.state([S[k], I[k], H[k], R[k], D[k]]) for k in range(count)]


def central_difference_jacobian(fn, v, rel_step=1e-4):
    """Independent finite-difference oracle for Jacobians of fn at v."""
    v = np.asarray(v, dtype=float)
    base = np.asarray(fn(v), dtype=float)
    jac = np.zeros((base.size, v.size))
    for k in range(v.size):
        h = rel_step * max(1.0, abs(v[k]))
        vp, vm = v.copy(), v.copy()
        vp[k] += h
        vm[k] -= h
        jac[:, k] = (np.asarray(fn(vp)) - np.asarray(fn(vm))) / (2.0 * h)
    return jac
