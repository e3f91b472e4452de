import numpy as np
import pytest

from mrcosts._kernels import reference


def make_exponential_window(rng, m=48, n=8, n_pairs=2, dt=0.02, rho_true=0.05,
                            freq_range=(1.0, 12.0)):
    """Random noiseless window that exactly satisfies the exponential model.

    Returns (values, times, true_omega) with conjugate-symmetric omega sorted
    by imaginary part. Frequencies are drawn well separated so the window is
    well conditioned.
    """
    t = np.arange(m) * dt
    freqs = np.sort(rng.uniform(*freq_range, size=n_pairs))
    while n_pairs > 1 and np.min(np.diff(freqs)) < 1.0:
        freqs = np.sort(rng.uniform(*freq_range, size=n_pairs))
    growth = rng.uniform(-rho_true, rho_true, size=n_pairs)
    omega_half = growth + 2j * np.pi * freqs
    omega = np.concatenate([omega_half, omega_half.conj()])
    coeffs = rng.standard_normal((n_pairs, n)) + 1j * rng.standard_normal((n_pairs, n))
    coeffs = np.vstack([coeffs, coeffs.conj()])
    values = (reference.exp_basis(omega, t) @ coeffs).real.T  # (n_space, m)
    order = np.lexsort((omega.real, omega.imag))
    return values, t, omega[order]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def backend_params():
    params = ["python"]
    try:
        from mrcosts._kernels import _varpro_cy  # noqa: F401

        params.append("cython")
    except ImportError:
        pass
    return params


@pytest.fixture(params=backend_params())
def varpro_lm_backend(request):
    if request.param == "python":
        return reference.varpro_lm
    from mrcosts._kernels import _varpro_cy

    return _varpro_cy.varpro_lm
