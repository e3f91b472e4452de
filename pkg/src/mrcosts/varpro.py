"""Constrained optimized-DMD fit of one demeaned window.

The window model is a sum of ``r`` complex exponentials, each pairing a
spatial mode with one continuous-time eigenvalue. Eigenvalues are fit by
variable-projection nonlinear least squares: the linear coefficients are
eliminated exactly at every iterate, and a Levenberg-Marquardt loop updates
the eigenvalues with the real parts clamped into ``[-rho, rho]`` after every
step. Most physical systems have bounded growth, and keeping ``Re w`` small
but nonzero makes the per-window fits markedly more robust than either
unconstrained fitting or forcing ``Re w = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import STATUS_BREAKDOWN, STATUS_GRAD, STATUS_STEP
from .errors import ConfigError, NumericalBreakdown, RankDeficientWindow

_STATUS_NAMES = {
    _kernels.STATUS_GRAD: "gradient",
    _kernels.STATUS_STEP: "step",
    _kernels.STATUS_MAX_ITERS: "max_iters",
    _kernels.STATUS_STALLED: "stalled",
}


@dataclass(frozen=True)
class EigConstraint:
    """Bound ``|Re w| <= rho`` on the fitted eigenvalues (units 1/time)."""

    rho: float

    def __post_init__(self):
        if not np.isfinite(self.rho) or self.rho < 0.0:
            raise ConfigError(f"rho must be finite and >= 0, got {self.rho}")


@dataclass(frozen=True)
class VarproSettings:
    """Optimizer settings for the variable-projection fit.

    ``rank`` must be even so oscillatory modes can occur in conjugate pairs.
    The damping factor starts at ``lm_lambda0`` and moves by factors of 10.
    The solver has no randomized internals; ``deterministic`` records that
    contract for config echoes.
    """

    rank: int
    max_iters: int = 100
    tol_grad: float = 1e-8
    tol_step: float = 1e-10
    lm_lambda0: float = 1e-2
    deterministic: bool = True

    def __post_init__(self):
        if self.rank < 2 or self.rank % 2 != 0:
            raise ConfigError(f"rank must be an even integer >= 2, got {self.rank}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        for name in ("tol_grad", "tol_step", "lm_lambda0"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class VarproResult:
    omega: np.ndarray
    phi: np.ndarray
    amplitudes: np.ndarray
    residual_rel: float
    n_iters: int
    converged: bool
    stop_reason: str
    residual_history: np.ndarray


def _mode_order(omega: np.ndarray) -> np.ndarray:
    return np.lexsort((omega.real, omega.imag))


def delay_embed(xw: np.ndarray, delays: int) -> np.ndarray:
    """Stack ``delays`` time-shifted copies of the window along space.

    Standing oscillations occupy a single spatial direction, which hides
    their phase structure from any purely spatial projection; augmenting
    with shifted copies restores it (at the cost of ``delays - 1`` columns).
    """
    n, m = xw.shape
    return np.vstack([xw[:, q : m - delays + 1 + q] for q in range(delays)])


def init_eigenvalues(
    xw: np.ndarray, t: np.ndarray, r: int, scale: float | None = None
) -> np.ndarray:
    """Initial eigenvalues from an exact one-step propagator on the window.

    The demeaned window is projected onto its leading ``r`` left singular
    vectors, successive projected snapshots are regressed onto each other,
    and the propagator's eigenvalues are log-mapped by the time step. When
    the window's spatial rank cannot support ``r`` directions (standing
    oscillations), time-shifted copies are stacked until it can. The result
    is conjugate-symmetric for real input and sorted by increasing
    imaginary part.

    ``scale`` optionally supplies the pre-demean window norm so that windows
    reduced to pure round-off by demeaning are detected as rank deficient.
    """
    xw = np.asarray(xw, dtype=np.float64)
    n, m = xw.shape
    if m < r + 1:
        raise ConfigError(f"window length {m} must be at least rank + 1 = {r + 1}")
    # one shift is always stacked so standing oscillations are visible; more
    # follow only while the embedded rank stays short of r
    max_delays = max(1, m - r)
    rank = 0
    for delays in range(min(2, max_delays), max_delays + 1):
        embedded = delay_embed(xw, delays) if delays > 1 else xw
        u, s, _ = np.linalg.svd(embedded, full_matrices=False)
        floor = (
            max(embedded.shape)
            * np.finfo(np.float64).eps
            * max(float(s[0]), float(scale or 0.0)) * np.sqrt(delays)
        )
        rank = int(np.sum(s > floor))
        if rank >= r and embedded.shape[1] >= r + 1:
            break
    else:
        raise RankDeficientWindow(
            f"window has numerical rank {rank} < requested rank {r}; "
            "lower the rank or enlarge the window"
        )
    z = u[:, :r].T @ embedded
    z1, z2 = z[:, :-1], z[:, 1:]
    propagator, *_ = np.linalg.lstsq(z1.T, z2.T, rcond=None)
    lam = np.linalg.eigvals(propagator.T)
    dt = (t[-1] - t[0]) / (m - 1)
    mag = np.maximum(np.abs(lam), np.finfo(np.float64).tiny)
    omega = (np.log(mag) + 1j * np.angle(lam)) / dt
    return omega[_mode_order(omega)]


def varpro_solve(
    xw: np.ndarray,
    t: np.ndarray,
    init_omega: np.ndarray,
    settings: VarproSettings,
    constraint: EigConstraint,
) -> VarproResult:
    """Fit eigenvalues, unit-norm modes, and amplitudes to a demeaned window.

    Returns the feasible iterate with the lowest residual. Non-convergence
    within ``settings.max_iters`` is reported through ``converged`` and
    ``stop_reason``, not raised. Raises :class:`NumericalBreakdown` if the
    residual stays non-finite after repeated damping increases.
    """
    xw = np.asarray(xw, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    init_omega = np.asarray(init_omega, dtype=np.complex128)
    if init_omega.shape != (settings.rank,):
        raise ConfigError(
            f"init_omega has shape {init_omega.shape}, expected ({settings.rank},)"
        )
    y = np.ascontiguousarray(xw.T, dtype=np.complex128)
    trel = t - t[0]
    # the basis is periodic in Im(w) on a uniform grid; keep iterates in the
    # principal (Nyquist) band so |Im w| stays physically meaningful
    dt = (trel[-1] - trel[0]) / (len(trel) - 1)
    im_period = 2.0 * np.pi / dt if dt > 0 else 0.0
    omega, coeffs, res, n_iters, status, history = _kernels.varpro_lm(
        y,
        trel,
        init_omega,
        constraint.rho,
        settings.max_iters,
        settings.tol_grad,
        settings.tol_step,
        settings.lm_lambda0,
        im_period,
    )
    if status == STATUS_BREAKDOWN:
        raise NumericalBreakdown(
            "fit residual is not finite and damping did not recover it; "
            "check the data scaling"
        )
    norm_y = float(np.linalg.norm(xw))
    residual_rel = res / norm_y if norm_y > 0.0 else 0.0

    # split coefficient rows into unit-norm spatial modes and amplitudes
    amplitudes = np.linalg.norm(coeffs, axis=1)
    phi = np.zeros((xw.shape[0], settings.rank), dtype=np.complex128)
    nonzero = amplitudes > 0.0
    phi[:, nonzero] = coeffs[nonzero, :].T / amplitudes[nonzero]
    order = _mode_order(omega)
    return VarproResult(
        omega=omega[order],
        phi=phi[:, order],
        amplitudes=amplitudes[order].astype(np.complex128),
        residual_rel=float(residual_rel),
        n_iters=int(n_iters),
        converged=status in (STATUS_GRAD, STATUS_STEP),
        stop_reason=_STATUS_NAMES[status],
        residual_history=np.asarray(history),
    )


def jacobian_check(xw: np.ndarray, t: np.ndarray, omega: np.ndarray) -> float:
    """Max relative deviation of the analytic Jacobian from central differences.

    The caller must supply strictly feasible eigenvalues (no clamp active);
    differences use a step of ``1e-6 * (1 + |w_j|)`` per parameter, and only
    entries with magnitude above 1e-10 enter the comparison. Returns 0 when
    no entry qualifies.
    """
    xw = np.asarray(xw, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.complex128)
    y = np.ascontiguousarray(xw.T, dtype=np.complex128)
    trel = t - t[0]
    jac, _, _ = _kernels.varpro_jacobian(y, trel, omega)
    fd = np.empty_like(jac)
    for j in range(omega.size):
        h = 1e-6 * (1.0 + abs(omega[j]))
        for part, delta in enumerate((h, 1j * h)):
            om_p = omega.copy()
            om_p[j] += delta
            om_m = omega.copy()
            om_m[j] -= delta
            _, resid_p, _ = _kernels.linear_coeffs(y, trel, om_p)
            _, resid_m, _ = _kernels.linear_coeffs(y, trel, om_m)
            fd[:, 2 * j + part] = ((resid_p - resid_m) / (2.0 * h)).ravel()
    mask = np.abs(fd) > 1e-10
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(jac - fd)[mask] / np.abs(fd)[mask]))
