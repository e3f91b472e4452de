"""Pure NumPy implementation of the variable-projection fit kernels.

The compiled extension (``_varpro_cy``) implements the same algorithm with
direct LAPACK calls; this module is the importable fallback and the reference
the extension is tested against.

Conventions shared by both backends:

* ``y`` is the demeaned window transposed to time-major, shape (m, n).
* ``t`` holds window-relative times, ``t[0] == 0``.
* Eigenvalues are optimized over the real parameter vector
  ``theta = (Re w_0, Im w_0, Re w_1, Im w_1, ...)``.
* The linear coefficients are eliminated exactly at every iterate through an
  SVD of the exponential basis with singular values below
  ``max(m, r) * eps * s_max`` treated as zero.
* After every parameter update ``Re w`` is clamped into ``[-rho, rho]`` and,
  when ``im_period > 0``, ``Im w`` is wrapped into the principal band
  ``[-im_period/2, im_period/2]``. On a uniform grid the basis is periodic
  in ``Im w`` with period ``2 pi / dt``, so wrapping swaps an iterate for
  its canonical alias without changing the model on the grid; it keeps the
  optimizer from drifting across equivalent basins and keeps ``|Im w|``
  physically meaningful for band clustering.
"""

from __future__ import annotations

import numpy as np

# status codes returned by varpro_lm
STATUS_GRAD = 0
STATUS_STEP = 1
STATUS_MAX_ITERS = 2
STATUS_STALLED = 3
STATUS_BREAKDOWN = 4

_LAMBDA_CAP = 1e12
_LAMBDA_FLOOR = 1e-12
_MAX_TRIALS = 50


def exp_basis(omega: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Exponential basis matrix ``exp(t_i * w_j)`` of shape (m, r)."""
    return np.exp(np.outer(t, omega))


def _svd_solve(y: np.ndarray, t: np.ndarray, omega: np.ndarray):
    phi = exp_basis(omega, t)
    m, r = phi.shape
    u, s, vh = np.linalg.svd(phi, full_matrices=False)
    cutoff = max(m, r) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    keep = s > cutoff
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    coeffs = (vh.conj().T * s_inv) @ (u.conj().T @ y)
    resid = y - phi @ coeffs
    return phi, u, s_inv, vh, coeffs, resid


def linear_coeffs(y: np.ndarray, t: np.ndarray, omega: np.ndarray):
    """Best linear coefficients for fixed eigenvalues.

    Returns ``(coeffs, resid, res_fro)`` where ``coeffs`` is (r, n) and
    ``resid = y - basis @ coeffs``.
    """
    _, _, _, _, coeffs, resid = _svd_solve(y, t, omega)
    return coeffs, resid, float(np.linalg.norm(resid))


def _derivative_parts(y, t, omega):
    phi, u, s_inv, vh, coeffs, resid = _svd_solve(y, t, omega)
    tphi = t[:, None] * phi
    # (I - P) applied to the basis derivative, P the projector onto span(phi)
    u_part = tphi - u @ (u.conj().T @ tphi)
    # columns of pinv(phi)^H
    v_part = u @ (s_inv[:, None] * vh)
    s_rows = tphi.conj().T @ resid
    return u_part, v_part, s_rows, coeffs, resid


def varpro_jacobian(y: np.ndarray, t: np.ndarray, omega: np.ndarray):
    """Jacobian of the projected residual and the residual itself.

    Returns ``(jac, coeffs, resid)``. ``jac`` has shape (m*n, 2r), complex;
    column ``2j`` differentiates with respect to ``Re w_j`` and column
    ``2j + 1`` with respect to ``Im w_j``. Rows follow C-order raveling of
    the (m, n) residual.
    """
    u_part, v_part, s_rows, coeffs, resid = _derivative_parts(y, t, omega)
    m, n = y.shape
    r = omega.shape[0]
    jac = np.empty((m * n, 2 * r), dtype=np.complex128)
    for j in range(r):
        term_u = np.outer(u_part[:, j], coeffs[j, :])
        term_v = np.outer(v_part[:, j], s_rows[j, :])
        jac[:, 2 * j] = -(term_u + term_v).ravel()
        jac[:, 2 * j + 1] = (-1j) * (term_u - term_v).ravel()
    return jac, coeffs, resid


def gauss_newton_system(y: np.ndarray, t: np.ndarray, omega: np.ndarray):
    """Normal matrix and gradient of the projected residual without forming
    the Jacobian.

    Every Jacobian column is a sum of two rank-1 matrices, so the real
    normal matrix ``Re(J^H J)`` and gradient ``Re(J^H vec R)`` reduce to
    elementwise combinations of r-by-r Gram matrices, costing
    ``O(r^2 (m + n))`` instead of ``O(m n r^2)``.

    Returns ``(hess, grad, coeffs, resid)``.
    """
    u_part, v_part, s_rows, coeffs, resid = _derivative_parts(y, t, omega)
    r = omega.shape[0]
    guu = u_part.conj().T @ u_part
    guv = u_part.conj().T @ v_part
    gvu = v_part.conj().T @ u_part
    gvv = v_part.conj().T @ v_part
    gbb = coeffs.conj() @ coeffs.T
    gbs = coeffs.conj() @ s_rows.T
    gsb = s_rows.conj() @ coeffs.T
    gss = s_rows.conj() @ s_rows.T

    uu_bb = guu * gbb
    uv_bs = guv * gbs
    vu_sb = gvu * gsb
    vv_ss = gvv * gss
    hess = np.empty((2 * r, 2 * r))
    hess[0::2, 0::2] = (uu_bb + uv_bs + vu_sb + vv_ss).real
    hess[0::2, 1::2] = -(uu_bb - uv_bs + vu_sb - vv_ss).imag
    hess[1::2, 0::2] = (uu_bb + uv_bs - vu_sb - vv_ss).imag
    hess[1::2, 1::2] = (uu_bb - uv_bs - vu_sb + vv_ss).real

    pu = np.sum((u_part.conj().T @ resid) * coeffs.conj(), axis=1)
    pv = np.sum((v_part.conj().T @ resid) * s_rows.conj(), axis=1)
    grad = np.empty(2 * r)
    grad[0::2] = -(pu + pv).real
    grad[1::2] = -(pu - pv).imag
    return hess, grad, coeffs, resid


def _canonicalize(omega: np.ndarray, rho: float, im_period: float) -> np.ndarray:
    omega.real = np.clip(omega.real, -rho, rho)
    if im_period > 0.0:
        omega.imag = omega.imag - im_period * np.round(omega.imag / im_period)
    return omega


def varpro_lm(
    y: np.ndarray,
    t: np.ndarray,
    omega0: np.ndarray,
    rho: float,
    max_iters: int,
    tol_grad: float,
    tol_step: float,
    lam0: float,
    im_period: float = 0.0,
):
    """Levenberg-Marquardt minimization of the projected residual over omega.

    Returns ``(omega, coeffs, res_fro, n_accepted, status, history)`` where
    ``history`` lists the residual norm of every accepted iterate (starting
    with the clamped initial point) and ``status`` is one of the module
    ``STATUS_*`` codes. Only strictly improving steps are accepted, so the
    history is non-increasing.
    """
    omega = np.asarray(omega0, dtype=np.complex128).copy()
    omega = _canonicalize(omega, rho, im_period)
    coeffs, resid, res = linear_coeffs(y, t, omega)
    history = [res]
    if not np.isfinite(res):
        return omega, coeffs, res, 0, STATUS_BREAKDOWN, history
    lam = lam0
    status = STATUS_MAX_ITERS
    n_accepted = 0
    for _ in range(max_iters):
        hess, grad, coeffs, resid = gauss_newton_system(y, t, omega)
        if np.linalg.norm(grad) < tol_grad:
            status = STATUS_GRAD
            break
        scale = np.diag(hess).copy()
        scale[scale <= 0.0] = 1.0
        accepted = False
        all_nonfinite = True
        for _trial in range(_MAX_TRIALS):
            try:
                step = np.linalg.solve(hess + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                all_nonfinite = False
                lam *= 10.0
                continue
            omega_new = omega + step[0::2] + 1j * step[1::2]
            omega_raw = omega_new.copy()
            omega_raw.real = np.clip(omega_raw.real, -rho, rho)
            omega_new = _canonicalize(omega_new, rho, im_period)
            coeffs_new, resid_new, res_new = linear_coeffs(y, t, omega_new)
            if not np.isfinite(res_new):
                lam *= 10.0
                if lam > _LAMBDA_CAP:
                    break
                continue
            all_nonfinite = False
            if res_new < res:
                # step size measured before wrapping, after the clamp
                diff = omega_raw - omega
                step_norm = float(
                    np.sqrt(np.sum(diff.real**2) + np.sum(diff.imag**2))
                )
                omega, coeffs, resid, res = omega_new, coeffs_new, resid_new, res_new
                history.append(res)
                n_accepted += 1
                lam = max(lam / 10.0, _LAMBDA_FLOOR)
                accepted = True
                if step_norm < tol_step:
                    status = STATUS_STEP
                break
            lam *= 10.0
            if lam > _LAMBDA_CAP:
                break
        if not accepted:
            status = STATUS_BREAKDOWN if all_nonfinite else STATUS_STALLED
            break
        if status == STATUS_STEP:
            break
    return omega, coeffs, res, n_accepted, status, np.asarray(history)
