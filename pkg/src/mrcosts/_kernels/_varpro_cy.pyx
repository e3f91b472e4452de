# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled variable-projection fit kernel.

Mirrors ``reference.varpro_lm`` step for step: per-window cost is dominated
by many small dense factorizations, so the win comes from calling LAPACK and
BLAS directly and keeping the Levenberg-Marquardt loop free of interpreter
overhead. Numerical conventions (SVD cutoff, damping schedule, clamping,
acceptance rule) are identical to the reference implementation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport isfinite, rint, sqrt
from scipy.linalg.cython_blas cimport zgemm
from scipy.linalg.cython_lapack cimport dgesv, zgesdd

cnp.import_array()

STATUS_GRAD = 0
STATUS_STEP = 1
STATUS_MAX_ITERS = 2
STATUS_STALLED = 3
STATUS_BREAKDOWN = 4

cdef double _LAMBDA_CAP = 1e12
cdef double _LAMBDA_FLOOR = 1e-12
cdef int _MAX_TRIALS = 50
cdef double _EPS = np.finfo(np.float64).eps

cdef extern from "complex.h" nogil:
    double complex cexp(double complex)
    double cabs(double complex)
    double creal(double complex)
    double cimag(double complex)
    double complex conj(double complex)


cdef struct EvalState:
    # pointers into the per-call buffers for one evaluation point
    double complex *phi    # m x r basis
    double complex *u      # m x r left singular vectors
    double complex *vh     # r x r right singular vectors (conj transposed)
    double *s_inv          # r pseudo-inverted singular values
    double complex *coeffs # r x n linear coefficients
    double complex *resid  # m x n residual


cdef int _svd_eval(
    int m,
    int n,
    int r,
    double complex *y,
    double *t,
    double complex *omega,
    EvalState *st,
    # scratch
    double complex *svd_a,
    double *s,
    double complex *cwork,
    int lcwork,
    double *rwork,
    int *iwork,
    double complex *gtmp,
    double *res_out,
) noexcept nogil:
    """Basis, SVD solve, and residual at ``omega``. Returns LAPACK info."""
    cdef int i, j, info
    cdef double complex w
    cdef double cutoff
    cdef char jobz = b'S'
    cdef char cc = b'C'
    cdef char cn = b'N'
    cdef double complex one = 1.0, zero = 0.0, minus = -1.0
    cdef double acc

    for j in range(r):
        w = omega[j]
        for i in range(m):
            st.phi[i + m * j] = cexp(w * t[i])
            svd_a[i + m * j] = st.phi[i + m * j]

    zgesdd(&jobz, &m, &r, svd_a, &m, s, st.u, &m, st.vh, &r,
           cwork, &lcwork, rwork, iwork, &info)
    if info != 0:
        return info

    cutoff = (m if m > r else r) * _EPS * s[0]
    for i in range(r):
        st.s_inv[i] = 1.0 / s[i] if s[i] > cutoff else 0.0

    # gtmp = U^H y, scaled by s_inv row-wise; coeffs = Vh^H gtmp
    zgemm(&cc, &cn, &r, &n, &m, &one, st.u, &m, y, &m, &zero, gtmp, &r)
    for j in range(n):
        for i in range(r):
            gtmp[i + r * j] = gtmp[i + r * j] * st.s_inv[i]
    zgemm(&cc, &cn, &r, &n, &r, &one, st.vh, &r, gtmp, &r, &zero, st.coeffs, &r)

    for i in range(m * n):
        st.resid[i] = y[i]
    zgemm(&cn, &cn, &m, &n, &r, &minus, st.phi, &m, st.coeffs, &r, &one, st.resid, &m)

    acc = 0.0
    for i in range(m * n):
        acc += creal(st.resid[i]) ** 2 + cimag(st.resid[i]) ** 2
    res_out[0] = sqrt(acc)
    return 0


cdef void _gauss_newton(
    int m,
    int n,
    int r,
    double *t,
    EvalState *st,
    # scratch
    double complex *tphi,
    double complex *small,   # r x r
    double complex *umat,    # m x r
    double complex *vmat,    # m x r
    double complex *smat,    # r x n
    double complex *grams,   # 8 stacked r x r Gram matrices
    double complex *pmat,    # r x n projections
    double *hess,
    double *grad,
) noexcept nogil:
    cdef int i, j, p = 2 * r, rr = r * r
    cdef char cc = b'C'
    cdef char cn = b'N'
    cdef double complex one = 1.0, zero = 0.0, minus = -1.0
    cdef double complex uu_bb, uv_bs, vu_sb, vv_ss, a_r, c_r
    cdef double complex *guu = grams
    cdef double complex *guv = grams + rr
    cdef double complex *gvu = grams + 2 * rr
    cdef double complex *gvv = grams + 3 * rr
    cdef double complex *gbb = grams + 4 * rr
    cdef double complex *gbs = grams + 5 * rr
    cdef double complex *gsb = grams + 6 * rr
    cdef double complex *gss = grams + 7 * rr

    for j in range(r):
        for i in range(m):
            tphi[i + m * j] = t[i] * st.phi[i + m * j]
    # umat = (I - U U^H) tphi
    zgemm(&cc, &cn, &r, &r, &m, &one, st.u, &m, tphi, &m, &zero, small, &r)
    for i in range(m * r):
        umat[i] = tphi[i]
    zgemm(&cn, &cn, &m, &r, &r, &minus, st.u, &m, small, &r, &one, umat, &m)
    # vmat = U diag(s_inv) Vh  (columns of pinv(phi)^H)
    for j in range(r):
        for i in range(r):
            small[i + r * j] = st.s_inv[i] * st.vh[i + r * j]
    zgemm(&cn, &cn, &m, &r, &r, &one, st.u, &m, small, &r, &zero, vmat, &m)
    # smat rows: (t phi_j)^H resid
    zgemm(&cc, &cn, &r, &n, &m, &one, tphi, &m, st.resid, &m, &zero, smat, &r)

    # every Jacobian column is a sum of two rank-1 terms, so the real normal
    # matrix reduces to elementwise combinations of r x r Gram matrices
    zgemm(&cc, &cn, &r, &r, &m, &one, umat, &m, umat, &m, &zero, guu, &r)
    zgemm(&cc, &cn, &r, &r, &m, &one, umat, &m, vmat, &m, &zero, guv, &r)
    zgemm(&cc, &cn, &r, &r, &m, &one, vmat, &m, umat, &m, &zero, gvu, &r)
    zgemm(&cc, &cn, &r, &r, &m, &one, vmat, &m, vmat, &m, &zero, gvv, &r)
    # row Grams via ('N','C') products; b_j^H b_l is the conjugate of
    # (B B^H)[j, l], and likewise for the mixed and s-row Grams
    zgemm(&cn, &cc, &r, &r, &n, &one, st.coeffs, &r, st.coeffs, &r, &zero, gbb, &r)
    zgemm(&cn, &cc, &r, &r, &n, &one, st.coeffs, &r, smat, &r, &zero, gbs, &r)
    zgemm(&cn, &cc, &r, &r, &n, &one, smat, &r, st.coeffs, &r, &zero, gsb, &r)
    zgemm(&cn, &cc, &r, &r, &n, &one, smat, &r, smat, &r, &zero, gss, &r)
    for j in range(r):
        for i in range(r):
            uu_bb = guu[i + r * j] * conj(gbb[i + r * j])
            uv_bs = guv[i + r * j] * conj(gbs[i + r * j])
            vu_sb = gvu[i + r * j] * conj(gsb[i + r * j])
            vv_ss = gvv[i + r * j] * conj(gss[i + r * j])
            hess[2 * i + p * (2 * j)] = creal(uu_bb + uv_bs + vu_sb + vv_ss)
            hess[2 * i + p * (2 * j + 1)] = -cimag(uu_bb - uv_bs + vu_sb - vv_ss)
            hess[2 * i + 1 + p * (2 * j)] = cimag(uu_bb + uv_bs - vu_sb - vv_ss)
            hess[2 * i + 1 + p * (2 * j + 1)] = creal(uu_bb - uv_bs - vu_sb + vv_ss)

    zgemm(&cc, &cn, &r, &n, &m, &one, umat, &m, st.resid, &m, &zero, pmat, &r)
    for j in range(r):
        a_r = 0.0
        for i in range(n):
            a_r = a_r + pmat[j + r * i] * conj(st.coeffs[j + r * i])
        grad[2 * j] = -creal(a_r)
        grad[2 * j + 1] = -cimag(a_r)
    zgemm(&cc, &cn, &r, &n, &m, &one, vmat, &m, st.resid, &m, &zero, pmat, &r)
    for j in range(r):
        c_r = 0.0
        for i in range(n):
            c_r = c_r + pmat[j + r * i] * conj(smat[j + r * i])
        grad[2 * j] = grad[2 * j] - creal(c_r)
        grad[2 * j + 1] = grad[2 * j + 1] + cimag(c_r)


def varpro_lm(
    object y_in,
    object t_in,
    object omega0,
    double rho,
    int max_iters,
    double tol_grad,
    double tol_step,
    double lam0,
    double im_period=0.0,
):
    """Compiled Levenberg-Marquardt loop; see ``reference.varpro_lm``."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="fortran"] y = \
        np.asfortranarray(y_in, dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t = \
        np.ascontiguousarray(t_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] omega = \
        np.array(omega0, dtype=np.complex128).ravel().copy()

    cdef int m = y.shape[0]
    cdef int n = y.shape[1]
    cdef int r = omega.shape[0]
    cdef int mn = m * n
    cdef int p = 2 * r
    cdef int i, j, info, it, trial, n_accepted = 0, status = STATUS_MAX_ITERS

    # two evaluation-state buffer sets, swapped on acceptance
    cur_bufs = [np.empty((m, r), dtype=np.complex128, order="F"),
                np.empty((m, r), dtype=np.complex128, order="F"),
                np.empty((r, r), dtype=np.complex128, order="F"),
                np.empty(r, dtype=np.float64),
                np.empty((r, n), dtype=np.complex128, order="F"),
                np.empty((m, n), dtype=np.complex128, order="F")]
    new_bufs = [np.empty_like(b) for b in cur_bufs]

    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="fortran"] svd_a = \
        np.empty((m, r), dtype=np.complex128, order="F")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = np.empty(r, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] iwork = np.empty(8 * r, dtype=np.int32)
    cdef int lrwork = r * max(5 * r + 7, 2 * m + 2 * r + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rwork = np.empty(lrwork, dtype=np.float64)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="fortran"] gtmp = \
        np.empty((r, n), dtype=np.complex128, order="F")

    # LAPACK workspace query for the SVD
    cdef double complex wquery
    cdef int lcwork = -1
    cdef char jobz = b'S'
    zgesdd(&jobz, &m, &r, &svd_a[0, 0], &m, &s[0], &svd_a[0, 0], &m,
           &svd_a[0, 0], &r, &wquery, &lcwork, &rwork[0], <int*>&iwork[0], &info)
    lcwork = <int>creal(wquery)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] cwork = \
        np.empty(lcwork, dtype=np.complex128)

    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="fortran"] tphi = \
        np.empty((m, r), dtype=np.complex128, order="F")
    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="fortran"] small = \
        np.empty((r, r), dtype=np.complex128, order="F")
    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="fortran"] umat = \
        np.empty((m, r), dtype=np.complex128, order="F")
    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="fortran"] vmat = \
        np.empty((m, r), dtype=np.complex128, order="F")
    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="fortran"] smat = \
        np.empty((r, n), dtype=np.complex128, order="F")
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] grams = \
        np.empty(8 * r * r, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="fortran"] pmat = \
        np.empty((r, n), dtype=np.complex128, order="F")
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="fortran"] hess = \
        np.empty((p, p), dtype=np.float64, order="F")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] grad = np.empty(p, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="fortran"] amat = \
        np.empty((p, p), dtype=np.float64, order="F")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] delta = np.empty(p, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scale = np.empty(p, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] ipiv = np.empty(p, dtype=np.int32)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] omega_new = np.empty(r, dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] history = np.empty(max_iters + 1, dtype=np.float64)

    cdef EvalState cur, nxt
    cdef double res = 0.0, res_new = 0.0, lam = lam0
    cdef double gnorm, step_norm, re_part
    cdef bint accepted, all_nonfinite, step_converged = False
    cdef int n_hist = 0
    cdef int one_rhs = 1

    cdef double im_part
    for j in range(r):
        re_part = creal(omega[j])
        if re_part > rho:
            re_part = rho
        elif re_part < -rho:
            re_part = -rho
        im_part = cimag(omega[j])
        if im_period > 0.0:
            im_part = im_part - im_period * rint(im_part / im_period)
        omega[j] = re_part + 1.0j * im_part

    _bind(&cur, cur_bufs)
    _bind(&nxt, new_bufs)
    info = _svd_eval(m, n, r, &y[0, 0], &t[0], &omega[0], &cur,
                     &svd_a[0, 0], &s[0], &cwork[0], lcwork, &rwork[0],
                     <int*>&iwork[0], &gtmp[0, 0], &res)
    history[0] = res
    n_hist = 1
    if info != 0 or not isfinite(res):
        return _package(omega, cur_bufs, res, 0, STATUS_BREAKDOWN, history, n_hist, r, n)

    for it in range(max_iters):
        _gauss_newton(m, n, r, &t[0], &cur, &tphi[0, 0], &small[0, 0], &umat[0, 0],
                      &vmat[0, 0], &smat[0, 0], &grams[0], &pmat[0, 0],
                      &hess[0, 0], &grad[0])
        gnorm = 0.0
        for j in range(p):
            gnorm += grad[j] * grad[j]
        gnorm = sqrt(gnorm)
        if gnorm < tol_grad:
            status = STATUS_GRAD
            break
        for j in range(p):
            scale[j] = hess[j, j] if hess[j, j] > 0.0 else 1.0
        accepted = False
        all_nonfinite = True
        for trial in range(_MAX_TRIALS):
            for j in range(p):
                for i in range(p):
                    amat[i, j] = hess[i, j]
                amat[j, j] += lam * scale[j]
                delta[j] = -grad[j]
            dgesv(&p, &one_rhs, &amat[0, 0], &p, <int*>&ipiv[0], &delta[0], &p, &info)
            if info != 0:
                all_nonfinite = False
                lam *= 10.0
                continue
            step_norm = 0.0
            for j in range(r):
                re_part = creal(omega[j]) + delta[2 * j]
                if re_part > rho:
                    re_part = rho
                elif re_part < -rho:
                    re_part = -rho
                # step size measured after the clamp, before wrapping
                step_norm += (re_part - creal(omega[j])) ** 2
                step_norm += delta[2 * j + 1] * delta[2 * j + 1]
                im_part = cimag(omega[j]) + delta[2 * j + 1]
                if im_period > 0.0:
                    im_part = im_part - im_period * rint(im_part / im_period)
                omega_new[j] = re_part + 1.0j * im_part
            step_norm = sqrt(step_norm)
            info = _svd_eval(m, n, r, &y[0, 0], &t[0], &omega_new[0], &nxt,
                            &svd_a[0, 0], &s[0], &cwork[0], lcwork, &rwork[0],
                            <int*>&iwork[0], &gtmp[0, 0], &res_new)
            if info != 0 or not isfinite(res_new):
                lam *= 10.0
                if lam > _LAMBDA_CAP:
                    break
                continue
            all_nonfinite = False
            if res_new < res:
                for j in range(r):
                    omega[j] = omega_new[j]
                cur_bufs, new_bufs = new_bufs, cur_bufs
                _bind(&cur, cur_bufs)
                _bind(&nxt, new_bufs)
                res = res_new
                history[n_hist] = res
                n_hist += 1
                n_accepted += 1
                lam = lam / 10.0 if lam / 10.0 > _LAMBDA_FLOOR else _LAMBDA_FLOOR
                accepted = True
                if step_norm < tol_step:
                    status = STATUS_STEP
                    step_converged = True
                break
            lam *= 10.0
            if lam > _LAMBDA_CAP:
                break
        if not accepted:
            status = STATUS_BREAKDOWN if all_nonfinite else STATUS_STALLED
            break
        if step_converged:
            break
    return _package(omega, cur_bufs, res, n_accepted, status, history, n_hist, r, n)


cdef void _bind(EvalState *st, list bufs):
    cdef cnp.ndarray phi = bufs[0]
    cdef cnp.ndarray u = bufs[1]
    cdef cnp.ndarray vh = bufs[2]
    cdef cnp.ndarray s_inv = bufs[3]
    cdef cnp.ndarray coeffs = bufs[4]
    cdef cnp.ndarray resid = bufs[5]
    st.phi = <double complex*>cnp.PyArray_DATA(phi)
    st.u = <double complex*>cnp.PyArray_DATA(u)
    st.vh = <double complex*>cnp.PyArray_DATA(vh)
    st.s_inv = <double*>cnp.PyArray_DATA(s_inv)
    st.coeffs = <double complex*>cnp.PyArray_DATA(coeffs)
    st.resid = <double complex*>cnp.PyArray_DATA(resid)


cdef tuple _package(object omega, list bufs, double res, int n_accepted,
                    int status, object history, int n_hist, int r, int n):
    coeffs = np.ascontiguousarray(bufs[4])
    return (
        np.asarray(omega),
        coeffs,
        res,
        n_accepted,
        status,
        np.asarray(history)[:n_hist].copy(),
    )
