# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled implementation of the numerical kernels.

Mirrors `qreset.kernels.pure` function for function; see that module for the
frame and ordering conventions.  The eigensolver here is a closed-form 3x3
symmetric solve (trigonometric characteristic-polynomial roots, cross-product
eigenvectors) with a Jacobi fallback near degeneracies.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport acos, cos, exp, expm1, fabs, sqrt
from libc.stdlib cimport free, malloc

from .pure import NearDegeneracyError

cnp.import_array()

BACKEND = "compiled"

DEGENERACY_FLAG_TOL = 1e-9
PERTURBATION_GAP_TOL = 1e-6

cdef double _DEG_FLAG_TOL = 1e-9
cdef double _PT_GAP_TOL = 1e-6
cdef double _JACOBI_GAP_TOL = 1e-4
cdef double _TWO_PI_3 = 2.0943951023931953


# ---------------------------------------------------------------------------
# 3x3 symmetric eigensolver
# ---------------------------------------------------------------------------

cdef struct Eig:
    double w[3]
    double V[3][3]  # V[row][col]; column i is eigenvector i


cdef inline void _eig_values(double a, double b, double c, double g, double G,
                             double* w) noexcept nogil:
    cdef double p1 = g * g + G * G
    cdef double q = (a + b + c) / 3.0
    cdef double aa = a - q
    cdef double bb = b - q
    cdef double cc = c - q
    cdef double p2 = aa * aa + bb * bb + cc * cc + 2.0 * p1
    cdef double p, det, r, phi, e1, e3
    if p2 <= 0.0:
        w[0] = w[1] = w[2] = q
        return
    p = sqrt(p2 / 6.0)
    det = aa * (bb * cc - G * G) - g * g * cc
    r = det / (2.0 * p * p * p)
    if r > 1.0:
        r = 1.0
    elif r < -1.0:
        r = -1.0
    phi = acos(r) / 3.0
    e3 = q + 2.0 * p * cos(phi)
    e1 = q + 2.0 * p * cos(phi + _TWO_PI_3)
    w[0] = e1
    w[1] = 3.0 * q - e1 - e3
    w[2] = e3


cdef inline void _cross(double* x, double* y, double* out) noexcept nogil:
    out[0] = x[1] * y[2] - x[2] * y[1]
    out[1] = x[2] * y[0] - x[0] * y[2]
    out[2] = x[0] * y[1] - x[1] * y[0]


cdef double _vec_for(double a, double b, double c, double g, double G,
                     double lam, double* v) noexcept nogil:
    """Best cross-product eigenvector candidate for eigenvalue lam."""
    cdef double r1[3]
    cdef double r2[3]
    cdef double r3[3]
    cdef double c12[3]
    cdef double c13[3]
    cdef double c23[3]
    cdef double n12, n13, n23, best
    r1[0] = a - lam; r1[1] = g;       r1[2] = 0.0
    r2[0] = g;       r2[1] = b - lam; r2[2] = G
    r3[0] = 0.0;     r3[1] = G;       r3[2] = c - lam
    _cross(r1, r2, c12)
    _cross(r1, r3, c13)
    _cross(r2, r3, c23)
    n12 = c12[0] * c12[0] + c12[1] * c12[1] + c12[2] * c12[2]
    n13 = c13[0] * c13[0] + c13[1] * c13[1] + c13[2] * c13[2]
    n23 = c23[0] * c23[0] + c23[1] * c23[1] + c23[2] * c23[2]
    if n12 >= n13 and n12 >= n23:
        v[0] = c12[0]; v[1] = c12[1]; v[2] = c12[2]
        best = n12
    elif n13 >= n23:
        v[0] = c13[0]; v[1] = c13[1]; v[2] = c13[2]
        best = n13
    else:
        v[0] = c23[0]; v[1] = c23[1]; v[2] = c23[2]
        best = n23
    return best


cdef void _jacobi(double a, double b, double c, double g, double G, Eig* e) noexcept nogil:
    cdef double A[3][3]
    cdef double V[3][3]
    cdef int p, q, k, sweep
    cdef double off, apq, theta, t, cth, sth, tau, akp, akq, vkp, vkq, scale
    A[0][0] = a; A[0][1] = g;   A[0][2] = 0.0
    A[1][0] = g; A[1][1] = b;   A[1][2] = G
    A[2][0] = 0.0; A[2][1] = G; A[2][2] = c
    for p in range(3):
        for q in range(3):
            V[p][q] = 1.0 if p == q else 0.0
    scale = fabs(a) + fabs(b) + fabs(c) + fabs(g) + fabs(G)
    if scale == 0.0:
        scale = 1.0
    for sweep in range(64):
        off = A[0][1] * A[0][1] + A[0][2] * A[0][2] + A[1][2] * A[1][2]
        if off <= 1e-32 * scale * scale:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = A[p][q]
                if fabs(apq) <= 1e-18 * scale:
                    continue
                theta = (A[q][q] - A[p][p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                cth = 1.0 / sqrt(t * t + 1.0)
                sth = t * cth
                tau = sth / (1.0 + cth)
                A[p][p] -= t * apq
                A[q][q] += t * apq
                A[p][q] = 0.0
                A[q][p] = 0.0
                for k in range(3):
                    if k != p and k != q:
                        akp = A[k][p]
                        akq = A[k][q]
                        A[k][p] = akp - sth * (akq + tau * akp)
                        A[p][k] = A[k][p]
                        A[k][q] = akq + sth * (akp - tau * akq)
                        A[q][k] = A[k][q]
                for k in range(3):
                    vkp = V[k][p]
                    vkq = V[k][q]
                    V[k][p] = vkp - sth * (vkq + tau * vkp)
                    V[k][q] = vkq + sth * (vkp - tau * vkq)
    for p in range(3):
        e.w[p] = A[p][p]
        for q in range(3):
            e.V[p][q] = V[p][q]


cdef void _sort_gauge(Eig* e) noexcept nogil:
    cdef int i, j, kmax
    cdef double tmp
    # insertion sort of three eigenpairs, ascending
    for i in range(1, 3):
        for j in range(i, 0, -1):
            if e.w[j] < e.w[j - 1]:
                tmp = e.w[j]; e.w[j] = e.w[j - 1]; e.w[j - 1] = tmp
                for kmax in range(3):
                    tmp = e.V[kmax][j]
                    e.V[kmax][j] = e.V[kmax][j - 1]
                    e.V[kmax][j - 1] = tmp
    for i in range(3):
        kmax = 0
        if fabs(e.V[1][i]) > fabs(e.V[kmax][i]):
            kmax = 1
        if fabs(e.V[2][i]) > fabs(e.V[kmax][i]):
            kmax = 2
        if e.V[kmax][i] < 0.0:
            for j in range(3):
                e.V[j][i] = -e.V[j][i]


cdef void _eig3(double a, double b, double c, double g, double G, Eig* e) noexcept nogil:
    cdef double p1 = g * g + G * G
    cdef double scale = fabs(a) + fabs(b) + fabs(c)
    cdef double v1[3]
    cdef double v3[3]
    cdef double v2[3]
    cdef double n, dot, norm, gapmin
    cdef int i, j
    if p1 <= 1e-32 * scale * scale:
        # effectively diagonal: basis vectors sorted by diagonal entry
        e.w[0] = a; e.w[1] = b; e.w[2] = c
        for i in range(3):
            for j in range(3):
                e.V[i][j] = 1.0 if i == j else 0.0
        _sort_gauge(e)
        return
    _eig_values(a, b, c, g, G, e.w)
    norm = fabs(e.w[0])
    if fabs(e.w[2]) > norm:
        norm = fabs(e.w[2])
    gapmin = e.w[1] - e.w[0]
    if e.w[2] - e.w[1] < gapmin:
        gapmin = e.w[2] - e.w[1]
    if gapmin < _JACOBI_GAP_TOL * norm:
        _jacobi(a, b, c, g, G, e)
        _sort_gauge(e)
        return
    if _vec_for(a, b, c, g, G, e.w[0], v1) <= 0.0 or \
       _vec_for(a, b, c, g, G, e.w[2], v3) <= 0.0:
        _jacobi(a, b, c, g, G, e)
        _sort_gauge(e)
        return
    n = sqrt(v1[0] * v1[0] + v1[1] * v1[1] + v1[2] * v1[2])
    for i in range(3):
        v1[i] /= n
    dot = v1[0] * v3[0] + v1[1] * v3[1] + v1[2] * v3[2]
    for i in range(3):
        v3[i] -= dot * v1[i]
    n = sqrt(v3[0] * v3[0] + v3[1] * v3[1] + v3[2] * v3[2])
    for i in range(3):
        v3[i] /= n
    _cross(v3, v1, v2)
    for i in range(3):
        e.V[i][0] = v1[i]
        e.V[i][1] = v2[i]
        e.V[i][2] = v3[i]
    _sort_gauge(e)


# ---------------------------------------------------------------------------
# rates and generator
# ---------------------------------------------------------------------------

cdef inline double _thermal(double x) noexcept nogil:
    return 1.0 / (-expm1(-x))


cdef struct Gctx:
    Eig e
    double gam[3]
    double wq
    double wR
    double wL
    double g
    double G


cdef int _make_gctx(double wq, double wR, double wL, double g, double G,
                    double gamma0, double theta, Gctx* ctx) noexcept nogil:
    cdef int i
    ctx.wq = wq; ctx.wR = wR; ctx.wL = wL; ctx.g = g; ctx.G = G
    _eig3(wq, wR, wL, g, G, &ctx.e)
    if ctx.e.w[0] <= 0.0:
        return 1
    for i in range(3):
        ctx.gam[i] = gamma0 * ctx.e.V[2][i] * ctx.e.V[2][i] \
            * (wL * ctx.e.w[i] / (wR * wR)) * _thermal(ctx.e.w[i] / theta)
    return 0


cdef void _gen_apply(Gctx* ctx, double complex* r, double complex* out,
                     bint adjoint) noexcept nogil:
    # quadratic forms stay complex so the map is linear on all matrices,
    # not only Hermitian ones (their imaginary part vanishes for states)
    cdef double h[3][3]
    cdef double wv[3]
    cdef double complex hr[3][4]
    cdef double complex u[4]
    cdef double complex v4[4]
    cdef double complex val, rh
    cdef double complex pop, chi00
    cdef double gi
    cdef int i, j, b
    h[0][0] = ctx.wq; h[0][1] = ctx.g;  h[0][2] = 0.0
    h[1][0] = ctx.g;  h[1][1] = ctx.wR; h[1][2] = ctx.G
    h[2][0] = 0.0;    h[2][1] = ctx.G;  h[2][2] = ctx.wL
    # commutator: out = -i (H rho - rho H) with H supported on rows/cols 1..3
    for i in range(3):
        for j in range(4):
            hr[i][j] = h[i][0] * r[4 + j] + h[i][1] * r[8 + j] + h[i][2] * r[12 + j]
    for j in range(4):
        for b in range(4):
            val = 0.0
            if j >= 1:
                val = hr[j - 1][b]
            if b >= 1:
                rh = r[4 * j + 1] * h[0][b - 1] + r[4 * j + 2] * h[1][b - 1] \
                    + r[4 * j + 3] * h[2][b - 1]
                val = val - rh
            out[4 * j + b] = -1j * val
    # dissipator; u is the column contraction w^T rho, v4 the row
    # contraction rho w (kept separate so the map stays linear on
    # non-Hermitian inputs, where they are not conjugates)
    for i in range(3):
        gi = ctx.gam[i]
        wv[0] = ctx.e.V[0][i]
        wv[1] = ctx.e.V[1][i]
        wv[2] = ctx.e.V[2][i]
        for j in range(4):
            u[j] = wv[0] * r[4 + j] + wv[1] * r[8 + j] + wv[2] * r[12 + j]
            v4[j] = wv[0] * r[4 * j + 1] + wv[1] * r[4 * j + 2] \
                + wv[2] * r[4 * j + 3]
        if adjoint:
            # -(gam) * (chi00 * P - 0.5 {P, chi})
            chi00 = r[0]
            for j in range(1, 4):
                for b in range(1, 4):
                    out[4 * j + b] -= gi * chi00 * wv[j - 1] * wv[b - 1]
            for j in range(4):
                for b in range(4):
                    val = 0.0
                    if j >= 1:
                        val = wv[j - 1] * u[b]
                    if b >= 1:
                        val = val + v4[j] * wv[b - 1]
                    out[4 * j + b] += 0.5 * gi * val
        else:
            pop = wv[0] * u[1] + wv[1] * u[2] + wv[2] * u[3]
            out[0] += gi * pop
            for j in range(4):
                for b in range(4):
                    val = 0.0
                    if j >= 1:
                        val = wv[j - 1] * u[b]
                    if b >= 1:
                        val = val + v4[j] * wv[b - 1]
                    out[4 * j + b] -= 0.5 * gi * val


cdef void _rk4_one(double complex* r, double complex* comp, Gctx* A, Gctx* M,
                   Gctx* B, double h, bint adjoint) noexcept nogil:
    """RK4 update with Kahan-compensated accumulation (comp carries the
    rounding residue between substeps so the state update stays unbiased)."""
    cdef double complex k1[16]
    cdef double complex k2[16]
    cdef double complex k3[16]
    cdef double complex k4[16]
    cdef double complex tmp[16]
    cdef double complex delta, y, t
    cdef int i
    _gen_apply(A, r, k1, adjoint)
    for i in range(16):
        tmp[i] = r[i] + 0.5 * h * k1[i]
    _gen_apply(M, tmp, k2, adjoint)
    for i in range(16):
        tmp[i] = r[i] + 0.5 * h * k2[i]
    _gen_apply(M, tmp, k3, adjoint)
    for i in range(16):
        tmp[i] = r[i] + h * k3[i]
    _gen_apply(B, tmp, k4, adjoint)
    for i in range(16):
        delta = (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        y = delta - comp[i]
        t = r[i] + y
        comp[i] = (t - r[i]) - y
        r[i] = t


cdef int _step_interval(double complex* rho, int m, double* cs, double* ce,
                        double dt, int n_sub, double g, double G, double gamma0,
                        double theta, bint adjoint,
                        double step_bound) noexcept nogil:
    """Advance m states across one control interval (cs -> ce).

    dt carries the sign of the integration direction.  n_sub = 0 selects the
    substep count from the eigenvalue spread at the interval start so that
    spread * |h| <= step_bound.
    """
    cdef Gctx A, M, B
    cdef int s, l, st
    cdef double fm, fb, h, spread
    cdef double complex comp_stack[64]
    cdef double complex* comp = comp_stack
    cdef bint heap = m > 4
    st = _make_gctx(cs[0], cs[1], cs[2], g, G, gamma0, theta, &A)
    if st:
        return st
    if n_sub == 0:
        # the end-point spread covers intervals where the gap widens
        _eig3(ce[0], ce[1], ce[2], g, G, &B.e)
        spread = A.e.w[2] - A.e.w[0]
        if B.e.w[2] - B.e.w[0] > spread:
            spread = B.e.w[2] - B.e.w[0]
        n_sub = <int>(spread * fabs(dt) / step_bound) + 1
        if n_sub > 65536:
            n_sub = 65536
    if heap:
        comp = <double complex*> malloc(16 * m * sizeof(double complex))
        if comp == NULL:
            return 3
    for s in range(16 * m):
        comp[s] = 0.0
    h = dt / n_sub
    for s in range(n_sub):
        fm = (s + 0.5) / n_sub
        fb = (s + 1.0) / n_sub
        st = _make_gctx(cs[0] + (ce[0] - cs[0]) * fm,
                        cs[1] + (ce[1] - cs[1]) * fm,
                        cs[2] + (ce[2] - cs[2]) * fm,
                        g, G, gamma0, theta, &M)
        if st:
            break
        st = _make_gctx(cs[0] + (ce[0] - cs[0]) * fb,
                        cs[1] + (ce[1] - cs[1]) * fb,
                        cs[2] + (ce[2] - cs[2]) * fb,
                        g, G, gamma0, theta, &B)
        if st:
            break
        for l in range(m):
            _rk4_one(rho + 16 * l, comp + 16 * l, &A, &M, &B, h, adjoint)
        A = B
    if heap:
        free(comp)
    return st


# ---------------------------------------------------------------------------
# update integrand (Krotov gradient pairing)
# ---------------------------------------------------------------------------

cdef struct Uctx:
    Gctx gc
    double dw[3][3]      # [channel][i]
    double dV[3][3][3]   # [channel][row][i]
    double dgam[3][3]    # [channel][i]


cdef int _make_uctx(double wq, double wR, double wL, double g, double G,
                    double gamma0, double theta, unsigned char* active,
                    Uctx* u) noexcept nogil:
    cdef int st, c, i, j, k
    cdef double norm, gapmin, coef, x, therm, dtherm, pref, dpref, vL2, dvL2
    st = _make_gctx(wq, wR, wL, g, G, gamma0, theta, &u.gc)
    if st:
        return st
    norm = fabs(u.gc.e.w[0])
    if fabs(u.gc.e.w[2]) > norm:
        norm = fabs(u.gc.e.w[2])
    gapmin = u.gc.e.w[1] - u.gc.e.w[0]
    if u.gc.e.w[2] - u.gc.e.w[1] < gapmin:
        gapmin = u.gc.e.w[2] - u.gc.e.w[1]
    if gapmin < _PT_GAP_TOL * norm:
        return 2
    for c in range(3):
        if not active[c]:
            continue
        for i in range(3):
            u.dw[c][i] = u.gc.e.V[c][i] * u.gc.e.V[c][i]
            for k in range(3):
                u.dV[c][k][i] = 0.0
            for j in range(3):
                if j == i:
                    continue
                coef = u.gc.e.V[c][j] * u.gc.e.V[c][i] \
                    / (u.gc.e.w[i] - u.gc.e.w[j])
                for k in range(3):
                    u.dV[c][k][i] += coef * u.gc.e.V[k][j]
        for i in range(3):
            x = u.gc.e.w[i] / theta
            therm = _thermal(x)
            dtherm = -exp(-x) * therm * therm / theta
            pref = wL * u.gc.e.w[i] / (wR * wR)
            dpref = wL * u.dw[c][i] / (wR * wR)
            if c == 2:
                dpref += u.gc.e.w[i] / (wR * wR)
            elif c == 1:
                dpref -= 2.0 * wL * u.gc.e.w[i] / (wR * wR * wR)
            vL2 = u.gc.e.V[2][i] * u.gc.e.V[2][i]
            dvL2 = 2.0 * u.gc.e.V[2][i] * u.dV[c][2][i]
            u.dgam[c][i] = gamma0 * (dvL2 * pref * therm + vL2 * dpref * therm
                                     + vL2 * pref * dtherm * u.dw[c][i])
    return 0


cdef inline double _requad(double complex* M, double* x, double* y) noexcept nogil:
    """Re(x^T M11 y) for the excited 3x3 block of a flat 4x4 matrix."""
    cdef double total = 0.0
    cdef int a, b
    for a in range(3):
        for b in range(3):
            total += x[a] * M[4 * (a + 1) + (b + 1)].real * y[b]
    return total


cdef void _integrand3(Uctx* u, double complex* rho, double complex* chi,
                      unsigned char* active, double* out3) noexcept nogil:
    cdef double complex C[16]
    cdef double v[3]
    cdef double dv[3]
    cdef int c, i, j, k
    cdef double chi00, pop, a_i, b_i, tot
    for i in range(4):
        for j in range(4):
            C[4 * i + j] = rho[4 * i] * chi[j] + rho[4 * i + 1] * chi[4 + j] \
                + rho[4 * i + 2] * chi[8 + j] + rho[4 * i + 3] * chi[12 + j]
    chi00 = chi[0].real
    for c in range(3):
        if not active[c]:
            out3[c] = 0.0
            continue
        tot = 2.0 * C[5 * (c + 1)].imag
        for i in range(3):
            for k in range(3):
                v[k] = u.gc.e.V[k][i]
                dv[k] = u.dV[c][k][i]
            pop = _requad(rho, v, v)
            a_i = pop * chi00 - _requad(C, v, v)
            b_i = 2.0 * _requad(rho, dv, v) * chi00 \
                - (_requad(C, dv, v) + _requad(C, v, dv))
            tot += u.dgam[c][i] * a_i + u.gc.gam[i] * b_i
        out3[c] = tot


# ---------------------------------------------------------------------------
# python-visible API (matches qreset.kernels.pure)
# ---------------------------------------------------------------------------

_DUMMY_POPS = np.zeros((1, 1, 4))
_DUMMY_RATES = np.zeros((1, 3))
_DUMMY_STATES = np.zeros((1, 1, 4, 4), dtype=complex)


def thermal_factor(x):
    return 1.0 / (-np.expm1(-x))


def eigh3(double wq, double wR, double wL, double g, double G):
    cdef Eig e
    _eig3(wq, wR, wL, g, G, &e)
    w = np.array([e.w[0], e.w[1], e.w[2]])
    V = np.empty((3, 3))
    cdef double[:, ::1] Vv = V
    cdef int i, j
    for i in range(3):
        for j in range(3):
            Vv[i, j] = e.V[i][j]
    norm = max(abs(e.w[0]), abs(e.w[2]))
    degenerate = bool(min(e.w[1] - e.w[0], e.w[2] - e.w[1])
                      < _DEG_FLAG_TOL * norm)
    return w, V, degenerate


def decay_rates_from_eig(w, V, double wL, double wR, double gamma0,
                         double theta):
    w = np.asarray(w, dtype=float)
    V = np.asarray(V, dtype=float)
    if w[0] <= 0.0:
        raise ValueError(
            "non-positive excitation energy: the restricted model assumes "
            "positive eigenvalues"
        )
    return gamma0 * V[2, :] ** 2 * (wL * w / wR ** 2) \
        * (1.0 / (-np.expm1(-w / theta)))


def rates_grid(wq, wR, wL, double g, double G, double gamma0, double theta):
    wq_b, wR_b, wL_b = (np.array(x, dtype=float)
                        for x in np.broadcast_arrays(wq, wR, wL))
    shape = wq_b.shape
    cdef double[::1] q = wq_b.ravel()
    cdef double[::1] r = wR_b.ravel()
    cdef double[::1] l = wL_b.ravel()
    cdef Py_ssize_t n = q.shape[0]
    gam = np.empty((n, 3))
    wout = np.empty((n, 3))
    cdef double[:, ::1] gv = gam
    cdef double[:, ::1] wv = wout
    cdef Eig e
    cdef Py_ssize_t k
    cdef int i
    cdef int bad = 0
    with nogil:
        for k in range(n):
            _eig3(q[k], r[k], l[k], g, G, &e)
            if e.w[0] <= 0.0:
                bad = 1
                break
            for i in range(3):
                wv[k, i] = e.w[i]
                gv[k, i] = gamma0 * e.V[2][i] * e.V[2][i] \
                    * (l[k] * e.w[i] / (r[k] * r[k])) * _thermal(e.w[i] / theta)
    if bad:
        raise ValueError("non-positive excitation energy on the grid")
    return gam.reshape(shape + (3,)), wout.reshape(shape + (3,))


def eigen_control_derivatives(w, V, int which):
    w = np.asarray(w, dtype=float)
    V = np.asarray(V, dtype=float)
    norm = max(abs(w[0]), abs(w[2]))
    if min(w[1] - w[0], w[2] - w[1]) < _PT_GAP_TOL * norm:
        raise NearDegeneracyError(
            "eigenvalue gap below 1e-6 of the block norm; refine the control "
            "step instead of using first-order perturbation theory"
        )
    row = V[which, :]
    dw = row ** 2
    dV = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            if j != i:
                dV[:, i] += (row[j] * row[i] / (w[i] - w[j])) * V[:, j]
    return dw, dV


def rate_control_derivatives(w, V, dw, dV, double wL, double wR,
                             double gamma0, double theta, int which):
    w = np.asarray(w, dtype=float)
    V = np.asarray(V, dtype=float)
    dw = np.asarray(dw, dtype=float)
    dV = np.asarray(dV, dtype=float)
    vL2 = V[2, :] ** 2
    dvL2 = 2.0 * V[2, :] * dV[2, :]
    x = w / theta
    therm = 1.0 / (-np.expm1(-x))
    dtherm = -np.exp(-x) * therm ** 2 / theta
    pref = wL * w / wR ** 2
    dpref = wL * dw / wR ** 2
    if which == 2:
        dpref = dpref + w / wR ** 2
    elif which == 1:
        dpref = dpref - 2.0 * wL * w / wR ** 3
    return gamma0 * (dvL2 * pref * therm + vL2 * dpref * therm
                     + vL2 * pref * dtherm * dw)


def liouvillian_apply(rho, double wq, double wR, double wL, double g, double G,
                      double gamma0, double theta, bint adjoint=False):
    rho = np.asarray(rho, dtype=complex)
    shape = rho.shape
    stack = np.ascontiguousarray(rho.reshape(-1, 4, 4))
    out = np.empty_like(stack)
    cdef double complex[:, :, ::1] rv = stack
    cdef double complex[:, :, ::1] ov = out
    cdef Gctx ctx
    cdef Py_ssize_t l
    if _make_gctx(wq, wR, wL, g, G, gamma0, theta, &ctx):
        raise ValueError(
            "non-positive excitation energy: the restricted model assumes "
            "positive eigenvalues"
        )
    for l in range(rv.shape[0]):
        _gen_apply(&ctx, &rv[l, 0, 0], &ov[l, 0, 0], adjoint)
    return out.reshape(shape)


def update_integrand(rho, chi, double wq, double wR, double wL, double g,
                     double G, double gamma0, double theta, int which):
    cdef double complex[:, ::1] rv = np.ascontiguousarray(rho, dtype=complex)
    cdef double complex[:, ::1] cv = np.ascontiguousarray(chi, dtype=complex)
    cdef Uctx u
    cdef unsigned char active[3]
    cdef double out3[3]
    cdef int c, st
    for c in range(3):
        active[c] = 1 if c == which else 0
    st = _make_uctx(wq, wR, wL, g, G, gamma0, theta, active, &u)
    if st == 1:
        raise ValueError("non-positive excitation energy")
    if st == 2:
        raise NearDegeneracyError(
            "eigenvalue gap below 1e-6 of the block norm; refine the control "
            "step instead of using first-order perturbation theory"
        )
    _integrand3(&u, &rv[0, 0], &cv[0, 0], active, out3)
    return out3[which]


def propagate(rho, ctrl, double dt, int n_sub, double g, double G,
              double gamma0, double theta, bint adjoint=False,
              pops_out=None, rates_out=None, states_out=None,
              double step_bound=0.005):
    cdef double complex[:, :, ::1] rv = rho
    cdef double[:, ::1] cv = ctrl
    cdef bint has_pops = pops_out is not None
    cdef bint has_rates = rates_out is not None
    cdef bint has_states = states_out is not None
    cdef double[:, :, ::1] pv = pops_out if has_pops else _DUMMY_POPS
    cdef double[:, ::1] tv = rates_out if has_rates else _DUMMY_RATES
    cdef double complex[:, :, :, ::1] sv = states_out if has_states else _DUMMY_STATES
    cdef Py_ssize_t n = cv.shape[1] - 1
    cdef Py_ssize_t m = rv.shape[0]
    cdef double cs[3]
    cdef double ce[3]
    cdef Py_ssize_t k, idx
    cdef Py_ssize_t l
    cdef int st = 0, i, j
    cdef Gctx ctx
    cdef double vbuf[3]
    cdef double complex* rp = &rv[0, 0, 0]
    with nogil:
        for idx in range(n + 1):
            k = idx if not adjoint else n - idx
            # record at grid point k
            if has_pops or has_rates:
                st = _make_gctx(cv[0, k], cv[1, k], cv[2, k], g, G, gamma0,
                                theta, &ctx)
                if st:
                    break
                if has_rates:
                    for i in range(3):
                        tv[k, i] = ctx.gam[i]
                if has_pops:
                    for l in range(m):
                        pv[k, l, 0] = rp[16 * l].real
                        for i in range(3):
                            vbuf[0] = ctx.e.V[0][i]
                            vbuf[1] = ctx.e.V[1][i]
                            vbuf[2] = ctx.e.V[2][i]
                            pv[k, l, i + 1] = _requad(rp + 16 * l, vbuf, vbuf)
            if has_states:
                for l in range(m):
                    for i in range(4):
                        for j in range(4):
                            sv[k, l, i, j] = rp[16 * l + 4 * i + j]
            if idx == n:
                break
            if not adjoint:
                for i in range(3):
                    cs[i] = cv[i, k]
                    ce[i] = cv[i, k + 1]
                st = _step_interval(rp, m, cs, ce, dt, n_sub, g, G, gamma0,
                                    theta, adjoint, step_bound)
            else:
                for i in range(3):
                    cs[i] = cv[i, k]
                    ce[i] = cv[i, k - 1]
                st = _step_interval(rp, m, cs, ce, -dt, n_sub, g, G, gamma0,
                                    theta, adjoint, step_bound)
            if st:
                break
    if st:
        raise ValueError(
            "non-positive excitation energy encountered during propagation"
        )


cdef int _field_update(Py_ssize_t k, double complex* rp, Py_ssize_t m,
                       double complex* chik, double[:, ::1] co,
                       unsigned char* av, double[:, ::1] sv, double[::1] lv,
                       double g, double G, double gamma0, double theta,
                       int reps, bint calibrate, bint has_max, double[::1] mv,
                       double* delta) noexcept nogil:
    """Fixed-point field update at grid point k from the (rho, chi) pairing."""
    cdef double fields[3]
    cdef double integ[3]
    cdef double out3[3]
    cdef Uctx u
    cdef Py_ssize_t l
    cdef int c, it, st
    for c in range(3):
        delta[c] = 0.0
    for it in range(reps):
        for c in range(3):
            fields[c] = co[c, k] + delta[c]
            integ[c] = 0.0
        st = _make_uctx(fields[0], fields[1], fields[2], g, G, gamma0,
                        theta, av, &u)
        if st:
            return st
        for l in range(m):
            _integrand3(&u, rp + 16 * l, chik + 16 * l, av, out3)
            for c in range(3):
                integ[c] += out3[c]
        for c in range(3):
            if not av[c]:
                continue
            if calibrate:
                if has_max and sv[c, k] * fabs(integ[c]) > mv[c]:
                    mv[c] = sv[c, k] * fabs(integ[c])
            else:
                delta[c] = sv[c, k] / lv[c] * integ[c]
    return 0


def krotov_sweep(rho, chi, ctrl_old, ctrl_new, active, shape_fn, lam,
                 double dt, int n_sub, double g, double G, double gamma0,
                 double theta, int fp_iters=2, bint calibrate=False,
                 integ_max_out=None, double step_bound=0.005):
    """Sequential update sweep with two-pass interval propagation.

    Each interval is first propagated with a predictor for the right-endpoint
    field, the update at the right endpoint is computed from the resulting
    states, and the interval is then re-propagated with the final endpoint so
    the stored states correspond to the stored fields.
    """
    cdef double complex[:, :, ::1] rv = rho
    cdef double complex[:, :, :, ::1] xv = chi
    cdef double[:, ::1] co = ctrl_old
    cdef double[:, ::1] cn = ctrl_new
    cdef unsigned char[::1] av = active
    cdef double[:, ::1] sv = shape_fn
    cdef double[::1] lv = lam
    cdef bint has_max = integ_max_out is not None
    cdef double[::1] mv = integ_max_out if has_max else np.zeros(3)
    cdef Py_ssize_t n = co.shape[1] - 1
    cdef Py_ssize_t m = rv.shape[0]
    buf_arr = np.empty_like(rho)
    cdef double complex[:, :, ::1] bv = buf_arr
    cdef double delta[3]
    cdef double cs[3]
    cdef double ce[3]
    cdef Py_ssize_t k
    cdef Py_ssize_t i16
    cdef int c, reps, st = 0
    cdef double complex* rp = &rv[0, 0, 0]
    cdef double complex* bp = &bv[0, 0, 0]
    reps = 1 if calibrate else fp_iters
    with nogil:
        st = _field_update(0, rp, m, &xv[0, 0, 0, 0], co, &av[0], sv, lv,
                           g, G, gamma0, theta, reps, calibrate, has_max, mv,
                           delta)
        if st == 0:
            for c in range(3):
                cn[c, 0] = co[c, 0] + delta[c]
            for k in range(n):
                for i16 in range(16 * m):
                    bp[i16] = rp[i16]
                for c in range(3):
                    cs[c] = cn[c, k]
                    ce[c] = co[c, k + 1] + delta[c]  # predictor
                st = _step_interval(rp, m, cs, ce, dt, n_sub, g, G, gamma0,
                                    theta, False, step_bound)
                if st:
                    break
                st = _field_update(k + 1, rp, m, &xv[k + 1, 0, 0, 0], co,
                                   &av[0], sv, lv, g, G, gamma0, theta,
                                   reps, calibrate, has_max, mv, delta)
                if st:
                    break
                for c in range(3):
                    cn[c, k + 1] = co[c, k + 1] + delta[c]
                if not calibrate:
                    for i16 in range(16 * m):
                        rp[i16] = bp[i16]
                    for c in range(3):
                        ce[c] = cn[c, k + 1]
                    st = _step_interval(rp, m, cs, ce, dt, n_sub, g, G,
                                        gamma0, theta, False, step_bound)
                    if st:
                        break
    if st == 1:
        raise ValueError(
            "non-positive excitation energy encountered during the sweep"
        )
    if st == 2:
        raise NearDegeneracyError(
            "near-degenerate eigensystem in the update; refine the control step"
        )
