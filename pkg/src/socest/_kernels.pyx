# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Mirrors ``_kernels_py`` line for line."""

from libc.math cimport exp, isnan

BACKEND = "cython"


cdef inline double _ocv(const double[::1] s, const double[::1] v, Py_ssize_t n,
                        double soc, double* slope) noexcept nogil:
    cdef Py_ssize_t lo, hi, mid
    if soc <= 0.0:
        if soc == 0.0:
            slope[0] = (v[1] - v[0]) / (s[1] - s[0])
        else:
            slope[0] = 0.0
        return v[0]
    if soc >= 1.0:
        if soc == 1.0:
            slope[0] = (v[n - 1] - v[n - 2]) / (s[n - 1] - s[n - 2])
        else:
            slope[0] = 0.0
        return v[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if s[mid] <= soc:
            lo = mid
        else:
            hi = mid
    slope[0] = (v[lo + 1] - v[lo]) / (s[lo + 1] - s[lo])
    return v[lo] + (soc - s[lo]) * slope[0]


def simulate_kernel(const double[::1] currents, const double[::1] dts,
                    double r0, double r1, double tau1, double r2, double tau2, double cap_as,
                    const double[::1] c_soc, const double[::1] c_ocv,
                    double soc0, double u10, double u20,
                    double[::1] out_soc, double[::1] out_u1, double[::1] out_u2, double[::1] out_v):
    cdef Py_ssize_t k, n = currents.shape[0], nc = c_soc.shape[0]
    cdef double soc = soc0, u1 = u10, u2 = u20, i, slope
    cdef double last_dt = -1.0, e1 = 0.0, e2 = 0.0, g1 = 0.0, g2 = 0.0, b0 = 0.0
    with nogil:
        out_soc[0] = soc
        out_u1[0] = u1
        out_u2[0] = u2
        out_v[0] = _ocv(c_soc, c_ocv, nc, soc, &slope) - u1 - u2
        for k in range(n):
            i = currents[k]
            if dts[k] != last_dt:
                last_dt = dts[k]
                e1 = exp(-last_dt / tau1)
                e2 = exp(-last_dt / tau2)
                g1 = r1 * (1.0 - e1)
                g2 = r2 * (1.0 - e2)
                b0 = -last_dt / cap_as
            soc = soc + b0 * i
            if soc < 0.0:
                soc = 0.0
            elif soc > 1.0:
                soc = 1.0
            u1 = e1 * u1 + g1 * i
            u2 = e2 * u2 + g2 * i
            out_soc[k + 1] = soc
            out_u1[k + 1] = u1
            out_u2[k + 1] = u2
            out_v[k + 1] = _ocv(c_soc, c_ocv, nc, soc, &slope) - u1 - u2 - i * r0


def cc_kernel(const double[::1] t, const double[::1] currents, double cap_as,
              double soc0, double[::1] out):
    cdef Py_ssize_t k, n = t.shape[0]
    cdef double soc = soc0, comp = 0.0, y, nxt
    with nogil:
        out[0] = soc
        for k in range(1, n):
            y = -currents[k - 1] * (t[k] - t[k - 1]) / cap_as - comp
            nxt = soc + y
            comp = (nxt - soc) - y
            soc = nxt
            if soc < 0.0:
                soc = 0.0
                comp = 0.0
            elif soc > 1.0:
                soc = 1.0
                comp = 0.0
            out[k] = soc


def ekf_kernel(const double[::1] t, const double[::1] currents, const double[::1] voltages,
               const long[::1] pidx, const double[:, ::1] ptab,
               const long[::1] cidx, const double[:, ::1] c_soc, const double[:, ::1] c_ocv,
               const long[::1] c_len,
               const double[::1] x0, const double[::1] p0, const double[::1] q, double r, bint joseph,
               double[:, ::1] out_x, double[::1] out_vpred, double[::1] out_innov,
               double[::1] out_cov00, double[:, ::1] out_p, double[:, ::1] out_ppred):
    cdef Py_ssize_t k, row, last_row = -1, n = t.shape[0]
    cdef bint rec_p = out_p.shape[0] > 0, rec_pp = out_ppred.shape[0] > 0
    cdef double x_0 = x0[0], x_1 = x0[1], x_2 = x0[2]
    cdef double p00 = p0[0], p01 = 0.5 * (p0[1] + p0[3]), p02 = 0.5 * (p0[2] + p0[6])
    cdef double p11 = p0[4], p12 = 0.5 * (p0[5] + p0[7]), p22 = p0[8]
    cdef double q00 = q[0], q01 = q[1], q02 = q[2], q11 = q[4], q12 = q[5], q22 = q[8]
    cdef double last_dt = -1.0, dt, e1 = 0.0, e2 = 0.0, g1 = 0.0, g2 = 0.0, b0 = 0.0
    cdef double i, r0, ocv, m, vpred, z, pc0, pc1, pc2, sv, k0, k1, k2, innov
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22
    cdef double t00, t01, t02, t10, t11, t12, t20, t21, t22
    cdef double n00, n01, n02, n10, n11, n12, n20, n21, n22
    cdef Py_ssize_t c
    with nogil:
        for k in range(n):
            if k > 0:
                row = pidx[k - 1]
                dt = t[k] - t[k - 1]
                if dt != last_dt or row != last_row:
                    last_dt = dt
                    last_row = row
                    e1 = exp(-dt / ptab[row, 2])
                    e2 = exp(-dt / ptab[row, 4])
                    g1 = ptab[row, 1] * (1.0 - e1)
                    g2 = ptab[row, 3] * (1.0 - e2)
                    b0 = -dt / ptab[row, 5]
                i = currents[k - 1]
                x_0 = x_0 + b0 * i
                if x_0 < 0.0:
                    x_0 = 0.0
                elif x_0 > 1.0:
                    x_0 = 1.0
                x_1 = e1 * x_1 + g1 * i
                x_2 = e2 * x_2 + g2 * i
                p00 = p00 + q00
                p01 = e1 * p01 + q01
                p02 = e2 * p02 + q02
                p11 = e1 * e1 * p11 + q11
                p12 = e1 * e2 * p12 + q12
                p22 = e2 * e2 * p22 + q22
            if rec_pp:
                out_ppred[k, 0] = p00
                out_ppred[k, 1] = p01
                out_ppred[k, 2] = p02
                out_ppred[k, 3] = p01
                out_ppred[k, 4] = p11
                out_ppred[k, 5] = p12
                out_ppred[k, 6] = p02
                out_ppred[k, 7] = p12
                out_ppred[k, 8] = p22

            i = currents[k]
            r0 = ptab[pidx[k], 0]
            c = cidx[k]
            ocv = _ocv(c_soc[c], c_ocv[c], c_len[c], x_0, &m)
            vpred = ocv - x_1 - x_2 - i * r0
            out_vpred[k] = vpred
            z = voltages[k]
            if isnan(z):
                out_innov[k] = z
            else:
                pc0 = p00 * m - p01 - p02
                pc1 = p01 * m - p11 - p12
                pc2 = p02 * m - p12 - p22
                sv = m * pc0 - pc1 - pc2 + r
                if not sv > 0.0:
                    with gil:
                        return k
                k0 = pc0 / sv
                k1 = pc1 / sv
                k2 = pc2 / sv
                innov = z - vpred
                out_innov[k] = innov
                x_0 = x_0 + k0 * innov
                x_1 = x_1 + k1 * innov
                x_2 = x_2 + k2 * innov
                if x_0 < 0.0:
                    x_0 = 0.0
                elif x_0 > 1.0:
                    x_0 = 1.0
                if joseph:
                    m00 = 1.0 - k0 * m
                    m01 = k0
                    m02 = k0
                    m10 = -k1 * m
                    m11 = 1.0 + k1
                    m12 = k1
                    m20 = -k2 * m
                    m21 = k2
                    m22 = 1.0 + k2
                    t00 = m00 * p00 + m01 * p01 + m02 * p02
                    t01 = m00 * p01 + m01 * p11 + m02 * p12
                    t02 = m00 * p02 + m01 * p12 + m02 * p22
                    t10 = m10 * p00 + m11 * p01 + m12 * p02
                    t11 = m10 * p01 + m11 * p11 + m12 * p12
                    t12 = m10 * p02 + m11 * p12 + m12 * p22
                    t20 = m20 * p00 + m21 * p01 + m22 * p02
                    t21 = m20 * p01 + m21 * p11 + m22 * p12
                    t22 = m20 * p02 + m21 * p12 + m22 * p22
                    n00 = t00 * m00 + t01 * m01 + t02 * m02 + r * k0 * k0
                    n01 = t00 * m10 + t01 * m11 + t02 * m12 + r * k0 * k1
                    n02 = t00 * m20 + t01 * m21 + t02 * m22 + r * k0 * k2
                    n10 = t10 * m00 + t11 * m01 + t12 * m02 + r * k1 * k0
                    n11 = t10 * m10 + t11 * m11 + t12 * m12 + r * k1 * k1
                    n12 = t10 * m20 + t11 * m21 + t12 * m22 + r * k1 * k2
                    n20 = t20 * m00 + t21 * m01 + t22 * m02 + r * k2 * k0
                    n21 = t20 * m10 + t21 * m11 + t22 * m12 + r * k2 * k1
                    n22 = t20 * m20 + t21 * m21 + t22 * m22 + r * k2 * k2
                else:
                    n00 = p00 - k0 * pc0
                    n01 = p01 - k0 * pc1
                    n02 = p02 - k0 * pc2
                    n10 = p01 - k1 * pc0
                    n11 = p11 - k1 * pc1
                    n12 = p12 - k1 * pc2
                    n20 = p02 - k2 * pc0
                    n21 = p12 - k2 * pc1
                    n22 = p22 - k2 * pc2
                p00 = n00
                p11 = n11
                p22 = n22
                p01 = 0.5 * (n01 + n10)
                p02 = 0.5 * (n02 + n20)
                p12 = 0.5 * (n12 + n21)

            out_x[k, 0] = x_0
            out_x[k, 1] = x_1
            out_x[k, 2] = x_2
            out_cov00[k] = p00
            if rec_p:
                out_p[k, 0] = p00
                out_p[k, 1] = p01
                out_p[k, 2] = p02
                out_p[k, 3] = p01
                out_p[k, 4] = p11
                out_p[k, 5] = p12
                out_p[k, 6] = p02
                out_p[k, 7] = p12
                out_p[k, 8] = p22
    return -1
