"""Pure-Python hot loops. Same signatures and arithmetic as ``_kernels.pyx``.

Arrays in, arrays out: callers pre-allocate every output. Parameter rows
are ``(r0, r1, tau1, r2, tau2, capacity_as)``.
"""

from math import exp, isnan


def _ocv(s, v, n, soc):
    """Return (ocv, slope) for a breakpoint table of length ``n``."""
    if soc <= 0.0:
        if soc == 0.0:
            return v[0], (v[1] - v[0]) / (s[1] - s[0])
        return v[0], 0.0
    if soc >= 1.0:
        if soc == 1.0:
            return v[n - 1], (v[n - 1] - v[n - 2]) / (s[n - 1] - s[n - 2])
        return v[n - 1], 0.0
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if s[mid] <= soc:
            lo = mid
        else:
            hi = mid
    slope = (v[lo + 1] - v[lo]) / (s[lo + 1] - s[lo])
    return v[lo] + (soc - s[lo]) * slope, slope


def simulate_kernel(currents, dts, r0, r1, tau1, r2, tau2, cap_as, c_soc, c_ocv,
                    soc0, u10, u20, out_soc, out_u1, out_u2, out_v):
    s = c_soc.tolist()
    v = c_ocv.tolist()
    nc = len(s)
    cur = currents.tolist()
    dt = dts.tolist()
    soc, u1, u2 = soc0, u10, u20
    out_soc[0] = soc
    out_u1[0] = u1
    out_u2[0] = u2
    out_v[0] = _ocv(s, v, nc, soc)[0] - u1 - u2
    last_dt = -1.0
    e1 = e2 = g1 = g2 = b0 = 0.0
    for k in range(len(cur)):
        i = cur[k]
        if dt[k] != last_dt:
            last_dt = dt[k]
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
        out_v[k + 1] = _ocv(s, v, nc, soc)[0] - u1 - u2 - i * r0


def cc_kernel(t, currents, cap_as, soc0, out):
    """Left-rectangle Coulomb counting with compensated summation."""
    tt = t.tolist()
    cur = currents.tolist()
    soc = soc0
    comp = 0.0
    out[0] = soc
    for k in range(1, len(tt)):
        y = -cur[k - 1] * (tt[k] - tt[k - 1]) / cap_as - comp
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


def ekf_kernel(t, currents, voltages, pidx, ptab, cidx, c_soc, c_ocv, c_len,
               x0, p0, q, r, joseph, out_x, out_vpred, out_innov, out_cov00,
               out_p, out_ppred):
    """Run predict/update over every sample.

    Sample 0 is update-only. For k >= 1 the belief is predicted over
    ``[t[k-1], t[k])`` with the current and parameters of sample k-1, then
    updated with voltage k (skipped when NaN). Returns -1 on success or the
    row index of a degenerate update.
    """
    n = t.shape[0]
    tt = t.tolist()
    cur = currents.tolist()
    zs = voltages.tolist()
    pi = pidx.tolist()
    ci = cidx.tolist()
    rows = ptab.tolist()
    curves = [(c_soc[j, :c_len[j]].tolist(), c_ocv[j, :c_len[j]].tolist(), int(c_len[j]))
              for j in range(c_soc.shape[0])]
    qq = q.tolist()
    rec_p = out_p.shape[0] > 0
    rec_pp = out_ppred.shape[0] > 0

    x_0, x_1, x_2 = float(x0[0]), float(x0[1]), float(x0[2])
    p = [float(z) for z in p0]
    p00, p01, p02, p11, p12, p22 = p[0], 0.5 * (p[1] + p[3]), 0.5 * (p[2] + p[6]), p[4], 0.5 * (p[5] + p[7]), p[8]
    q00, q01, q02, q11, q12, q22 = qq[0], qq[1], qq[2], qq[4], qq[5], qq[8]

    last_dt = -1.0
    last_row = -1
    e1 = e2 = g1 = g2 = b0 = 0.0
    for k in range(n):
        if k > 0:
            row = pi[k - 1]
            dt = tt[k] - tt[k - 1]
            if dt != last_dt or row != last_row:
                last_dt = dt
                last_row = row
                _, r1, tau1, r2, tau2, cap_as = rows[row]
                e1 = exp(-dt / tau1)
                e2 = exp(-dt / tau2)
                g1 = r1 * (1.0 - e1)
                g2 = r2 * (1.0 - e2)
                b0 = -dt / cap_as
            i = cur[k - 1]
            x_0 = x_0 + b0 * i
            if x_0 < 0.0:
                x_0 = 0.0
            elif x_0 > 1.0:
                x_0 = 1.0
            x_1 = e1 * x_1 + g1 * i
            x_2 = e2 * x_2 + g2 * i
            # A = diag(1, e1, e2): (A P A^T)_ij = a_i a_j P_ij
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

        i = cur[k]
        r0 = rows[pi[k]][0]
        s, v, nc = curves[ci[k]]
        ocv, m = _ocv(s, v, nc, x_0)
        vpred = ocv - x_1 - x_2 - i * r0
        out_vpred[k] = vpred
        z = zs[k]
        if isnan(z):
            out_innov[k] = z
        else:
            # C = [m, -1, -1]
            pc0 = p00 * m - p01 - p02
            pc1 = p01 * m - p11 - p12
            pc2 = p02 * m - p12 - p22
            sv = m * pc0 - pc1 - pc2 + r
            if not sv > 0.0:
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
                # M = I - K C; P <- M P M^T + r K K^T
                m00 = 1.0 - k0 * m
                m01 = k0
                m02 = k0
                m10 = -k1 * m
                m11 = 1.0 + k1
                m12 = k1
                m20 = -k2 * m
                m21 = k2
                m22 = 1.0 + k2
                # T = M P
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
                # P <- P - K (P C^T)^T
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


BACKEND = "python"

__all__ = ["simulate_kernel", "cc_kernel", "ekf_kernel", "BACKEND"]
