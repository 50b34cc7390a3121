"""Independent reference implementations used as test oracles.

None of these import the code under test beyond plain value types, so a
shared bug cannot make a test agree with itself.
"""

from __future__ import annotations

import numpy as np


def euler_step(r1, c1, r2, c2, cap_ah, soc, u1, u2, current, dt=1.0, substeps=1000):
    """Forward-Euler integration of the continuous 2RC state equations."""
    h = dt / substeps
    cap_as = cap_ah * 3600.0
    for _ in range(substeps):
        du1 = -u1 / (r1 * c1) + current / c1
        du2 = -u2 / (r2 * c2) + current / c2
        soc = soc - current / cap_as * h
        u1 = u1 + du1 * h
        u2 = u2 + du2 * h
    return soc, u1, u2


def linear_kf(x0, p0, q, r, t, currents, voltages, r0, r1, tau1, r2, tau2, cap_as, v0, slope):
    """Textbook linear Kalman filter for OCV = v0 + slope * soc.

    Same sample convention as the library: sample 0 is update-only, sample
    k >= 1 is predicted with the current of sample k-1. Returns the mean
    trajectory (n x 3) and the covariances (n x 3 x 3).
    """
    c = np.array([slope, -1.0, -1.0])
    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    xs, ps = [], []
    for k in range(len(t)):
        if k > 0:
            dt = t[k] - t[k - 1]
            e1, e2 = np.exp(-dt / tau1), np.exp(-dt / tau2)
            a = np.diag([1.0, e1, e2])
            b = np.array([-dt / cap_as, r1 * (1 - e1), r2 * (1 - e2)])
            x = a @ x + b * currents[k - 1]
            p = a @ p @ a.T + q
        y = v0 + c @ x - currents[k] * r0
        s = c @ p @ c + r
        gain = p @ c / s
        x = x + gain * (voltages[k] - y)
        p = (np.eye(3) - np.outer(gain, c)) @ p
        p = 0.5 * (p + p.T)
        xs.append(x.copy())
        ps.append(p.copy())
    return np.array(xs), np.array(ps)


def hppc_timeline(capacity_ah, discharge_c, regen_c, soc_step, step_c=1.0):
    """The HPPC stage list written out long-hand: (current_a, duration_s) pairs."""
    stages = round(1.0 / soc_step)
    pulse_d = capacity_ah * discharge_c
    pulse_r = -capacity_ah * regen_c
    out = []
    for _ in range(stages):
        out += [(0.0, 3600.0), (pulse_d, 10.0), (0.0, 600.0), (pulse_r, 10.0), (0.0, 600.0)]
        moved = pulse_d * 10.0 + pulse_r * 10.0
        need = soc_step * capacity_ah * 3600.0 - moved
        out.append((capacity_ah * step_c, need / (capacity_ah * step_c)))
    return out


def two_exp(t, v_inf, a1, tau1, a2, tau2):
    return v_inf - a1 * np.exp(-t / tau1) - a2 * np.exp(-t / tau2)
