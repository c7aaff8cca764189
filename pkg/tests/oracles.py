"""Independent reference implementations used as test oracles.

These are written for clarity, not speed: plain loops over Python floats,
no shared code with the package.
"""

from __future__ import annotations

import math
from itertools import product


def brute_force_score(reg, res, step=10.0, max_delay=300.0):
    """(s_acc, s_del, s_pre, delay) by explicit loops over every shift."""
    reg = [float(v) for v in reg]
    res = [float(v) for v in res]
    n = len(reg)
    shifts = int(round(max_delay / step))

    def mean(xs):
        return sum(xs) / len(xs)

    def corr(a, b):
        ma, mb = mean(a), mean(b)
        cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
        va = sum((x - ma) ** 2 for x in a)
        vb = sum((y - mb) ** 2 for y in b)
        if va == 0 or vb == 0:
            return 0.0
        return cov / math.sqrt(va * vb)

    scale = mean([abs(x) for x in reg])
    err = mean([abs(y - x) for x, y in zip(reg, res)])
    if scale == 0:
        s_pre = 1.0 if err == 0 else 0.0
    else:
        s_pre = min(max(1 - err / scale, 0.0), 1.0)

    if len(set(reg)) == 1 or len(set(res)) == 1:
        return 0.0, 1.0, s_pre, 0.0
    best, best_k = -2.0, 0
    for k in range(shifts + 1):
        c = corr(reg[: n - k], res[k:])
        if c > best:
            best, best_k = c, k
    delay = best_k * step
    return best, abs((max_delay - delay) / max_delay), s_pre, delay


def response_time(rho, lam, n, k=300.0, ca=1.0, cb=1.0):
    """Mean GI/G/m response time at utilisation ``rho`` for workload ``lam``."""
    mu = lam / (n * rho)
    pr = (rho**n + rho) / 2 if rho >= 0.7 else rho ** ((n + 1) / 2)
    t_w = (ca**2 + cb**2) / (2 * n) * pr / (mu * (1 - rho))
    return 1 / mu + t_w


def server_power_w(lam, f, n, b=(0.016, 1.60, 0.14), c=(0.01, 120.92)):
    return lam * (b[0] + b[1] * f + b[2] * f * f) + c[0] + c[1] * n


def server_fr_capacity_kw(lam, n, f_min, f_bas, f_max=1.0, **kw):
    """Five-step evaluation: floor, ceiling and base power, then the symmetric band."""
    p_min = server_power_w(lam, f_min, n, **kw)
    p_max = server_power_w(lam, f_max, n, **kw)
    p_bas = server_power_w(lam, f_bas, n, **kw)
    up = p_max - p_bas
    down = p_bas - p_min
    return max(min(up, down), 0.0) / 1000


def grid_minimum(objective, lower, upper, points):
    """Exhaustive search on a regular grid; returns (x, value, cell widths)."""
    axes = [[lo + (hi - lo) * i / (points - 1) for i in range(points)] for lo, hi in zip(lower, upper)]
    best_x, best_v = None, math.inf
    for x in product(*axes):
        v = objective(list(x))
        if v < best_v:
            best_x, best_v = list(x), v
    return best_x, best_v, [(hi - lo) / (points - 1) for lo, hi in zip(lower, upper)]


def tank_energy(temps, mass, cp=4.186):
    """Internal energy (kJ) relative to 0 degC."""
    return sum(mass * cp * t for t in temps)
