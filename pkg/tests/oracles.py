"""Reference implementations used only by the tests.

Each one is written from the defining formula with plain loops, sharing no
code with the package under test.
"""

from __future__ import annotations

import math

import numpy as np


def central_difference(f, x: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Numerical gradient of scalar ``f`` w.r.t. ``x`` (modified in place, then restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def de_boor(knots, coeffs, degree: int, x: float) -> float:
    """Spline value at ``x`` by de Boor's triangular scheme."""
    t = list(knots)
    n = len(coeffs)
    k = None
    for j in range(degree, n):
        if t[j] <= x < t[j + 1]:
            k = j
            break
    if k is None:
        k = n - 1  # right end of the domain
    d = [float(coeffs[j + k - degree]) for j in range(degree + 1)]
    for r in range(1, degree + 1):
        for j in range(degree, r - 1, -1):
            i = j + k - degree
            alpha = (x - t[i]) / (t[i + degree + 1 - r] - t[i])
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j]
    return d[degree]


def conv_direct(x: np.ndarray, w: np.ndarray, dilation: int) -> np.ndarray:
    """out[t, o] = sum_k sum_c x[t - (K-1-k) d, c] w[k, c, o] with zero history."""
    L, _ = x.shape
    K, _, C_out = w.shape
    out = np.zeros((L, C_out))
    for t in range(L):
        for k in range(K):
            src = t - (K - 1 - k) * dilation
            if src >= 0:
                out[t] += x[src] @ w[k]
    return out


def km_product_limit(times, events):
    """List of (time, S) pairs at each distinct time, by the textbook loop."""
    pairs = sorted(zip(times, events))
    s = 1.0
    out = []
    distinct = sorted(set(times))
    for u in distinct:
        at_risk = sum(1 for t, _ in pairs if t >= u)
        deaths = sum(1 for t, e in pairs if t == u and e == 1)
        s *= 1.0 - deaths / at_risk
        out.append((u, s))
    return out


def km_at(times, events, t: float, left: bool = False) -> float:
    s = 1.0
    for u, v in km_product_limit(times, events):
        if u < t or (u == t and not left):
            s = v
    return s


def c_index_pairs(risk, times, events) -> float:
    num = 0.0
    den = 0
    n = len(times)
    for i in range(n):
        for j in range(n):
            if times[i] < times[j] and events[i] == 1:
                den += 1
                if risk[i] > risk[j]:
                    num += 1.0
                elif risk[i] == risk[j]:
                    num += 0.5
    return num / den if den else math.nan


def brier_direct(t, surv, times, events) -> float:
    total = 0.0
    n = len(times)
    cens = [1 - e for e in events]
    for i in range(n):
        if times[i] <= t and events[i] == 1:
            g = km_at(times, cens, times[i], left=True)
            w = 0.0 if g == 0 else 1.0 / g
        elif times[i] > t:
            g = km_at(times, cens, t)
            w = 0.0 if g == 0 else 1.0 / g
        else:
            w = 0.0
        alive = 1.0 if times[i] > t else 0.0
        total += w * (surv[i] - alive) ** 2
    return total / n


def auc_direct(t, surv, times, events, half_ties: bool = False) -> float:
    cens = [1 - e for e in events]
    n = len(times)
    num = 0.0
    case_w = 0.0
    n_ctrl = sum(1 for j in range(n) if times[j] > t)
    for i in range(n):
        if not (times[i] <= t and events[i] == 1):
            continue
        g = km_at(times, cens, times[i], left=True)
        w = 0.0 if g == 0 else 1.0 / g
        case_w += w
        ri = 1.0 - surv[i]
        for j in range(n):
            if times[j] > t:
                rj = 1.0 - surv[j]
                if half_ties:
                    num += w * (1.0 if rj < ri else 0.5 if rj == ri else 0.0)
                else:
                    num += w * (1.0 if rj <= ri else 0.0)
    if n_ctrl == 0 or case_w == 0:
        return math.nan
    return num / (n_ctrl * case_w)


def weibull_nll(t, d, lam, k) -> float:
    """Mean censored negative log-likelihood written with plain powers."""
    t = np.asarray(t, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    S = np.exp(-((t / lam) ** k))
    f = (k / lam) * (t / lam) ** (k - 1) * S
    return float(-np.mean(d * np.log(f) + (1 - d) * np.log(S)))
