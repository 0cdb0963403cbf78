"""Independent reference solvers used by the tests.

Nothing here imports the solver code under test; only the closed-form
capacity of the budget map is re-derived locally.
"""

import numpy as np


def cap(p, A, L, P):
    a = P + A
    return np.log1p(L * p / (a - p))


def dcap(p, A, L, P):
    a = P + A
    return L * a / ((a - p) * (a + (L - 1) * p))


def project(y, lo, hi, total):
    """Projection onto the box intersected with ``sum(x) <= total`` (bisection on the shift)."""
    x = np.clip(y, lo, hi)
    if x.sum() <= total:
        return x
    a, b = 0.0, float(np.max(y - lo)) + 1.0
    for _ in range(64):
        t = 0.5 * (a + b)
        if np.clip(y - t, lo, hi).sum() > total:
            a = t
        else:
            b = t
    return np.clip(y - b, lo, hi)


def primal_projected_gradient(p_min, p_th, A, L, P, total, iters=20000):
    """Maximise sum(cap) over the box and the power sum by projected gradient ascent with Armijo."""
    x = project(p_min + 0.5 * (p_th - p_min), p_min, p_th, total)
    f = cap(x, A, L, P).sum()
    step = 1.0
    for _ in range(iters):
        g = dcap(x, A, L, P)
        s = step * 2
        while True:
            y = project(x + s * g, p_min, p_th, total)
            fy = cap(y, A, L, P).sum()
            if fy >= f + 1e-4 * g @ (y - x) or s < 1e-16:
                break
            s *= 0.5
        if fy <= f or np.max(np.abs(y - x)) < 1e-14:
            break
        x, f, step = y, fy, s
    return x, f


def grid_search(A, L, P, p_min, p_max, step):
    """Best full-budget split for three users on a grid; the third user takes the remainder."""
    x0 = np.arange(p_min[0], p_max[0] + step / 2, step)
    x1 = np.arange(p_min[1], p_max[1] + step / 2, step)
    X0, X1 = np.meshgrid(np.minimum(x0, p_max[0]), np.minimum(x1, p_max[1]), indexing="ij")
    X2 = P - X0 - X1
    ok = (X2 >= p_min[2]) & (X2 <= p_max[2])
    if not ok.any():
        return -np.inf, None
    pts = np.stack([X0[ok], X1[ok], X2[ok]], axis=1)
    vals = cap(pts, A, L, P).sum(axis=1)
    k = np.argmax(vals)
    return vals[k], pts[k]


def kkt_residual(p, nu, p_min, p_th, A, L, P, total):
    """Largest violation of the optimality conditions at ``(p, nu)``.

    Stationarity is measured by the natural residual ``|p - clip(p + g)|``
    with ``g`` the price-adjusted gradient, so a user sitting a hair inside
    a bound with the gradient pushing outward is not penalised.
    """
    g = dcap(p, A, L, P) - nu
    natural = np.abs(p - np.clip(p + g, p_min, p_th)).max()
    slack = nu * abs(total - p.sum())
    primal = max(p.sum() - total, 0.0, float(np.max(p_min - p)), float(np.max(p - p_th)))
    return max(natural, slack, primal)
