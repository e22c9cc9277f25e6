"""Brute-force reference computations for the test suite.

Deliberately naive and self-contained: nothing here imports from the rest of
the package, so a bug in a production path cannot leak into its own check.
"""

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class OracleReport:
    case_id: str
    production: float
    oracle: float

    @property
    def abs_dev(self):
        return abs(self.production - self.oracle)

    @property
    def rel_dev(self):
        return self.abs_dev / max(abs(self.oracle), 1e-300)

    def row(self):
        return [self.case_id, repr(self.production), repr(self.oracle),
                repr(self.abs_dev), repr(self.rel_dev)]


def append_reports(path, reports):
    path = Path(path)
    new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["case_id", "production", "oracle", "abs_dev", "rel_dev"])
        for r in reports:
            w.writerow(r.row())


# --------------------------------------------------------------------------
# Entropic OT

def entropic_objective(plan, cost, lam):
    total = 0.0
    for i in range(len(plan)):
        for j in range(len(plan[0])):
            p = plan[i][j]
            total += p * cost[i][j]
            if p > 0:
                total += lam * p * math.log(p)
    return total


def _zoom_grid(f, lo, hi, resolution, points=2001):
    """Minimize a convex scalar function by successively refined grid scans."""
    while True:
        grid = np.linspace(lo, hi, points)
        vals = f(grid)
        k = int(np.argmin(vals))
        step = (hi - lo) / (points - 1)
        if step <= resolution:
            return float(grid[k]), float(vals[k])
        lo, hi = max(lo, grid[k] - 2 * step), min(hi, grid[k] + 2 * step)


def ot_bruteforce_2x2(cost, lam, resolution=1e-7):
    """Entropic OT for a 2x2 cost with uniform marginals by grid search.

    Feasible plans are ``[[a, 0.5 - a], [0.5 - a, a]]`` for ``a`` in [0, 0.5].
    The objective is convex in ``a``, so zooming the grid around the best
    point reaches the requested resolution without scanning 5e6 points.
    Returns ``(plan, objective)``.
    """
    c = np.asarray(cost, dtype=np.float64)

    def f(a):
        a = np.asarray(a, dtype=np.float64)
        b = 0.5 - a
        lin = a * (c[0, 0] + c[1, 1]) + b * (c[0, 1] + c[1, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = 2 * np.where(a > 0, a * np.log(a), 0.0) + 2 * np.where(b > 0, b * np.log(b), 0.0)
        return lin + lam * ent

    a, _ = _zoom_grid(f, 0.0, 0.5, resolution)
    plan = [[a, 0.5 - a], [0.5 - a, a]]
    return plan, entropic_objective(plan, c.tolist(), lam)


def ot_polytope_search(cost, lam, sweeps=200, resolution=1e-12):
    """Entropic OT with uniform marginals by exhaustive 2x2 exchange moves.

    Starts from the independent coupling and repeatedly line-searches every
    mass exchange ``+t`` at (i,j),(k,l) and ``-t`` at (i,l),(k,j), which keeps
    both marginals fixed. For a strictly convex objective on the polytope this
    coordinate search reaches the optimum. Returns ``(plan, objective)``.
    """
    c = np.asarray(cost, dtype=np.float64)
    n, m = c.shape
    p = np.full((n, m), 1.0 / (n * m))
    best = entropic_objective(p.tolist(), c.tolist(), lam)
    for _ in range(sweeps):
        start = best
        for i, k in itertools.combinations(range(n), 2):
            for j, l in itertools.combinations(range(m), 2):
                lo = -min(p[i, j], p[k, l])
                hi = min(p[i, l], p[k, j])
                if hi - lo <= 0:
                    continue

                def f(t, i=i, j=j, k=k, l=l):
                    t = np.asarray(t, dtype=np.float64)
                    ent = 0.0
                    for (r, s, sgn) in ((i, j, 1), (k, l, 1), (i, l, -1), (k, j, -1)):
                        x = p[r, s] + sgn * t
                        with np.errstate(divide="ignore", invalid="ignore"):
                            ent = ent + np.where(x > 0, x * np.log(np.maximum(x, 1e-300)), 0.0)
                    lin = t * (c[i, j] + c[k, l] - c[i, l] - c[k, j])
                    return lin + lam * ent

                t, _ = _zoom_grid(f, lo, hi, resolution * max(hi - lo, 1e-300), points=201)
                trial = p.copy()
                trial[i, j] += t
                trial[k, l] += t
                trial[i, l] -= t
                trial[k, j] -= t
                trial = np.maximum(trial, 0.0)
                val = entropic_objective(trial.tolist(), c.tolist(), lam)
                if val < best:
                    p, best = trial, val
        if start - best < 1e-15:
            break
    return p, best


# --------------------------------------------------------------------------
# Assignment

def assignment_bruteforce(cm):
    """Exhaustive search for the injective pred->true map maximizing matches.

    Ties are broken toward the lexicographically smallest permutation of the
    zero-padded square matrix. Returns ``(assignment dict, matched count)``.
    """
    cm = np.asarray(cm)
    kp, kt = cm.shape
    n = max(kp, kt)
    padded = np.zeros((n, n), dtype=cm.dtype)
    padded[:kp, :kt] = cm
    best_perm, best_score = None, None
    for perm in itertools.permutations(range(n)):
        score = sum(padded[i, perm[i]] for i in range(n))
        if best_score is None or score > best_score:
            best_perm, best_score = perm, score
    assignment = {i: best_perm[i] for i in range(kp) if best_perm[i] < kt}
    return assignment, best_score


def assignment_bruteforce_all(cm):
    """Every optimal assignment (as dicts) together with the optimal count."""
    cm = np.asarray(cm)
    kp, kt = cm.shape
    n = max(kp, kt)
    padded = np.zeros((n, n), dtype=cm.dtype)
    padded[:kp, :kt] = cm
    perms = np.array(list(itertools.permutations(range(n))))
    scores = padded[np.arange(n), perms].sum(axis=1)
    top = scores.max()
    winners = []
    for perm in perms[scores == top]:
        a = {i: int(perm[i]) for i in range(kp) if perm[i] < kt}
        if a not in winners:
            winners.append(a)
    return winners, top


# --------------------------------------------------------------------------
# Finite differences

def finite_difference_grad(loss_fn, params, step=1e-5, kink_fn=None, kink_radius=1e-3):
    """Central-difference gradient of ``loss_fn(params)`` for a dict of arrays.

    Returns ``(grads, excluded)`` with one boolean mask per parameter. A
    coordinate is excluded when ``kink_fn(params)`` (distance of every
    coordinate to the nearest max/abs kink, same dict layout) is below
    ``kink_radius``, or when the two one-sided slopes disagree, which means
    the stencil straddles a kink.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    f0 = loss_fn(base)
    kinks = kink_fn(base) if kink_fn is not None else None
    grads, excluded = {}, {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        ex = np.zeros(arr.shape, dtype=bool)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            fp = loss_fn(base)
            arr[idx] = orig - step
            fm = loss_fn(base)
            arr[idx] = orig
            g[idx] = (fp - fm) / (2 * step)
            fwd, bwd = (fp - f0) / step, (f0 - fm) / step
            if abs(fwd - bwd) > 1e-3 * max(1.0, abs(fwd), abs(bwd)):
                ex[idx] = True
            if kinks is not None and kinks[name][idx] < kink_radius:
                ex[idx] = True
        grads[name] = g
        excluded[name] = ex
    return grads, excluded


def relative_error(analytic, numeric, mask=None):
    """``max|a - n| / max(max|a|, max|n|)`` over the entries kept by ``mask``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if mask is not None:
        a, n = a[mask], n[mask]
    if a.size == 0:
        return 0.0
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n)) / scale)


def cosine_naive(a, b):
    """Double-loop cosine similarity between rows."""
    out = np.zeros((len(a), len(b)))
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            dot = sum(p * q for p, q in zip(x, y))
            nx = math.sqrt(sum(p * p for p in x))
            ny = math.sqrt(sum(q * q for q in y))
            out[i, j] = dot / (nx * ny)
    return out


def entropy_naive(plan):
    return -sum(p * math.log(p) for row in plan for p in row if p > 0)
