"""Independent reference computations used by the unit and acceptance tests."""

from __future__ import annotations

import itertools
import math

import numpy as np

from beamsched.gpcore import GPProblem, Monomial, Posynomial

BOX = 3.0  # random GPs live in exp([-BOX, BOX]) per variable


def random_gp(rng: np.random.Generator, n: int) -> GPProblem:
    """Random bounded GP with a strictly feasible point at x = 1.

    Minimises a posynomial subject to random posynomial constraints and the box
    ``exp(-BOX) <= x_j <= exp(BOX)``.
    """
    names = [f"x{j}" for j in range(n)]

    def poly(k: int, total: float | None = None) -> Posynomial:
        exps = rng.integers(-2, 3, size=(k, n)).astype(float) + rng.choice([0.0, 0.5], size=(k, n))
        coef = rng.uniform(0.2, 2.0, size=k)
        if total is not None:
            coef *= total / coef.sum()  # value at x = 1
        return Posynomial([Monomial(c, dict(zip(names, e))) for c, e in zip(coef, exps)])

    objective = poly(int(rng.integers(1, 4)))
    cons = [poly(int(rng.integers(1, 4)), total=rng.uniform(0.3, 0.9)) for _ in range(int(rng.integers(1, 4)))]
    for v in names:
        cons.append(Posynomial([Monomial(math.exp(-BOX), {v: 1.0})]))
        cons.append(Posynomial([Monomial(math.exp(-BOX), {v: -1.0})]))
    return GPProblem.minimize(objective, cons, variables=tuple(names))


def _lowered(expr, names):
    F = np.array([[t.exps.get(v, 0.0) for v in names] for t in expr.terms])
    b = np.log([t.coef for t in expr.terms])
    return F, b


def _grid_eval(prob: GPProblem, Y: np.ndarray, skip: int = 0) -> np.ndarray:
    """Objective at log-points ``Y`` (rows), +inf where a constraint is violated.

    The last ``skip`` inequalities are left out (box constraints the grid already respects).
    """
    names = prob.variables
    F, b = _lowered(prob.objective, names)
    obj = np.exp(Y @ F.T + b).sum(axis=1)
    ok = np.ones(len(Y), dtype=bool)
    cons = prob.inequalities[: len(prob.inequalities) - skip]
    for c in cons:
        Fc, bc = _lowered(c, names)
        ok &= np.exp(Y @ Fc.T + bc).sum(axis=1) <= 1.0
    return np.where(ok, obj, np.inf)


def grid_minimum(prob: GPProblem, points: int = 10**6, zooms: int = 4, box_constraints: int | None = None):
    """Brute force on a logarithmic grid of ``points`` nodes over the box, then on
    equally sized grids over the bounding box of the near-best nodes.

    The problem is convex in log space, so every sublevel set is convex and the
    near-best nodes bracket the minimiser even along flat directions. The
    tolerance defining "near-best" shrinks with the grid step.
    """
    n = len(prob.variables)
    skip = 2 * n if box_constraints is None else box_constraints
    per = int(round(points ** (1 / n)))
    lo = np.full(n, -BOX)
    hi = np.full(n, BOX)
    best, arg = math.inf, None
    tol = 5e-2
    for _ in range(zooms + 1):
        axes = [np.linspace(lo[j], hi[j], per) for j in range(n)]
        step = (hi - lo) / (per - 1)
        Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        vals = _grid_eval(prob, Y, skip)
        i = int(np.argmin(vals))
        if not np.isfinite(vals[i]):
            break
        if vals[i] < best:
            best, arg = float(vals[i]), Y[i]
        near = Y[vals <= best * (1 + tol)]
        lo = np.maximum(near.min(axis=0) - 2 * step, -BOX)
        hi = np.minimum(near.max(axis=0) + 2 * step, BOX)
        shrink = float(np.max((hi - lo) / (step * (per - 1))))
        tol = max(tol * shrink, 1e-9)
    return best, arg


def two_user_grid(z: np.ndarray, noise: float, nu: np.ndarray, p_max: float, bandwidth: float, n: int = 1414):
    """Best sum rate over the simplex grid p1 + p2 <= p_max (about 10^6 nodes)
    with both SINR targets met; written independently of the library oracle."""
    step = p_max / n
    best, arg = -math.inf, None
    p1 = np.arange(n + 1) * step
    for a in range(n + 1):
        p2 = np.arange(n + 1 - a) * step
        q1 = np.full_like(p2, p1[a])
        s1 = q1 * z[0, 0] / (p2 * z[0, 1] + noise)
        s2 = p2 * z[1, 1] / (q1 * z[1, 0] + noise)
        ok = (s1 >= nu[0]) & (s2 >= nu[1])
        if not ok.any():
            continue
        r = bandwidth * (np.log2(1 + s1) + np.log2(1 + s2))
        r[~ok] = -np.inf
        j = int(np.argmax(r))
        if r[j] > best:
            best, arg = float(r[j]), (p1[a], p2[j])
    return best, arg


def brute_force_best_candidate(rates_of, current: list[int], candidates: list[int]):
    """Argmax of trial sum rate over candidates, ties to the lowest id."""
    best = None
    for k in sorted(candidates):
        s = float(np.sum(rates_of(current + [k])))
        if best is None or s > best[1]:
            best = (k, s)
    return best


def sus_reference(H: np.ndarray, pool: list[int], M: int, alpha: float) -> tuple[int, ...]:
    """Textbook semiorthogonal user selection with explicit Gram-Schmidt."""
    remaining = sorted(pool)
    chosen: list[int] = []
    ortho: list[np.ndarray] = []
    while remaining and len(chosen) < M:
        best_k, best_norm, best_g = None, -1.0, None
        for k in remaining:
            g = H[:, k].astype(complex)
            for q in ortho:
                g = g - q * (np.vdot(q, g) / np.vdot(q, q))
            nrm = np.linalg.norm(g)
            if nrm > best_norm:
                best_k, best_norm, best_g = k, nrm, g
        if best_norm <= 0:
            break
        chosen.append(best_k)
        ortho.append(best_g)
        keep = []
        for k in remaining:
            if k == best_k:
                continue
            h = H[:, k]
            corr = abs(np.vdot(best_g, h)) / (np.linalg.norm(h) * np.linalg.norm(best_g))
            if corr < alpha:
                keep.append(k)
        remaining = keep
    return tuple(chosen)


def all_subsets(ids, max_size):
    for r in range(1, max_size + 1):
        yield from itertools.combinations(ids, r)
