"""Exhaustive ground-truth solvers for tiny instances.

These enumerate the combinatorial feasible sets directly from raw instance
data and never touch the matrix-lift machinery, so they serve as an
independent reference for every other module.
"""

from __future__ import annotations

from itertools import combinations, permutations

import numpy as np

from .errors import ModelError


def qap_brute_force(inst):
    """Exact optimum over all n! assignments plus every minimizer.

    Capped at n <= 10.  Enumeration order is lexicographic, so the minimizer
    list is deterministic.
    """
    n = inst.n
    if n > 10:
        raise ModelError(f"brute force capped at n <= 10, got {n}")
    a, b, c = inst.flow, inst.distance, inst.linear
    idx = np.arange(n)

    def objective(p):
        p = np.asarray(p)
        return float((a * b[np.ix_(p, p)]).sum() + c[idx, p].sum())

    opt = min(objective(p) for p in permutations(range(n)))
    tol = 1e-9 * max(1.0, abs(opt))
    minimizers = [
        tuple(p) for p in permutations(range(n)) if objective(p) <= opt + tol
    ]
    return opt, minimizers


def stqp_brute_force(inst):
    """Exact minimum of x^T Q x over the simplex, with a minimizer.

    Enumerates every support set; on each support the quadratic restricted
    to the affine hull {sum x = 1} has its stationary points at solutions of
    the bordered linear system

        [2 Q_S  1] [x ]   [0]
        [1^T    0] [mu] = [1].

    Only solutions that are feasible (x >= 0 on the support) are kept: a
    stationary point of the affine hull that leaves the simplex says nothing
    about the minimum over the simplex itself, and its value can undercut
    the true one.  The global minimum over the simplex is attained on some
    face, where it is either a vertex or an interior stationary point of
    that face, so scanning all supports with the feasibility filter is
    exhaustive.  Capped at n <= 15.
    """
    q = inst.q_matrix
    n = inst.n
    if n > 15:
        raise ModelError(f"brute force capped at n <= 15, got {n}")

    best_value = None
    best_x = None
    for k in range(1, n + 1):
        for support in combinations(range(n), k):
            s = list(support)
            qs = q[np.ix_(s, s)]
            system = np.zeros((k + 1, k + 1))
            system[:k, :k] = 2.0 * qs
            system[:k, k] = 1.0
            system[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            try:
                sol = np.linalg.solve(system, rhs)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(system, rhs, rcond=None)
            scale = max(1.0, np.abs(qs).max())
            if np.linalg.norm(system @ sol - rhs) > 1e-8 * scale:
                continue  # no stationary point on this support
            xs = sol[:k]
            if xs.min() < -1e-10:
                continue  # stationary point leaves the simplex
            x = np.zeros(n)
            x[s] = np.maximum(xs, 0.0)
            x /= x.sum()
            value = float(x @ q @ x)
            if best_value is None or value < best_value - 1e-15:
                best_value = value
                best_x = x
    return best_value, best_x


def tripartition_brute_force(inst):
    """Exact minimum weight between the first two groups over every
    size-respecting partition, plus all minimizing label vectors.

    Capped at n <= 12; enumeration is lexicographic in the chosen
    vertex subsets.
    """
    n = inst.n
    if n > 12:
        raise ModelError(f"brute force capped at n <= 12, got {n}")
    a = inst.adjacency
    m1, m2, _ = inst.sizes
    vertices = range(n)

    def cuts():
        for s1 in combinations(vertices, m1):
            rest = [v for v in vertices if v not in s1]
            for s2 in combinations(rest, m2):
                value = float(a[np.ix_(s1, s2)].sum())
                yield value, s1, s2

    opt = min(value for value, _, _ in cuts())
    tol = 1e-9 * max(1.0, abs(opt))
    minimizers = []
    for value, s1, s2 in cuts():
        if value <= opt + tol:
            labels = np.full(n, 2, dtype=int)
            labels[list(s1)] = 0
            labels[list(s2)] = 1
            minimizers.append(tuple(labels.tolist()))
    return opt, minimizers
