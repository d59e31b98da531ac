"""Recovery of feasible combinatorial solutions from matrix iterates.

The top eigenpair of a (near-)rank-one iterate is rescaled into a fractional
assignment, which is then rounded by an exact maximum-weight assignment so
the result is always feasible.  Objectives are recomputed from raw instance
data, never from the matrix cost.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ExtractionError, ModelError
from .linalg import SymMatrix, eig
from .model import (
    KIND_QAP,
    KIND_STQP,
    KIND_TRIPARTITION,
    ConicProblem,
    QapInstance,
    StqpInstance,
    TriPartInstance,
)


@dataclass(frozen=True)
class RoundedSolution:
    """A feasible solution with its combinatorial objective.

    assignment is a permutation array (QAP), simplex vector (StQP), or group
    label array (tri-partition).  gap_percent stays None until a reference
    optimum is supplied.  rank_ratio records lambda_2/lambda_1 of the matrix
    the solution was extracted from.
    """

    kind: str
    assignment: np.ndarray
    objective: float
    gap_percent: float | None
    rank_ratio: float


def _top_factor(y: SymMatrix):
    """sqrt(lambda_1) * u_1 with the entry-sum-nonnegative sign, plus the
    rank ratio."""
    dec = eig(y)
    lam = dec.eigenvalues
    if lam[0] <= 0.0:
        raise ExtractionError(
            f"top eigenvalue {lam[0]:.3e} is not positive; nothing to extract"
        )
    x = np.sqrt(lam[0]) * dec.eigenvectors[:, 0]
    if x.sum() < 0.0:
        x = -x
    ratio = 0.0
    if lam.shape[0] > 1:
        ratio = float(max(lam[1], 0.0) / lam[0])
    return x, ratio


def extract_permutation(y: SymMatrix, n: int) -> np.ndarray:
    """Fractional assignment matrix mat(sqrt(lambda_1) u_1) from an n^2
    dimensional iterate.  On an exact permutation lift this returns that
    permutation matrix."""
    if y.dim != n * n:
        raise ModelError(f"matrix dim {y.dim} is not n^2 = {n * n}")
    x, _ = _top_factor(y)
    return x.reshape(n, n, order="F")


def _assignment_value(score: np.ndarray, rows, cols) -> float:
    """Maximum assignment weight over the given row/column subsets."""
    if not rows or not cols:
        return 0.0
    sub = score[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(-sub)
    return float(sub[r, c].sum())


def round_to_permutation(xfrac) -> np.ndarray:
    """Permutation maximizing sum_i X[i, p(i)], ties broken by the
    lexicographically smallest p.

    The optimum is found by an exact assignment solve; lexicographic order
    is then enforced by fixing rows one at a time to the smallest column
    that keeps the total optimal.
    """
    x = np.asarray(xfrac, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ModelError(f"expected a square matrix, got shape {x.shape}")
    n = x.shape[0]
    rows, cols = linear_sum_assignment(-x)
    best = float(x[rows, cols].sum())
    tol = 1e-9 * n * max(1.0, float(np.abs(x).max()))

    perm = np.empty(n, dtype=int)
    avail = list(range(n))
    prefix = 0.0
    for i in range(n):
        tail_rows = list(range(i + 1, n))
        for j in avail:
            rest = _assignment_value(x, tail_rows, [c for c in avail if c != j])
            if prefix + x[i, j] + rest >= best - tol:
                perm[i] = j
                prefix += x[i, j]
                avail.remove(j)
                break
        else:  # numerically impossible; keep feasibility regardless
            perm[i] = avail.pop(0)
    return perm


def qap_objective(inst: QapInstance, perm) -> float:
    """sum_ij flow[i,j] * distance[p(i),p(j)] + sum_i linear[i,p(i)]."""
    p = np.asarray(perm, dtype=int)
    n = inst.n
    if sorted(p.tolist()) != list(range(n)):
        raise ModelError(f"not a permutation of 0..{n - 1}: {p.tolist()}")
    quad = float((inst.flow * inst.distance[np.ix_(p, p)]).sum())
    lin = float(inst.linear[np.arange(n), p].sum())
    return quad + lin


def stqp_objective(inst: StqpInstance, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ inst.q_matrix @ x)


def tripartition_objective(inst: TriPartInstance, labels) -> float:
    """Total edge weight between group 0 and group 1."""
    labels = np.asarray(labels, dtype=int)
    s1 = np.flatnonzero(labels == 0)
    s2 = np.flatnonzero(labels == 1)
    return float(inst.adjacency[np.ix_(s1, s2)].sum())


def round_stqp(y: SymMatrix) -> np.ndarray:
    """Clip the extracted factor to the nonnegative orthant and renormalize
    onto the simplex."""
    x, _ = _top_factor(y)
    x = np.maximum(x, 0.0)
    total = x.sum()
    if total <= 0.0:
        raise ExtractionError("extracted factor has no nonnegative mass")
    return x / total


def round_tripartition(y: SymMatrix, sizes) -> np.ndarray:
    """Group labels maximizing the extracted weights under the fixed group
    sizes, ties broken by the lexicographically smallest label vector.

    The size constraints are handled by expanding each group into as many
    assignment slots as its cardinality and solving exact assignments.
    """
    sizes = tuple(int(m) for m in sizes)
    n = sum(sizes)
    if y.dim != 3 * n:
        raise ModelError(f"matrix dim {y.dim} is not 3n = {3 * n}")
    x, _ = _top_factor(y)
    xfrac = x.reshape(n, 3, order="F")

    slot_group = [g for g in range(3) for _ in range(sizes[g])]
    score = xfrac[:, slot_group]  # n x n, one column per slot
    rows, cols = linear_sum_assignment(-score)
    best = float(score[rows, cols].sum())
    tol = 1e-9 * n * max(1.0, float(np.abs(xfrac).max()))

    labels = np.empty(n, dtype=int)
    remaining = list(sizes)
    slots_left = list(range(n))
    prefix = 0.0
    for r in range(n):
        tail_rows = list(range(r + 1, n))
        chosen = None
        for g in range(3):
            if remaining[g] == 0:
                continue
            slot = next(s for s in slots_left if slot_group[s] == g)
            rest = _assignment_value(
                score, tail_rows, [s for s in slots_left if s != slot]
            )
            if prefix + xfrac[r, g] + rest >= best - tol:
                chosen = (g, slot)
                break
        if chosen is None:  # numerically impossible; fall back feasibly
            g = next(gg for gg in range(3) if remaining[gg] > 0)
            chosen = (g, next(s for s in slots_left if slot_group[s] == g))
        g, slot = chosen
        labels[r] = g
        remaining[g] -= 1
        slots_left.remove(slot)
        prefix += xfrac[r, g]
    return labels


def round_solution(prob: ConicProblem, y: SymMatrix) -> RoundedSolution:
    """Extract and round a feasible solution of the problem's kind, with the
    objective recomputed from the raw instance data."""
    if prob.kind == KIND_QAP:
        n = prob.instance.n
        xfrac = extract_permutation(y, n)
        _, ratio = _top_factor(y)
        perm = round_to_permutation(xfrac)
        objective = qap_objective(prob.instance, perm)
        return RoundedSolution(
            kind=prob.kind, assignment=perm, objective=objective,
            gap_percent=None, rank_ratio=ratio,
        )
    if prob.kind == KIND_STQP:
        x, ratio = _top_factor(y)
        simplex = np.maximum(x, 0.0)
        total = simplex.sum()
        if total <= 0.0:
            raise ExtractionError("extracted factor has no nonnegative mass")
        simplex = simplex / total
        return RoundedSolution(
            kind=prob.kind, assignment=simplex,
            objective=stqp_objective(prob.instance, simplex),
            gap_percent=None, rank_ratio=ratio,
        )
    if prob.kind == KIND_TRIPARTITION:
        labels = round_tripartition(y, prob.instance.sizes)
        _, ratio = _top_factor(y)
        return RoundedSolution(
            kind=prob.kind, assignment=labels,
            objective=tripartition_objective(prob.instance, labels),
            gap_percent=None, rank_ratio=ratio,
        )
    raise ModelError(f"unknown problem kind {prob.kind!r}")


def compute_gap(pdca_objective: float, reference_opt: float) -> float:
    """(feasible - reference) / reference * 100.

    A negative result means the reference was not actually optimal (the
    feasible value is an upper bound); it is returned with a warning.
    """
    if reference_opt == 0.0:
        raise ModelError("reference optimum is zero; the gap is undefined")
    gap = (pdca_objective - reference_opt) / reference_opt * 100.0
    if gap < -1e-12 * max(1.0, abs(reference_opt)):
        warnings.warn(
            f"feasible value {pdca_objective} beats the reference "
            f"{reference_opt}; the reference is not optimal",
            stacklevel=2,
        )
    return gap
