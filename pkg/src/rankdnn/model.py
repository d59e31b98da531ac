"""Problem instances and their lifts into the rank-one-constrained
doubly-nonnegative form.

Each builder produces a :class:`ConicProblem` holding the cost matrix and the
affine constraint system A(Y) = b of the matrix program

    minimize <cost, Y>  subject to  A(Y) = b,  Y PSD,  Y >= 0,  rank(Y) <= 1.

Vectorization is column-major throughout, so for an n x k assignment matrix X
the entry X[r, c] sits at index r + n*c of vec(X) and the lifted variable is
Y = vec(X) vec(X)^T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ModelError
from .linalg import AffineMap, SymMatrix

KIND_QAP = "QAP"
KIND_STQP = "StQP"
KIND_TRIPARTITION = "TriPartition"

# Relative eigenvalue ratio below which an iterate counts as rank-one.
TOL_RANK = 1e-6


def _check_square(name: str, a: np.ndarray, n: int | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ModelError(f"{name} must be square, got shape {a.shape}")
    if n is not None and a.shape[0] != n:
        raise ModelError(f"{name} must be {n}x{n}, got {a.shape[0]}x{a.shape[0]}")
    return a


def _check_symmetric(name: str, a: np.ndarray) -> np.ndarray:
    gap = np.abs(a - a.T).max()
    scale = max(np.abs(a).max(), 1.0)
    if gap > 1e-12 * scale:
        i, j = np.unravel_index(np.abs(a - a.T).argmax(), a.shape)
        raise ModelError(
            f"{name} is asymmetric at [{i},{j}]: {a[i, j]!r} vs {a[j, i]!r}"
        )
    return 0.5 * (a + a.T)


def _check_nonnegative(name: str, a: np.ndarray) -> None:
    if a.min() < 0.0:
        i, j = np.unravel_index(a.argmin(), a.shape)
        raise ModelError(
            f"{name}[{i},{j}] = {a[i, j]} is negative; shift the data first "
            "(see shift_to_nonnegative)"
        )


@dataclass(frozen=True)
class QapInstance:
    """Quadratic assignment data: minimize
    sum_ij flow[i,j] * distance[p(i),p(j)] + sum_i linear[i,p(i)]
    over permutations p.  flow and distance must be symmetric; all data
    nonnegative."""

    flow: np.ndarray
    distance: np.ndarray
    linear: np.ndarray = None

    def __post_init__(self):
        a = _check_square("flow", self.flow)
        b = _check_square("distance", self.distance, a.shape[0])
        if self.linear is None:
            c = np.zeros_like(a)
        else:
            c = _check_square("linear", self.linear, a.shape[0])
        a = _check_symmetric("flow", a)
        b = _check_symmetric("distance", b)
        for name, m in (("flow", a), ("distance", b), ("linear", c)):
            _check_nonnegative(name, m)
        object.__setattr__(self, "flow", a)
        object.__setattr__(self, "distance", b)
        object.__setattr__(self, "linear", c)

    @property
    def n(self) -> int:
        return self.flow.shape[0]


@dataclass(frozen=True)
class StqpInstance:
    """Standard quadratic program data: minimize x^T Q x over the simplex
    {x >= 0, sum x = 1}.  Q must be symmetric (any sign)."""

    q_matrix: np.ndarray

    def __post_init__(self):
        q = _check_square("q_matrix", self.q_matrix)
        q = _check_symmetric("q_matrix", q)
        object.__setattr__(self, "q_matrix", q)

    @property
    def n(self) -> int:
        return self.q_matrix.shape[0]


@dataclass(frozen=True)
class TriPartInstance:
    """Graph tri-partition data: split n vertices into groups of the given
    sizes minimizing the total edge weight between group 1 and group 2."""

    adjacency: np.ndarray
    sizes: tuple

    def __post_init__(self):
        a = _check_square("adjacency", self.adjacency)
        a = _check_symmetric("adjacency", a)
        _check_nonnegative("adjacency", a)
        if np.abs(np.diag(a)).max() > 0.0:
            k = int(np.abs(np.diag(a)).argmax())
            raise ModelError(f"adjacency[{k},{k}] = {a[k, k]} must be zero")
        sizes = tuple(int(m) for m in self.sizes)
        if len(sizes) != 3 or any(m < 1 for m in sizes):
            raise ModelError(f"sizes must be three positive integers, got {sizes}")
        if sum(sizes) != a.shape[0]:
            raise ModelError(
                f"sizes {sizes} sum to {sum(sizes)}, expected n = {a.shape[0]}"
            )
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "sizes", sizes)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class ConicProblem:
    """The abstract matrix program: cost, constraint system, ambient dim q,
    problem kind tag, and the source instance."""

    cost: SymMatrix
    constraints: AffineMap
    dim: int
    kind: str
    instance: object = field(compare=False)

    def __post_init__(self):
        if self.cost.dim != self.dim or self.constraints.dim != self.dim:
            raise ModelError(
                f"dimension mismatch: cost {self.cost.dim}, constraints "
                f"{self.constraints.dim}, declared {self.dim}"
            )


def _pair_rows(q: int, ii, jj) -> sp.csr_matrix:
    """Symmetric sparse matrix M with <M, Y> = sum_k Y[ii[k], jj[k]] for
    symmetric Y (half weight on each of the two mirrored positions)."""
    ii = np.asarray(ii, dtype=int)
    jj = np.asarray(jj, dtype=int)
    rows = np.concatenate([ii, jj])
    cols = np.concatenate([jj, ii])
    data = np.full(rows.shape[0], 0.5)
    return sp.coo_matrix((data, (rows, cols)), shape=(q, q)).tocsr()


def build_qap(inst: QapInstance) -> ConicProblem:
    """Lift a QAP instance: cost distance (x) flow plus the linear term on the
    diagonal; q = n^2, m = n(n+1) + 1 constraint rows.

    Row order: block-sum rows for upper-triangle positions (r, s) with
    r <= s, then block-trace rows for block pairs (i, j) with i <= j, then
    the single total-mass row <E, Y> = n^2.
    """
    n = inst.n
    q = n * n
    cost = np.kron(inst.distance, inst.flow) + np.diag(
        inst.linear.ravel(order="F")
    )

    rows, rhs = [], []
    # sum of diagonal blocks equals the identity
    for r in range(n):
        for s in range(r, n):
            ii = [r + n * k for k in range(n)]
            jj = [s + n * k for k in range(n)]
            rows.append(_pair_rows(q, ii, jj))
            rhs.append(1.0 if r == s else 0.0)
    # trace of block (i, j) equals delta_ij
    for i in range(n):
        for j in range(i, n):
            ii = [r + n * i for r in range(n)]
            jj = [r + n * j for r in range(n)]
            rows.append(_pair_rows(q, ii, jj))
            rhs.append(1.0 if i == j else 0.0)
    # total mass
    rows.append(sp.csr_matrix(np.ones((q, q))))
    rhs.append(float(n * n))

    amap = AffineMap(rows, rhs)
    return ConicProblem(
        cost=SymMatrix(cost), constraints=amap, dim=q, kind=KIND_QAP,
        instance=inst,
    )


def build_stqp(inst: StqpInstance) -> ConicProblem:
    """Lift a standard quadratic program: cost Q, single row <E, Y> = 1,
    q = n."""
    n = inst.n
    amap = AffineMap([sp.csr_matrix(np.ones((n, n)))], [1.0])
    return ConicProblem(
        cost=SymMatrix(inst.q_matrix), constraints=amap, dim=n,
        kind=KIND_STQP, instance=inst,
    )


def build_tripartition(inst: TriPartInstance) -> ConicProblem:
    """Lift a tri-partition instance: cost half of B (x) adjacency where B
    couples groups 1 and 2; q = 3n, m = 4n + 12 constraint rows.

    Row order (gadget families on the 3x3 group space and the n x n vertex
    space): group Gram rows (i <= j), vertex normalization rows, group-mass
    rows (group outer, vertex inner), then block-sum rows (i <= j).
    """
    n = inst.n
    m1, m2, m3 = inst.sizes
    sizes = np.array([m1, m2, m3], dtype=float)
    q = 3 * n

    b3 = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    cost = 0.5 * np.kron(b3, inst.adjacency)

    eye3 = np.eye(3)
    ones3 = np.ones((3, 3))
    eye_n = sp.identity(n, format="csr")
    ones_n = sp.csr_matrix(np.ones((n, n)))

    def pair_sym(i, j, k):
        # L^{ij} = (e_i e_j^T + e_j e_i^T) / 2 on the 3x3 group space
        lij = 0.5 * (np.outer(eye3[i], eye3[j]) + np.outer(eye3[j], eye3[i]))
        return sp.kron(sp.csr_matrix(lij), k, format="csr")

    rows, rhs = [], []
    # group Gram: <L^{ij} (x) I, Y> = m_i delta_ij
    for i in range(3):
        for j in range(i, 3):
            rows.append(pair_sym(i, j, eye_n))
            rhs.append(sizes[i] if i == j else 0.0)
    # each vertex lands in exactly one group: <E_3 (x) e_k e_k^T, Y> = 1
    for k in range(n):
        jkk = sp.coo_matrix(([1.0], ([k], [k])), shape=(n, n)).tocsr()
        rows.append(sp.kron(sp.csr_matrix(ones3), jkk, format="csr"))
        rhs.append(1.0)
    # group masses against each vertex row: symmetrized rank-one gadget
    ones_rowcount = np.ones(n)
    for a in range(3):
        va = sp.csr_matrix(np.outer(eye3[a], np.ones(3)))
        for j in range(n):
            wjt = sp.coo_matrix(
                (ones_rowcount, (np.arange(n), np.full(n, j))), shape=(n, n)
            ).tocsr()
            m = sp.kron(va, wjt, format="csr")
            rows.append(0.5 * (m + m.T))
            rhs.append(sizes[a])
    # block totals: <L^{ij} (x) E, Y> = m_i m_j
    for i in range(3):
        for j in range(i, 3):
            rows.append(pair_sym(i, j, ones_n))
            rhs.append(sizes[i] * sizes[j])

    amap = AffineMap(rows, rhs)
    return ConicProblem(
        cost=SymMatrix(cost), constraints=amap, dim=q,
        kind=KIND_TRIPARTITION, instance=inst,
    )


def permutation_matrix(perm) -> np.ndarray:
    """0/1 matrix X with X[i, perm[i]] = 1; validates perm is a permutation."""
    perm = np.asarray(perm, dtype=int)
    n = perm.shape[0]
    if sorted(perm.tolist()) != list(range(n)):
        raise ModelError(f"not a permutation of 0..{n - 1}: {perm.tolist()}")
    x = np.zeros((n, n))
    x[np.arange(n), perm] = 1.0
    return x


def partition_matrix(labels, sizes) -> np.ndarray:
    """n x 3 indicator matrix from group labels; validates group sizes."""
    labels = np.asarray(labels, dtype=int)
    n = labels.shape[0]
    if labels.min() < 0 or labels.max() > 2:
        raise ModelError(f"labels must be in 0..2, got {labels.tolist()}")
    counts = tuple(int((labels == g).sum()) for g in range(3))
    if counts != tuple(sizes):
        raise ModelError(f"group sizes {counts} do not match required {tuple(sizes)}")
    x = np.zeros((n, 3))
    x[np.arange(n), labels] = 1.0
    return x


def lift_solution(prob: ConicProblem, solution) -> SymMatrix:
    """Lift a feasible combinatorial solution to the rank-one matrix
    vec(X) vec(X)^T (or x x^T for the simplex problem)."""
    if prob.kind == KIND_QAP:
        x = permutation_matrix(solution).ravel(order="F")
    elif prob.kind == KIND_STQP:
        x = np.asarray(solution, dtype=float).reshape(-1)
        if x.shape[0] != prob.dim:
            raise ModelError(f"simplex point has length {x.shape[0]}, need {prob.dim}")
        if x.min() < -1e-12 or abs(x.sum() - 1.0) > 1e-8:
            raise ModelError(
                f"not a simplex point: min {x.min():.3e}, sum {x.sum():.12g}"
            )
        x = np.maximum(x, 0.0)
    elif prob.kind == KIND_TRIPARTITION:
        x = partition_matrix(solution, prob.instance.sizes).ravel(order="F")
    else:
        raise ModelError(f"unknown problem kind {prob.kind!r}")
    if x.shape[0] != prob.dim:
        raise ModelError(f"lift has dim {x.shape[0]}, problem has {prob.dim}")
    return SymMatrix(np.outer(x, x))


def rank_one_factor(y: SymMatrix, tol_rank: float = TOL_RANK):
    """Nonnegative vector x with Y = x x^T, or None when Y is not (numerically)
    a rank-one doubly nonnegative matrix.

    Checks: PSD up to 1e-8 relative, entrywise nonnegative up to 1e-8
    relative, and second eigenvalue at most tol_rank * max(lambda_1, 1).
    """
    from .linalg import eig

    dec = eig(y)
    lam = dec.eigenvalues
    lam1 = lam[0]
    scale = max(abs(lam1), 1.0)
    if lam1 <= 0.0:
        return None
    if lam[-1] < -1e-8 * scale:
        return None
    entry_scale = max(np.abs(y.a).max(), 1.0)
    if y.a.min() < -1e-8 * entry_scale:
        return None
    if y.dim > 1 and lam[1] > tol_rank * max(lam1, 1.0):
        return None
    x = np.sqrt(lam1) * dec.eigenvectors[:, 0]
    x_scale = max(np.abs(x).max(), 1.0)
    for cand in (x, -x) if x.sum() >= 0 else (-x, x):
        if cand.min() >= -1e-8 * x_scale:
            return np.maximum(cand, 0.0)
    return None


def shift_to_nonnegative(flow, distance, linear=None):
    """Shift QAP data up entrywise until nonnegative.

    Returns (instance, offset) where every permutation's objective on the
    shifted instance equals the original objective plus the constant offset.
    """
    a = _check_square("flow", np.asarray(flow, dtype=float))
    b = _check_square("distance", np.asarray(distance, dtype=float), a.shape[0])
    n = a.shape[0]
    c = (
        np.zeros((n, n))
        if linear is None
        else _check_square("linear", np.asarray(linear, dtype=float), n)
    )
    alpha = max(0.0, -a.min())
    beta = max(0.0, -b.min())
    gamma = max(0.0, -c.min())
    a2, b2, c2 = a + alpha, b + beta, c + gamma
    # objective'(p) = objective(p) + beta*sum(A) + alpha*sum(B') + gamma*n
    offset = beta * a.sum() + alpha * b2.sum() + gamma * n
    return QapInstance(flow=a2, distance=b2, linear=c2), float(offset)
