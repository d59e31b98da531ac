"""Dense symmetric matrices, spectral decompositions, and the three
projections (affine subspace, PSD cone, nonnegative orthant) used by every
solver iteration.

All public operations are pure; :class:`SymMatrix` is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ModelError, SolverError

# Relative asymmetry accepted on construction; anything above is rejected.
SYM_RTOL = 1e-12

# Magnitude below which an eigenvector component is ignored by the
# deterministic sign convention.
SIGN_TOL = 1e-12


def _as_square_float(entries) -> np.ndarray:
    a = np.asarray(entries, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ModelError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ModelError("matrix dimension must be at least 1")
    return a


class SymMatrix:
    """Immutable dense symmetric matrix (upper triangle authoritative).

    Construction symmetrizes the input as (A + A.T)/2 after checking that the
    asymmetry is at most ``SYM_RTOL`` relative to the matrix scale; larger
    asymmetry is a :class:`ModelError`.  The stored array is read-only.
    """

    __slots__ = ("a",)

    def __init__(self, entries):
        a = _as_square_float(entries)
        gap = np.abs(a - a.T).max()
        scale = max(np.abs(a).max(), 1.0)
        if gap > SYM_RTOL * scale:
            raise ModelError(
                f"matrix is asymmetric: max |A - A.T| = {gap:.3e} "
                f"exceeds {SYM_RTOL:g} * {scale:.3e}"
            )
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @classmethod
    def _wrap(cls, a: np.ndarray) -> "SymMatrix":
        # Internal fast path: caller guarantees a is symmetric float64.
        obj = object.__new__(cls)
        a = np.ascontiguousarray(a, dtype=float)
        a.setflags(write=False)
        object.__setattr__(obj, "a", a)
        return obj

    def __setattr__(self, name, value):
        raise AttributeError("SymMatrix is immutable")

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def norm(self) -> float:
        """Frobenius norm."""
        return float(np.linalg.norm(self.a))

    def inner(self, other: "SymMatrix") -> float:
        """Trace inner product <self, other>."""
        return float(np.tensordot(self.a, other.a))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.a, dtype=dtype)

    def __add__(self, other):
        return SymMatrix._wrap(self.a + other.a)

    def __sub__(self, other):
        return SymMatrix._wrap(self.a - other.a)

    def __mul__(self, scalar):
        return SymMatrix._wrap(self.a * float(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        return f"SymMatrix(dim={self.dim}, fro={self.norm():.6g})"


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues sorted non-increasing with sign-fixed orthonormal
    eigenvectors (column i pairs with ``eigenvalues[i]``).

    The sign convention makes the output deterministic: in each eigenvector
    the first component whose magnitude exceeds ``SIGN_TOL`` is positive.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        u, w = self.eigenvectors, self.eigenvalues
        return (u * w) @ u.T


def _fix_signs(u: np.ndarray) -> np.ndarray:
    u = np.array(u)
    significant = np.abs(u) > SIGN_TOL
    has_nz = significant.any(axis=0)
    first = significant.argmax(axis=0)
    cols = np.arange(u.shape[1])
    flip = has_nz & (u[first, cols] < 0.0)
    u[:, flip] *= -1.0
    return u


def _eigh_desc(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with non-increasing eigenvalues and fixed signs."""
    try:
        w, u = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            "eigendecomposition failed to converge: "
            f"dim={a.shape[0]}, fro={np.linalg.norm(a):.3e}, "
            f"max|entry|={np.abs(a).max():.3e}"
        ) from exc
    w = w[::-1].copy()
    u = _fix_signs(u[:, ::-1])
    return w, u


def eig(a: SymMatrix) -> SpectralDecomposition:
    """Full spectral decomposition of a symmetric matrix.

    Deterministic for a fixed input: eigenvalues non-increasing and the
    eigenvector sign convention applied.
    """
    w, u = _eigh_desc(a.a)
    return SpectralDecomposition(eigenvalues=w, eigenvectors=u)


def _psd_part(a: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix (eigenvalue clipping)."""
    w, u = _eigh_desc(a)
    pos = w > 0.0
    if not pos.any():
        return np.zeros_like(a)
    up = u[:, pos]
    out = (up * w[pos]) @ up.T
    return 0.5 * (out + out.T)


def _psd_split(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Moreau split a = pos + neg with pos PSD, neg negative semidefinite,
    <pos, neg> = 0.  One eigendecomposition serves both parts."""
    w, u = _eigh_desc(a)
    pos_mask = w > 0.0
    if pos_mask.all():
        return 0.5 * (a + a.T), np.zeros_like(a)
    if not pos_mask.any():
        return np.zeros_like(a), 0.5 * (a + a.T)
    up = u[:, pos_mask]
    pos = (up * w[pos_mask]) @ up.T
    pos = 0.5 * (pos + pos.T)
    return pos, a - pos


def project_psd(a: SymMatrix) -> SymMatrix:
    """Project onto the positive semidefinite cone (Frobenius-nearest)."""
    return SymMatrix._wrap(_psd_part(a.a))


def project_nonneg(a: SymMatrix) -> SymMatrix:
    """Project onto the entrywise-nonnegative symmetric matrices."""
    return SymMatrix._wrap(np.maximum(a.a, 0.0))


def _vec_sym(mat) -> np.ndarray:
    """Row of the stacked constraint operator: flattened symmetric matrix."""
    if sp.issparse(mat):
        dense_free = mat.tocoo()
        m = sp.coo_matrix(
            (dense_free.data, (dense_free.row, dense_free.col)), shape=mat.shape
        )
        return m.reshape(1, mat.shape[0] * mat.shape[1]).tocsr()
    a = np.asarray(mat, dtype=float)
    return sp.csr_matrix(a.reshape(1, -1))


@dataclass
class AffineMap:
    """The linear constraint system A(Y) = b.

    ``constraints`` is a list of sparse symmetric q x q matrices A_i, so
    ``A(Y)_i = <A_i, Y>``.  The rows are stacked into one sparse operator and
    the m x m Gram matrix ``G_ij = <A_i, A_j>`` is eigen-factorized once; the
    factorization is rank-revealing and solves through the pseudo-inverse, so
    linearly dependent rows are accepted as long as the right-hand side stays
    consistent.
    """

    constraints: list
    rhs: np.ndarray
    dim: int
    stacked: sp.csr_matrix = field(repr=False)
    gram_vectors: np.ndarray = field(repr=False)
    gram_values: np.ndarray = field(repr=False)
    gram_inv_values: np.ndarray = field(repr=False)

    def __init__(self, constraints, rhs):
        if len(constraints) < 1:
            raise ModelError("constraint system needs at least one row")
        rhs = np.asarray(rhs, dtype=float).reshape(-1)
        if rhs.shape[0] != len(constraints):
            raise ModelError(
                f"{len(constraints)} constraint matrices but {rhs.shape[0]} "
                "right-hand side entries"
            )
        mats = []
        dim = None
        for k, mat in enumerate(constraints):
            m = sp.csr_matrix(mat, dtype=float)
            if m.shape[0] != m.shape[1]:
                raise ModelError(f"constraint {k} is not square: {m.shape}")
            if dim is None:
                dim = m.shape[0]
            elif m.shape[0] != dim:
                raise ModelError(
                    f"constraint {k} has dim {m.shape[0]}, expected {dim}"
                )
            gap = abs(m - m.T).max() if m.nnz else 0.0
            scale = max(abs(m).max(), 1.0) if m.nnz else 1.0
            if gap > SYM_RTOL * scale:
                raise ModelError(f"constraint matrix {k} is not symmetric")
            mats.append(m)
        stacked = sp.vstack([m.reshape(1, dim * dim) for m in mats]).tocsr()
        gram = (stacked @ stacked.T).toarray()
        w, u = _eigh_desc(gram)
        cutoff = 1e-12 * max(w[0], 1.0)
        inv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)

        self.constraints = mats
        self.rhs = rhs
        self.dim = dim
        self.stacked = stacked
        self.gram_vectors = u
        self.gram_values = w
        self.gram_inv_values = inv

    @property
    def n_rows(self) -> int:
        return self.rhs.shape[0]

    def apply(self, y: np.ndarray) -> np.ndarray:
        """A(Y): vector of <A_i, Y>."""
        return self.stacked @ np.asarray(y, dtype=float).ravel()

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        """A*(v) = sum_i v_i A_i as a dense symmetric matrix."""
        out = (self.stacked.T @ np.asarray(v, dtype=float)).reshape(
            self.dim, self.dim
        )
        return 0.5 * (out + out.T)

    def gram_solve(self, v: np.ndarray) -> np.ndarray:
        """Pseudo-inverse solve G^+ v on the Gram matrix's range."""
        u = self.gram_vectors
        return u @ ((u.T @ v) * self.gram_inv_values)

    def gram_matrix(self) -> np.ndarray:
        return (self.stacked @ self.stacked.T).toarray()

    def residual(self, y: np.ndarray) -> float:
        return float(np.linalg.norm(self.apply(y) - self.rhs))

    def project(self, y: np.ndarray) -> np.ndarray:
        """Orthogonal projection onto {Y : A(Y) = b} (no consistency check)."""
        corr = self.gram_solve(self.apply(y) - self.rhs)
        return y - self.adjoint(corr)


def project_affine(a: SymMatrix, amap: AffineMap) -> SymMatrix:
    """Project onto the affine subspace {Y : A(Y) = b}.

    Raises :class:`ModelError` when the system is inconsistent, i.e. the
    residual after projection (plus one refinement pass) stays above
    ``1e-10 * max(1, ||b||)``.
    """
    if a.dim != amap.dim:
        raise ModelError(f"dimension mismatch: matrix {a.dim}, map {amap.dim}")
    out = amap.project(a.a)
    tol = 1e-10 * max(1.0, float(np.linalg.norm(amap.rhs)))
    if amap.residual(out) > tol:
        out = amap.project(out)  # one refinement pass for conditioning
        if amap.residual(out) > tol:
            raise ModelError(
                "affine constraint system appears inconsistent: residual "
                f"{amap.residual(out):.3e} after projection (tolerance {tol:.3e})"
            )
    return SymMatrix._wrap(0.5 * (out + out.T))
