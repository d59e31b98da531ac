"""The rank-one penalty: objective value, spectral subgradient of the
concave part, and the default proximal weight.

The penalized objective for a cost matrix C and weight rho is

    f_rho(Y) = <C, Y> + rho * (nuclear_norm(Y) - spectral_norm(Y)),

which vanishes on rank-one PSD matrices and grows with the residual rank.
For PSD Y this is <C, Y> + rho * (trace(Y) - lambda_1(Y)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelError
from .linalg import SymMatrix, eig


@dataclass(frozen=True)
class PenaltyParams:
    """Penalty weight rho >= 0 and proximal weight sigma > 0.

    sigma = None asks the driver to fill in default_sigma at run time.
    rho = 0 switches the solver into pure convex-relaxation mode (the
    penalty term disappears and the outer loop becomes proximal
    minimization of <C, Y> over the feasible set).
    """

    rho: float
    sigma: float | None = None

    def __post_init__(self):
        if self.rho < 0.0:
            raise ModelError(f"rho must be nonnegative, got {self.rho}")
        if self.sigma is not None and self.sigma <= 0.0:
            raise ModelError(f"sigma must be positive, got {self.sigma}")


def penalty_objective(y: SymMatrix, cost: SymMatrix, rho: float) -> float:
    """f_rho(Y) = <cost, Y> + rho * (sum |lambda_i| - max |lambda_i|).

    Total on any symmetric matrix; for the solver's PSD iterates the penalty
    term reduces to trace minus top eigenvalue.
    """
    if y.dim != cost.dim:
        raise ModelError(f"dimension mismatch: Y {y.dim}, cost {cost.dim}")
    value = cost.inner(y)
    if rho != 0.0:
        lam = eig(y).eigenvalues
        abs_lam = np.abs(lam)
        value += rho * (abs_lam.sum() - abs_lam.max())
    return float(value)


def spectral_subgradient(y: SymMatrix) -> SymMatrix:
    """Subgradient W = u1 u1^T of the spectral norm at a PSD iterate, with
    u1 the deterministically sign-fixed top eigenvector.

    At Y = 0 every unit rank-one matrix is admissible; the convention here
    is W = e1 e1^T.
    """
    if np.abs(y.a).max() == 0.0:
        w = np.zeros((y.dim, y.dim))
        w[0, 0] = 1.0
        return SymMatrix._wrap(w)
    dec = eig(y)
    u1 = dec.eigenvectors[:, 0]
    return SymMatrix._wrap(np.outer(u1, u1))


def default_sigma(cost: SymMatrix, rho: float) -> float:
    """Largest proximal weight with the descent guarantee:
    1 / spectral_norm(cost + rho * I)."""
    shifted = cost.a + rho * np.eye(cost.dim)
    lam = eig(SymMatrix._wrap(0.5 * (shifted + shifted.T))).eigenvalues
    top = float(np.abs(lam).max())
    if top == 0.0:
        # zero cost and zero rho: any weight works
        return 1.0
    return 1.0 / top
