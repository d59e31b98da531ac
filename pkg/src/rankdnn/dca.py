"""Outer difference-of-convex driver.

Each outer step linearizes the concave spectral term at the current iterate
and solves the resulting strongly convex subproblem, producing a monotone
objective sequence.  A descent monitor certifies the decrease at every
accepted step; a penalty-weight search doubles and then bisects the weight
until the iterate collapses to rank one.

Costs are normalized to unit spectral scale internally so that penalty
weights are dimensionless; histories and logs are reported on the normalized
objective, while callers read raw objectives off the final iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelError
from .inner import InnerConfig, InnerResult, solve_subproblem
from .linalg import SymMatrix, eig, project_affine, project_nonneg, project_psd
from .model import (
    KIND_QAP,
    KIND_STQP,
    KIND_TRIPARTITION,
    TOL_RANK,
    ConicProblem,
)
from .penalty import PenaltyParams, default_sigma, penalty_objective, spectral_subgradient

STATUS_STATIONARY = "Stationary"
STATUS_MAX_ITERS = "MaxIters"
STATUS_INNER_FAILURE = "InnerFailure"


@dataclass(frozen=True)
class DcaConfig:
    """Outer-loop controls.

    rho_bisection, when present, is (rho_lo, rho_hi, rounds) for
    :func:`bisect_rho`.
    """

    params: PenaltyParams
    inner: InnerConfig = field(default_factory=InnerConfig)
    tol_outer: float = 1e-6
    max_outer: int = 500
    rho_bisection: tuple | None = None

    def __post_init__(self):
        if self.tol_outer <= 0.0:
            raise ModelError(f"tol_outer must be positive, got {self.tol_outer}")
        if self.max_outer < 1:
            raise ModelError(f"max_outer must be >= 1, got {self.max_outer}")
        if self.rho_bisection is not None:
            lo, hi, rounds = self.rho_bisection
            if not 0.0 <= lo < hi:
                raise ModelError(
                    f"need 0 <= rho_lo < rho_hi, got ({lo}, {hi})"
                )
            if rounds < 1:
                raise ModelError(f"rounds must be >= 1, got {rounds}")


@dataclass
class DcaState:
    """Trace of one outer run."""

    k: int
    Y: SymMatrix
    W: SymMatrix
    f_history: list
    rank_history: list
    inner_iters: int


@dataclass(frozen=True)
class DcaOutcome:
    Y_final: SymMatrix
    state: DcaState
    status: str
    cert_final: object


def _rank_ratio(dec) -> float:
    lam = dec.eigenvalues
    if lam.shape[0] < 2 or lam[0] <= 0.0:
        return 0.0
    return float(max(lam[1], 0.0) / lam[0])


def _qap_barycenter(n: int) -> np.ndarray:
    eye = np.eye(n)
    offdiag = np.ones((n, n)) - eye
    y = np.kron(eye, eye) / n
    if n > 1:
        y = y + np.kron(offdiag, offdiag) / (n * (n - 1))
    return y


def _tripartition_barycenter(n: int, sizes) -> np.ndarray:
    # average of the lifts of all size-respecting partitions
    q = 3 * n
    y = np.zeros((q, q))
    sizes = [float(m) for m in sizes]
    for a in range(3):
        for b in range(3):
            for r in range(n):
                for s in range(n):
                    if r == s:
                        val = sizes[a] / n if a == b else 0.0
                    elif a == b:
                        val = sizes[a] * (sizes[a] - 1.0) / (n * (n - 1.0))
                    else:
                        val = sizes[a] * sizes[b] / (n * (n - 1.0))
                    y[r + n * a, s + n * b] = val
    return y


def _project_onto_omega(start: np.ndarray, prob: ConicProblem,
                        max_rounds: int = 5000) -> SymMatrix:
    """Cycle the three projections until all residuals fall below 1e-8."""
    amap = prob.constraints
    y = SymMatrix._wrap(0.5 * (start + start.T))
    tol = 1e-8
    for _ in range(max_rounds):
        y = project_affine(y, amap)
        y = project_psd(y)
        y = project_nonneg(y)
        affine = amap.residual(y.a) / max(1.0, float(np.linalg.norm(amap.rhs)))
        lam = eig(y).eigenvalues
        cone = max(0.0, -float(lam[-1]), -float(y.a.min()))
        if affine <= tol and cone <= tol:
            return y
    raise ModelError(
        "feasible-point search did not converge; the constraint set may be "
        f"empty (affine residual {affine:.3e}, cone violation {cone:.3e})"
    )


def initial_point(prob: ConicProblem, method: str = "barycenter") -> SymMatrix:
    """A feasible starting matrix.

    "barycenter" (default) returns the closed-form average of all lifted
    combinatorial solutions, which is feasible by convexity.  "projection"
    cycles the three projections from a uniform matrix instead.
    """
    if method == "projection":
        q = prob.dim
        mass = float(prob.constraints.rhs[-1]) if prob.kind == KIND_QAP else 1.0
        start = np.full((q, q), mass / (q * q))
        return _project_onto_omega(start, prob)
    if method != "barycenter":
        raise ModelError(f"unknown initial-point method {method!r}")

    if prob.kind == KIND_QAP:
        y = _qap_barycenter(prob.instance.n)
    elif prob.kind == KIND_STQP:
        n = prob.dim
        y = np.full((n, n), 1.0 / (n * n))
    elif prob.kind == KIND_TRIPARTITION:
        y = _tripartition_barycenter(prob.instance.n, prob.instance.sizes)
    else:
        raise ModelError(f"unknown problem kind {prob.kind!r}")

    out = SymMatrix._wrap(y)
    residual = prob.constraints.residual(y)
    if residual > 1e-8 * max(1.0, float(np.linalg.norm(prob.constraints.rhs))):
        raise ModelError(
            f"starting point construction failed: residual {residual:.3e}"
        )
    return out


def run_dca(
    prob: ConicProblem,
    cfg: DcaConfig,
    y0: SymMatrix | None = None,
    log=None,
) -> DcaOutcome:
    """Run the outer loop from y0 (default: the barycenter start).

    ``log``, when given, receives one dict per accepted outer step with keys
    k, f_rho, delta_y, lambda1, rank_ratio, inner_iters, inner_converged,
    residuals, sigma, rho.

    Every accepted step is checked against the descent certificate

        f(Y_k) - f(Y_{k+1}) >= ||Y_{k+1} - Y_k||^2 / (2*sigma) - slack,

    slack = 10 * tol_kkt * (1 + |f(Y_k)| + |f(Y_{k+1})|).  A violating or
    failed subproblem triggers one retry at half the proximal weight; a
    second violation aborts with status InnerFailure.
    """
    rho = cfg.params.rho
    norm_scale = max(1.0, float(np.abs(eig(prob.cost).eigenvalues).max()))
    cost = SymMatrix._wrap(prob.cost.a / norm_scale)
    nprob = replace(prob, cost=cost)
    sigma = (
        cfg.params.sigma
        if cfg.params.sigma is not None
        else default_sigma(cost, rho)
    )

    y = initial_point(prob) if y0 is None else y0
    rhs_scale = max(1.0, float(np.linalg.norm(prob.constraints.rhs)))
    if prob.constraints.residual(y.a) > 1e-4 * rhs_scale:
        raise ModelError("starting point is not feasible within tolerance")

    f_cur = penalty_objective(y, cost, rho)
    f_history = [f_cur]
    rank_history = [_rank_ratio(eig(y))]
    inner_total = 0
    status = STATUS_MAX_ITERS
    cert = None
    warm = None
    w = spectral_subgradient(y)
    steps = 0

    for k in range(cfg.max_outer):
        w = spectral_subgradient(y)
        retried = False
        while True:
            result: InnerResult = solve_subproblem(
                nprob, y, w, PenaltyParams(rho, sigma), cfg.inner, state=warm
            )
            y_new = result.Y_next
            f_new = penalty_objective(y_new, cost, rho)
            delta = float(np.linalg.norm(y_new.a - y.a))
            slack = 10.0 * cfg.inner.tol_kkt * (1.0 + abs(f_cur) + abs(f_new))
            descent_ok = (f_cur - f_new) >= delta * delta / (2.0 * sigma) - slack
            if descent_ok:
                break
            if retried:
                state = DcaState(
                    k=steps, Y=y, W=w, f_history=f_history,
                    rank_history=rank_history, inner_iters=inner_total,
                )
                return DcaOutcome(
                    Y_final=y, state=state, status=STATUS_INNER_FAILURE,
                    cert_final=result.cert,
                )
            retried = True
            sigma *= 0.5  # stays halved for all later steps

        steps = k + 1
        inner_total += result.iters
        cert = result.cert
        warm = result.state
        dec = eig(y_new)
        ratio = _rank_ratio(dec)
        f_history.append(f_new)
        rank_history.append(ratio)
        if log is not None:
            log(
                {
                    "k": k,
                    "f_rho": f_new,
                    "delta_y": delta,
                    "lambda1": float(dec.eigenvalues[0]),
                    "rank_ratio": ratio,
                    "inner_iters": result.iters,
                    "inner_converged": result.converged,
                    "residuals": (
                        cert.affine_residual,
                        cert.cone_residual,
                        cert.dual_residual,
                        cert.compl_residual,
                    ),
                    "sigma": sigma,
                    "rho": rho,
                }
            )
        stop = delta <= cfg.tol_outer * max(1.0, float(np.linalg.norm(y.a)))
        y = y_new
        f_cur = f_new
        if stop:
            status = STATUS_STATIONARY
            break

    state = DcaState(
        k=steps, Y=y, W=w, f_history=f_history,
        rank_history=rank_history, inner_iters=inner_total,
    )
    return DcaOutcome(Y_final=y, state=state, status=status, cert_final=cert)


def bisect_rho(
    prob: ConicProblem,
    cfg: DcaConfig,
    y0: SymMatrix | None = None,
    log=None,
    trace=None,
):
    """Search the penalty weight: run at rho_hi, double until the final
    iterate is rank-one (up to `rounds` doublings), then bisect toward
    rho_lo keeping the rank-one outcome with the smallest extracted
    feasible objective (ties prefer the smaller weight).

    Returns (outcome, chosen_rho); the outcome's final rank ratio tells the
    caller whether a rank-one point was ever reached.  ``trace``, when a
    list, collects one record per tested weight.
    """
    from .extract import round_solution

    if cfg.rho_bisection is None:
        raise ModelError("cfg.rho_bisection is not set")
    lo, hi, rounds = cfg.rho_bisection

    def run(rho, phase):
        run_cfg = replace(cfg, params=replace(cfg.params, rho=rho))
        outcome = run_dca(prob, run_cfg, y0=y0, log=log)
        ratio = outcome.state.rank_history[-1]
        rank_one = ratio <= TOL_RANK
        objective = math.inf
        if rank_one:
            objective = round_solution(prob, outcome.Y_final).objective
        if trace is not None:
            trace.append(
                {
                    "rho": rho,
                    "phase": phase,
                    "rank_ratio": ratio,
                    "rank_one": rank_one,
                    "objective": None if objective == math.inf else objective,
                    "status": outcome.status,
                }
            )
        return outcome, rank_one, objective

    outcome, rank_one, objective = run(hi, "initial")
    doublings = 0
    while not rank_one and doublings < rounds:
        hi *= 2.0
        doublings += 1
        outcome, rank_one, objective = run(hi, "doubling")
    if not rank_one:
        return outcome, hi  # never collapsed; caller sees the rank history

    best_outcome, best_rho, best_obj = outcome, hi, objective
    a, b = lo, hi
    for _ in range(rounds):
        if b <= a or (a > 0.0 and b / a <= 1.05):
            break
        mid = math.sqrt(a * b) if a > 0.0 else 0.5 * (a + b)
        outcome, rank_one, objective = run(mid, "bisection")
        if rank_one:
            b = mid
            tol_cmp = 1e-9 * max(1.0, abs(best_obj))
            if objective < best_obj - tol_cmp or (
                objective <= best_obj + tol_cmp and mid < best_rho
            ):
                best_outcome, best_rho, best_obj = outcome, mid, objective
        else:
            a = mid
    return best_outcome, best_rho
