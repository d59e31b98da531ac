"""Solver for the strongly convex inner subproblem

    minimize  <cost, Y> + rho*tr(Y) - rho*<W_k, Y> + (1/(2*sigma))*||Y - Y_k||^2
    over      {A(Y) = b}  intersect  PSD  intersect  nonnegative,

which is the Frobenius projection of V = Y_k - sigma*(cost + rho*(I - W_k))
onto the feasible set, scaled by 1/sigma.

The workhorse is a three-set consensus splitting: each constraint set keeps a
local copy that is projected in closed form, and the consensus step folds in
the smooth quadratic exactly.  The scaled dual variables of the splitting
assemble into a certificate (y, S, Z) for the subproblem's optimality system

    cost + rho*(I - W_k) + A*(y) + S + Z + (Y - Y_k)/sigma = 0,
    S negative semidefinite with <Y, S> = 0,
    Z entrywise nonpositive with <Y, Z> = 0,

whose four residuals (affine, cone, dual, complementarity) are measured
directly at the reported iterate.

Splitting methods alone can crawl on these problems: the feasible set has
empty interior (equality rows plus the orthant force exact zeros, and the
optimal Y is rank-deficient), so the final digits converge sublinearly.  The
solver therefore periodically hands the iterate to an active-set refiner that
walks the faces of the feasible set explicitly: factor Y = H H^T at a guessed
rank, pin the entries guessed active to zero, minimize the projection
objective over that smooth piece by a feasibility-restricted Gauss-Newton
method, then fit multipliers for the full optimality system by least squares.
The fit residual, the multiplier signs, and a nonnegative-least-squares probe
of the pinned entries drive corrections to the guess (pin, unpin, grow or
collapse the rank) until an assembled certificate passes every measured
residual or the walk runs out of moves.  A wrong guess fails the measurement
and the splitting simply continues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import ModelError
from .linalg import SymMatrix, _eigh_desc
from .model import ConicProblem
from .penalty import PenaltyParams

# Residual-balancing schedule for the splitting penalty.
_BALANCE_EVERY = 50
_BALANCE_RATIO = 10.0
_BALANCE_FACTOR = 2.0
_TAU_RANGE = (1e-4, 1e4)

# Stall detection (empty feasible set).
_STALL_CHECK_EVERY = 500
_STALL_MIN_ITER = 1000
_STALL_GAP = 1e-4
_STALL_IMPROVEMENT = 0.999

# Refinement schedule: first attempt, then retry with growing gaps.
_REFINE_FIRST = 250
_REFINE_FIRST_WARM = 5
_REFINE_GAP_CAP = 4000
_REFINE_MAX_DIM = 48

# Face-walk controls.
_REFINE_ROUNDS = 24
_NEWTON_ITERS = 25
_RESTORE_ITERS = 25
_LM_TRIES = 30
_GRIND_MAX = 8
_GRIND_RATIO = 10.0
_BOUNCE_CAP = 2

# Geometry thresholds (all relative to the natural scale of their quantity).
_FACE_EIG_TOL = 1e-3    # initial rank guess keeps eigenvalues above this
_ENTRY_TOL = 1e-3       # initial pins: entries below this
_AUTO_PIN_TOL = 1e-9    # entries the face-QP itself drives to zero get pinned
_NEG_PIN_TOL = 1e-10    # entries this negative get pinned
_WELLPOSED_CUT = 1e-6   # restoration corrects only rows above this
_TANGENT_CUT = 1e-10    # rank cutoff for tangent spaces and multiplier fits
_CERT_GATE = 1e-7       # usable-certificate gate on the fit residual
_SIGN_TARGET = -1e-9    # multiplier sign slack after the subgradient sweep
_RELEASE_GATE = 0.05    # unpin when the probe beats this times the residual
_NEWTON_GIVEUP = 1e-3   # abandon the attempt when the face-QP stalls here
_RANK_COLLAPSE = 1e-6   # drop a factor column below this times the largest


@dataclass(frozen=True)
class InnerConfig:
    """Tolerances and iteration controls for the splitting solver."""

    tol_kkt: float = 1e-6
    max_iters: int = 20000
    step: float = 1.0
    over_relax: float = 1.6

    def __post_init__(self):
        if self.tol_kkt <= 0.0:
            raise ModelError(f"tol_kkt must be positive, got {self.tol_kkt}")
        if self.step <= 0.0:
            raise ModelError(f"step must be positive, got {self.step}")
        if not 1.0 <= self.over_relax <= 1.9:
            raise ModelError(
                f"over_relax must be in [1, 1.9], got {self.over_relax}"
            )
        if self.max_iters < 1:
            raise ModelError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class DualCertificate:
    """Multipliers and measured optimality residuals for one subproblem.

    ``residuals`` is (primal, dual, complementarity) with primal the worse of
    the affine and cone violations; the four underlying measurements are kept
    separately.  All residuals are relative: affine over 1 + ||b||, dual over
    1 + ||cost||_F, cone and complementarity over 1 + ||Y||_F.
    """

    y: np.ndarray
    S: SymMatrix
    Z: SymMatrix
    residuals: tuple
    affine_residual: float
    cone_residual: float
    dual_residual: float
    compl_residual: float
    recovery_residual: float


@dataclass
class SplittingState:
    """Mutable consensus-splitting state, reusable across outer iterations
    for warm starts.  Not shareable between concurrent solves."""

    y: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    tau: float


@dataclass(frozen=True)
class InnerResult:
    Y_next: SymMatrix
    cert: DualCertificate
    iters: int
    converged: bool
    state: SplittingState


def _pos_neg_parts(lam, u):
    """PSD and negative-semidefinite parts from a spectral decomposition."""
    pos = lam > 0.0
    if pos.any():
        up = u[:, pos]
        p = (up * lam[pos]) @ up.T
        p = 0.5 * (p + p.T)
    else:
        p = np.zeros((u.shape[0], u.shape[0]))
    neg = lam < 0.0
    if neg.any():
        un = u[:, neg]
        m = (un * lam[neg]) @ un.T
        m = 0.5 * (m + m.T)
    else:
        m = np.zeros((u.shape[0], u.shape[0]))
    return p, m


class _ActiveSetRefiner:
    """Walks faces of the feasible set to certify the projection exactly.

    One instance per subproblem; ``attempt`` takes the current splitting
    iterate and returns raw multipliers (y, w, S, Z) for the projection of
    ``v_mat`` (before the 1/sigma rescaling) or None when no certified point
    was found from this iterate.
    """

    def __init__(self, amap, v_mat):
        self.amap = amap
        self.v = v_mat
        self.q = v_mat.shape[0]
        self.b = amap.rhs
        self.m = amap.n_rows
        self.scale_b = 1.0 + float(np.linalg.norm(self.b))
        self.amats = [
            a.toarray() if hasattr(a, "toarray") else np.asarray(a, float)
            for a in amap.constraints
        ]
        # Zero-rhs rows with one-signed coefficients pin their support to
        # zero already; multipliers fitted on those entries can be traded
        # into the row's multiplier, which repairs their sign for free.
        self.zero_rows = []
        for k in range(self.m):
            if abs(self.b[k]) > 1e-12:
                continue
            a = self.amats[k]
            if (a >= -1e-14).all() and a.max() > 0:
                self.zero_rows.append((k, 1.0))
            elif (a <= 1e-14).all() and a.min() < 0:
                self.zero_rows.append((k, -1.0))
        self.rep_mask = np.zeros((self.q, self.q), bool)
        for k, _ in self.zero_rows:
            self.rep_mask |= np.abs(self.amats[k]) > 1e-14

    # -- face geometry ---------------------------------------------------

    def _feas_resid(self, h, iu, ju):
        yy = h @ h.T
        return np.concatenate([self.amap.apply(yy) - self.b, yy[iu, ju]])

    def _feas_jac(self, h, iu, ju):
        q, p = h.shape
        jac = np.zeros((self.m + iu.size, q * p))
        for a in range(q):
            for c in range(p):
                dy = np.zeros((q, q))
                dy[a, :] += h[:, c]
                dy[:, a] += h[:, c]
                jac[: self.m, a * p + c] = self.amap.apply(dy)
                jac[self.m:, a * p + c] = dy[iu, ju]
        return jac

    def _restore(self, h, iu, ju):
        """Pull the factor back onto the face, correcting only the
        well-posed part of the residual.  Near-dependent constraint rows
        stay as they are: their residuals sit far below tolerance, and
        chasing them trades objective for phantom feasibility."""
        res = self._feas_resid(h, iu, ju)
        wres = float(np.linalg.norm(res))
        for _ in range(_RESTORE_ITERS):
            jac = self._feas_jac(h, iu, ju)
            uj, sj, vjt = np.linalg.svd(jac, full_matrices=False)
            keep = sj >= _WELLPOSED_CUT * max(float(sj[0]), 1e-30)
            uw = uj[:, keep]
            rw = uw.T @ res
            wres = float(np.linalg.norm(rw))
            if wres <= 1e-12 * self.scale_b:
                break
            step = vjt[keep].T @ (-rw / sj[keep])
            improved = False
            t = 1.0
            for _ in range(10):
                hn = h + t * step.reshape(h.shape)
                rn = self._feas_resid(hn, iu, ju)
                if np.linalg.norm(uw.T @ rn) < wres:
                    h, res = hn, rn
                    improved = True
                    break
                t *= 0.5
            if not improved:
                break
        return h, wres

    def _factor_rank(self, base, p, seed):
        lam, vecs = _eigh_desc(0.5 * (base + base.T))
        h = vecs[:, :p] * np.sqrt(np.maximum(lam[:p], 0.0))
        scale = np.sqrt(max(float(lam[0]), 1e-12))
        rng = np.random.default_rng(seed)
        for c in range(p):
            if np.linalg.norm(h[:, c]) < 1e-8 * scale:
                h[:, c] = 1e-4 * scale * rng.standard_normal(self.q)
        return h

    # -- optimality system on a face --------------------------------------

    def _cert_system(self, h, iu, ju):
        """Columns of the map (w, zeta, B) -> A*(w) + Z(zeta) + U0 B U0'
        whose least-squares fit against V - Y yields the multipliers."""
        q, p = h.shape
        uh, _, _ = np.linalg.svd(h, full_matrices=True)
        u0 = uh[:, p:]
        r = u0.shape[1]
        cols = [self.amats[k].ravel() for k in range(self.m)]
        for e in range(iu.size):
            em = np.zeros((q, q))
            em[iu[e], ju[e]] += 1.0
            em[ju[e], iu[e]] += 1.0
            if iu[e] == ju[e]:
                em[iu[e], iu[e]] = 1.0
            cols.append(em.ravel())
        bi, bj = np.triu_indices(r)
        for t in range(r * (r + 1) // 2):
            bm = np.zeros((r, r))
            bm[bi[t], bj[t]] = 1.0
            bm[bj[t], bi[t]] = 1.0
            cols.append((u0 @ bm @ u0.T).ravel())
        return np.asarray(cols).T, u0, bi, bj

    @staticmethod
    def _cert_fit(mx, t0):
        um, sm, vtm = np.linalg.svd(mx, full_matrices=False)
        keep = sm > _TANGENT_CUT * sm[0]
        sol = vtm[keep].T @ ((um[:, keep].T @ t0.ravel()) / sm[keep])
        cresid = float(np.linalg.norm(mx @ sol - t0.ravel()))
        null = vtm[~keep].T
        return sol, null, cresid

    def _release_signal(self, mx, t0, n_act):
        """Per-pin pressure from the best sign-correct fit: project the pin
        columns out of the span of the free columns, fit what remains of the
        target by nonnegative least squares, and return each pin's residual
        correlation.  A strongly negative component marks an entry that the
        optimality system wants strictly positive, i.e. a wrong pin."""
        t0v = t0.ravel()
        free = np.concatenate(
            [mx[:, : self.m], mx[:, self.m + n_act:]], axis=1
        )
        pin_cols = mx[:, self.m: self.m + n_act]
        uf, sf, _ = np.linalg.svd(free, full_matrices=False)
        rk = 0
        if sf.size:
            rk = int((sf > 1e-12 * max(float(sf[0]), 1e-30)).sum())
        uk = uf[:, :rk]
        ep = pin_cols - uk @ (uk.T @ pin_cols)
        t0p = t0v - uk @ (uk.T @ t0v)
        try:
            nsol, _ = nnls(-ep, t0p, maxiter=10 * max(ep.shape))
        except RuntimeError:
            return None
        return ep.T @ (ep @ (-nsol) - t0p)

    def _sign_fix(self, sol, null, u0, bi, bj, iu, ju):
        """Subgradient sweep inside the fit's null space, clipping the face
        block below PSD and the entry multipliers below zero.  Entries
        covered by a zero-rhs row are exempt (assembly repairs them)."""
        r = u0.shape[1]
        n_act = iu.size
        nonrep = np.nonzero(~self.rep_mask[iu, ju])[0]
        x = sol.copy()
        h1 = h2 = np.inf
        vec_b = None
        for _ in range(400):
            zeta = x[self.m: self.m + n_act]
            if r:
                bm = np.zeros((r, r))
                bm[bi, bj] = x[self.m + n_act:]
                bm[bj, bi] = x[self.m + n_act:]
                lam_b, vec_b = np.linalg.eigh(bm)
                h1 = float(lam_b[-1])
            else:
                h1 = -np.inf
            h2 = float(zeta[nonrep].max()) if nonrep.size else -np.inf
            h = max(h1, h2)
            if h <= _SIGN_TARGET or null.shape[1] == 0:
                break
            gx = np.zeros(x.size)
            if h1 >= h2:
                v1 = vec_b[:, -1]
                gb = np.outer(v1, v1)
                sel = np.zeros(r * (r + 1) // 2)
                for t in range(sel.size):
                    sel[t] = gb[bi[t], bj[t]] * (2.0 if bi[t] != bj[t] else 1.0)
                gx[self.m + n_act:] = sel
            else:
                e = nonrep[int(np.argmax(zeta[nonrep]))]
                gx[self.m + e] = 1.0
            g = null.T @ gx
            gn2 = float(g @ g)
            if gn2 <= 1e-30:
                break
            x = x - null @ (((h - _SIGN_TARGET) / gn2) * g)
        return x, h1, h2, nonrep

    def _assemble(self, x, u0, bi, bj, iu, ju):
        """Split the fitted coefficients into (w, S, Z), moving any positive
        entry multipliers supported on zero-rhs rows into those rows."""
        q = self.q
        r = u0.shape[1]
        n_act = iu.size
        w = x[: self.m].copy()
        zeta = x[self.m: self.m + n_act]
        if r:
            bm = np.zeros((r, r))
            bm[bi, bj] = x[self.m + n_act:]
            bm[bj, bi] = x[self.m + n_act:]
            lam_b, vec_b = np.linalg.eigh(bm)
            s_mat = u0 @ ((vec_b * np.minimum(lam_b, 0.0)) @ vec_b.T) @ u0.T
            s_mat = 0.5 * (s_mat + s_mat.T)
        else:
            s_mat = np.zeros((q, q))
        z_mat = np.zeros((q, q))
        z_mat[iu, ju] = zeta
        z_mat[ju, iu] = zeta
        for k, sign in self.zero_rows:
            a = sign * self.amats[k]
            sup = a > 1e-14
            vals = z_mat[sup] / a[sup]
            c = max(0.0, float(vals.max()))
            if c > 0:
                w[k] += sign * c
                z_mat = np.where(sup, z_mat - c * a, z_mat)
        z_mat = np.minimum(z_mat, 0.0)
        return w, s_mat, z_mat

    # -- face-restricted minimization --------------------------------------

    def _newton(self, h, iu, ju):
        """Minimize ||H H' - V||^2/2 on the face by a damped Newton method
        in the feasible tangent space.  The Hessian model adds the curvature
        of the currently fitted face multiplier to the Gauss-Newton term."""
        q, p = h.shape
        mu = 1e-8
        wc = np.zeros((q, q))
        gred_last = np.inf
        for _ in range(_NEWTON_ITERS):
            h, _ = self._restore(h, iu, ju)
            yy = h @ h.T
            diff = yy - self.v
            obj = 0.5 * float(np.tensordot(diff, diff))
            gh = (2.0 * diff @ h).ravel()
            jac = self._feas_jac(h, iu, ju)
            _, s_, vt_ = np.linalg.svd(jac, full_matrices=True)
            rank = int((s_ > _TANGENT_CUT * max(s_[0], 1.0)).sum())
            nt = vt_[rank:].T
            gred = nt.T @ gh
            gred_last = float(np.linalg.norm(gred))
            if gred_last <= 1e-12 * (1.0 + abs(obj)):
                break
            mx, u0, bi, bj = self._cert_system(h, iu, ju)
            sol, _, _ = self._cert_fit(mx, self.v - yy)
            r = u0.shape[1]
            if r:
                bf = np.zeros((r, r))
                bf[bi, bj] = sol[self.m + iu.size:]
                bf[bj, bi] = sol[self.m + iu.size:]
                wc = -(u0 @ bf @ u0.T)
                wc = 0.5 * (wc + wc.T)
            else:
                wc = np.zeros((q, q))
            lift = np.zeros((q * q, q * p))
            for a in range(q):
                for c in range(p):
                    dy = np.zeros((q, q))
                    dy[a, :] += h[:, c]
                    dy[:, a] += h[:, c]
                    lift[:, a * p + c] = dy.ravel()
            ln = lift @ nt
            hess = ln.T @ ln + 2.0 * (nt.T @ np.kron(wc, np.eye(p)) @ nt)
            ok = False
            for _ in range(_LM_TRIES):
                try:
                    xi = np.linalg.solve(
                        hess + mu * np.eye(hess.shape[0]), -gred
                    )
                except np.linalg.LinAlgError:
                    mu = max(mu * 10, 1e-10)
                    continue
                hn, fres = self._restore(h + (nt @ xi).reshape(q, p), iu, ju)
                yn = hn @ hn.T
                objn = 0.5 * float(np.tensordot(yn - self.v, yn - self.v))
                if fres <= 1e-9 * self.scale_b and objn <= obj - 1e-18:
                    h = hn
                    mu = max(mu / 5.0, 1e-12)
                    ok = True
                    break
                mu *= 10.0
            if not ok:
                break
        yy = h @ h.T
        obj = 0.5 * float(np.tensordot(yy - self.v, yy - self.v))
        return h, gred_last, obj

    def _grow(self, h, iu, ju, esc):
        """Escape a rank-deficient stationary point: append a column along
        the face direction of most positive fitted curvature, line-searched
        over a few magnitudes, accepted only on restored objective descent."""
        if esc is None:
            return None
        u0, bm = esc
        if u0.shape[1] == 0 or h.shape[1] != self.q - u0.shape[1]:
            return None
        lam_b, vec_b = np.linalg.eigh(0.5 * (bm + bm.T))
        if float(lam_b[-1]) <= 0.0:
            return None
        z = u0 @ vec_b[:, -1]
        yy = h @ h.T
        obj = 0.5 * float(np.tensordot(yy - self.v, yy - self.v))
        sv = np.linalg.svd(h, compute_uv=False)
        best = None
        for eps in (1e-1, 3e-2, 1e-2, 3e-3, 1e-3):
            ht = np.concatenate([h, (eps * sv[0]) * z[:, None]], axis=1)
            ht, fres = self._restore(ht, iu, ju)
            if fres > 1e-9 * self.scale_b:
                continue
            yt = ht @ ht.T
            objt = 0.5 * float(np.tensordot(yt - self.v, yt - self.v))
            if objt < obj - 1e-14 and (best is None or objt < best[0]):
                best = (objt, ht)
        return None if best is None else best[1]

    # -- the walk ----------------------------------------------------------

    def attempt(self, y_cur):
        """One full face walk from the splitting iterate.  Returns raw
        (y, w, S, Z) whose residuals the caller must measure, or None."""
        ysym = 0.5 * (y_cur + y_cur.T)
        lam, _ = _eigh_desc(ysym)
        scale = max(float(lam[0]), 1e-12)
        p = max(int((lam >= _FACE_EIG_TOL * scale).sum()), 1)
        ent = max(float(ysym.max()), 1e-12)
        act = (ysym < _ENTRY_TOL * ent) & (ysym < _ENTRY_TOL * ent).T
        pins = {(i, j) for i, j in zip(*np.nonzero(np.triu(act)))}
        bounce = {}
        collapsed = set()
        h = None
        grind = 0
        grind_prev = float("inf")
        stall = 0
        esc = None
        face_sig = None
        import os as _os
        _dbg = bool(_os.environ.get("RD_REFINE_DEBUG"))
        for round_ in range(_REFINE_ROUNDS):
            sig = (p, len(pins))
            if sig != face_sig:
                face_sig = sig
                grind = 0
                grind_prev = float("inf")
            if pins:
                iu = np.fromiter((e[0] for e in sorted(pins)), int)
                ju = np.fromiter((e[1] for e in sorted(pins)), int)
            else:
                iu = np.zeros(0, int)
                ju = np.zeros(0, int)
            if h is None:
                h = self._factor_rank(ysym, p, 1234 + round_)
            elif h.shape[1] != p:
                h = self._factor_rank(h @ h.T, p, 1234 + round_)
            h, fres = self._restore(h, iu, ju)
            if fres > 1e-9 * self.scale_b:
                return None
            h, gred, obj = self._newton(h, iu, ju)
            if _dbg:
                print(f"  r{round_}: p={p} pins={len(pins)} gred={gred:.2e} obj={obj:.6f}", flush=True)
            sv = np.linalg.svd(h, compute_uv=False)
            if p > 1 and sv[-1] < _RANK_COLLAPSE * sv[0]:
                collapsed.add(p)
                p -= 1
                continue
            if gred > _NEWTON_GIVEUP * (1.0 + abs(obj)):
                # give the face-QP fresh damping a couple of times (a rank
                # escape can land far from the new face optimum) before
                # declaring the attempt dead
                stall += 1
                if stall >= 3:
                    return None
                continue
            stall = 0
            yy = h @ h.T
            entscale = max(float(yy.max()), 1e-12)
            # pin the zeros the face-QP itself produced (but never an entry
            # that some earlier correction unpinned: that way lies a cycle)
            zi, zj = np.nonzero(np.triu(np.abs(yy) <= _AUTO_PIN_TOL * entscale))
            auto = {(int(i), int(j)) for i, j in zip(zi, zj)} - pins
            auto = {e for e in auto if bounce.get(e, 0) == 0}
            if auto:
                pins |= auto
                continue
            badi, badj = np.nonzero(
                np.triu(np.minimum(yy, 0.0) < -_NEG_PIN_TOL * entscale)
            )
            if badi.size:
                ok = True
                for i, j in zip(badi, badj):
                    e = (int(i), int(j))
                    bounce[e] = bounce.get(e, 0) + 1
                    if bounce[e] > _BOUNCE_CAP:
                        ok = False
                    pins.add(e)
                if not ok:
                    return None
                continue
            try:
                mx, u0, bi, bj = self._cert_system(h, iu, ju)
                t0 = self.v - yy
                sol, null, cresid = self._cert_fit(mx, t0)
            except np.linalg.LinAlgError:
                return None
            r = u0.shape[1]
            if r:
                bm = np.zeros((r, r))
                bm[bi, bj] = sol[self.m + iu.size:]
                bm[bj, bi] = sol[self.m + iu.size:]
                esc = (u0, bm)
            else:
                esc = None
            if _dbg:
                print(f"   cresid={cresid:.2e} gate={_CERT_GATE * (1.0 + float(np.linalg.norm(t0))):.1e} grind={grind}", flush=True)
            if cresid > _CERT_GATE * (1.0 + float(np.linalg.norm(t0))):
                # fit residual still tracks the face-QP gradient: grind the
                # same face further before touching the guess
                if (
                    cresid <= _GRIND_RATIO * gred
                    and gred > 1e-9 * (1.0 + abs(obj))
                    and grind < _GRIND_MAX
                    and cresid < 0.95 * grind_prev
                ):
                    grind += 1
                    grind_prev = cresid
                    continue
                if iu.size:
                    gsig = self._release_signal(mx, t0, iu.size)
                    if (
                        gsig is not None
                        and gsig.size
                        and float(gsig.min()) < -_RELEASE_GATE * cresid
                    ):
                        e = int(np.argmin(gsig))
                        key = (int(iu[e]), int(ju[e]))
                        bounce[key] = bounce.get(key, 0) + 1
                        if bounce[key] <= _BOUNCE_CAP:
                            pins.discard(key)
                            continue
                if p + 1 > self.q:
                    return None
                hg = self._grow(h, iu, ju, esc)
                if hg is not None:
                    h = hg
                    collapsed.discard(p + 1)
                elif p + 1 in collapsed:
                    return None
                p += 1
                continue
            x, h1, h2, nonrep = self._sign_fix(sol, null, u0, bi, bj, iu, ju)
            if max(h1, h2) > 1e-9:
                if h2 > 1e-9:
                    zeta = x[self.m: self.m + iu.size]
                    rel = [e for e in nonrep if zeta[e] > 1e-9]
                    if not rel:
                        return None
                    ok = True
                    for e in rel:
                        key = (int(iu[e]), int(ju[e]))
                        pins.discard(key)
                        bounce[key] = bounce.get(key, 0) + 1
                        if bounce[key] > _BOUNCE_CAP:
                            ok = False
                    if not ok:
                        return None
                    continue
                if p + 1 > self.q:
                    return None
                hg = self._grow(h, iu, ju, esc)
                if hg is not None:
                    h = hg
                    collapsed.discard(p + 1)
                elif p + 1 in collapsed:
                    return None
                p += 1
                continue
            w, s_mat, z_mat = self._assemble(x, u0, bi, bj, iu, ju)
            return 0.5 * (yy + yy.T), w, s_mat, z_mat
        return None


def solve_subproblem(
    prob: ConicProblem,
    y_k: SymMatrix,
    w_k: SymMatrix,
    params: PenaltyParams,
    cfg: InnerConfig,
    state: SplittingState | None = None,
) -> InnerResult:
    """Solve one proximal subproblem to relative KKT tolerance cfg.tol_kkt.

    Pass the previous call's ``state`` to warm-start when Y_k moves slowly
    across outer iterations.  Raises ModelError when the feasible set is
    detected to be empty (the consensus gap stalls at a positive level).
    """
    amap = prob.constraints
    q = prob.dim
    if y_k.dim != q or w_k.dim != q:
        raise ModelError(
            f"dimension mismatch: problem {q}, Y_k {y_k.dim}, W_k {w_k.dim}"
        )
    b = amap.rhs
    scale_b = 1.0 + float(np.linalg.norm(b))
    if amap.residual(y_k.a) > 1e-4 * max(1.0, float(np.linalg.norm(b))):
        raise ModelError(
            "starting point violates the affine constraints beyond the "
            f"accepted slack: residual {amap.residual(y_k.a):.3e}"
        )

    if params.sigma is None:
        raise ModelError("sigma is unset; resolve it with default_sigma first")
    sigma = params.sigma
    rho = params.rho
    grad = prob.cost.a + rho * (np.eye(q) - w_k.a)
    target = y_k.a - sigma * grad  # projection target V
    scale_cost = 1.0 + prob.cost.norm()
    opnorm_a = float(np.sqrt(max(amap.gram_values[0], 0.0)))
    tol = cfg.tol_kkt

    def measure(y_arr, y_dual, s_mat, z_mat):
        """Exact relative residuals of the optimality system at (y, duals)."""
        scale_y = 1.0 + float(np.linalg.norm(y_arr))
        affine = float(np.linalg.norm(amap.apply(y_arr) - b)) / scale_b
        lam_y, _ = _eigh_desc(y_arr)
        cone = max(0.0, -float(lam_y[-1]), -float(y_arr.min())) / scale_y
        station = (
            grad + amap.adjoint(y_dual) + s_mat + z_mat + (y_arr - y_k.a) / sigma
        )
        dual = float(np.linalg.norm(station)) / scale_cost
        compl = (
            abs(float(np.tensordot(y_arr, s_mat)))
            + abs(float(np.tensordot(y_arr, z_mat)))
        ) / scale_y
        recovery = sigma * float(np.linalg.norm(station)) / scale_y
        return affine, cone, dual, compl, recovery

    def finish(y_arr, y_dual, s_mat, z_mat, iters, res, u1, u2, u3, tau):
        converged = max(res) <= tol
        cert = DualCertificate(
            y=y_dual,
            S=SymMatrix._wrap(s_mat),
            Z=SymMatrix._wrap(z_mat),
            residuals=(max(res[0], res[1]), res[2], res[3]),
            affine_residual=res[0],
            cone_residual=res[1],
            dual_residual=res[2],
            compl_residual=res[3],
            recovery_residual=res[4],
        )
        out_state = SplittingState(y=y_arr.copy(), u1=u1, u2=u2, u3=u3, tau=tau)
        return InnerResult(
            Y_next=SymMatrix._wrap(y_arr),
            cert=cert,
            iters=iters,
            converged=converged,
            state=out_state,
        )

    refiner = _ActiveSetRefiner(amap, target) if q <= _REFINE_MAX_DIM else None

    def refined(y_arr, iters, tau, u1, u2, u3):
        if refiner is None:
            return None
        candidate = refiner.attempt(y_arr)
        if candidate is None:
            return None
        yp, wp, sp, zp = candidate
        res = measure(yp, wp / sigma, sp / sigma, zp / sigma)
        if max(res) > tol:
            return None
        # refit the splitting state so later warm starts resume from the
        # refined point
        u1p = -amap.adjoint(wp) / (sigma * tau)
        u2p = -sp / (sigma * tau)
        u3p = -zp / (sigma * tau)
        return finish(
            yp, wp / sigma, sp / sigma, zp / sigma, iters, res,
            u1p, u2p, u3p, tau,
        )

    alpha = cfg.over_relax
    if state is None:
        y = y_k.a.copy()
        u1 = np.zeros((q, q))
        u2 = np.zeros((q, q))
        u3 = np.zeros((q, q))
        tau = cfg.step
    else:
        y = state.y.copy()
        u1, u2, u3 = state.u1.copy(), state.u2.copy(), state.u3.copy()
        tau = state.tau

    last_gap = np.inf
    cheap_pass = False
    next_refine = _REFINE_FIRST if state is None else _REFINE_FIRST_WARM
    t = 0
    while t < cfg.max_iters:
        t += 1
        # local projections, keeping each projection's byproducts
        v1 = y - u1
        w1 = amap.gram_solve(amap.apply(v1) - b)
        x1 = v1 - amap.adjoint(w1)
        v2 = y - u2
        lam2, vec2 = _eigh_desc(0.5 * (v2 + v2.T))
        x2, neg2 = _pos_neg_parts(lam2, vec2)
        v3 = y - u3
        x3 = np.maximum(v3, 0.0)

        # consensus step folds the quadratic term in exactly
        y_old = y
        x1h = alpha * x1 + (1.0 - alpha) * y_old
        x2h = alpha * x2 + (1.0 - alpha) * y_old
        x3h = alpha * x3 + (1.0 - alpha) * y_old
        y = (target / sigma + tau * ((x1h + u1) + (x2h + u2) + (x3h + u3))) / (
            1.0 / sigma + 3.0 * tau
        )
        u1 = u1 + x1h - y
        u2 = u2 + x2h - y
        u3 = u3 + x3h - y

        r1 = float(np.linalg.norm(x1 - y))
        r2 = float(np.linalg.norm(x2 - y))
        r3 = float(np.linalg.norm(x3 - y))
        scale_y = 1.0 + float(np.linalg.norm(y))

        # exact by the consensus-step optimality identity:
        # grad + (y - y_k)/sigma + A*(tau*w1) + tau*neg2 + tau*min(v3, 0)
        gap_mat = (alpha - 1.0) * ((x1 + x2 + x3) - 3.0 * y_old) + 3.0 * (
            y_old - y
        )
        dual_norm = tau * float(np.linalg.norm(gap_mat))

        affine_bound = opnorm_a * r1 / scale_b
        cone_bound = max(r2, r3) / scale_y
        dual_bound = dual_norm / scale_cost
        neg2_norm = float(np.linalg.norm(np.minimum(lam2, 0.0)))
        z_norm = float(np.linalg.norm(np.minimum(v3, 0.0)))
        compl_bound = tau * (r2 * neg2_norm + r3 * z_norm) / scale_y
        recovery_bound = sigma * dual_norm / scale_y

        if (
            affine_bound <= tol
            and cone_bound <= tol
            and dual_bound <= tol
            and compl_bound <= tol
            and recovery_bound <= tol
        ):
            cheap_pass = True
            break

        if t >= next_refine:
            next_refine = min(2 * next_refine, next_refine + _REFINE_GAP_CAP)
            out = refined(y, t, tau, u1, u2, u3)
            if out is not None:
                return out

        if t % _BALANCE_EVERY == 0:
            r_primal = float(np.sqrt(r1 * r1 + r2 * r2 + r3 * r3))
            s_dual = tau * np.sqrt(3.0) * float(np.linalg.norm(y - y_old))
            lo, hi = _TAU_RANGE
            if r_primal > _BALANCE_RATIO * s_dual and tau * _BALANCE_FACTOR <= hi:
                tau *= _BALANCE_FACTOR
                u1 /= _BALANCE_FACTOR
                u2 /= _BALANCE_FACTOR
                u3 /= _BALANCE_FACTOR
            elif s_dual > _BALANCE_RATIO * r_primal and tau / _BALANCE_FACTOR >= lo:
                tau /= _BALANCE_FACTOR
                u1 *= _BALANCE_FACTOR
                u2 *= _BALANCE_FACTOR
                u3 *= _BALANCE_FACTOR

        if t % _STALL_CHECK_EVERY == 0 and t >= _STALL_MIN_ITER:
            gap = max(r1, r2, r3) / scale_y
            if gap > _STALL_GAP and gap > _STALL_IMPROVEMENT * last_gap:
                raise ModelError(
                    "feasible set appears empty: consensus gap stalled at "
                    f"{gap:.3e} after {t} iterations"
                )
            last_gap = gap

    # final attempt at the refinement before settling for the splitting's
    # own certificate
    if not cheap_pass:
        out = refined(y, t, tau, u1, u2, u3)
        if out is not None:
            return out

    # assemble the certificate from the last iteration's projections and
    # measure all residuals directly at the reported iterate
    y = 0.5 * (y + y.T)
    y_dual = tau * w1
    s_mat = tau * neg2
    z_mat = tau * np.minimum(v3, 0.0)
    res = measure(y, y_dual, s_mat, z_mat)
    return finish(y, y_dual, s_mat, z_mat, t, res, u1, u2, u3, tau)
