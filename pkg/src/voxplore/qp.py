"""Dense strictly convex QP via a dual active-set method.

    minimize   0.5 x^T G x + g^T x
    subject to A_eq x  = b_eq
               A_in x <= b_in

Starts at the unconstrained minimum and activates violated constraints one
at a time, so no feasible starting point is needed and infeasibility
surfaces as an unbounded dual step. The working set stays linearly
independent because rows only activate along directions of positive
curvature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_TOL_FEAS = 1e-9
_TOL_CURV = 1e-11
_TOL_DUAL = 1e-12


class FactoredHessian:
    """Cholesky-prefactored G, reusable across many solves."""

    def __init__(self, G: np.ndarray):
        self.mat = np.asarray(G, dtype=np.float64)
        self.cho = cho_factor(self.mat)

    def solve(self, v):
        return cho_solve(self.cho, v)


@dataclass
class QPResult:
    status: str  # optimal | infeasible | stalled
    x: np.ndarray | None = None
    lam_eq: np.ndarray | None = None
    lam_in: np.ndarray | None = None
    active: list[int] = field(default_factory=list)  # inequality row ids
    iterations: int = 0


def solve_qp(
    hess,
    g: np.ndarray,
    a_eq: np.ndarray,
    b_eq: np.ndarray,
    a_in: np.ndarray,
    b_in: np.ndarray,
    warm_active: list[int] | None = None,
    max_iter: int = 5000,
) -> QPResult:
    """Solve the QP. ``hess`` is a matrix or a FactoredHessian.
    ``warm_active`` replays inequality rows from a previous active set."""
    if not isinstance(hess, FactoredHessian):
        hess = FactoredHessian(hess)
    g = np.asarray(g, dtype=np.float64)
    n = len(g)
    a_eq = np.asarray(a_eq, dtype=np.float64).reshape(-1, n)
    b_eq = np.asarray(b_eq, dtype=np.float64).reshape(-1)
    a_in = np.asarray(a_in, dtype=np.float64).reshape(-1, n)
    b_in = np.asarray(b_in, dtype=np.float64).reshape(-1)
    meq = len(b_eq)
    n_in = len(b_in)

    # Working set: constraint rows (equalities possibly sign-flipped) and
    # their multipliers. ids < meq are equalities, >= meq inequalities.
    w_rows: list[np.ndarray] = []
    w_ids: list[int] = []
    w_sign: list[float] = []
    lam: list[float] = []
    x = -hess.solve(g)
    iters = 0

    def directions(a_p):
        gi_ap = hess.solve(a_p)
        if not w_rows:
            return gi_ap, np.empty(0)
        nw = np.array(w_rows)
        gi_nt = hess.solve(nw.T)
        m = nw @ gi_nt
        rhs = nw @ gi_ap
        try:
            r = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            r = np.linalg.lstsq(m, rhs, rcond=None)[0]
        z = gi_ap - gi_nt @ r
        return z, r

    def add_constraint(a_p, b_p, wid, sign) -> str:
        nonlocal x, iters
        lam_p = 0.0
        while True:
            iters += 1
            if iters > max_iter:
                return "stalled"
            z, r = directions(a_p)
            t1 = np.inf
            blocker = -1
            for j, w in enumerate(w_ids):
                if w >= meq and r[j] > _TOL_DUAL:
                    tj = lam[j] / r[j]
                    if tj < t1 - 1e-15:
                        t1 = tj
                        blocker = j
            s = float(a_p @ x - b_p)
            curv = float(a_p @ z)
            t2 = s / curv if curv > _TOL_CURV else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                if s <= _TOL_FEAS and wid < meq:
                    return "implied"  # dependent but consistent equality
                return "infeasible"
            x = x - t * z
            for j in range(len(lam)):
                lam[j] -= t * r[j]
            lam_p += t
            if t2 <= t1:
                w_rows.append(a_p)
                w_ids.append(wid)
                w_sign.append(sign)
                lam.append(lam_p)
                return "added"
            del w_rows[blocker], w_ids[blocker], w_sign[blocker], lam[blocker]

    def finish(status) -> QPResult:
        lam_eq_out = np.zeros(meq)
        lam_in_out = np.zeros(n_in)
        for w, sgn, l in zip(w_ids, w_sign, lam):
            if w < meq:
                lam_eq_out[w] = sgn * l
            else:
                lam_in_out[w - meq] = l
        return QPResult(
            status=status,
            x=x.copy(),
            lam_eq=lam_eq_out,
            lam_in=lam_in_out,
            active=sorted(w - meq for w in w_ids if w >= meq),
            iterations=iters,
        )

    if warm_active:
        warm_x = _warm_start(
            hess, g, a_eq, b_eq, a_in, b_in, warm_active, w_rows, w_ids, w_sign, lam
        )
        if warm_x is not None:
            x = warm_x

    # Equalities activate first and are never dropped afterwards.
    warm_eqs = {w for w in w_ids if w < meq}
    for e in range(meq):
        if e in warm_eqs:
            continue
        s = float(a_eq[e] @ x - b_eq[e])
        if s >= 0:
            res = add_constraint(a_eq[e], b_eq[e], e, 1.0)
        else:
            res = add_constraint(-a_eq[e], -b_eq[e], e, -1.0)
        if res in ("infeasible", "stalled"):
            return QPResult(status=res, iterations=iters)

    while True:
        if n_in == 0:
            return finish("optimal")
        slack = a_in @ x - b_in
        p = int(np.argmax(slack))
        if float(slack[p]) <= _TOL_FEAS:
            return finish("optimal")
        res = add_constraint(a_in[p], b_in[p], meq + p, 1.0)
        if res in ("infeasible", "stalled"):
            return QPResult(status=res, iterations=iters)


def _warm_start(hess, g, a_eq, b_eq, a_in, b_in, warm_active, w_rows, w_ids, w_sign, lam):
    """Replay an active set: solve its equality KKT system, dropping
    negative inequality multipliers until dual-feasible. Returns the warm
    x, or None to fall back to a cold start."""
    meq = len(b_eq)
    n = len(g)
    ids = list(range(meq)) + [
        meq + j for j in sorted(set(warm_active)) if 0 <= j < len(b_in)
    ]
    for _ in range(len(ids) + 1):
        rows = [a_eq[w] if w < meq else a_in[w - meq] for w in ids]
        rhs = [b_eq[w] if w < meq else b_in[w - meq] for w in ids]
        m = len(ids)
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = hess.mat
        if m:
            nw = np.array(rows)
            kkt[:n, n:] = nw.T
            kkt[n:, :n] = nw
        full_rhs = np.concatenate([-g, np.array(rhs)]) if m else -g
        try:
            sol = np.linalg.solve(kkt, full_rhs)
        except np.linalg.LinAlgError:
            return None
        x = sol[:n]
        mult = sol[n:]
        neg = [j for j in range(m) if ids[j] >= meq and mult[j] < 0]
        if not neg:
            w_rows.extend(rows)
            w_ids.extend(ids)
            w_sign.extend([1.0] * m)
            # Equality multipliers keep their sign; the stationarity
            # invariant G x + g + sum(lam * row) = 0 must hold exactly.
            lam.extend(float(v) for v in mult)
            return x
        del ids[neg[0]]
    return None


def kkt_residual(hess, g, a_eq, b_eq, a_in, b_in, res: QPResult) -> float:
    """Max-norm KKT residual: stationarity, primal feasibility and
    complementary slackness at the solution."""
    G = hess.mat if isinstance(hess, FactoredHessian) else np.asarray(hess)
    x = res.x
    stat = G @ x + g
    if len(b_eq):
        stat = stat + a_eq.T @ res.lam_eq
    if len(b_in):
        stat = stat + a_in.T @ res.lam_in
    out = float(np.abs(stat).max())
    if len(b_eq):
        out = max(out, float(np.abs(a_eq @ x - b_eq).max()))
    if len(b_in):
        slack = a_in @ x - b_in
        out = max(out, float(slack.max()), float(np.abs(res.lam_in * slack).max()))
    return out
