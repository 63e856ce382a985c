"""Dense convex QP solver: primal active set with warm starting.

Solves  min 0.5 z'Hz + f'z  s.t.  A_eq z = b_eq,  A_in z <= b_in.

Equality constraints stay in the KKT basis throughout; inequality rows
enter and leave a working set. Problems in this package are small
(~50 variables, a few hundred rows) and solved repeatedly with nearby
data, which is exactly where an exact active-set method with warm starts
beats first-order solvers: KKT residuals come out at linear-algebra
precision. Pivot ordering is fixed, so solves are deterministic.

When a starting point is missing or infeasible, a phase-I LP (reusing
the simplex from :mod:`anesmpc.geometry`) produces one, or an
infeasibility certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry

KKT_TOL = 1e-8
_FEAS_TOL = 1e-9
_REG_EIG_FLOOR = 1e-10
_REG_DELTA = 1e-9


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        n = H.shape[0]
        f = np.asarray(self.f, dtype=float).ravel()
        if H.shape != (n, n) or f.shape != (n,):
            raise ValueError("H must be square and f match its dimension")
        Aeq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, float))
        beq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).ravel()
        Ain = np.zeros((0, n)) if self.A_in is None else np.atleast_2d(np.asarray(self.A_in, float))
        bin_ = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, float).ravel()
        if Aeq.shape != (beq.size, n) or Ain.shape != (bin_.size, n):
            raise ValueError("constraint matrix/vector dimensions are inconsistent")
        for name, val in (("H", H), ("f", f), ("A_eq", Aeq), ("b_eq", beq),
                          ("A_in", Ain), ("b_in", bin_)):
            object.__setattr__(self, name, val)

    @property
    def nvars(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal_eq: float
    primal_in: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_in,
                   self.complementarity)


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray | None
    objective: float
    status: str  # "optimal" | "infeasible" | "max_iter"
    kkt_residuals: KktResiduals | None
    iterations: int = 0
    active_set: tuple = ()
    infeasibility_report: list = field(default_factory=list)


def _phase_one(p: QpProblem) -> tuple[np.ndarray | None, list]:
    """LP start: min sum(s) s.t. A_in z - s <= b_in, s >= 0, A_eq z = b_eq.

    Returns (feasible z, []) or (None, report of irreducibly violated rows).
    """
    n, q, peq = p.nvars, p.A_in.shape[0], p.A_eq.shape[0]
    nf = n + q
    blocks_F = []
    blocks_g = []
    if q:
        blocks_F.append(np.hstack([p.A_in, -np.eye(q)]))
        blocks_g.append(p.b_in)
        blocks_F.append(np.hstack([np.zeros((q, n)), -np.eye(q)]))
        blocks_g.append(np.zeros(q))
    if peq:
        blocks_F.append(np.hstack([p.A_eq, np.zeros((peq, q))]))
        blocks_g.append(p.b_eq)
        blocks_F.append(np.hstack([-p.A_eq, np.zeros((peq, q))]))
        blocks_g.append(-p.b_eq)
    if not blocks_F:
        return np.zeros(n), []
    poly = geometry.Polyhedron(np.vstack(blocks_F), np.concatenate(blocks_g))
    c = np.zeros(nf)
    c[n:] = -1.0
    res = geometry.lp_max(c, poly)
    if res.status == "infeasible":
        return None, [("equalities inconsistent", np.inf)]
    if res.status == "optimal" and -res.value <= 1e-8:
        return res.argmax[:n], []
    z = res.argmax[:n] if res.argmax is not None else None
    report = []
    if z is not None and q:
        viol = p.A_in @ z - p.b_in
        report = [(int(i), float(v)) for i, v in enumerate(viol) if v > 1e-8]
    return None, report


def _residuals(p: QpProblem, z: np.ndarray, lam_eq: np.ndarray,
               lam_in: np.ndarray) -> KktResiduals:
    grad = p.H @ z + p.f
    if p.A_eq.size:
        grad = grad + p.A_eq.T @ lam_eq
    if p.A_in.size:
        grad = grad + p.A_in.T @ lam_in
    stat = float(np.max(np.abs(grad))) if grad.size else 0.0
    peq = float(np.max(np.abs(p.A_eq @ z - p.b_eq))) if p.A_eq.size else 0.0
    slack = p.A_in @ z - p.b_in if p.A_in.size else np.zeros(0)
    pin = float(max(0.0, np.max(slack))) if slack.size else 0.0
    comp = float(np.max(np.abs(lam_in * slack))) if slack.size else 0.0
    return KktResiduals(stat, peq, pin, comp)


def _nullspace(C: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal basis of null(C) via full QR of C'."""
    if C.shape[0] == 0:
        return np.eye(n)
    Qfull, Rfull = np.linalg.qr(C.T, mode="complete")
    rank = int(np.sum(np.abs(np.diag(Rfull[: min(C.shape), :])) > 1e-11))
    return Qfull[:, rank:]


def qp_solve(p: QpProblem, warm_start: np.ndarray | None = None,
             max_iter: int = 500) -> QpSolution:
    """Solve the QP; on "optimal" all KKT residuals are <= 1e-8."""
    n = p.nvars
    H = 0.5 * (p.H + p.H.T)
    if n and float(np.min(np.linalg.eigvalsh(H))) < _REG_EIG_FLOOR:
        H = H + _REG_DELTA * np.eye(n)

    z = None
    if warm_start is not None:
        z0 = np.asarray(warm_start, dtype=float).ravel().copy()
        if z0.shape == (n,):
            if p.A_eq.size:  # re-project onto the equalities
                r = p.A_eq @ z0 - p.b_eq
                if np.max(np.abs(r)) > 1e-12:
                    z0 = z0 - p.A_eq.T @ np.linalg.lstsq(
                        p.A_eq @ p.A_eq.T, r, rcond=None)[0]
            ok_in = (not p.A_in.size) or np.all(p.A_in @ z0 <= p.b_in + _FEAS_TOL)
            if ok_in:
                z = z0
    if z is None:
        z, report = _phase_one(p)
        if z is None:
            return QpSolution(None, np.inf, "infeasible", None,
                              infeasibility_report=report)

    Ain, bin_ = p.A_in, p.b_in
    q = Ain.shape[0]
    # working set: active rows at the start, kept linearly independent
    work: list[int] = []
    if q:
        resid = Ain @ z - bin_
        for i in np.nonzero(resid >= -_FEAS_TOL)[0]:
            cand = np.vstack([p.A_eq, Ain[work + [int(i)]]]) if (work or p.A_eq.size) \
                else Ain[[int(i)]]
            if np.linalg.matrix_rank(cand, tol=1e-11) == cand.shape[0]:
                work.append(int(i))

    lam_eq = np.zeros(p.A_eq.shape[0])
    lam_in = np.zeros(q)
    for it in range(1, max_iter + 1):
        C = np.vstack([p.A_eq, Ain[work]]) if (work or p.A_eq.size) else np.zeros((0, n))
        grad = H @ z + p.f
        Z = _nullspace(C, n)
        if Z.shape[1]:
            Hr = Z.T @ H @ Z
            pdir = Z @ np.linalg.solve(Hr, -(Z.T @ grad))
        else:
            pdir = np.zeros(n)

        if np.max(np.abs(pdir), initial=0.0) <= 1e-11:
            # stationary on the working set: check multipliers
            if C.shape[0]:
                lam = np.linalg.lstsq(C.T, -grad, rcond=None)[0]
            else:
                lam = np.zeros(0)
            neq = p.A_eq.shape[0]
            lam_eq = lam[:neq]
            lam_in = np.zeros(q)
            lam_in[work] = lam[neq:]
            if not work or np.min(lam[neq:]) >= -KKT_TOL:
                obj = float(0.5 * z @ p.H @ z + p.f @ z)
                res = _residuals(p, z, lam_eq, np.maximum(lam_in, 0.0))
                return QpSolution(z, obj, "optimal", res, it, tuple(sorted(work)))
            drop = int(np.argmin(lam[neq:]))
            work.pop(drop)
            continue

        alpha = 1.0
        block = -1
        if q:
            inactive = [i for i in range(q) if i not in work]
            if inactive:
                Ai = Ain[inactive]
                denom = Ai @ pdir
                slack = bin_[inactive] - Ai @ z
                with np.errstate(divide="ignore", invalid="ignore"):
                    steps = np.where(denom > 1e-12, slack / denom, np.inf)
                steps = np.maximum(steps, 0.0)
                jmin = int(np.argmin(steps))
                if steps[jmin] < alpha:
                    alpha = float(steps[jmin])
                    block = inactive[jmin]
        z = z + alpha * pdir
        if block >= 0:
            cand = np.vstack([p.A_eq, Ain[work + [block]]])
            if np.linalg.matrix_rank(cand, tol=1e-11) == cand.shape[0]:
                work.append(block)
            # a dependent blocking row leaves the step truncated; the next
            # multiplier pass reshuffles the working set

    obj = float(0.5 * z @ p.H @ z + p.f @ z)
    res = _residuals(p, z, lam_eq, np.maximum(lam_in, 0.0))
    return QpSolution(z, obj, "max_iter", res, max_iter, tuple(sorted(work)))
