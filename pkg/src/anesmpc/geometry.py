"""H-representation polyhedra with a dense two-phase simplex LP core.

A polyhedron is stored as ``{w in R^n : F w <= g}``. Everything here is
dense numpy: the sets this package manipulates stay small (<= ~10
variables, at most a few thousand rows), so no sparse machinery is used.

The simplex uses Dantzig pricing by default and falls back to Bland's
rule after a fixed number of pivots to break cycling; feasibility and
optimality tolerances are both 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

FEAS_TOL = 1e-9
OPT_TOL = 1e-9

# pivots with Dantzig pricing before switching to Bland's rule
_BLAND_AFTER = 5000
_MAX_PIVOTS = 200000


@dataclass(frozen=True)
class Polyhedron:
    """The set {w : F w <= g}, with F of shape (k, n) and g of shape (k,)."""

    F: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        g = np.asarray(self.g, dtype=float).ravel()
        if F.shape[0] != g.shape[0]:
            raise GeometryError(
                f"row mismatch: F has {F.shape[0]} rows, g has {g.shape[0]} entries"
            )
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(g))):
            raise GeometryError("polyhedron data contains NaN or Inf")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "g", g)

    @property
    def dim(self) -> int:
        return self.F.shape[1]

    @property
    def nrows(self) -> int:
        return self.F.shape[0]


@dataclass(frozen=True)
class LpResult:
    value: float
    argmax: np.ndarray | None
    status: str  # "optimal" | "infeasible" | "unbounded"


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    T -= np.outer(colvals, T[row])
    # clean the pivot column exactly and clamp tiny rhs drift
    T[:, col] = 0.0
    T[row, col] = 1.0
    rhs = T[:-1, -1]
    rhs[(rhs < 0.0) & (rhs > -1e-11)] = 0.0
    basis[row] = col


def _run_simplex(T: np.ndarray, basis: np.ndarray, ncols: int, start_iter: int = 0) -> int:
    """Drive the tableau T (last row = reduced costs of a minimization,
    last column = rhs) to optimality. Returns the pivot count, raises on
    unboundedness via GeometryError with a marker message."""
    m = T.shape[0] - 1
    it = start_iter
    while True:
        costs = T[-1, :ncols]
        if it < _BLAND_AFTER:
            col = int(np.argmin(costs))
            if costs[col] >= -OPT_TOL:
                return it
        else:  # Bland: first improving index
            neg = np.nonzero(costs < -OPT_TOL)[0]
            if neg.size == 0:
                return it
            col = int(neg[0])
        colvals = T[:m, col]
        pos = colvals > FEAS_TOL
        if not np.any(pos):
            raise GeometryError("_UNBOUNDED_")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colvals[pos]
        best = np.min(ratios)
        # deterministic tie-break: smallest basis index (Bland-compatible)
        cand = np.nonzero(ratios <= best + 1e-12)[0]
        row = int(cand[np.argmin(basis[cand])])
        _pivot(T, basis, row, col)
        it += 1
        if it > _MAX_PIVOTS:
            raise GeometryError("simplex did not converge within the pivot cap")


def lp_max(c, poly: Polyhedron) -> LpResult:
    """Maximize c . w over {F w <= g} with free variables w.

    Returns an LpResult whose status is "optimal", "infeasible" or
    "unbounded"; on "optimal" the argmax satisfies F w <= g + 1e-9.
    """
    c = np.asarray(c, dtype=float).ravel()
    F, g = poly.F, poly.g
    m, n = F.shape
    if c.shape[0] != n:
        raise GeometryError(f"objective has {c.shape[0]} entries for a {n}-dim set")
    if m == 0:
        return LpResult(np.inf, None, "unbounded") if np.any(c != 0) else LpResult(
            0.0, np.zeros(n), "optimal"
        )

    # standard form: w = wp - wn, slacks s; rows with negative rhs are
    # negated and receive an artificial variable for phase I
    neg = g < 0
    sign = np.where(neg, -1.0, 1.0)
    A = np.hstack([F * sign[:, None], -F * sign[:, None], np.diag(sign)])
    b = g * sign
    nstruct = 2 * n + m
    art_rows = np.nonzero(neg)[0]
    nart = art_rows.size

    if nart > 0:
        Aart = np.zeros((m, nart))
        Aart[art_rows, np.arange(nart)] = 1.0
        A = np.hstack([A, Aart])
    ncols = A.shape[1]

    T = np.zeros((m + 1, ncols + 1))
    T[:m, :ncols] = A
    T[:m, -1] = b
    basis = np.empty(m, dtype=int)
    basis[:] = 2 * n + np.arange(m)  # slacks
    basis[art_rows] = nstruct + np.arange(nart)  # artificials

    pivots = 0
    if nart > 0:
        # phase I: minimize the sum of artificials
        T[-1, :] = 0.0
        T[-1, nstruct:ncols] = 1.0
        for r in art_rows:
            T[-1, :] -= T[r, :]
        pivots = _run_simplex(T, basis, ncols)
        if T[-1, -1] < -FEAS_TOL:  # leftover artificial mass
            return LpResult(-np.inf, None, "infeasible")
        # pivot remaining basic artificials out (or zero their rows)
        for r in np.nonzero(basis >= nstruct)[0]:
            piv = np.nonzero(np.abs(T[r, :nstruct]) > FEAS_TOL)[0]
            if piv.size:
                _pivot(T, basis, int(r), int(piv[0]))
        keep = basis < nstruct
        if not np.all(keep):  # redundant rows: drop them
            rows = np.concatenate([np.nonzero(keep)[0], [m]])
            T = T[rows][:, list(range(nstruct)) + [ncols]]
            basis = basis[keep]
            m = basis.size
        else:
            T = T[:, list(range(nstruct)) + [ncols]]
        ncols = nstruct

    # phase II: minimize -c.(wp - wn)
    obj = np.zeros(ncols + 1)
    obj[:n] = -c
    obj[n : 2 * n] = c
    T[-1, :] = obj
    for i in range(m):
        if obj[basis[i]] != 0.0:
            T[-1, :] -= obj[basis[i]] * T[i, :]
    try:
        _run_simplex(T, basis, ncols, start_iter=pivots)
    except GeometryError as exc:
        if "_UNBOUNDED_" in str(exc):
            return LpResult(np.inf, None, "unbounded")
        raise

    x = np.zeros(ncols)
    x[basis] = T[: len(basis), -1]
    w = x[:n] - x[n : 2 * n]
    return LpResult(float(c @ w), w, "optimal")


def contains(poly: Polyhedron, w, tol: float = FEAS_TOL) -> bool:
    """Componentwise membership test F w <= g + tol."""
    w = np.asarray(w, dtype=float).ravel()
    if w.shape[0] != poly.dim:
        raise GeometryError(f"point has {w.shape[0]} entries for a {poly.dim}-dim set")
    return bool(np.all(poly.F @ w <= poly.g + tol))


def is_empty(poly: Polyhedron) -> bool:
    return lp_max(np.zeros(poly.dim), poly).status == "infeasible"


def remove_redundant(poly: Polyhedron) -> Polyhedron:
    """Drop every row whose LP-max over the remaining rows is <= g_j + 1e-9.

    Rows are tested one pass in the order given against the current
    surviving set, so the output is deterministic.
    """
    if is_empty(poly):
        raise GeometryError("cannot reduce an empty polyhedron")
    F, g = poly.F, poly.g
    surviving = list(range(poly.nrows))
    for j in range(poly.nrows):
        others = [i for i in surviving if i != j]
        if not others:
            continue
        res = lp_max(F[j], Polyhedron(F[others], g[others]))
        if res.status == "optimal" and res.value <= g[j] + FEAS_TOL:
            surviving.remove(j)
    return Polyhedron(F[surviving], g[surviving])


def save_matrix(path, M) -> None:
    """Plain-text matrix format: 'rows cols' header then one line per row,
    17 significant digits (bit-exact float round trip)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix(path) -> np.ndarray:
    with open(path) as fh:
        r, c = (int(t) for t in fh.readline().split())
        M = np.array([[float(t) for t in fh.readline().split()] for _ in range(r)])
    if M.shape != (r, c):
        raise GeometryError(f"matrix file {path} does not match its header")
    return M


def save_polyhedron(path, poly: Polyhedron) -> None:
    """Header 'n k', then the k rows of F, then one line holding g."""
    with open(path, "w") as fh:
        fh.write(f"{poly.dim} {poly.nrows}\n")
        for row in poly.F:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        fh.write(" ".join(f"{v:.17g}" for v in poly.g) + "\n")


def load_polyhedron(path) -> Polyhedron:
    with open(path) as fh:
        n, k = (int(t) for t in fh.readline().split())
        F = np.array([[float(t) for t in fh.readline().split()] for _ in range(k)])
        g = np.array([float(t) for t in fh.readline().split()])
    if F.shape != (k, n) or g.shape != (k,):
        raise GeometryError(f"polyhedron file {path} does not match its header")
    return Polyhedron(F, g)
