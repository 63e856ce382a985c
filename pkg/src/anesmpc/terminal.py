"""Terminal ingredients for the tracking MPC.

Produces the feedback gain K and terminal weight P from the discrete
algebraic Riccati equation, the extended dynamics of (fast state,
artificial steady input) pairs under the terminal law, and the maximal
admissible invariant set for tracking used as the MPC terminal
constraint.

Sign convention: K is Schur-stabilizing for A + BK and enters the
terminal law as v = K(x - x_a) + v_a; for the positive anesthesia
dynamics its entries come out nonpositive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compensation import InputBox
from .errors import ModelConfigError
from .geometry import Polyhedron, lp_max, remove_redundant
from .pkpd import DiscreteDynamics

DARE_STEP_TOL = 1e-12
DARE_MAX_ITER = 10**5
DARE_RESIDUAL_TOL = 1e-8
INVARIANT_MAX_ITER = 500
_RANK_TOL = 1e-11


@dataclass(frozen=True)
class TerminalIngredients:
    K: np.ndarray
    P: np.ndarray
    psi: np.ndarray
    A_w: np.ndarray
    X_a: Polyhedron
    lam: float
    determination_index: int = 0


def _rank(M) -> int:
    return int(np.linalg.matrix_rank(M, tol=_RANK_TOL))


def _check_stabilizable(A: np.ndarray, B: np.ndarray) -> None:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-12:
            if _rank(np.hstack([A - lam * np.eye(n), B])) < n:
                raise ModelConfigError(
                    f"(A, B) not stabilizable: PBH rank drops at eigenvalue {lam:.6g}"
                )


def _check_observable_sqrtQ(A: np.ndarray, Q: np.ndarray) -> None:
    n = A.shape[0]
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    if w.min() < -1e-10:
        raise ModelConfigError("Q must be positive semidefinite")
    C = V @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ V.T
    obs = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(n)])
    if _rank(obs) < n:
        raise ModelConfigError("(Q^1/2, A) is not observable")


def solve_dare(A, B, Q, R) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-point iteration of the Riccati recursion from P0 = Q.

    Returns (P, K) with P the stabilizing solution and
    K = -(R + B'PB)^-1 B'PA, so A + BK is Schur.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    Q = np.asarray(Q, float)
    R = np.asarray(R, float)
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise ModelConfigError("R must be positive definite") from None
    _check_stabilizable(A, B)
    _check_observable_sqrtQ(A, Q)

    P = Q.copy()
    for _ in range(DARE_MAX_ITER):
        APB = A.T @ P @ B
        P_next = A.T @ P @ A - APB @ np.linalg.solve(R + B.T @ P @ B, APB.T) + Q
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= DARE_STEP_TOL:
            P = P_next
            break
        P = P_next
    else:
        raise ModelConfigError(
            f"Riccati iteration did not converge within {DARE_MAX_ITER} steps"
        )
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


def dare_residual(A, B, Q, R, P) -> float:
    APB = A.T @ P @ B
    res = A.T @ P @ A - P - APB @ np.linalg.solve(R + B.T @ P @ B, APB.T) + Q
    return float(np.max(np.abs(res)))


def controllability_index(A, B) -> int:
    """Smallest k with rank [B, AB, ..., A^(k-1)B] = n."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    n = A.shape[0]
    blocks = [B]
    for k in range(1, n + 1):
        if _rank(np.hstack(blocks)) == n:
            return k
        blocks.append(A @ blocks[-1])
    raise ModelConfigError("(A, B) is not controllable")


def extended_dynamics(dyn: DiscreteDynamics, K: np.ndarray):
    """Transition matrix of w = (x_f, v_a) under the terminal law and the
    steady-input feedthrough psi = K (I - A)^-1 B."""
    A, B = dyn.A_f, dyn.B
    n, m = B.shape
    psi = K @ np.linalg.solve(np.eye(n) - A, B)
    phi = A + B @ K
    A_w = np.block([
        [phi, B @ (np.eye(m) - psi)],
        [np.zeros((m, n)), np.eye(m)],
    ])
    return A_w, psi


def tighten_box(V: InputBox, lam: float) -> InputBox:
    """Shrink a box by factor lam about its center, so the result sits
    strictly inside V for lam < 1 whatever the box position."""
    center = 0.5 * (V.lower + V.upper)
    half = 0.5 * (V.upper - V.lower)
    return InputBox(lower=center - lam * half, upper=center + lam * half)


def build_W_lambda(K: np.ndarray, psi: np.ndarray, V: InputBox, lam: float) -> Polyhedron:
    """Constraint polyhedron on w = (x, v_a): the terminal-law input
    K x + (I - psi) v_a stays in V and v_a stays in the lam-tightened V.

    The state itself is unconstrained. Tightening v_a is what makes the
    invariant-set iteration finitely determined despite the unit
    eigenvalues of the extended dynamics.
    """
    if not 0.0 < lam < 1.0:
        raise ModelConfigError("lambda must lie strictly inside (0, 1)")
    if np.any(V.lower > V.upper):
        raise ModelConfigError("tracking input set is empty")
    m, n = K.shape
    F1 = np.hstack([K, np.eye(m) - psi])
    E = np.hstack([np.zeros((m, n)), np.eye(m)])
    tight = tighten_box(V, lam)
    F = np.vstack([F1, -F1, E, -E])
    g = np.concatenate([V.upper, -V.lower, tight.upper, -tight.lower])
    return Polyhedron(F, g)


def max_admissible_invariant_set(A_w: np.ndarray, W: Polyhedron,
                                 max_iter: int = INVARIANT_MAX_ITER):
    """Constraint-propagation fixpoint: accumulate the rows F A_w^i w <= g
    until every candidate row F A_w^(i+1) is redundant over the current
    set, then strip redundant rows.

    Returns (polyhedron, determination index k*).
    """
    F, g = W.F, W.g
    F_acc, g_acc = F.copy(), g.copy()
    M = np.eye(A_w.shape[0])
    for k in range(max_iter + 1):
        M = M @ A_w
        cand = F @ M
        current = Polyhedron(F_acc, g_acc)
        all_redundant = True
        for j in range(cand.shape[0]):
            res = lp_max(cand[j], current)
            if res.status == "infeasible":
                raise ModelConfigError("constraint polyhedron is empty")
            if res.status == "unbounded" or res.value > g[j] + 1e-9:
                all_redundant = False
                break
        if all_redundant:
            return remove_redundant(current), k
        F_acc = np.vstack([F_acc, cand])
        g_acc = np.concatenate([g_acc, g])
    raise ModelConfigError(
        f"invariant set not finitely determined within {max_iter} iterations; "
        "check lambda < 1"
    )


def compute_terminal_ingredients(dyn: DiscreteDynamics, V: InputBox, Q, R,
                                 lam: float) -> TerminalIngredients:
    """One-stop construction of (K, P, psi, A_w, X_a) for a patient model."""
    P, K = solve_dare(dyn.A_f, dyn.B, Q, R)
    A_w, psi = extended_dynamics(dyn, K)
    W = build_W_lambda(K, psi, V, lam)
    X_a, kstar = max_admissible_invariant_set(A_w, W)
    return TerminalIngredients(K=K, P=P, psi=psi, A_w=A_w, X_a=X_a, lam=lam,
                               determination_index=kstar)


def sample_invariant_set(ing: TerminalIngredients, n_samples: int,
                         seed: int = 0, burn_in: int = 50) -> np.ndarray:
    """Hit-and-run samples from X_a, started at the steady pair of the
    midpoint of the admissible v_a box."""
    F, g = ing.X_a.F, ing.X_a.g
    dim = F.shape[1]
    # interior start: steady state of the tightened box center
    lo, hi = _va_box(ing.X_a)
    va0 = 0.5 * (lo + hi)
    n = dim - va0.size
    phi = ing.A_w[:n, :n]
    Bpsi = ing.A_w[:n, n:]
    x0 = np.linalg.solve(np.eye(n) - phi, Bpsi @ va0)
    w = np.concatenate([x0, va0])
    slack = g - F @ w
    if np.any(slack <= 0.0):
        raise ModelConfigError("hit-and-run start is not interior to X_a")
    rng = np.random.default_rng(seed)
    out = np.empty((n_samples, dim))
    kept = 0
    steps = 0
    while kept < n_samples:
        d = rng.normal(size=dim)
        d /= np.linalg.norm(d)
        Fd = F @ d
        resid = g - F @ w
        with np.errstate(divide="ignore"):
            t_hi = np.min(np.where(Fd > 1e-14, resid / Fd, np.inf))
            t_lo = np.max(np.where(Fd < -1e-14, resid / Fd, -np.inf))
        if np.isfinite(t_hi) and np.isfinite(t_lo) and t_hi > t_lo:
            w = w + rng.uniform(t_lo, t_hi) * d
            steps += 1
            if steps > burn_in:
                out[kept] = w
                kept += 1
    return out


def _va_box(X_a: Polyhedron):
    """Bounding interval of the v_a coordinates of X_a via LPs."""
    dim = X_a.dim
    lo, hi = [], []
    for j in range(4, dim):
        e = np.zeros(dim)
        e[j] = 1.0
        up = lp_max(e, X_a)
        dn = lp_max(-e, X_a)
        if up.status != "optimal" or dn.status != "optimal":
            raise ModelConfigError("X_a unbounded in a steady-input coordinate")
        hi.append(up.value)
        lo.append(-dn.value)
    return np.array(lo), np.array(hi)
