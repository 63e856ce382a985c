"""Tracking MPC with artificial steady-state input.

Every sampling instant solves a condensed QP in the decision vector
z = (v_0, ..., v_{N-1}, v_a): the predicted fast states are eliminated
through the nominal dynamics, the artificial steady state is tied to the
steady input by x_a = (I - A)^-1 B v_a, and the terminal pair
(x_N, v_a) is constrained to the maximal admissible invariant set. The
applied drug rate is u = v_0 + D x_s, the tracking input plus the
slow-state compensation.

With n = 4 and N = 24 the dense Hessian is 50 x 50, small enough that
condensing beats a sparse KKT formulation, and it makes the warm start a
plain index shift of the previous solution.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import qp
from .compensation import DISTURBANCE_MODES, CompensationGain, InputBox
from .errors import ModelConfigError, SolverInfeasibleError
from .pkpd import DiscreteDynamics, PdParams, as_fast_state, as_slow_state, steady_output_row
from .terminal import TerminalIngredients, controllability_index

logger = logging.getLogger(__name__)

EQ_TOL = 1e-8
TERMINAL_TOL = 1e-8


@dataclass(frozen=True)
class VdSpec:
    """Offset cost q (a . v_a - b)^2 + l . v_a on the steady input."""

    weight: float = 10.0
    coeffs: tuple = (1.0, -0.5)
    offset: float = 0.0
    linear: tuple = (0.0, 0.0)

    def __call__(self, v_a) -> float:
        v_a = np.asarray(v_a, float)
        a = np.asarray(self.coeffs, float)
        l = np.asarray(self.linear, float)
        return float(self.weight * (a @ v_a - self.offset) ** 2 + l @ v_a)


@dataclass(frozen=True)
class MpcConfig:
    N: int = 24
    Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 10.0, 1.0, 10.0]))
    R: np.ndarray = field(default_factory=lambda: np.eye(2))
    epsilon: float = 1e-6
    lam: float = 0.99
    vd: VdSpec = field(default_factory=VdSpec)
    y_ref: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, float))
        object.__setattr__(self, "R", np.asarray(self.R, float))
        if self.N < 1:
            raise ModelConfigError("horizon N must be at least 1")
        if not self.epsilon > 0.0:
            raise ModelConfigError("epsilon must be positive")
        if not 0.0 < self.lam < 1.0:
            raise ModelConfigError(
                "lambda must lie in (0, 1): the terminal invariant set is "
                "only finitely determined for lambda < 1"
            )


@dataclass(frozen=True)
class SteadyInputSet:
    """Admissible steady inputs: the line g_eff . v_a = c intersected with
    the epsilon-shrunk tracking input box."""

    g_eff: np.ndarray
    c: float
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class ControlOutput:
    u: np.ndarray
    v0: np.ndarray
    v_a: np.ndarray
    x_a: np.ndarray
    predicted_xf: np.ndarray
    cost: float
    solver_status: str
    qp_iterations: int = 0


def build_steady_input_set(disc: DiscreteDynamics, pd: PdParams, y_ref: float,
                           V: InputBox, epsilon: float) -> SteadyInputSet:
    g_eff, c = steady_output_row(disc, pd, y_ref)
    lower = V.lower + epsilon
    upper = V.upper - epsilon
    zs = SteadyInputSet(g_eff=g_eff, c=c, lower=lower, upper=upper)
    steady_segment(zs)  # raises if empty
    return zs


def steady_segment(zs: SteadyInputSet):
    """Endpoints of the admissible steady-input segment (line clipped to
    the box). Raises when the intersection is empty."""
    g1, g2 = zs.g_eff
    if abs(g2) < 1e-15:
        raise ModelConfigError("steady output row is degenerate in the second input")
    # parametrize by v1 and clip the induced v2 range to its bounds
    lo1, hi1 = zs.lower[0], zs.upper[0]
    lo2, hi2 = zs.lower[1], zs.upper[1]
    # v2(v1) = (c - g1 v1)/g2, monotone in v1 (sign of -g1/g2)
    v1_from_v2 = lambda v2: (zs.c - g2 * v2) / g1 if abs(g1) > 1e-15 else None
    cands = []
    for v1 in (lo1, hi1):
        v2 = (zs.c - g1 * v1) / g2
        if lo2 - 1e-12 <= v2 <= hi2 + 1e-12:
            cands.append((v1, min(max(v2, lo2), hi2)))
    for v2 in (lo2, hi2):
        v1 = v1_from_v2(v2)
        if v1 is not None and lo1 - 1e-12 <= v1 <= hi1 + 1e-12:
            cands.append((min(max(v1, lo1), hi1), v2))
    if not cands:
        raise ModelConfigError("no admissible steady input for the BIS target")
    pts = np.array(cands)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return pts[order[0]], pts[order[-1]]


class Controller:
    """Precomputed QP template plus the per-step solve."""

    def __init__(self, disc: DiscreteDynamics, pd: PdParams, gain: CompensationGain,
                 V: InputBox, U: InputBox, zs: SteadyInputSet,
                 ingredients: TerminalIngredients, cfg: MpcConfig):
        ctrl_idx = controllability_index(disc.A_f, disc.B)
        if cfg.N < ctrl_idx:
            raise ModelConfigError(
                f"horizon N={cfg.N} below the controllability index {ctrl_idx}"
            )
        self.disc = disc
        self.pd = pd
        self.D = gain.D
        self.V = V
        self.U = U
        self.zs = zs
        self.ing = ingredients
        self.cfg = cfg

        A, B = disc.A_f, disc.B
        N = cfg.N
        n, m = B.shape
        self.n, self.m, self.N = n, m, N
        nz = m * N + m  # v_0 .. v_{N-1}, v_a
        self.nz = nz

        # state prediction maps: x_k = A^k x0 + S_k v
        powers = [np.eye(n)]
        for _ in range(N):
            powers.append(A @ powers[-1])
        self.powers = powers
        S = np.zeros(((N + 1) * n, m * N))
        for k in range(1, N + 1):
            for j in range(k):
                S[k * n:(k + 1) * n, j * m:(j + 1) * m] = powers[k - 1 - j] @ B
        Gx = np.vstack(powers)
        self.S = S
        self.Gx = Gx
        self.T = np.linalg.solve(np.eye(n) - A, B)  # x_a = T v_a

        # deviation map M: z -> stacked (x_k - x_a), constant part Gx x0
        M = np.hstack([S, -np.tile(self.T, (N + 1, 1))])
        Qbar = np.zeros(((N + 1) * n, (N + 1) * n))
        for k in range(N):
            Qbar[k * n:(k + 1) * n, k * n:(k + 1) * n] = cfg.Q
        Qbar[N * n:, N * n:] = ingredients.P
        Mv = np.hstack([np.eye(m * N), -np.tile(np.eye(m), (N, 1))])
        Rbar = np.kron(np.eye(N), cfg.R)

        a_sel = np.zeros(nz)
        a_sel[m * N:] = np.asarray(cfg.vd.coeffs, float)
        H = 2.0 * (M.T @ Qbar @ M + Mv.T @ Rbar @ Mv
                   + cfg.vd.weight * np.outer(a_sel, a_sel))
        self.H = 0.5 * (H + H.T)
        self.Qbar = Qbar
        # f(x0) = 2 M'Qbar Gx x0 + constant pieces from the offset cost;
        # the dropped constant (Gx x0)'Qbar(Gx x0) + w b^2 is added back
        # when reporting the true objective
        self.f_x0_map = 2.0 * (M.T @ Qbar @ Gx)
        f_const = -2.0 * cfg.vd.weight * cfg.vd.offset * a_sel
        f_const[m * N:] += np.asarray(cfg.vd.linear, float)
        self.f_const = f_const
        self.obj_const_offset = cfg.vd.weight * cfg.vd.offset**2

        # inequality template
        rows_v = np.hstack([np.eye(m * N), np.zeros((m * N, m))])
        E_a = np.hstack([np.zeros((m, m * N)), np.eye(m)])
        F_xa, g_xa = ingredients.X_a.F, ingredients.X_a.g
        Fx, Fv = F_xa[:, :n], F_xa[:, n:]
        S_N = S[N * n:, :]
        term_rows = np.hstack([Fx @ S_N, Fv])
        self.A_in = np.vstack([
            rows_v, -rows_v,
            E_a, -E_a,
            term_rows,
        ])
        self.b_in_base = np.concatenate([
            np.tile(V.upper, N), -np.tile(V.lower, N),
            zs.upper, -zs.lower,
            g_xa,
        ])
        self.term_slice = slice(2 * m * N + 2 * m, 2 * m * N + 2 * m + g_xa.size)
        self.Fx_AN = Fx @ powers[N]
        self.A_eq = np.concatenate([np.zeros(m * N), zs.g_eff])[None, :]
        self.b_eq = np.array([zs.c])

        self._warm: np.ndarray | None = None
        self._clamp_warned = False

    # -- helpers -----------------------------------------------------------

    def _assemble(self, x0: np.ndarray) -> qp.QpProblem:
        f = self.f_x0_map @ x0 + self.f_const
        b_in = self.b_in_base.copy()
        b_in[self.term_slice] -= self.Fx_AN @ x0
        return qp.QpProblem(self.H, f, self.A_eq, self.b_eq, self.A_in, b_in)

    def _objective_constant(self, x0: np.ndarray) -> float:
        cvec = self.Gx @ x0
        return float(cvec @ self.Qbar @ cvec) + self.obj_const_offset

    def _shift_warm_start(self, z: np.ndarray) -> np.ndarray:
        m, N = self.m, self.N
        v = z[: m * N].reshape(N, m)
        v_a = z[m * N:]
        x = self.predict(self._last_x0, z)[-1]
        x_a = self.T @ v_a
        v_term = self.ing.K @ (x - x_a) + v_a
        v_new = np.vstack([v[1:], v_term])
        return np.concatenate([v_new.ravel(), v_a])

    def predict(self, x0: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Predicted fast states x_0 .. x_N under the input plan in z."""
        stacked = self.Gx @ x0 + self.S @ z[: self.m * self.N]
        return stacked.reshape(self.N + 1, self.n)

    def reset(self) -> None:
        self._warm = None

    def retarget(self, y_ref: float) -> None:
        """Move the BIS set-point mid-run by re-deriving the steady output
        level c (the terminal set and input boxes stay valid); raises when
        the new target has no admissible steady input."""
        zs = build_steady_input_set(self.disc, self.pd, y_ref, self.V,
                                    self.cfg.epsilon)
        self.zs = zs
        self.b_eq = np.array([zs.c])
        self.cfg = replace(self.cfg, y_ref=float(y_ref))

    # -- main entry --------------------------------------------------------

    def control_step(self, x_f, x_s) -> ControlOutput:
        x_f = as_fast_state(x_f)
        x_s = as_slow_state(x_s)
        if np.any(x_f < 0.0) or np.any(x_s < 0.0):
            raise ModelConfigError("negative concentrations passed to the controller")
        self._last_x0 = x_f
        problem = self._assemble(x_f)
        warm = self._warm
        sol = qp.qp_solve(problem, warm_start=warm)
        if sol.status != "optimal":
            report = sol.infeasibility_report or sol.kkt_residuals
            raise SolverInfeasibleError(
                f"tracking QP returned status '{sol.status}'", report=report
            )
        z = sol.z
        self._warm = self._shift_warm_start(z)

        m, N = self.m, self.N
        v0 = z[:m].copy()
        v_a = z[m * N:].copy()
        x_a = self.T @ v_a
        predicted = self.predict(x_f, z)
        cost = sol.objective + self._objective_constant(x_f)

        u = v0 + self.D @ x_s
        clamped = np.clip(u, self.U.lower, self.U.upper)
        if not np.allclose(u, clamped, atol=1e-12):
            if not self._clamp_warned:
                logger.warning(
                    "applied input clamped to the input box (u=%s); the "
                    "disturbance bound is too small for this trajectory", u
                )
                self._clamp_warned = True
            u = clamped

        self._validate_output(v0, v_a, predicted)
        return ControlOutput(
            u=u, v0=v0, v_a=v_a, x_a=x_a, predicted_xf=predicted,
            cost=cost, solver_status=sol.status, qp_iterations=sol.iterations,
        )

    def _validate_output(self, v0, v_a, predicted) -> None:
        if np.any(v0 < self.V.lower - EQ_TOL) or np.any(v0 > self.V.upper + EQ_TOL):
            raise SolverInfeasibleError(f"tracking input {v0} left the tightened box")
        if abs(self.zs.g_eff @ v_a - self.zs.c) > EQ_TOL:
            raise SolverInfeasibleError("steady-output equality violated at the optimum")
        w_term = np.concatenate([predicted[-1], v_a])
        slack = self.ing.X_a.F @ w_term - self.ing.X_a.g
        if np.max(slack) > TERMINAL_TOL:
            worst = int(np.argmax(slack))
            raise SolverInfeasibleError(
                f"terminal pair violates invariant-set row {worst} by {slack[worst]:.3g}"
            )


def build_controller(disc: DiscreteDynamics, pd: PdParams, gain: CompensationGain,
                     V: InputBox, U: InputBox, zs: SteadyInputSet,
                     ingredients: TerminalIngredients, cfg: MpcConfig) -> Controller:
    return Controller(disc, pd, gain, V, U, zs, ingredients, cfg)


@dataclass(frozen=True)
class ControllerFileConfig:
    """Everything a controller config file carries beyond MpcConfig."""

    mpc: MpcConfig
    Ts: float
    U: InputBox
    disturbance_bound_mode: str
    m_bar: np.ndarray | None
    settling_band: float
    plant_substeps: int


def load_controller_config(path) -> ControllerFileConfig:
    """Read the [controller] section of an INI-style tuning file."""
    path = Path(path)
    cfg = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cfg.read(path):
        raise ModelConfigError(f"cannot read controller config {path}")
    if not cfg.has_section("controller"):
        raise ModelConfigError(f"{path}: missing [controller] section")
    sec = cfg["controller"]

    def floats(key, count):
        raw = sec.get(key)
        if raw is None:
            raise ModelConfigError(f"{path}: missing key '{key}'")
        try:
            vals = [float(t) for t in raw.replace(",", " ").split()]
        except ValueError as exc:
            raise ModelConfigError(f"{path}: key '{key}' is not numeric") from exc
        if len(vals) != count:
            raise ModelConfigError(f"{path}: key '{key}' needs {count} values")
        return np.array(vals)

    mpc_cfg = MpcConfig(
        N=int(floats("N", 1)[0]),
        Q=np.diag(floats("Q_diag", 4)),
        R=np.diag(floats("R_diag", 2)),
        epsilon=float(floats("epsilon", 1)[0]),
        lam=float(floats("lambda", 1)[0]),
        vd=VdSpec(
            weight=float(floats("vd_weight", 1)[0]),
            coeffs=tuple(floats("vd_coeffs", 2)),
            offset=float(floats("vd_offset", 1)[0]),
            linear=tuple(floats("vd_linear", 2)) if sec.get("vd_linear") else (0.0, 0.0),
        ),
        y_ref=float(floats("y_ref", 1)[0]),
    )
    mode = sec.get("disturbance_bound_mode", "simulated").strip()
    if mode not in DISTURBANCE_MODES:
        raise ModelConfigError(
            f"{path}: disturbance_bound_mode must be one of {DISTURBANCE_MODES}"
        )
    m_bar = floats("m_bar", 2) if mode == "fixed" else None
    return ControllerFileConfig(
        mpc=mpc_cfg,
        Ts=float(floats("Ts", 1)[0]),
        U=InputBox(lower=floats("u_min", 2), upper=floats("u_max", 2)),
        disturbance_bound_mode=mode,
        m_bar=m_bar,
        settling_band=float(floats("settling_band", 1)[0]) if sec.get("settling_band") else 2.0,
        plant_substeps=int(floats("plant_substeps", 1)[0]) if sec.get("plant_substeps") else 1,
    )
