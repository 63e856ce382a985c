import itertools

import numpy as np
import pytest

from anesmpc.qp import QpProblem, qp_solve


def enumerate_active_sets(p):
    """Oracle: solve the KKT system of every active-set guess, keep primal
    feasible candidates, return the best objective and minimizer."""
    n = p.nvars
    q = p.A_in.shape[0]
    best_obj, best_z = np.inf, None
    for k in range(q + 1):
        for combo in itertools.combinations(range(q), k):
            C = np.vstack([p.A_eq, p.A_in[list(combo)]])
            d = np.concatenate([p.b_eq, p.b_in[list(combo)]])
            m = C.shape[0]
            KKT = np.block([[p.H, C.T], [C, np.zeros((m, m))]])
            rhs = np.concatenate([-p.f, d])
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError:
                continue
            z = sol[:n]
            if q and np.any(p.A_in @ z > p.b_in + 1e-8):
                continue
            if p.A_eq.size and np.any(np.abs(p.A_eq @ z - p.b_eq) > 1e-8):
                continue
            obj = 0.5 * z @ p.H @ z + p.f @ z
            if obj < best_obj - 1e-12:
                best_obj, best_z = obj, z
    return best_obj, best_z


def random_qp(rng, n, q, neq=0):
    M = rng.normal(size=(n, n))
    H = M @ M.T + (0.5 + rng.uniform()) * np.eye(n)
    f = rng.normal(size=n)
    A_in = rng.normal(size=(q, n)) if q else None
    # keep the feasible set nonempty: make a random point feasible
    z0 = rng.normal(size=n)
    b_in = A_in @ z0 + rng.uniform(0.1, 1.0, size=q) if q else None
    A_eq = rng.normal(size=(neq, n)) if neq else None
    b_eq = A_eq @ z0 if neq else None
    return QpProblem(H, f, A_eq, b_eq, A_in, b_in)


class TestBasics:
    def test_scalar_bound(self):
        # min z^2 s.t. z >= 1
        p = QpProblem([[2.0]], [0.0], A_in=[[-1.0]], b_in=[-1.0])
        sol = qp_solve(p)
        assert sol.status == "optimal"
        assert sol.z[0] == pytest.approx(1.0, abs=1e-9)

    def test_projection_onto_line(self):
        # min ||z - (1,1)||^2 s.t. z1 + z2 = 1
        p = QpProblem(2 * np.eye(2), [-2.0, -2.0], A_eq=[[1.0, 1.0]], b_eq=[1.0])
        sol = qp_solve(p)
        np.testing.assert_allclose(sol.z, [0.5, 0.5], atol=1e-9)

    def test_unconstrained(self):
        H = np.diag([2.0, 4.0])
        f = np.array([-2.0, -8.0])
        sol = qp_solve(QpProblem(H, f))
        np.testing.assert_allclose(sol.z, [1.0, 2.0], atol=1e-10)

    def test_infeasible_reported(self):
        p = QpProblem(np.eye(1), [0.0], A_in=[[1.0], [-1.0]], b_in=[0.0, -1.0])
        sol = qp_solve(p)
        assert sol.status == "infeasible"
        assert sol.z is None
        assert sol.infeasibility_report

    def test_equality_only_matches_kkt_solve(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = random_qp(rng, n=5, q=0, neq=2)
            sol = qp_solve(p)
            m = p.A_eq.shape[0]
            KKT = np.block([[p.H, p.A_eq.T], [p.A_eq, np.zeros((m, m))]])
            ref = np.linalg.solve(KKT, np.concatenate([-p.f, p.b_eq]))[:5]
            np.testing.assert_allclose(sol.z, ref, atol=1e-8)


class TestOracle:
    def test_100_random_qps_match_enumeration(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            n = int(rng.integers(2, 7))
            q = int(rng.integers(0, 4))
            p = random_qp(rng, n, q)
            sol = qp_solve(p)
            assert sol.status == "optimal", f"trial {trial}"
            ref_obj, ref_z = enumerate_active_sets(p)
            assert sol.objective == pytest.approx(ref_obj, abs=1e-6)
            np.testing.assert_allclose(sol.z, ref_z, atol=1e-6)
            assert sol.kkt_residuals.max() <= 1e-8

    def test_with_equalities_against_enumeration(self):
        rng = np.random.default_rng(19)
        for _ in range(30):
            p = random_qp(rng, n=4, q=3, neq=1)
            sol = qp_solve(p)
            assert sol.status == "optimal"
            ref_obj, _ = enumerate_active_sets(p)
            assert sol.objective == pytest.approx(ref_obj, abs=1e-6)


class TestProperties:
    def test_warm_start_same_optimum(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = random_qp(rng, n=5, q=3)
            cold = qp_solve(p)
            warm = qp_solve(p, warm_start=cold.z + rng.normal(scale=0.1, size=5))
            assert warm.status == "optimal"
            assert warm.objective == pytest.approx(cold.objective, abs=1e-8)

    def test_scaling_invariance_of_argmin(self):
        rng = np.random.default_rng(8)
        for alpha in (0.01, 1.0, 250.0):
            p = random_qp(rng, n=4, q=2)
            ps = QpProblem(alpha * p.H, alpha * p.f, None, None, p.A_in, p.b_in)
            z1 = qp_solve(p).z
            z2 = qp_solve(ps).z
            np.testing.assert_allclose(z1, z2, atol=1e-8)

    def test_psd_hessian_regularized(self):
        # H singular along one direction; minimizer still well defined on
        # the feasible segment
        H = np.array([[2.0, 0.0], [0.0, 0.0]])
        f = np.array([0.0, 1.0])
        p = QpProblem(H, f, A_in=np.vstack([np.eye(2), -np.eye(2)]),
                      b_in=[1.0, 1.0, 1.0, 1.0])
        sol = qp_solve(p)
        assert sol.status == "optimal"
        assert sol.z[1] == pytest.approx(-1.0, abs=1e-6)

    def test_kkt_residual_fields(self):
        rng = np.random.default_rng(23)
        p = random_qp(rng, n=3, q=2, neq=1)
        sol = qp_solve(p)
        r = sol.kkt_residuals
        for v in (r.stationarity, r.primal_eq, r.primal_in, r.complementarity):
            assert v <= 1e-8

    def test_midsize_warm_start_consistency(self):
        # MPC-sized problems: any warm start, however bad, must land on
        # the same optimum (KKT certifies global optimality for convex QP)
        rng = np.random.default_rng(31)
        for _ in range(10):
            p = random_qp(rng, n=30, q=60, neq=2)
            cold = qp_solve(p)
            assert cold.status == "optimal"
            assert cold.kkt_residuals.max() <= 1e-8
            for scale in (1.0, 100.0):
                warm = qp_solve(p, warm_start=rng.normal(scale=scale, size=30))
                assert warm.status == "optimal"
                assert warm.objective == pytest.approx(cold.objective, abs=1e-7)
