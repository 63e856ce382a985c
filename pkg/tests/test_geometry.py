import itertools

import numpy as np
import pytest

from anesmpc.errors import GeometryError
from anesmpc.geometry import (
    Polyhedron,
    contains,
    load_matrix,
    load_polyhedron,
    lp_max,
    remove_redundant,
    save_matrix,
    save_polyhedron,
)


def box(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = lo.size
    return Polyhedron(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo]))


def vertex_enum_max(c, poly):
    """Brute-force LP oracle: enumerate basic solutions F_S w = g_S."""
    F, g = poly.F, poly.g
    n = poly.dim
    best = -np.inf
    for rows in itertools.combinations(range(poly.nrows), n):
        Fs = F[list(rows)]
        if abs(np.linalg.det(Fs)) < 1e-10:
            continue
        w = np.linalg.solve(Fs, g[list(rows)])
        if np.all(F @ w <= g + 1e-8):
            best = max(best, float(c @ w))
    return best


class TestLpMax:
    def test_unit_interval(self):
        res = lp_max([1.0], box([0.0], [1.0]))
        assert res.status == "optimal"
        assert res.value == pytest.approx(1.0, abs=1e-9)

    def test_triangle(self):
        P = Polyhedron([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 2.0])
        res = lp_max([1.0, 1.0], P)
        assert res.status == "optimal"
        assert res.value == pytest.approx(2.0, abs=1e-9)

    def test_infeasible(self):
        P = Polyhedron([[1.0], [-1.0]], [0.0, -1.0])  # w <= 0 and w >= 1
        assert lp_max([1.0], P).status == "infeasible"

    def test_unbounded(self):
        P = Polyhedron([[-1.0]], [0.0])  # w >= 0
        assert lp_max([1.0], P).status == "unbounded"

    def test_zero_objective(self):
        res = lp_max([0.0, 0.0], box([0, 0], [1, 1]))
        assert res.status == "optimal"
        assert res.value == 0.0

    def test_negative_rhs_needs_phase_one(self):
        # 1 <= w <= 3 written with a negative rhs row
        P = Polyhedron([[1.0], [-1.0]], [3.0, -1.0])
        res = lp_max([-1.0], P)
        assert res.value == pytest.approx(-1.0, abs=1e-9)
        assert res.argmax[0] == pytest.approx(1.0, abs=1e-9)

    def test_random_4d_against_vertex_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            F = np.vstack([np.eye(4), -np.eye(4), rng.normal(size=(6, 4))])
            g = np.concatenate([np.full(8, 2.0), rng.uniform(0.5, 3.0, size=6)])
            P = Polyhedron(F, g)
            c = rng.normal(size=4)
            res = lp_max(c, P)
            assert res.status == "optimal"
            assert np.all(F @ res.argmax <= g + 1e-9)
            assert res.value == pytest.approx(vertex_enum_max(c, P), abs=1e-8)

    def test_weak_duality_bound(self):
        # with c = F'y and y >= 0, any feasible w gives c.w <= y.g
        rng = np.random.default_rng(11)
        for _ in range(25):
            F = np.vstack([np.eye(3), -np.eye(3), rng.normal(size=(4, 3))])
            g = np.concatenate([np.full(6, 1.5), rng.uniform(1.0, 2.0, size=4)])
            y = rng.uniform(0.0, 1.0, size=10)
            c = F.T @ y
            res = lp_max(c, Polyhedron(F, g))
            assert res.status == "optimal"
            assert res.value <= y @ g + 1e-8

    def test_cross_check_against_scipy(self):
        from scipy.optimize import linprog

        rng = np.random.default_rng(23)
        statuses = {"optimal": 0, "infeasible": 0, "unbounded": 0}
        for _ in range(60):
            n = int(rng.integers(2, 9))
            k = int(rng.integers(n, 41))
            F = rng.normal(size=(k, n))
            g = rng.normal(size=k) + rng.uniform(-1.0, 2.0)
            c = rng.normal(size=n)
            mine = lp_max(c, Polyhedron(F, g))
            ref = linprog(-c, A_ub=F, b_ub=g, bounds=[(None, None)] * n,
                          method="highs")
            if ref.status == 2:
                assert mine.status == "infeasible"
            elif ref.status == 3:
                assert mine.status == "unbounded"
            else:
                assert mine.status == "optimal"
                assert mine.value == pytest.approx(-ref.fun, abs=1e-7)
                assert np.all(F @ mine.argmax <= g + 1e-9)
            statuses[mine.status] += 1
        # the battery must actually exercise all three outcomes
        assert all(v > 0 for v in statuses.values()), statuses

    def test_degenerate_vertex(self):
        # four planes through one corner of the unit cube
        F = np.vstack([np.eye(3), -np.eye(3), [[1.0, 1.0, 1.0]]])
        g = np.concatenate([np.ones(3), np.zeros(3), [3.0]])
        res = lp_max([1.0, 1.0, 1.0], Polyhedron(F, g))
        assert res.status == "optimal"
        assert res.value == pytest.approx(3.0, abs=1e-9)


class TestRemoveRedundant:
    def test_dominated_row(self):
        P = Polyhedron([[1.0], [1.0]], [1.0, 2.0])
        R = remove_redundant(P)
        assert R.nrows == 1
        assert R.g[0] == 1.0

    def test_duplicates_collapse(self):
        P = Polyhedron([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
                       [1.0, 1.0, 0.0, 1.0, 0.0])
        R = remove_redundant(P)
        assert R.nrows == 4

    def test_box_with_redundant_cuts(self):
        rng = np.random.default_rng(3)
        for n in (2, 3):
            B = box(-np.ones(n), np.ones(n))
            # 10 cuts strictly outside the box
            D = rng.normal(size=(10, n))
            D /= np.linalg.norm(D, axis=1, keepdims=True)
            extra_g = np.abs(D) @ np.ones(n) + rng.uniform(0.1, 1.0, size=10)
            P = Polyhedron(np.vstack([B.F, D]), np.concatenate([B.g, extra_g]))
            R = remove_redundant(P)
            assert R.nrows == 2 * n

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        F = np.vstack([np.eye(3), -np.eye(3), rng.normal(size=(5, 3))])
        g = np.concatenate([np.ones(6), rng.uniform(0.5, 4.0, size=5)])
        R1 = remove_redundant(Polyhedron(F, g))
        R2 = remove_redundant(R1)
        assert R1.nrows == R2.nrows
        np.testing.assert_allclose(R1.F, R2.F)

    def test_same_set_after_reduction(self):
        rng = np.random.default_rng(9)
        F = np.vstack([np.eye(2), -np.eye(2), rng.normal(size=(8, 2))])
        g = np.concatenate([np.ones(4), rng.uniform(0.2, 2.0, size=8)])
        P = Polyhedron(F, g)
        R = remove_redundant(P)
        pts = rng.uniform(-1.5, 1.5, size=(500, 2))
        for w in pts:
            assert contains(P, w) == contains(R, w)

    def test_empty_raises(self):
        P = Polyhedron([[1.0], [-1.0]], [0.0, -1.0])
        with pytest.raises(GeometryError):
            remove_redundant(P)


class TestContains:
    def test_examples(self):
        B = box(np.zeros(3) - 1, np.ones(3))
        assert contains(B, np.zeros(3))
        assert not contains(B, [2.0, 0.0, 0.0])
        assert contains(B, [1.0 + 1e-10, 0.0, 0.0], tol=1e-9)

    def test_agrees_with_row_arithmetic(self):
        rng = np.random.default_rng(2)
        F = rng.normal(size=(6, 3))
        g = rng.normal(size=6)
        P = Polyhedron(F, g)
        for _ in range(50):
            w = rng.normal(size=3)
            assert contains(P, w, tol=0.0) == bool(np.all(F @ w <= g))


class TestSerialization:
    def test_polyhedron_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        P = Polyhedron(rng.normal(size=(7, 4)) * 1e3, rng.normal(size=7) / 1e5)
        path = tmp_path / "set.poly"
        save_polyhedron(path, P)
        Q = load_polyhedron(path)
        assert np.array_equal(P.F, Q.F)
        assert np.array_equal(P.g, Q.g)

    def test_matrix_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(17)
        M = rng.normal(size=(3, 5)) * np.pi
        path = tmp_path / "mat.txt"
        save_matrix(path, M)
        assert np.array_equal(M, load_matrix(path))

    def test_nan_rejected(self):
        with pytest.raises(GeometryError):
            Polyhedron([[np.nan]], [1.0])
