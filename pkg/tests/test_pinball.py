import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcfcp.federation import Coreset
from gcfcp.pinball import (
    AugmentedQrSolver,
    QrEntry,
    QrProblem,
    assemble_problem,
    degenerate_groups,
    eta_test,
    pinball_loss,
    solve,
)

TINY = 1e-12


def make_coreset(entries):
    return Coreset(entries=tuple(entries), per_atom_digests={})


def random_problem(rng, max_entries=50, max_dim=4, alpha=None):
    d = int(rng.integers(1, max_dim + 1))
    n = int(rng.integers(d + 1, max_entries + 1))
    feats = (rng.random((n, d)) < 0.5).astype(int)
    feats[feats.sum(axis=1) == 0, 0] = 1
    # make sure every group column has mass
    for g in range(d):
        if feats[:, g].sum() == 0:
            feats[int(rng.integers(n)), g] = 1
    entries = [
        QrEntry(tuple(int(b) for b in feats[i]), float(rng.normal()), float(rng.uniform(0.1, 2)))
        for i in range(n)
    ]
    tf = tuple(int(b) for b in feats[int(rng.integers(n))])
    entries.append(QrEntry(tf, float(rng.normal()), float(rng.uniform(0.01, 0.2)), is_test=True))
    a = alpha if alpha is not None else float(rng.uniform(0.05, 0.4))
    return QrProblem(entries=tuple(entries), alpha=a, dimension=d)


def problem_objective(problem, beta):
    total = 0.0
    for e in problem.entries:
        theta = float(np.dot(e.feature, beta))
        total += e.weight * pinball_loss(theta, e.score, problem.alpha)
    return total


class TestPinballLoss:
    def test_zero_residual(self):
        assert pinball_loss(0.0, 0.0, 0.1) == 0.0

    def test_above(self):
        assert pinball_loss(0.0, 1.0, 0.1) == pytest.approx(0.9)

    def test_below(self):
        assert pinball_loss(1.0, 0.0, 0.1) == pytest.approx(0.1)

    def test_alpha_domain(self):
        with pytest.raises(ValueError):
            pinball_loss(0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            pinball_loss(0.0, 0.0, 1.0)

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 0.99))
    def test_nonnegative_zero_iff_equal(self, theta, s, alpha):
        loss = pinball_loss(theta, s, alpha)
        assert loss >= 0.0
        if s == theta:
            assert loss == 0.0


class TestAssemble:
    def test_counts(self):
        cs = make_coreset([((1, 0), 1.0, 0.1), ((0, 1), 2.0, 0.2), ((1, 1), 3.0, 0.3)])
        p = assemble_problem(cs, (1, 0), 0.5, 0.01, 0.1)
        assert len(p.entries) == 4
        assert sum(e.is_test for e in p.entries) == 1
        assert p.dimension == 2

    def test_single_group_features(self):
        cs = make_coreset([((1,), 1.0, 0.5), ((1,), 2.0, 0.5)])
        p = assemble_problem(cs, (1,), 0.0, 0.01, 0.1)
        assert all(e.feature == (1,) for e in p.entries)

    def test_table3_test_weight(self):
        # K=4 clients, sizes 1000/333/333/333, uniform mixture
        w = 0.25 * (1.0 / 1001 + 3.0 / 334)
        assert w == pytest.approx(0.0024953, abs=5e-7)

    def test_errors(self):
        cs = make_coreset([((1, 0), 1.0, 0.1)])
        with pytest.raises(ValueError):
            assemble_problem(cs, (1,), 0.0, 0.01, 0.1)  # dimension mismatch
        with pytest.raises(ValueError):
            assemble_problem(make_coreset([]), (1,), 0.0, 0.01, 0.1)
        with pytest.raises(ValueError):
            assemble_problem(cs, (1, 0), 0.0, 0.01, 1.5)


class TestSolve:
    def test_single_group_quantile(self):
        """With a negligible test entry the fit is the weighted 0.8-quantile."""
        entries = [QrEntry((1,), float(s), 1.0) for s in range(1, 6)]
        entries.append(QrEntry((1,), 0.0, TINY, is_test=True))
        sol = solve(QrProblem(tuple(entries), alpha=0.2, dimension=1))
        assert sol.status == "optimal"
        assert sol.beta[0] == pytest.approx(4.0, abs=1e-8)

    def test_constant_scores_zero_loss(self):
        rng = np.random.default_rng(0)
        feats = [(1, 0), (0, 1), (1, 0), (0, 1)]
        entries = [QrEntry(f, 2.5, float(rng.uniform(0.1, 1))) for f in feats]
        entries.append(QrEntry((1, 0), 2.5, 0.05, is_test=True))
        sol = solve(QrProblem(tuple(entries), alpha=0.1, dimension=2))
        assert sol.primal_objective == pytest.approx(0.0, abs=1e-10)
        for f in set(feats):
            assert float(np.dot(f, sol.beta)) == pytest.approx(2.5, abs=1e-8)

    def test_duality_and_coupling_random(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            p = random_problem(rng)
            sol = solve(p)
            assert sol.status == "optimal"
            gap = abs(sol.primal_objective - sol.dual_objective)
            assert gap <= 1e-8 * (1 + abs(sol.primal_objective))
            feats = np.array(
                [e.feature for e in p.entries if not e.is_test], dtype=float
            )
            tf = np.array(
                next(e.feature for e in p.entries if e.is_test), dtype=float
            )
            coupling = feats.T @ sol.eta + tf * sol.eta_test
            assert np.max(np.abs(coupling)) <= 1e-8

    def test_matches_scipy_dual(self):
        linprog = pytest.importorskip("scipy.optimize").linprog
        rng = np.random.default_rng(2)
        for _ in range(10):
            p = random_problem(rng)
            sol = solve(p)
            F = np.array([e.feature for e in p.entries], dtype=float)
            s = np.array([e.score for e in p.entries])
            w = np.array([e.weight for e in p.entries])
            res = linprog(
                -s,
                A_eq=F.T,
                b_eq=np.zeros(p.dimension),
                bounds=list(zip(-w * p.alpha, w * (1 - p.alpha))),
                method="highs",
            )
            assert res.status == 0
            assert -res.fun == pytest.approx(sol.dual_objective, abs=1e-8)

    def test_breakpoint_oracle_small(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = small_instance(rng)
            sol = solve(p)
            best = brute_force_objective(p)
            assert sol.primal_objective == pytest.approx(best, abs=1e-7)

    def test_scaling_invariance(self):
        rng = np.random.default_rng(4)
        p = random_problem(rng)
        scaled = QrProblem(
            entries=tuple(
                QrEntry(e.feature, e.score, 7.5 * e.weight, e.is_test)
                for e in p.entries
            ),
            alpha=p.alpha,
            dimension=p.dimension,
        )
        b1 = solve(p).beta
        b2 = solve(scaled).beta
        assert np.max(np.abs(b1 - b2)) <= 1e-6

    def test_degenerate_group(self):
        entries = (
            QrEntry((1, 0), 1.0, 1.0),
            QrEntry((1, 0), 2.0, 1.0),
            QrEntry((1, 1), 0.5, 0.1, is_test=True),
        )
        p = QrProblem(entries, alpha=0.1, dimension=2)
        assert degenerate_groups(p) == (1,)
        sol = solve(p)
        assert sol.status == "degenerate_group"
        assert sol.degenerate_groups == (1,)
        with pytest.raises(ValueError):
            eta_test(sol)

    def test_requires_one_test_entry(self):
        p = QrProblem((QrEntry((1,), 1.0, 1.0),), alpha=0.1, dimension=1)
        with pytest.raises(ValueError):
            solve(p)


def small_instance(rng):
    """Dimension <= 2 with unit patterns present so vertices are enumerable."""
    d = int(rng.integers(1, 3))
    n = int(rng.integers(d + 1, 13))
    if d == 2:
        rows = [(1, 0), (0, 1)]
    else:
        rows = [(1,)]
    while len(rows) < n:
        pat = tuple(int(b) for b in (rng.random(d) < 0.6))
        if any(pat):
            rows.append(pat)
    entries = [
        QrEntry(r, float(rng.normal()), float(rng.uniform(0.1, 2))) for r in rows
    ]
    entries.append(
        QrEntry(rows[int(rng.integers(len(rows)))], float(rng.normal()), 0.05, is_test=True)
    )
    return QrProblem(tuple(entries), alpha=float(rng.uniform(0.05, 0.4)), dimension=d)


def brute_force_objective(problem):
    """Exhaustive minimum over the breakpoint lattice (dimension <= 2 only)."""
    d = problem.dimension
    entries = problem.entries
    candidates = []
    if d == 1:
        candidates = [np.array([e.score]) for e in entries]
    else:
        for a, b in itertools.combinations(range(len(entries)), 2):
            M = np.array([entries[a].feature, entries[b].feature], dtype=float)
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            rhs = np.array([entries[a].score, entries[b].score])
            candidates.append(np.linalg.solve(M, rhs))
    return min(problem_objective(problem, beta) for beta in candidates)


class TestEtaTest:
    def build(self, test_score, alpha=0.2, wt=0.1):
        entries = [QrEntry((1,), float(s), 1.0) for s in (1, 2, 3)]
        entries.append(QrEntry((1,), test_score, wt, is_test=True))
        return solve(QrProblem(tuple(entries), alpha=alpha, dimension=1))

    def test_far_above(self):
        sol = self.build(100.0)
        assert eta_test(sol) == pytest.approx(0.1 * 0.8, abs=1e-9)

    def test_far_below(self):
        sol = self.build(-100.0)
        assert eta_test(sol) == pytest.approx(-0.1 * 0.2, abs=1e-9)

    def test_tie_interior(self):
        sol = self.build(3.0)  # fitted value lands on a calibration score
        assert -0.1 * 0.2 - 1e-9 <= eta_test(sol) <= 0.1 * 0.8 + 1e-9

    def test_monotone_in_test_score(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            p = random_problem(rng, max_entries=30)
            cal = [e for e in p.entries if not e.is_test]
            test = next(e for e in p.entries if e.is_test)
            solver = AugmentedQrSolver(
                np.array([e.feature for e in cal], dtype=float),
                np.array([e.score for e in cal]),
                np.array([e.weight for e in cal]),
                p.alpha,
                test.feature,
                test.weight,
            )
            grid = np.linspace(-3, 3, 25)
            values = [solver.solve_at(float(s)).eta_test for s in grid]
            assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))


def test_warm_start_matches_cold():
    rng = np.random.default_rng(6)
    p = random_problem(rng)
    cal = [e for e in p.entries if not e.is_test]
    test = next(e for e in p.entries if e.is_test)
    solver = AugmentedQrSolver(
        np.array([e.feature for e in cal], dtype=float),
        np.array([e.score for e in cal]),
        np.array([e.weight for e in cal]),
        p.alpha,
        test.feature,
        test.weight,
    )
    for s in (-2.0, 0.5, 1.7, -1.1, 3.0):
        warm = solver.solve_at(s)
        cold = solve(
            QrProblem(
                tuple(cal) + (QrEntry(test.feature, s, test.weight, is_test=True),),
                alpha=p.alpha,
                dimension=p.dimension,
            )
        )
        assert warm.dual_objective == pytest.approx(cold.dual_objective, abs=1e-9)
        assert warm.eta_test == pytest.approx(cold.eta_test, abs=1e-8)
