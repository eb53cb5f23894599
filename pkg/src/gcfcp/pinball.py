"""Augmented weighted pinball quantile regression over binary group features.

The primal problem minimizes, over beta, the weighted pinball loss of the
residuals score_e - beta.feature_e (one calibration entry per coreset triple
or raw score, plus a single aggregated test entry). Its LP dual has a very
particular shape: one box-constrained variable eta_e per entry and only
|groups| equality constraints coupling them,

    max  sum_e eta_e * score_e
    s.t. sum_e eta_e * feature_e = 0,
         -weight_e * alpha <= eta_e <= weight_e * (1 - alpha).

We solve that dual directly with a dense bounded-variable revised simplex
whose basis is only |groups| wide. The simplex multipliers of the final
basis are exactly the primal beta, and the eta at a vertex are exact KKT
multipliers, which the threshold binary search requires. Re-solving after a
change of the test score warm-starts from the previous basis, which makes
bisection over the test score cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .groups import MembershipVector

_BOX_TOL = 1e-9
_COUPLING_TOL = 1e-8
_GAP_TOL = 1e-8


class SolverError(RuntimeError):
    """The simplex failed to reach a verified optimum (internal error)."""


@dataclass(frozen=True)
class QrEntry:
    feature: MembershipVector
    score: float
    weight: float
    is_test: bool = False


@dataclass(frozen=True)
class QrProblem:
    entries: tuple[QrEntry, ...]
    alpha: float
    dimension: int


@dataclass(frozen=True)
class QrSolution:
    beta: np.ndarray
    primal_objective: float
    dual_objective: float
    eta: np.ndarray  # one per calibration entry, problem order
    eta_test: float
    status: str  # "optimal" | "degenerate_group"
    degenerate_groups: tuple[int, ...] = ()


def pinball_loss(theta: float, s: float, alpha: float) -> float:
    """Asymmetric absolute loss; minimized over constants at the (1-alpha)-quantile."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha {alpha!r} outside (0, 1)")
    if s >= theta:
        return (1.0 - alpha) * (s - theta)
    return alpha * (theta - s)


def assemble_problem(
    coreset,
    test_feature: MembershipVector,
    test_score: float,
    test_weight: float,
    alpha: float,
) -> QrProblem:
    """One entry per coreset (atom, mean, weight) triple plus the test entry."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha {alpha!r} outside (0, 1)")
    if test_weight <= 0.0:
        raise ValueError("test weight must be positive")
    entries = list(coreset.entries)
    if not entries:
        raise ValueError("coreset is empty")
    dim = len(test_feature)
    qr_entries = []
    for atom, mean, weight in entries:
        if len(atom) != dim:
            raise ValueError(
                f"feature dimension mismatch: atom {atom} vs test {test_feature}"
            )
        qr_entries.append(QrEntry(feature=tuple(atom), score=mean, weight=weight))
    qr_entries.append(
        QrEntry(
            feature=tuple(test_feature),
            score=test_score,
            weight=test_weight,
            is_test=True,
        )
    )
    return QrProblem(entries=tuple(qr_entries), alpha=alpha, dimension=dim)


class _BoundedSimplex:
    """Primal simplex for  max c.x  s.t.  A x = 0,  0 <= x <= up.

    The last ``d`` columns are artificial (bounds [0, 0]) and provide the
    initial basis; all other columns start nonbasic at their lower bound,
    which is feasible because the right-hand side is zero. Dantzig pricing
    with a Bland fallback after a run of degenerate steps.
    """

    def __init__(self, A: np.ndarray, c: np.ndarray, up: np.ndarray):
        self.A = A
        self.c = c
        self.up = up
        self.d, self.N = A.shape
        self.basis = np.arange(self.N - self.d, self.N)
        self.status = np.zeros(self.N, np.int8)  # 0 lower, 1 upper, 2 basic
        self.status[self.basis] = 2
        self.xB = np.zeros(self.d)
        self.y = np.zeros(self.d)

    def refresh(self) -> None:
        upmask = self.status == 1
        rhs = -self.A[:, upmask] @ self.up[upmask]
        self.xB = np.linalg.solve(self.A[:, self.basis], rhs)

    def optimize(self, max_iter: int = 500_000) -> None:
        A, c, up = self.A, self.c, self.up
        price_tol = 1e-9 * (1.0 + float(np.max(np.abs(c))))
        degen_run = 0
        self.refresh()
        for it in range(max_iter):
            B = A[:, self.basis]
            y = np.linalg.solve(B.T, c[self.basis])
            r = c - y @ A
            cand = np.flatnonzero(
                ((self.status == 0) & (r > price_tol))
                | ((self.status == 1) & (r < -price_tol))
            )
            if cand.size == 0:
                self.y = y
                self.refresh()
                return
            if degen_run > 40:
                j = int(cand[0])  # Bland's rule: smallest index
            else:
                j = int(cand[np.argmax(np.abs(r[cand]))])
            entering_up = self.status[j] == 0
            sgn = 1.0 if entering_up else -1.0
            dxB = -sgn * np.linalg.solve(B, A[:, j])

            upB = up[self.basis]
            tmax = up[j]  # bound-flip distance for the entering column
            leave = -1
            neg = np.flatnonzero(dxB < -1e-11)
            if neg.size:
                ratios = np.maximum(self.xB[neg], 0.0) / -dxB[neg]
                k = int(np.argmin(ratios))
                if ratios[k] < tmax - 1e-13:
                    tmax, leave = float(ratios[k]), int(neg[k])
            pos = np.flatnonzero(dxB > 1e-11)
            if pos.size:
                ratios = np.maximum(upB[pos] - self.xB[pos], 0.0) / dxB[pos]
                k = int(np.argmin(ratios))
                if ratios[k] < tmax - 1e-13:
                    tmax, leave = float(ratios[k]), int(pos[k])

            degen_run = degen_run + 1 if tmax < 1e-13 else 0
            self.xB += dxB * tmax
            if leave < 0:
                self.status[j] = 1 - self.status[j]
            else:
                self.status[self.basis[leave]] = 0 if dxB[leave] < 0 else 1
                self.basis[leave] = j
                self.status[j] = 2
                self.xB[leave] = tmax if entering_up else up[j] - tmax
            if it % 512 == 511:
                self.refresh()
        raise SolverError("simplex iteration limit exceeded")

    def primal_values(self) -> np.ndarray:
        x = np.where(self.status == 1, self.up, 0.0)
        x[self.basis] = self.xB
        return x


class AugmentedQrSolver:
    """Stateful solver for one calibration set and one test membership pattern.

    ``solve_at`` re-solves after changing only the test score, warm-starting
    from the previous optimal basis (primal feasibility is unaffected by the
    objective change, so the simplex resumes directly).
    """

    def __init__(
        self,
        features: np.ndarray,
        scores: np.ndarray,
        weights: np.ndarray,
        alpha: float,
        test_feature: MembershipVector,
        test_weight: float,
    ):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha {alpha!r} outside (0, 1)")
        features = np.asarray(features, dtype=float)
        scores = np.asarray(scores, dtype=float)
        weights = np.asarray(weights, dtype=float)
        n_cal, d = features.shape
        if len(test_feature) != d:
            raise ValueError("test feature dimension mismatch")
        self.alpha = alpha
        self.n_cal = n_cal
        self.d = d
        self.test_weight = float(test_weight)

        phi = np.vstack([features, np.asarray(test_feature, dtype=float)])
        w = np.concatenate([weights, [self.test_weight]])
        s = np.concatenate([scores, [0.0]])
        e = n_cal + 1
        A = np.empty((d, 2 * e + d))
        A[:, :e] = phi.T
        A[:, e : 2 * e] = -phi.T
        A[:, 2 * e :] = np.eye(d)
        up = np.concatenate([w * (1.0 - alpha), w * alpha, np.zeros(d)])
        c = np.concatenate([s, -s, np.zeros(d)])
        self._e = e
        self._w = w
        self._phi = phi
        self._s = s
        self._simplex = _BoundedSimplex(A, c, up)
        self._solved = False
        self.solve_count = 0

    def solve_at(self, test_score: float) -> QrSolution:
        sp = self._simplex
        t = self._e - 1
        self._s[t] = test_score
        sp.c[t] = test_score
        sp.c[self._e + t] = -test_score
        sp.optimize()
        self.solve_count += 1
        self._solved = True

        x = sp.primal_values()
        eta = x[: self._e] - x[self._e : 2 * self._e]
        beta = sp.y.copy()
        theta = self._phi @ beta
        resid = self._s - theta
        pin = np.where(resid >= 0.0, (1.0 - self.alpha) * resid, -self.alpha * resid)
        primal = float(self._w @ pin)
        dual = float(eta @ self._s)
        self._verify(eta, beta, primal, dual)
        return QrSolution(
            beta=beta,
            primal_objective=primal,
            dual_objective=dual,
            eta=eta[:-1],
            eta_test=float(eta[-1]),
            status="optimal",
        )

    def _verify(self, eta, beta, primal, dual) -> None:
        lo = -self._w * self.alpha
        hi = self._w * (1.0 - self.alpha)
        if np.any(eta < lo - _BOX_TOL) or np.any(eta > hi + _BOX_TOL):
            raise SolverError("dual box constraint violated")
        coupling = float(np.max(np.abs(self._phi.T @ eta)))
        if coupling > _COUPLING_TOL:
            raise SolverError(f"coupling residual {coupling:.2e} exceeds tolerance")
        if abs(primal - dual) > _GAP_TOL * (1.0 + abs(primal)):
            raise SolverError(f"duality gap {abs(primal - dual):.2e} exceeds tolerance")


def degenerate_groups(problem: QrProblem) -> tuple[int, ...]:
    """Group indices with zero total calibration weight on their column."""
    mass = np.zeros(problem.dimension)
    for entry in problem.entries:
        if not entry.is_test:
            mass += entry.weight * np.asarray(entry.feature, dtype=float)
    return tuple(int(g) for g in np.flatnonzero(mass <= 0.0))


def solve(problem: QrProblem, tolerate_degenerate: bool = False) -> QrSolution:
    """One-shot solve; see AugmentedQrSolver for the warm-started variant."""
    tests = [e for e in problem.entries if e.is_test]
    if len(tests) != 1:
        raise ValueError(f"problem must contain exactly one test entry, got {len(tests)}")
    bad = degenerate_groups(problem)
    if bad and not tolerate_degenerate:
        return QrSolution(
            beta=np.full(problem.dimension, np.nan),
            primal_objective=np.nan,
            dual_objective=np.nan,
            eta=np.array([]),
            eta_test=np.nan,
            status="degenerate_group",
            degenerate_groups=bad,
        )
    cal = [e for e in problem.entries if not e.is_test]
    test = tests[0]
    solver = AugmentedQrSolver(
        features=np.array([e.feature for e in cal], dtype=float),
        scores=np.array([e.score for e in cal]),
        weights=np.array([e.weight for e in cal]),
        alpha=problem.alpha,
        test_feature=test.feature,
        test_weight=test.weight,
    )
    return solver.solve_at(test.score)


def eta_test(solution: QrSolution) -> float:
    """Aggregated dual value of the test entry."""
    if solution.status != "optimal":
        raise ValueError(f"solution status is {solution.status!r}, not optimal")
    return solution.eta_test
