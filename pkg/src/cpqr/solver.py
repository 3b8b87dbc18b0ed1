"""Exact weighted check-loss minimisation as linear programs.

Three variants: plain weighted quantile regression, stacked multi-quantile
regression with non-crossing inequality rows, and the composite estimator
with a single slope vector shared across quantiles.

All problems use the residual-split formulation: residuals are split into
nonnegative parts (u, v) with objective sum w_t (tau u_t + (1-tau) v_t).
The LP backend is HiGHS dual simplex via scipy, which is deterministic for
fixed inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import DegeneracyError, SolverError

FEAS_TOL = 1e-9
ZERO_RESIDUAL_TOL = 1e-7
OBJECTIVE_CHECK_TOL = 1e-10


def check_loss(u: np.ndarray, tau: float) -> np.ndarray:
    """rho_tau(u) = u (tau - I(u < 0))."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0.0))


def _validate_common(targets, covariates, weights):
    y = np.asarray(targets, dtype=float)
    X = np.asarray(covariates, dtype=float)
    w = np.asarray(weights, dtype=float)
    if X.ndim != 2 or len(y) != X.shape[0] or len(w) != len(y):
        raise SolverError("targets, covariates and weights have inconsistent shapes")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X)) and np.all(np.isfinite(w))):
        raise SolverError("non-finite entries in problem data")
    if np.any(w < 0):
        raise SolverError("weights must be nonnegative")
    return y, X, w


@dataclass(frozen=True)
class QrProblem:
    """One weighted quantile regression instance."""

    targets: np.ndarray
    covariates: np.ndarray
    weights: np.ndarray
    tau: float

    def __post_init__(self):
        y, X, w = _validate_common(self.targets, self.covariates, self.weights)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "weights", w)
        if not 0.0 < self.tau < 1.0:
            raise SolverError(f"tau must be in (0, 1), got {self.tau}")
        if int((w > 0).sum()) < X.shape[1]:
            raise SolverError("need at least K strictly positive weights")


@dataclass(frozen=True)
class NonCrossingConstraint:
    """One adjacency constraint between quantile indices (q-1, q).

    Enforces base . d + sum_j min(0, concave_j . d) >= 0 where
    d = beta_q - beta_{q-1}. With no concave terms this is the plain
    linear row base . beta_q >= base . beta_{q-1}; concave terms are
    handled through the LP epigraph encoding (one auxiliary s_j <= 0
    per term with s_j <= concave_j . d).
    """

    pair: tuple[int, int]
    base: np.ndarray
    concave: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(
            self, "concave", tuple(np.asarray(a, dtype=float) for a in self.concave)
        )
        lo, hi = self.pair
        if hi != lo + 1:
            raise SolverError("constraint must reference adjacent quantile indices")
        if not np.all(np.isfinite(self.base)) or any(
            not np.all(np.isfinite(a)) for a in self.concave
        ):
            raise SolverError("non-finite constraint row")

    def margin(self, delta: np.ndarray) -> float:
        """Constraint value at a coefficient difference d = beta_q - beta_{q-1}."""
        val = float(self.base @ delta)
        for a in self.concave:
            val += min(0.0, float(a @ delta))
        return val


@dataclass(frozen=True)
class StackedQrProblem:
    """Joint estimation of several quantiles with shared data and weights."""

    targets: np.ndarray
    covariates: np.ndarray
    weights: np.ndarray
    taus: tuple
    constraints: tuple = ()

    def __post_init__(self):
        y, X, w = _validate_common(self.targets, self.covariates, self.weights)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "weights", w)
        taus = tuple(float(t) for t in self.taus)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if any(not 0.0 < t < 1.0 for t in taus):
            raise SolverError("every tau must be in (0, 1)")
        if np.any(np.diff(taus) <= 0):
            raise SolverError("taus must be strictly increasing")
        q = len(taus)
        for con in self.constraints:
            if not 1 <= con.pair[1] <= q - 1:
                raise SolverError(f"constraint pair {con.pair} out of range for Q={q}")


@dataclass(frozen=True)
class QrSolution:
    """Coefficients plus the recomputed weighted check loss."""

    coefficients: np.ndarray
    objective: float
    status: str


@dataclass(frozen=True)
class OptimalityCertificate:
    passed: bool
    gradients: np.ndarray
    bounds: np.ndarray

    @property
    def margins(self) -> np.ndarray:
        return self.bounds - np.abs(self.gradients)


def _check_rank(X: np.ndarray, w: np.ndarray):
    Xw = X[w > 0]
    rank = np.linalg.matrix_rank(Xw)
    k = X.shape[1]
    if rank < k:
        import scipy.linalg as sla

        # pivoted QR names the columns beyond the numerical rank
        _, _, piv = sla.qr(Xw, mode="economic", pivoting=True)
        bad = sorted(int(j) for j in piv[rank:])
        raise DegeneracyError(
            f"weighted design is rank deficient (rank {rank} < {k}); "
            f"collinear columns: {bad}"
        )


def _linprog(c, A_ub, b_ub, A_eq, b_eq, bounds):
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs-ds",
        options={"presolve": True},
    )
    if res.status != 0:
        raise SolverError(f"LP backend failed (status {res.status}): {res.message}")
    return res


def _plateau_status(y, X, w, taus, betas, constraints=()):
    """Flag degenerate optima by probing coordinate directions.

    The objective is piecewise linear; a zero one-sided directional
    derivative along some probed direction means the minimiser is not
    unique. Only coordinate directions are probed, so this is a cheap
    sufficient check, not an exhaustive one.
    """
    scale = max(float(np.sum(w * np.sum(np.abs(X), axis=1))), 1.0)
    tol = 1e-9 * scale
    betas = np.atleast_2d(betas)
    active = any(
        con.margin(betas[con.pair[1]] - betas[con.pair[0]]) <= FEAS_TOL
        for con in constraints
    )
    for q, tau in enumerate(np.atleast_1d(taus)):
        r = y - X @ betas[q]
        zero = np.abs(r) <= ZERO_RESIDUAL_TOL
        pos, neg = r > ZERO_RESIDUAL_TOL, r < -ZERO_RESIDUAL_TOL
        for k in range(X.shape[1]):
            for sign in (1.0, -1.0):
                a = sign * X[:, k]
                deriv = (
                    -tau * np.sum(w[pos] * a[pos])
                    + (1.0 - tau) * np.sum(w[neg] * a[neg])
                    + np.sum(
                        w[zero]
                        * np.where(a[zero] > 0, a[zero] * (1.0 - tau), -a[zero] * tau)
                    )
                )
                if abs(deriv) <= tol:
                    # movement may be blocked by an active constraint row
                    if not active:
                        return "degenerate-optimal"
    return "optimal"


def solve_weighted_qr(problem: QrProblem) -> QrSolution:
    """Global minimiser of sum_t w_t rho_tau(y_t - x_t' beta)."""
    y, X, w, tau = problem.targets, problem.covariates, problem.weights, problem.tau
    _check_rank(X, w)
    mask = w > 0
    ym, Xm, wm = y[mask], X[mask], w[mask]
    n, k = Xm.shape

    c = np.r_[np.zeros(k), tau * wm, (1.0 - tau) * wm]
    A_eq = sparse.hstack(
        [sparse.csr_matrix(Xm), sparse.eye(n, format="csr"), -sparse.eye(n, format="csr")],
        format="csr",
    )
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    res = _linprog(c, None, None, A_eq, ym, bounds)
    beta = res.x[:k]

    objective = float(np.sum(w * check_loss(y - X @ beta, tau)))
    _cross_check(objective, float(res.fun))
    status = _plateau_status(ym, Xm, wm, tau, beta[None, :])
    return QrSolution(coefficients=beta, objective=objective, status=status)


def _cross_check(recomputed: float, lp_value: float):
    denom = max(abs(recomputed), abs(lp_value), 1.0)
    if abs(recomputed - lp_value) / denom > 1e-8:
        raise SolverError(
            f"objective cross-check failed: recomputed {recomputed!r} vs LP {lp_value!r}"
        )


def solve_stacked_qr(problem: StackedQrProblem) -> QrSolution:
    """Joint multi-quantile fit subject to the supplied non-crossing rows.

    With an empty constraint list the quantiles decouple and each one is
    solved independently, matching solve_weighted_qr exactly.
    """
    taus = problem.taus
    q_count, k = len(taus), problem.covariates.shape[1]

    if not problem.constraints:
        betas = np.empty((q_count, k))
        objective = 0.0
        status = "optimal"
        for q, tau in enumerate(taus):
            sol = solve_weighted_qr(
                QrProblem(problem.targets, problem.covariates, problem.weights, tau)
            )
            betas[q] = sol.coefficients
            objective += sol.objective
            if sol.status != "optimal":
                status = "degenerate-optimal"
        return QrSolution(coefficients=betas, objective=objective, status=status)

    y, X, w = problem.targets, problem.covariates, problem.weights
    _check_rank(X, w)
    mask = w > 0
    ym, Xm, wm = y[mask], X[mask], w[mask]
    n = len(ym)

    n_s = sum(len(con.concave) for con in problem.constraints)
    # layout: [beta (Q*K) | u,v per quantile (2*n*Q) | s (n_s)]
    n_beta = q_count * k
    n_var = n_beta + 2 * n * q_count + n_s

    c = np.zeros(n_var)
    eq_rows, eq_cols, eq_vals, b_eq = [], [], [], []
    Xcoo = sparse.coo_matrix(Xm)
    for q, tau in enumerate(taus):
        row0 = q * n
        c[n_beta + 2 * n * q : n_beta + 2 * n * q + n] = tau * wm
        c[n_beta + 2 * n * q + n : n_beta + 2 * n * (q + 1)] = (1.0 - tau) * wm
        eq_rows.extend(row0 + Xcoo.row)
        eq_cols.extend(q * k + Xcoo.col)
        eq_vals.extend(Xcoo.data)
        for t in range(n):
            eq_rows.extend([row0 + t, row0 + t])
            eq_cols.extend([n_beta + 2 * n * q + t, n_beta + 2 * n * q + n + t])
            eq_vals.extend([1.0, -1.0])
        b_eq.extend(ym)
    A_eq = sparse.coo_matrix(
        (eq_vals, (eq_rows, eq_cols)), shape=(n * q_count, n_var)
    ).tocsr()

    ub_rows, ub_cols, ub_vals, b_ub = [], [], [], []
    row = 0
    s_off = n_beta + 2 * n * q_count
    s_idx = 0
    for con in problem.constraints:
        lo, hi = con.pair
        my_s = list(range(s_idx, s_idx + len(con.concave)))
        s_idx += len(con.concave)
        # -(base . d + sum s_j) <= 0
        for j, coef in enumerate(con.base):
            if coef != 0.0:
                ub_rows.extend([row, row])
                ub_cols.extend([hi * k + j, lo * k + j])
                ub_vals.extend([-coef, coef])
        for s_local in my_s:
            ub_rows.append(row)
            ub_cols.append(s_off + s_local)
            ub_vals.append(-1.0)
        b_ub.append(0.0)
        row += 1
        # s_j - concave_j . d <= 0
        for a, s_local in zip(con.concave, my_s):
            for j, coef in enumerate(a):
                if coef != 0.0:
                    ub_rows.extend([row, row])
                    ub_cols.extend([hi * k + j, lo * k + j])
                    ub_vals.extend([-coef, coef])
            ub_rows.append(row)
            ub_cols.append(s_off + s_local)
            ub_vals.append(1.0)
            b_ub.append(0.0)
            row += 1
    A_ub = sparse.coo_matrix((ub_vals, (ub_rows, ub_cols)), shape=(row, n_var)).tocsr()

    bounds = (
        [(None, None)] * n_beta
        + [(0, None)] * (2 * n * q_count)
        + [(None, 0)] * n_s
    )
    res = _linprog(c, A_ub, np.array(b_ub), A_eq, np.array(b_eq), bounds)
    betas = res.x[:n_beta].reshape(q_count, k)

    objective = 0.0
    for q, tau in enumerate(taus):
        objective += float(np.sum(w * check_loss(y - X @ betas[q], tau)))
    _cross_check(objective, float(res.fun))
    status = _plateau_status(ym, Xm, wm, taus, betas, problem.constraints)
    return QrSolution(coefficients=betas, objective=objective, status=status)


def solve_composite_qr(targets, covariates, weights, taus) -> QrSolution:
    """Shared-slope composite fit: one slope vector for every quantile,
    quantile-specific intercepts constrained nondecreasing in tau."""
    y, X, w = _validate_common(targets, covariates, weights)
    taus = tuple(float(t) for t in np.atleast_1d(taus))
    if any(not 0.0 < t < 1.0 for t in taus) or np.any(np.diff(taus) <= 0):
        raise SolverError("taus must be strictly increasing within (0, 1)")
    if not np.allclose(X[:, 0], 1.0):
        raise SolverError("composite fit expects an intercept in column 1")
    _check_rank(X, w)

    mask = w > 0
    ym, Xs, wm = y[mask], X[mask, 1:], w[mask]
    n = len(ym)
    q_count, k_s = len(taus), Xs.shape[1]

    # layout: [gamma (k_s) | alpha (Q) | u,v per quantile]
    n_head = k_s + q_count
    n_var = n_head + 2 * n * q_count
    c = np.zeros(n_var)
    eq_rows, eq_cols, eq_vals, b_eq = [], [], [], []
    Xcoo = sparse.coo_matrix(Xs)
    for q, tau in enumerate(taus):
        row0 = q * n
        off = n_head + 2 * n * q
        c[off : off + n] = tau * wm
        c[off + n : off + 2 * n] = (1.0 - tau) * wm
        eq_rows.extend(row0 + Xcoo.row)
        eq_cols.extend(Xcoo.col)
        eq_vals.extend(Xcoo.data)
        for t in range(n):
            eq_rows.extend([row0 + t, row0 + t, row0 + t])
            eq_cols.extend([k_s + q, off + t, off + n + t])
            eq_vals.extend([1.0, 1.0, -1.0])
        b_eq.extend(ym)
    A_eq = sparse.coo_matrix(
        (eq_vals, (eq_rows, eq_cols)), shape=(n * q_count, n_var)
    ).tocsr()

    ub_rows, ub_cols, ub_vals = [], [], []
    for q in range(1, q_count):
        ub_rows.extend([q - 1, q - 1])
        ub_cols.extend([k_s + q - 1, k_s + q])
        ub_vals.extend([1.0, -1.0])
    A_ub = None
    b_ub = None
    if q_count > 1:
        A_ub = sparse.coo_matrix(
            (ub_vals, (ub_rows, ub_cols)), shape=(q_count - 1, n_var)
        ).tocsr()
        b_ub = np.zeros(q_count - 1)

    bounds = [(None, None)] * n_head + [(0, None)] * (2 * n * q_count)
    res = _linprog(c, A_ub, b_ub, A_eq, np.array(b_eq), bounds)
    gamma = res.x[:k_s]
    alpha = res.x[k_s:n_head]

    betas = np.column_stack([alpha, np.tile(gamma, (q_count, 1))])
    objective = 0.0
    for q, tau in enumerate(taus):
        objective += float(np.sum(w * check_loss(y - X @ betas[q], tau)))
    _cross_check(objective, float(res.fun))
    return QrSolution(coefficients=betas, objective=objective, status="optimal")


def check_optimality(problem: QrProblem, solution: QrSolution, tol: float = 1e-8) -> OptimalityCertificate:
    """Subgradient certificate for a plain weighted QR solution.

    For each covariate k the nonzero-residual gradient component must lie
    inside the interval spanned by the zero-residual subgradient mass.
    """
    y, X, w, tau = problem.targets, problem.covariates, problem.weights, problem.tau
    beta = np.atleast_1d(solution.coefficients)
    r = y - X @ beta
    zero = np.abs(r) <= ZERO_RESIDUAL_TOL
    sign_term = tau - (r < 0.0)
    grads = np.array(
        [np.sum(w[~zero] * sign_term[~zero] * X[~zero, k]) for k in range(X.shape[1])]
    )
    bound = np.array(
        [np.sum(w[zero] * max(tau, 1.0 - tau) * np.abs(X[zero, k])) for k in range(X.shape[1])]
    )
    scale = max(float(np.sum(w * np.sum(np.abs(X), axis=1))), 1.0)
    passed = bool(np.all(np.abs(grads) <= bound + tol * scale))
    return OptimalityCertificate(passed=passed, gradients=grads, bounds=bound)
