"""Minimum-distance quadratic programs over linear inequality constraints.

Solves   minimize ||x - x0||^2   subject to   G x >= h
with an operator-splitting (ADMM, OSQP-style) iteration followed by an
active-set polish that solves the KKT system of the detected active
constraints, so returned solutions are accurate to machine precision when
the polish succeeds.  Infeasible problems are detected from the dual
certificate (Farkas direction) and reported with the conflicting rows.

Both the barrier-learning QP (x0 = 0, thousands of rows, sparse) and the
per-step safety-filter QP (1-2 variables, a handful of rows) go through
this one solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class QpInfeasibleError(RuntimeError):
    def __init__(self, report):
        self.report = report
        super().__init__(str(report))


@dataclass
class InfeasibilityReport:
    """Names the constraints that jointly block feasibility."""

    certificate_rows: list          # rows with large weight in the Farkas certificate
    violations: list                # (row, violation) at the least-violation point
    message: str = ""

    def __str__(self):
        worst = ", ".join(f"row {i}: {v:.3e}" for i, v in self.violations[:5])
        return f"QP infeasible; most-violated constraints: {worst or 'n/a'}"


@dataclass
class QpSolution:
    x: np.ndarray
    status: str                     # solved | infeasible | max_iter
    iterations: int
    residuals: np.ndarray           # G x - h per row (empty if infeasible)
    objective: float
    polished: bool = False
    report: InfeasibilityReport | None = None
    duals: np.ndarray = field(default_factory=lambda: np.empty(0))


def _least_violation_point(G, h, x0, iters=400):
    """Minimize sum of squared violations, for diagnostics only."""
    Gd = np.asarray(G.todense()) if sp.issparse(G) else np.asarray(G)
    x = np.zeros(Gd.shape[1]) if x0 is None else np.array(x0, dtype=float)
    lip = np.linalg.norm(Gd, 2) ** 2 + 1e-12
    for _ in range(iters):
        viol = np.maximum(h - Gd @ x, 0.0)
        grad = -Gd.T @ viol
        x = x - grad / lip
    return x, np.maximum(h - Gd @ x, 0.0)


def _polish(G, h, x0, x, y, tol):
    """Active-set refinement seeded from the ADMM iterate.

    Repeatedly solves the equality-constrained problem on the working set,
    dropping rows with negative multipliers and adding violated rows, until
    the KKT conditions hold.  Returns the refined x, or None on failure.
    """
    resid = G @ x - h
    active = set(np.flatnonzero((resid < tol) | (y < -tol)).tolist())

    def eq_solve(rows):
        if not rows:
            return np.array(x0, dtype=float), np.zeros(0)
        idx = sorted(rows)
        Ga = G[idx].toarray() if sp.issparse(G) else np.asarray(G)[idx]
        # min ||x-x0||^2 s.t. Ga x = h_a  ->  x = x0 + Ga^T lam, lam >= 0 at optimum
        lam, *_ = np.linalg.lstsq(Ga @ Ga.T, h[idx] - Ga @ x0, rcond=None)
        return x0 + Ga.T @ lam, lam

    for _ in range(40):
        xs, lam = eq_solve(active)
        idx = sorted(active)
        if lam.size and np.min(lam) < -1e-10:
            active.discard(idx[int(np.argmin(lam))])
            continue
        viol = G @ xs - h
        worst = int(np.argmin(viol)) if len(viol) else 0
        if len(viol) and viol[worst] < -1e-10:
            if worst in active:
                return None  # numerical trouble, keep the ADMM iterate
            active.add(worst)
            continue
        return xs
    return None


def solve_min_dist_qp(G, h, x0=None, *, max_iter: int = 10_000,
                      eps_abs: float = 1e-8, eps_rel: float = 1e-8,
                      raise_on_infeasible: bool = False) -> QpSolution:
    """Solve min ||x - x0||^2 s.t. G x >= h.

    G may be dense or scipy-sparse, shape (m, n); h shape (m,).  With no
    constraints the answer is x0 (zero when x0 is None).
    """
    if sp.issparse(G):
        G = G.tocsr()
        m, n = G.shape
    else:
        G = np.atleast_2d(np.asarray(G, dtype=float))
        m, n = G.shape
    h = np.asarray(h, dtype=float).ravel()
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel()
    if m == 0:
        return QpSolution(x=x0.copy(), status="solved", iterations=0,
                          residuals=np.empty(0), objective=0.0, polished=True)

    # row equilibration: scale each constraint to unit inf-norm
    if sp.issparse(G):
        row_max = np.maximum(np.abs(G).max(axis=1).toarray().ravel(), 1e-12)
    else:
        row_max = np.maximum(np.abs(G).max(axis=1), 1e-12)
    D = 1.0 / row_max
    Gs = sp.diags(D) @ G if sp.issparse(G) else G * D[:, None]
    hs = h * D

    q = -x0
    sigma = 1e-6
    alpha = 1.6
    rho = 0.1
    use_sparse = sp.issparse(Gs) or (n + m) > 60

    def factor(rho_val):
        if use_sparse:
            A = sp.csc_matrix(Gs)
            kkt = sp.bmat([[sp.eye(n) * (1.0 + sigma), A.T],
                           [A, -sp.eye(m) / rho_val]], format="csc")
            lu = spla.splu(kkt)
            return lu.solve
        kkt = np.block([[np.eye(n) * (1.0 + sigma), Gs.T],
                        [Gs, -np.eye(m) / rho_val]])
        lu_piv = np.linalg.inv(kkt)  # small systems only
        return lambda rhs: lu_piv @ rhs

    solve = factor(rho)
    x = x0.copy()
    z = Gs @ x
    y = np.zeros(m)
    y_prev = y.copy()
    rhs = np.empty(n + m)
    status = "max_iter"
    iters_done = max_iter
    eps_pinf = 1e-10

    for it in range(1, max_iter + 1):
        rhs[:n] = sigma * x - q
        rhs[n:] = z - y / rho
        sol = solve(rhs)
        x_t = sol[:n]
        nu = sol[n:]
        z_t = z + (nu - y) / rho
        x = alpha * x_t + (1 - alpha) * x
        z_r = alpha * z_t + (1 - alpha) * z
        z = np.maximum(z_r + y / rho, hs)
        y = y + rho * (z_r - z)

        if it % 25 == 0 or it == max_iter:
            Ax = Gs @ x
            r_prim = np.max(np.abs(Ax - z)) if m else 0.0
            Gty = Gs.T @ y
            r_dual = np.max(np.abs(x + q + Gty))
            eps_p = eps_abs + eps_rel * max(np.max(np.abs(Ax)), np.max(np.abs(z)))
            eps_d = eps_abs + eps_rel * max(np.max(np.abs(x)), np.max(np.abs(Gty)),
                                            np.max(np.abs(q)) if n else 0.0)
            if r_prim <= eps_p and r_dual <= eps_d:
                status = "solved"
                iters_done = it
                break
            # primal infeasibility certificate: Farkas direction from the duals
            dy = y - y_prev
            dy_norm = np.max(np.abs(dy)) if m else 0.0
            if dy_norm > 0:
                cert = np.maximum(-dy, 0.0)
                if (np.max(np.abs(Gs.T @ cert)) <= 1e-8 * dy_norm
                        and hs @ cert > 1e-8 * dy_norm):
                    status = "infeasible"
                    iters_done = it
                    break
            y_prev = y.copy()
            # residual-balancing rho update
            if it % 200 == 0 and r_prim > 0 and r_dual > 0:
                ratio = (r_prim / max(eps_p, 1e-16)) / (r_dual / max(eps_d, 1e-16))
                if ratio > 25.0 or ratio < 0.04:
                    rho = float(np.clip(rho * np.sqrt(ratio), 1e-6, 1e6))
                    solve = factor(rho)

    if status == "infeasible":
        cert = np.maximum(-(y - y_prev), 0.0)
        order = np.argsort(-cert)
        cert_rows = [int(i) for i in order[:10] if cert[i] > 1e-12]
        _, viol = _least_violation_point(Gs, hs, x0)
        vorder = np.argsort(-viol)
        violations = [(int(i), float(viol[i] / D[i])) for i in vorder[:10] if viol[i] > 1e-10]
        report = InfeasibilityReport(certificate_rows=cert_rows, violations=violations)
        if raise_on_infeasible:
            raise QpInfeasibleError(report)
        return QpSolution(x=x0.copy(), status="infeasible", iterations=iters_done,
                          residuals=np.empty(0), objective=np.nan, report=report)

    # polish: exact solve on the detected active set
    polished = False
    atol = max(1e-7, 10.0 * float(np.max(np.abs(Gs @ x - z))) if m else 0.0)
    x_p = _polish(Gs, hs, x0, x, y, tol=atol)
    if x_p is not None and np.all(Gs @ x_p - hs >= -1e-9):
        obj_p = float(np.dot(x_p - x0, x_p - x0))
        obj_a = float(np.dot(x - x0, x - x0))
        if obj_p <= obj_a + 1e-7 * max(1.0, obj_a):
            x = x_p
            polished = True

    resid = (G @ x - h) if m else np.empty(0)
    return QpSolution(x=x, status=status, iterations=iters_done,
                      residuals=np.asarray(resid).ravel(),
                      objective=float(np.dot(x - x0, x - x0)),
                      polished=polished, duals=-y * D)


def solve_min_norm_qp(G, h, **kw) -> QpSolution:
    """min ||x||^2 s.t. G x >= h (the barrier-learning objective)."""
    return solve_min_dist_qp(G, h, x0=None, **kw)
