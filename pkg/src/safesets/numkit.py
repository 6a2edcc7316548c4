"""Dense convex QP/LP solving, ZOH integration, and finite differences.

Everything else in the library reduces to the canonical problem

    min  1/2 z^T H z + F^T z   s.t.  A z <= b

solved here by a primal active-set method. Problems are tiny (<= 20
variables), so each iteration factors the equality-constrained KKT system
directly via a Cholesky factorization of the (regularized) cost.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    InfeasibleError,
    NonFiniteState,
    NonFiniteValue,
    NonPsdCost,
    UnboundedError,
)

FEAS_TOL = 1e-8
STAT_TOL = 1e-7
MAX_ITER = 200
LP_REG = 1e-9

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
MAX_ITERATIONS = "MaxIterations"


@dataclass
class QuadraticProgram:
    """min 1/2 z^T H z + F^T z  s.t.  A z <= b."""

    H: np.ndarray
    F: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.F = np.asarray(self.F, dtype=float).ravel()
        n = self.F.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n) if np.size(self.A) else np.zeros((0, n))
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.H.shape != (n, n):
            raise DimensionMismatch(f"H is {self.H.shape}, expected {(n, n)}")
        if self.A.shape[0] != self.b.size:
            raise DimensionMismatch(f"A has {self.A.shape[0]} rows but b has {self.b.size}")
        scale = max(1.0, float(np.abs(self.H).max(initial=0.0)))
        if np.abs(self.H - self.H.T).max(initial=0.0) > 1e-12 * scale:
            raise NonPsdCost("H is not symmetric")
        self.H = 0.5 * (self.H + self.H.T)

    @property
    def n(self):
        return self.F.size

    @property
    def m(self):
        return self.b.size

    def objective(self, z):
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.F @ z)


@dataclass
class Solution:
    z: np.ndarray
    status: str
    objective: float
    active_set: list = field(default_factory=list)
    multipliers: np.ndarray | None = None
    dual_ray: np.ndarray | None = None

    @property
    def optimal(self):
        return self.status == OPTIMAL


def _psd_check(H):
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    w = np.linalg.eigvalsh(H)
    if w[0] < -1e-10 * scale:
        raise NonPsdCost(f"H has eigenvalue {w[0]:.3e}")
    return w[0]


def _solve_eqp(Hc, F, A, b, work):
    """Minimize over the affine set A_work z = b_work.

    Returns (z, lam_work). Hc is a Cholesky factor of the regularized H.
    """
    xf = _chol_solve(Hc, -F)
    if not work:
        return xf, np.zeros(0)
    Aw = A[work]
    bw = b[work]
    HiAt = _chol_solve(Hc, Aw.T)
    S = Aw @ HiAt
    rhs = Aw @ xf - bw
    try:
        lam = np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError:
        lam = np.linalg.lstsq(S, rhs, rcond=None)[0]
    z = xf - HiAt @ lam
    return z, lam


def _chol_solve(L, rhs):
    y = solve_triangular(L, rhs, lower=True)
    return solve_triangular(L.T, y, lower=False)


def _active_set(Hc, F, A, b, z0, max_iter):
    """Primal active-set loop from a feasible z0. Ties break at lowest index."""
    z = z0.copy()
    m = b.size
    work = []
    lam = np.zeros(0)
    for _ in range(max_iter):
        z_eq, lam = _solve_eqp(Hc, F, A, b, work)
        d = z_eq - z
        step_scale = max(1.0, float(np.abs(z).max(initial=0.0)))
        if np.abs(d).max(initial=0.0) <= 1e-12 * step_scale:
            if lam.size == 0 or lam.min() >= -STAT_TOL:
                return z, work, lam, OPTIMAL
            drop = work[int(np.argmin(lam))]
            work.remove(drop)
            continue
        # ratio test against constraints not in the working set
        alpha = 1.0
        block = -1
        for i in range(m):
            if i in work:
                continue
            ad = float(A[i] @ d)
            if ad <= 1e-13 * max(1.0, np.abs(d).max()):
                continue
            gap = float(b[i] - A[i] @ z)
            a_i = max(gap, 0.0) / ad
            if a_i < alpha - 1e-14:
                alpha = a_i
                block = i
        z = z + alpha * d
        if block >= 0:
            work.append(block)
            work.sort()
    return z, work, lam, MAX_ITERATIONS


def _phase1(A, b, max_iter):
    """Find a feasible point of {A z <= b}, or an infeasibility certificate."""
    m, n = A.shape
    z0 = np.zeros(n)
    resid = A @ z0 - b if m else np.zeros(0)
    worst = float(resid.max(initial=0.0))
    if worst <= FEAS_TOL:
        return z0, None
    # min s  s.t.  A z - s <= b, -s <= -0  from the strictly feasible start s0
    H1 = np.eye(n + 1) * LP_REG
    F1 = np.zeros(n + 1)
    F1[-1] = 1.0
    A1 = np.hstack([A, -np.ones((m, 1))])
    A1 = np.vstack([A1, np.concatenate([np.zeros(n), [-1.0]])])
    b1 = np.concatenate([b, [0.0]])
    s0 = worst + 1.0
    start = np.concatenate([z0, [s0]])
    Hc = np.linalg.cholesky(H1)
    zs, work, lam, status = _active_set(Hc, F1, A1, b1, start, max_iter)
    s_opt = zs[-1]
    if s_opt > np.sqrt(FEAS_TOL):
        ray = np.zeros(m)
        for w, l in zip(work, lam):
            if w < m:
                ray[w] = max(l, 0.0)
        total = ray.sum()
        if total > 0:
            ray /= total
        return None, ray
    return zs[:n], None


def solve_qp(qp: QuadraticProgram, max_iter: int = MAX_ITER) -> Solution:
    """Solve the QP with a dense primal active-set method.

    Raises NonPsdCost / DimensionMismatch on malformed input. An empty
    feasible set yields status Infeasible with a Farkas-type dual ray.
    """
    min_eig = _psd_check(qp.H)
    scale = max(1.0, float(np.abs(qp.H).max(initial=0.0)))
    H = qp.H
    if min_eig <= 1e-11 * scale:
        H = H + LP_REG * scale * np.eye(qp.n)
    Hc = np.linalg.cholesky(H)

    z0 = _chol_solve(Hc, -qp.F)
    if qp.m and (qp.A @ z0 - qp.b).max() > FEAS_TOL:
        z0, ray = _phase1(qp.A, qp.b, max_iter)
        if z0 is None:
            return Solution(z=np.full(qp.n, np.nan), status=INFEASIBLE,
                            objective=np.inf, dual_ray=ray)

    z, work, lam, status = _active_set(Hc, qp.F, qp.A, qp.b, z0, max_iter)
    mult = np.zeros(qp.m)
    for w, l in zip(work, lam):
        mult[w] = l
    if qp.m:
        tight = np.flatnonzero(qp.A @ z - qp.b >= -np.sqrt(FEAS_TOL) * max(1.0, np.abs(qp.b).max(initial=0.0)))
        active = sorted(set(tight.tolist()) | set(work)) if status == OPTIMAL else sorted(work)
    else:
        active = []
    return Solution(z=z, status=status, objective=qp.objective(z),
                    active_set=active, multipliers=mult)


def kkt_residual(qp: QuadraticProgram, sol: Solution) -> float:
    """Stationarity residual ||Hz + F + A^T lam|| for a solved QP."""
    lam = sol.multipliers if sol.multipliers is not None else np.zeros(qp.m)
    lam = np.where(lam > 0, lam, 0.0)
    r = qp.H @ sol.z + qp.F
    if qp.m:
        r = r + qp.A.T @ lam
    return float(np.abs(r).max(initial=0.0))


def _recession_nontrivial(A):
    """True if {d : A d <= 0} contains a nonzero direction."""
    m, n = A.shape
    box_A = np.vstack([A, np.eye(n), -np.eye(n)])
    box_b = np.concatenate([np.zeros(m), np.ones(2 * n)])
    for j in range(n):
        for sgn in (1.0, -1.0):
            F = np.zeros(n)
            F[j] = -sgn  # maximize sgn * d_j
            sol = solve_qp(QuadraticProgram(LP_REG * np.eye(n), F, box_A, box_b))
            if sol.optimal and sgn * sol.z[j] > 1e-6:
                return True
    return False


def chebyshev_center(A, b):
    """Center and radius of the largest ball inscribed in {u : A u <= b}.

    Rows are normalized to unit norm before the LP. Raises InfeasibleError
    for an empty polytope and UnboundedError for an unbounded one.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[0] != b.size:
        raise DimensionMismatch("A rows and b length differ")
    n = A.shape[1]
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 1e-14
    if not np.all(keep):
        if np.any(b[~keep] < -FEAS_TOL):
            raise InfeasibleError("zero row with negative bound")
        A, b, norms = A[keep], b[keep], norms[keep]
    if A.shape[0] == 0 or np.linalg.matrix_rank(A) < n or _recession_nontrivial(A):
        raise UnboundedError("polytope is unbounded")
    An = A / norms[:, None]
    bn = b / norms
    m = An.shape[0]
    # variables (c, r): min -r  s.t.  An c + r <= bn, -r <= 0
    H = LP_REG * max(1.0, float(np.abs(bn).max())) * np.eye(n + 1)
    F = np.zeros(n + 1)
    F[-1] = -1.0
    Alp = np.hstack([An, np.ones((m, 1))])
    Alp = np.vstack([Alp, np.concatenate([np.zeros(n), [-1.0]])])
    blp = np.concatenate([bn, [0.0]])
    sol = solve_qp(QuadraticProgram(H, F, Alp, blp))
    if sol.status == INFEASIBLE:
        raise InfeasibleError("polytope is empty", dual_ray=sol.dual_ray)
    if not sol.optimal or np.abs(sol.z).max() > 1e11:
        raise UnboundedError("Chebyshev LP did not converge to a bounded center")
    z = _polish_lp_vertex(sol.z, Alp, blp)
    return z[:n], float(max(z[-1], 0.0))


def _polish_lp_vertex(z, A, b):
    """Snap a regularized LP solution onto its tight-constraint face."""
    resid = A @ z - b
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    tight = np.flatnonzero(resid >= -1e-6 * scale)
    if tight.size == 0:
        return z
    zp, *_ = np.linalg.lstsq(A[tight], b[tight], rcond=None)
    if np.all(np.isfinite(zp)) and (A @ zp - b).max() <= FEAS_TOL * scale \
            and np.linalg.norm(zp - z) <= 1e-3 * max(1.0, np.linalg.norm(z)):
        return zp
    return z


@dataclass
class OdeProblem:
    """Fixed-step RK4 propagation setup for zero-order-hold inputs."""

    field: callable  # f(t, x, u) -> xdot
    x0: np.ndarray
    dt: float
    substeps: int = 1
    t0: float = 0.0

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


def rk4_step(f, t, x, u, h):
    k1 = np.asarray(f(t, x, u), dtype=float)
    k2 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k1, u), dtype=float)
    k3 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k2, u), dtype=float)
    k4 = np.asarray(f(t + h, x + h * k3, u), dtype=float)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"non-finite state at t={t}")
    return out


def integrate_zoh(problem: OdeProblem, u=None):
    """Propagate one control step with the input held constant (classical RK4)."""
    x = problem.x0.copy()
    h = problem.dt / problem.substeps
    t = problem.t0
    for _ in range(problem.substeps):
        x = rk4_step(problem.field, t, x, u, h)
        t += h
    return x


def finite_diff(fn, x, eps=1e-6):
    """Central-difference gradient of a scalar field at x."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x).astype(float)
    g = np.zeros_like(xv)
    for i in range(xv.size):
        e = np.zeros_like(xv)
        e[i] = eps
        hi = fn(float((xv + e)[0]) if scalar else xv + e)
        lo = fn(float((xv - e)[0]) if scalar else xv - e)
        g[i] = (hi - lo) / (2.0 * eps)
    if not np.all(np.isfinite(g)):
        raise NonFiniteValue("non-finite finite-difference value")
    return float(g[0]) if scalar else g


def enumerate_active_sets(qp: QuadraticProgram, max_size=None):
    """Exhaustive active-set enumeration: the brute-force QP oracle.

    Solves the equality-constrained KKT system for every constraint subset
    (up to max_size, default n) and returns the feasible minimizer. Subsets
    of each size are solved as one batched linear system. Intended as an
    independent check on solve_qp for small problems.
    """
    n, m = qp.n, qp.m
    if max_size is None:
        max_size = min(n, m)
    btol = 1e-7 * max(1.0, np.abs(qp.b).max(initial=0.0))
    best = None
    best_obj = np.inf

    def consider(z):
        nonlocal best, best_obj
        if not np.all(np.isfinite(z)):
            return
        if m and (qp.A @ z - qp.b).max() > btol:
            return
        obj = qp.objective(z)
        if obj < best_obj - 1e-12:
            best_obj = obj
            best = z

    for size in range(0, max_size + 1):
        subsets = np.array(list(combinations(range(m), size)), dtype=int)
        if size == 0:
            try:
                consider(np.linalg.solve(qp.H, -qp.F))
            except np.linalg.LinAlgError:
                consider(np.linalg.lstsq(qp.H, -qp.F, rcond=None)[0])
            continue
        if subsets.size == 0:
            continue
        c = subsets.shape[0]
        K = np.zeros((c, n + size, n + size))
        K[:, :n, :n] = qp.H
        Aw = qp.A[subsets]  # (c, size, n)
        K[:, :n, n:] = np.transpose(Aw, (0, 2, 1))
        K[:, n:, :n] = Aw
        rhs = np.empty((c, n + size))
        rhs[:, :n] = -qp.F
        rhs[:, n:] = qp.b[subsets]
        try:
            zl = np.linalg.solve(K, rhs[..., None])[..., 0]
            for row in zl:
                consider(row[:n])
        except np.linalg.LinAlgError:
            for i in range(c):
                try:
                    consider(np.linalg.solve(K[i], rhs[i])[:n])
                except np.linalg.LinAlgError:
                    continue
    return best, best_obj
