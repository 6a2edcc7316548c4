"""Input-Constrained CBFs: the b_0..b_N tightening sequence.

b_0 = h and b_k = inf_u [L_f b_{k-1} + L_g b_{k-1} u] + alpha_{k-1}(b_{k-1})
with the inf taken over the input polytope (closed form for boxes). The
intersection C* of all {b_k >= 0} can be rendered invariant when the
terminal sup-condition holds on it. Constraints are superlevel-safe here.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ConstraintFunction, InputPolytope, Orientation, to_superlevel
from .errors import EmptyRegion, GradientUnavailable, InfeasibleError
from .numkit import QuadraticProgram, solve_qp


@dataclass
class IccbfSequence:
    """Evaluators for b_0..b_N under bounded inputs."""

    base: ConstraintFunction
    alphas: list                      # alpha_0..alpha_{N-1}
    input_set: InputPolytope
    system: object
    gradient_mode: str = "central"    # b_k gradients for k >= 1
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.base.orientation is not Orientation.SUPERLEVEL:
            self.base = to_superlevel(self.base)
        if self.gradient_mode not in ("central", "analytic"):
            raise GradientUnavailable(f"unknown gradient mode {self.gradient_mode}")
        self.analytic_grads = {}      # k -> grad fn, optional registrations

    @property
    def N(self):
        return len(self.alphas)

    def eval_b(self, k, x):
        return eval_b(self, k, x)

    def grad_b(self, k, x):
        """Gradient of b_k; analytic for b_0, central differences above."""
        x = np.asarray(x, dtype=float)
        if k == 0:
            return self.base.gradient(0.0, x)
        if k in self.analytic_grads:
            return np.asarray(self.analytic_grads[k](x), dtype=float)
        g = np.zeros(x.size)
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = self.fd_step * max(1.0, abs(x[i]))
            g[i] = (eval_b(self, k, x + e) - eval_b(self, k, x - e)) / (2.0 * e[i])
        return g

    def terminal_row(self, x):
        """(L_f b_N, L_g b_N row, b_N) pieces of the ICCBF condition."""
        x = np.asarray(x, dtype=float)
        gb = self.grad_b(self.N, x)
        lf = float(gb @ self.system.drift(0.0, x))
        lg = gb @ self.system.input_map(0.0, x)
        return lf, lg, eval_b(self, self.N, x)

    def membership(self, x, tol=0.0):
        """True when x lies in C* = C_0 cap ... cap C_N."""
        return all(eval_b(self, k, x) >= -tol for k in range(self.N + 1))


def eval_b(seq: IccbfSequence, k, x):
    """Value of b_k at x; exact for box input sets."""
    x = np.asarray(x, dtype=float)
    if k > seq.N:
        raise GradientUnavailable(f"sequence defines b_0..b_{seq.N}")
    if k == 0:
        return seq.base.value(0.0, x)
    gb = seq.grad_b(k - 1, x)
    lf = float(gb @ seq.system.drift(0.0, x))
    row = gb @ seq.system.input_map(0.0, x)
    inf_term = seq.input_set.inf_linear(row)
    return lf + inf_term + seq.alphas[k - 1](eval_b(seq, k - 1, x))


@dataclass
class IccbfRegion:
    """Sampling box with per-dimension resolution for C* verification."""

    lower: np.ndarray
    upper: np.ndarray
    resolution: int = 200

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()

    def grid(self):
        axes = [np.linspace(lo, hi, self.resolution)
                for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class VerificationReport:
    verified: bool
    worst_margin: float
    witness: list
    resolution: int
    points_in_region: int

    def to_dict(self):
        return {"verified": bool(self.verified),
                "worst_margin": float(self.worst_margin),
                "witness": [float(v) for v in self.witness],
                "resolution": int(self.resolution),
                "points_in_region": int(self.points_in_region)}


def verify_iccbf(seq: IccbfSequence, region: IccbfRegion, alpha_N, tol=1e-9):
    """Grid check of sup_u [L_f b_N + L_g b_N u + alpha_N(b_N)] >= 0 on C*.

    Verified at the stated resolution only; this is a sampled check, not a
    formal certificate. Returns the minimum margin and its grid witness.
    """
    pts = region.grid()
    worst = np.inf
    witness = None
    count = 0
    for x in pts:
        if not seq.membership(x):
            continue
        count += 1
        lf, lg, bN = seq.terminal_row(x)
        margin = lf + seq.input_set.sup_linear(lg) + alpha_N(bN)
        if margin < worst:
            worst = margin
            witness = x
    if count == 0:
        raise EmptyRegion("no grid point lies in C*")
    return VerificationReport(verified=bool(worst >= -tol), worst_margin=float(worst),
                              witness=list(map(float, witness)),
                              resolution=region.resolution, points_in_region=count)


def iccbf_qp(seq: IccbfSequence, alpha_N, u_ref, input_set, x):
    """Min-norm-to-reference QP with the terminal b_N row and input bounds."""
    x = np.asarray(x, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float).ravel()
    if not seq.membership(x, tol=1e-9):
        warnings.warn("iccbf_qp evaluated outside C*", RuntimeWarning, stacklevel=2)
    lf, lg, bN = seq.terminal_row(x)
    m = seq.system.m
    rows = [-lg[None, :] if lg.ndim == 1 else -np.atleast_2d(lg)]
    rhs = [np.array([lf + alpha_N(bN)])]
    if input_set is not None:
        rows.append(input_set.A_u)
        rhs.append(input_set.b_u)
    qp = QuadraticProgram(2.0 * np.eye(m), -2.0 * u_ref, np.vstack(rows), np.concatenate(rhs))
    sol = solve_qp(qp)
    if not sol.optimal:
        raise InfeasibleError("ICCBF-QP infeasible", dual_ray=sol.dual_ray,
                              context={"x": x.tolist(), "b_N": bN})
    return sol.z


def acc_scenario(config=None):
    """Adaptive-cruise-control study: baseline CLF-CBF-QP vs ICCBF-QP."""
    from .lab.scenarios.iccbf_acc import run_acc_pair
    return run_acc_pair(config or {})
