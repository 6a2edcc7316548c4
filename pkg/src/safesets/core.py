"""Dynamics, class-K functions, constraint functions, and HOCBF chains.

Sign convention: the library's canonical orientation is superlevel-safe
(safe iff h >= 0). Modules that follow the opposite convention in their
source formulas (fxt, rcbf, becbf, zoh, adversarial, nonsmooth) convert on
the way in via `to_sublevel` and say so in their docstrings.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    DimensionMismatch,
    InfeasibleError,
    InvalidParams,
    MissingDerivative,
)
from .numkit import QuadraticProgram, finite_diff, solve_qp


class Orientation(Enum):
    SUPERLEVEL = "superlevel"  # safe iff h >= 0
    SUBLEVEL = "sublevel"      # safe iff h <= 0


@dataclass
class ControlAffineSystem:
    """xdot = f(t,x) + g(t,x) u, with optional disturbance channels.

    g_d / d_bar model a matched disturbance term g_d(x) d(t), ||d|| <= d_bar.
    w_u_max / w_x_max bound additive input and state disturbances.
    """

    n: int
    m: int
    f: callable
    g: callable
    g_d: callable = None
    d_bar: float = 0.0
    w_u_max: float = 0.0
    w_x_max: float = 0.0

    def drift(self, t, x):
        out = np.asarray(self.f(t, x), dtype=float).ravel()
        if out.size != self.n:
            raise DimensionMismatch(f"f returned {out.size} values, expected {self.n}")
        return out

    def input_map(self, t, x):
        out = np.asarray(self.g(t, x), dtype=float).reshape(self.n, self.m)
        return out

    def xdot(self, t, x, u):
        u = np.zeros(self.m) if u is None else np.asarray(u, dtype=float).ravel()
        return self.drift(t, x) + self.input_map(t, x) @ u


@dataclass
class InputPolytope:
    """Input set {u : A_u u <= b_u}; boxes keep their center/halfwidth."""

    A_u: np.ndarray
    b_u: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None
    u_max: float = None

    def __post_init__(self):
        self.A_u = np.atleast_2d(np.asarray(self.A_u, dtype=float))
        self.b_u = np.asarray(self.b_u, dtype=float).ravel()
        if self.A_u.shape[0] != self.b_u.size:
            raise DimensionMismatch("A_u rows and b_u length differ")
        if self.is_box and self.u_max is None:
            corner = np.maximum(np.abs(self.lower), np.abs(self.upper))
            self.u_max = float(np.linalg.norm(corner))

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.size != upper.size or np.any(lower > upper):
            raise InvalidParams("box bounds inconsistent")
        m = lower.size
        A = np.vstack([np.eye(m), -np.eye(m)])
        b = np.concatenate([upper, -lower])
        return cls(A, b, lower=lower, upper=upper)

    @property
    def m(self):
        return self.A_u.shape[1]

    @property
    def is_box(self):
        return self.lower is not None and self.upper is not None

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def halfwidth(self):
        return 0.5 * (self.upper - self.lower)

    def contains(self, u, tol=1e-8):
        u = np.asarray(u, dtype=float).ravel()
        return bool((self.A_u @ u - self.b_u).max() <= tol * max(1.0, np.abs(self.b_u).max()))

    def inf_linear(self, row):
        """inf_u row @ u over the set (closed form for boxes, LP otherwise)."""
        row = np.asarray(row, dtype=float).ravel()
        if self.is_box:
            return float(row @ self.center - np.abs(row) @ self.halfwidth)
        from .numkit import LP_REG
        sol = solve_qp(QuadraticProgram(LP_REG * np.eye(self.m), row, self.A_u, self.b_u))
        if not sol.optimal:
            raise InfeasibleError("input polytope LP failed")
        return float(row @ sol.z)

    def sup_linear(self, row):
        return -self.inf_linear(-np.asarray(row, dtype=float))

    def arg_sup_linear(self, row):
        """A maximizer of row @ u over the set (box corner; center on zero rows)."""
        row = np.asarray(row, dtype=float).ravel()
        if self.is_box:
            return self.center + np.sign(row) * self.halfwidth
        from .numkit import LP_REG
        sol = solve_qp(QuadraticProgram(LP_REG * np.eye(self.m), -row, self.A_u, self.b_u))
        if not sol.optimal:
            raise InfeasibleError("input polytope LP failed")
        return sol.z


class ClassKappa:
    """Strictly increasing scalar function with value 0 at 0.

    Families: linear (nu*z), power (a*sign(z)|z|^p, odd extension so the
    function stays class-K-extended on all of R), scaled-sqrt (power 1/2),
    and custom (callable, first derivative optional).
    """

    def __init__(self, family="linear", nu=1.0, a=1.0, p=1.0, fn=None, dfn=None, inv=None):
        self.family = family
        self.nu = float(nu)
        self.a = float(a)
        self.p = float(p)
        self.fn = fn
        self.dfn = dfn
        self.inv_fn = inv
        if family == "linear" and self.nu <= 0:
            raise InvalidParams("linear class-K needs nu > 0")
        if family in ("power", "scaled_sqrt") and (self.a <= 0 or self.p <= 0):
            raise InvalidParams("power class-K needs a, p > 0")
        if family == "scaled_sqrt":
            self.p = 0.5
        if family == "custom" and fn is None:
            raise InvalidParams("custom class-K needs fn")

    @classmethod
    def linear(cls, nu):
        return cls("linear", nu=nu)

    @classmethod
    def power(cls, a, p):
        return cls("power", a=a, p=p)

    @classmethod
    def scaled_sqrt(cls, a):
        return cls("scaled_sqrt", a=a)

    @classmethod
    def custom(cls, fn, dfn=None, inv=None):
        return cls("custom", fn=fn, dfn=dfn, inv=inv)

    def __call__(self, z):
        z = float(z)
        if self.family == "linear":
            return self.nu * z
        if self.family in ("power", "scaled_sqrt"):
            return self.a * np.sign(z) * abs(z) ** self.p
        return float(self.fn(z))

    def derivative(self, z, order=1):
        z = float(z)
        if order == 0:
            return self(z)
        if self.family == "linear":
            return self.nu if order == 1 else 0.0
        if self.family in ("power", "scaled_sqrt"):
            # d^k/dz^k of a*sign(z)|z|^p = a p(p-1)..(p-k+1) |z|^(p-k) sign(z)^(k+1)
            coeff = self.a
            q = self.p
            for _ in range(order):
                coeff *= q
                q -= 1.0
            if coeff == 0.0:
                return 0.0
            sgn = 1.0 if (order + 1) % 2 == 0 else np.sign(z)
            if z == 0.0:
                if q > 0:
                    return 0.0
                if q == 0:
                    return coeff * sgn
                return np.inf
            return coeff * abs(z) ** q * sgn
        if order == 1 and self.dfn is not None:
            return float(self.dfn(z))
        raise MissingDerivative(f"class-K derivative of order {order} unavailable for {self.family}")

    def inverse(self, y):
        y = float(y)
        if self.family == "linear":
            return y / self.nu
        if self.family in ("power", "scaled_sqrt"):
            return np.sign(y) * (abs(y) / self.a) ** (1.0 / self.p)
        if self.inv_fn is not None:
            return float(self.inv_fn(y))
        raise MissingDerivative(f"no closed-form inverse for {self.family}")


@dataclass
class ConstraintFunction:
    """Barrier h with gradient, time-partial, relative degree, orientation."""

    h: callable          # h(t, x) -> float
    grad: callable       # grad(t, x) -> (n,)
    time_partial: callable = None
    rel_degree: int = 1
    orientation: Orientation = Orientation.SUPERLEVEL
    name: str = "h"

    def value(self, t, x):
        return float(self.h(t, x))

    def gradient(self, t, x):
        return np.asarray(self.grad(t, x), dtype=float).ravel()

    def dt_partial(self, t, x):
        if self.time_partial is None:
            return 0.0
        return float(self.time_partial(t, x))

    def total_rate(self, system, t, x, u=None):
        """dh/dt along the system flow (dh/dt = d_t h + grad . xdot)."""
        return self.dt_partial(t, x) + float(self.gradient(t, x) @ system.xdot(t, x, u))

    def validate_gradient(self, states, t=0.0, rel_tol=1e-4, eps=1e-6):
        """Check the analytic gradient against central differences."""
        worst = 0.0
        for x in states:
            x = np.asarray(x, dtype=float)
            g = self.gradient(t, x)
            g_fd = finite_diff(lambda xx: self.h(t, xx), x, eps=eps)
            err = np.abs(g - g_fd).max()
            denom = max(1.0, np.abs(g_fd).max())
            worst = max(worst, err / denom)
        if worst > rel_tol:
            raise InvalidParams(f"gradient of {self.name} off by {worst:.2e} relative")
        return worst


def to_superlevel(cf: ConstraintFunction) -> ConstraintFunction:
    """Superlevel-safe equivalent (negates h when the input is sublevel-safe)."""
    if cf.orientation is Orientation.SUPERLEVEL:
        return ConstraintFunction(cf.h, cf.grad, cf.time_partial, cf.rel_degree,
                                  Orientation.SUPERLEVEL, cf.name)
    return _flipped(cf, Orientation.SUPERLEVEL)


def to_sublevel(cf: ConstraintFunction) -> ConstraintFunction:
    """Sublevel-safe equivalent (negates h when the input is superlevel-safe)."""
    if cf.orientation is Orientation.SUBLEVEL:
        return ConstraintFunction(cf.h, cf.grad, cf.time_partial, cf.rel_degree,
                                  Orientation.SUBLEVEL, cf.name)
    return _flipped(cf, Orientation.SUBLEVEL)


def _flipped(cf, orientation):
    tp = None if cf.time_partial is None else (lambda t, x, _f=cf.time_partial: -_f(t, x))
    return ConstraintFunction(
        h=lambda t, x, _f=cf.h: -_f(t, x),
        grad=lambda t, x, _f=cf.grad: -np.asarray(_f(t, x), dtype=float),
        time_partial=tp,
        rel_degree=cf.rel_degree,
        orientation=orientation,
        name=cf.name,
    )


def _compose_jet(alpha: ClassKappa, q, orders):
    """Time-derivative jet of alpha(q(t)) given the jet of q, up to `orders`."""
    out = [alpha(q[0])]
    if orders >= 1:
        d1 = alpha.derivative(q[0], 1)
        out.append(d1 * q[1])
    if orders >= 2:
        d1 = alpha.derivative(q[0], 1)
        d2 = alpha.derivative(q[0], 2)
        out.append(d2 * q[1] ** 2 + d1 * q[2])
    if orders >= 3:
        d1 = alpha.derivative(q[0], 1)
        d2 = alpha.derivative(q[0], 2)
        d3 = alpha.derivative(q[0], 3)
        out.append(d3 * q[1] ** 3 + 3.0 * d2 * q[1] * q[2] + d1 * q[3])
    if orders > 3:
        raise MissingDerivative("psi chains beyond relative degree 4 are not supported")
    return out


@dataclass
class HocbfChain:
    """psi^0 = h, psi^k = d/dt psi^{k-1} + alpha_k(psi^{k-1}).

    `hdots[j]` returns the control-free total derivative h^(j+1)(t,x) for
    j = 0..r-2; the terminal pair supplies h^(r) = terminal_drift(t,x) +
    terminal_input(t,x) @ u. Built on the superlevel-safe orientation.
    """

    base: ConstraintFunction
    alphas: list = field(default_factory=list)          # r-1 class-K functions
    hdots: list = field(default_factory=list)           # r-1 drift derivatives
    terminal_drift: callable = None
    terminal_input: callable = None

    def __post_init__(self):
        if self.base.orientation is not Orientation.SUPERLEVEL:
            self.base = to_superlevel(self.base)
        r = self.base.rel_degree
        if len(self.alphas) != r - 1:
            raise InvalidParams(f"need {r - 1} class-K functions for relative degree {r}")
        if len(self.hdots) < r - 1:
            raise MissingDerivative(f"need {r - 1} drift-derivative callbacks, got {len(self.hdots)}")

    @classmethod
    def first_order(cls, cf, system):
        cf = to_superlevel(cf)
        chain = cls(cf, [], [],
                    terminal_drift=lambda t, x: cf.dt_partial(t, x) + float(cf.gradient(t, x) @ system.drift(t, x)),
                    terminal_input=lambda t, x: cf.gradient(t, x) @ system.input_map(t, x))
        return chain

    @property
    def rel_degree(self):
        return self.base.rel_degree

    def _jet(self, t, x):
        r = self.rel_degree
        jet = [self.base.value(t, x)]
        for j in range(r - 1):
            jet.append(float(self.hdots[j](t, x)))
        if self.terminal_drift is None or self.terminal_input is None:
            raise MissingDerivative("terminal derivative pair not supplied")
        jet.append(float(self.terminal_drift(t, x)))
        return jet

    def psi_values(self, t, x):
        return eval_psi_chain(self, t, x)

    def terminal_pair(self, t, x):
        """(a, row) with d/dt psi^{r-1} = a + row @ u."""
        r = self.rel_degree
        jet = self._jet(t, x)
        for k in range(1, r):
            comp = _compose_jet(self.alphas[k - 1], jet, len(jet) - 2)
            jet = [jet[j + 1] + comp[j] for j in range(len(jet) - 1)]
        a = jet[1] if len(jet) > 1 else jet[0]
        row = np.asarray(self.terminal_input(t, x), dtype=float).ravel()
        return float(a), row

    def terminal_psi(self, t, x):
        return self.psi_values(t, x)[-1]


def eval_psi_chain(chain: HocbfChain, t, x):
    """Values [psi^0, ..., psi^{r-1}] at (t, x)."""
    r = chain.rel_degree
    jet = chain._jet(t, x)
    psis = [jet[0]]
    for k in range(1, r):
        comp = _compose_jet(chain.alphas[k - 1], jet, len(jet) - 2)
        jet = [jet[j + 1] + comp[j] for j in range(len(jet) - 1)]
        psis.append(jet[0])
    return psis


@dataclass
class ClfSpec:
    """Control Lyapunov function V with exponential rate k."""

    value: callable      # V(t, x)
    grad: callable       # (n,)
    rate: float = 1.0
    time_partial: callable = None

    def rows(self, system, t, x):
        v = float(self.value(t, x))
        gv = np.asarray(self.grad(t, x), dtype=float).ravel()
        tp = 0.0 if self.time_partial is None else float(self.time_partial(t, x))
        lf = tp + float(gv @ system.drift(t, x))
        lg = gv @ system.input_map(t, x)
        return v, lf, lg


def clf_hocbf_qp_filter(system, input_set, chains, clf, u_ref, t, x,
                        slack_weight=1e4, terminal_alphas=None):
    """Baseline CLF-(HO)CBF-QP safety filter.

    Decision variables (u, delta), delta >= 0. Each chain contributes the
    terminal row d/dt psi^{r-1} >= -alpha_r(psi^{r-1}); `terminal_alphas`
    supplies alpha_r per chain (default: identity-linear).

    Returns (u, delta). Raises InfeasibleError when the rows and the input
    polytope have empty intersection, which signals loss of validity of the
    candidate CBFs under the input bounds.
    """
    x = np.asarray(x, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float).ravel()
    m = system.m
    if terminal_alphas is None:
        terminal_alphas = [ClassKappa.linear(1.0)] * len(chains)

    H = np.eye(m + 1) * 2.0
    H[m, m] = 2.0 * slack_weight
    F = np.concatenate([-2.0 * u_ref, [0.0]])

    rows = []
    rhs = []
    if input_set is not None:
        rows.append(np.hstack([input_set.A_u, np.zeros((input_set.A_u.shape[0], 1))]))
        rhs.append(input_set.b_u)
    for chain, alpha_r in zip(chains, terminal_alphas):
        a, brow = chain.terminal_pair(t, x)
        psi = chain.terminal_psi(t, x)
        rows.append(np.concatenate([-brow, [0.0]])[None, :])
        rhs.append(np.array([a + alpha_r(psi)]))
    if clf is not None:
        v, lf, lg = clf.rows(system, t, x)
        rows.append(np.concatenate([lg, [-1.0]])[None, :])
        rhs.append(np.array([-clf.rate * v - lf]))
    # delta >= 0
    rows.append(np.concatenate([np.zeros(m), [-1.0]])[None, :])
    rhs.append(np.array([0.0]))

    qp = QuadraticProgram(H, F, np.vstack(rows), np.concatenate(rhs))
    sol = solve_qp(qp)
    if not sol.optimal:
        raise InfeasibleError("CLF-HOCBF-QP infeasible", dual_ray=sol.dual_ray,
                              context={"t": t, "x": x.tolist()})
    return sol.z[:m], float(sol.z[m])
