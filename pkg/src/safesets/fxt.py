"""Fixed-time stability: settling bounds, domains, and FxT-CLF-CBF QPs.

Goal and safety functions here follow the sublevel convention of the
source formulation: the goal set is {h_G <= 0} and the safe set is
{h_S <= 0}. ConstraintFunction inputs in the superlevel orientation are
converted on entry.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import ConstraintFunction, Orientation, to_sublevel
from .errors import InfeasibleError, InvalidParams
from .numkit import QuadraticProgram, solve_qp


@dataclass
class FxtParams:
    """Rate parameters of the fixed-time Lyapunov inequality.

    Vdot <= -alpha1 V^gamma1 - alpha2 V^gamma2 + delta1 V with
    gamma1 = 1 + 1/mu, gamma2 = 1 - 1/mu.
    """

    alpha1: float
    alpha2: float
    mu: float = 2.0
    delta1: float = 0.0
    contraction_k: float = 0.9  # free 0<k<1 in the third settling case

    def __post_init__(self):
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise InvalidParams("alpha1, alpha2 must be positive")
        if self.mu <= 0:
            raise InvalidParams("mu must be positive")
        if not 0.0 < self.contraction_k < 1.0:
            raise InvalidParams("contraction factor must lie in (0, 1)")

    @property
    def gamma1(self):
        return 1.0 + 1.0 / self.mu

    @property
    def gamma2(self):
        return 1.0 - 1.0 / self.mu

    @property
    def case_ratio(self):
        return self.delta1 / (2.0 * math.sqrt(self.alpha1 * self.alpha2))


@dataclass
class FxtClf:
    """Lyapunov-like goal function; the goal set is {V <= level}."""

    value: callable
    grad: callable
    level: float = 0.0
    lipschitz: float = 0.0

    def as_constraint(self, rel_degree=1, name="h_G"):
        lvl = self.level
        return ConstraintFunction(
            h=lambda t, x: float(self.value(x)) - lvl,
            grad=lambda t, x: np.asarray(self.grad(x), dtype=float),
            rel_degree=rel_degree,
            orientation=Orientation.SUBLEVEL,
            name=name,
        )


@dataclass
class RobustShift:
    """Hat-function data: phi_hat = phi + l_phi * eps, margin l_phi * gamma."""

    lipschitz: float
    eps: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.lipschitz < 0 or self.eps < 0 or self.gamma < 0:
            raise InvalidParams("robust shift entries must be nonnegative")

    def hat(self, value):
        return value + self.lipschitz * self.eps

    @property
    def margin(self):
        return self.lipschitz * self.gamma


def settling_time_bound(p: FxtParams) -> float:
    """Fixed-time settling bound; the case is picked by delta1/(2 sqrt(a1 a2))."""
    rho = p.case_ratio
    if rho <= 0.0:
        return p.mu * math.pi / (2.0 * math.sqrt(p.alpha1 * p.alpha2))
    if rho < 1.0:
        disc = 4.0 * p.alpha1 * p.alpha2 - p.delta1 ** 2
        k1 = math.sqrt(disc / (4.0 * p.alpha1 ** 2))
        k2 = -p.delta1 / math.sqrt(disc)
        return p.mu / (p.alpha1 * k1) * (math.pi / 2.0 - math.atan(k2))
    disc = p.delta1 ** 2 - 4.0 * p.alpha1 * p.alpha2
    if disc < 0:
        raise InvalidParams("case 3 selected but the rate polynomial has no real roots")
    root = math.sqrt(disc)
    a = (p.delta1 - root) / (2.0 * p.alpha1)
    b = (p.delta1 + root) / (2.0 * p.alpha1)
    k = p.contraction_k
    if b - a < 1e-15:
        # repeated root: continuous limit of the two-root expression
        return 2.0 * p.mu * k / (p.delta1 * (1.0 - k))
    return p.mu / (p.alpha1 * (b - a)) * (math.log((b - k * a) / (a * (1.0 - k))) - math.log(b / a))


EVERYTHING = "Everything"


def fxt_domain(p: FxtParams):
    """Domain of attraction descriptor: EVERYTHING or a V-sublevel value."""
    if p.case_ratio < 1.0:
        return EVERYTHING
    disc = p.delta1 ** 2 - 4.0 * p.alpha1 * p.alpha2
    root = math.sqrt(max(disc, 0.0))
    return p.contraction_k ** p.mu * ((p.delta1 - root) / (2.0 * p.alpha1)) ** p.mu


def alpha_from_time_budget(T_ud: float, mu: float):
    """alpha1 = alpha2 = mu*pi/(2*T_ud) meets the budget in the margin-free case."""
    if T_ud <= 0 or mu <= 1:
        raise InvalidParams("need T_ud > 0 and mu > 1")
    a = mu * math.pi / (2.0 * T_ud)
    return a, a


def _sublevel(cf):
    if isinstance(cf, FxtClf):
        cf = cf.as_constraint()
    if cf.orientation is not Orientation.SUBLEVEL:
        cf = to_sublevel(cf)
    return cf


def _rows_for(cf, system, t, x):
    v = cf.value(t, x)
    g = cf.gradient(t, x)
    lf = cf.dt_partial(t, x) + float(g @ system.drift(t, x))
    lg = g @ system.input_map(t, x)
    return v, lf, lg


def _goal_rhs(p, hg):
    pos = max(0.0, hg)
    return -p.alpha1 * pos ** p.gamma1 - p.alpha2 * pos ** p.gamma2


@dataclass
class FxtWeights:
    input_weight: float = 1.0
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    q1: float = 100.0


def fxt_clf_cbf_qp(system, input_set, h_G, h_S, p: FxtParams, x,
                   weights: FxtWeights = None, t=0.0):
    """FxT-CLF-CBF-QP over z = (v, delta1, delta2).

    h_S may be a single constraint or a list; all safety rows share delta2.
    Returns (u, delta1, delta2).
    """
    weights = weights or FxtWeights()
    x = np.asarray(x, dtype=float)
    m = system.m
    h_G = _sublevel(h_G)
    h_S_list = [] if h_S is None else ([h_S] if not isinstance(h_S, (list, tuple)) else list(h_S))
    h_S_list = [_sublevel(c) for c in h_S_list]

    H = np.diag(np.concatenate([np.full(m, weights.input_weight), [weights.w1, weights.w2]]))
    F = np.concatenate([np.zeros(m), [weights.q1, 0.0]])

    rows, rhs = [], []
    if input_set is not None:
        rows.append(np.hstack([input_set.A_u, np.zeros((input_set.A_u.shape[0], 2))]))
        rhs.append(input_set.b_u)
    vg, lfg, lgg = _rows_for(h_G, system, t, x)
    rows.append(np.concatenate([lgg, [-vg, 0.0]])[None, :])
    rhs.append(np.array([_goal_rhs(p, vg) - lfg]))
    for cf in h_S_list:
        vs, lfs, lgs = _rows_for(cf, system, t, x)
        rows.append(np.concatenate([lgs, [0.0, vs]])[None, :])
        rhs.append(np.array([-lfs]))

    sol = solve_qp(QuadraticProgram(H, F, np.vstack(rows), np.concatenate(rhs)))
    if not sol.optimal:
        raise InfeasibleError("FxT-CLF-CBF-QP infeasible", dual_ray=sol.dual_ray,
                              context={"t": t, "x": x.tolist()})
    return sol.z[:m], float(sol.z[m]), float(sol.z[m + 1])


def robust_fxt_qp(system, h_G, shift_G, h_S, shift_S, p: FxtParams, x_hat,
                  h_T=None, shift_T=None, input_set=None,
                  weights: FxtWeights = None, t=0.0):
    """Robust FxT QP at the estimated state, over z = (v, d1, d2, d3).

    Every function enters through its hat shift (value + l*eps) and its row
    right side loses the worst-case Lipschitz margin l*gamma. With zero
    bounds and no h_T this reduces exactly to fxt_clf_cbf_qp.

    Returns (u, delta1, delta2, delta3).
    """
    weights = weights or FxtWeights()
    x_hat = np.asarray(x_hat, dtype=float)
    m = system.m
    h_G = _sublevel(h_G)
    h_S = _sublevel(h_S)

    H = np.diag(np.concatenate([np.full(m, weights.input_weight),
                                [weights.w1, weights.w2, weights.w3]]))
    F = np.concatenate([np.zeros(m), [weights.q1, 0.0, 0.0]])

    rows, rhs = [], []
    if input_set is not None:
        rows.append(np.hstack([input_set.A_u, np.zeros((input_set.A_u.shape[0], 3))]))
        rhs.append(input_set.b_u)

    vg, lfg, lgg = _rows_for(h_G, system, t, x_hat)
    vg = shift_G.hat(vg)
    rows.append(np.concatenate([lgg, [-vg, 0.0, 0.0]])[None, :])
    rhs.append(np.array([_goal_rhs(p, vg) - lfg - shift_G.margin]))

    vs, lfs, lgs = _rows_for(h_S, system, t, x_hat)
    vs = shift_S.hat(vs)
    rows.append(np.concatenate([lgs, [0.0, vs, 0.0]])[None, :])
    rhs.append(np.array([-lfs - shift_S.margin]))

    if h_T is not None:
        h_T = _sublevel(h_T)
        vt = shift_T.hat(h_T.value(t, x_hat))
        gt = h_T.gradient(t, x_hat)
        lft = float(gt @ system.drift(t, x_hat))
        lgt = gt @ system.input_map(t, x_hat)
        rows.append(np.concatenate([lgt, [0.0, 0.0, vt]])[None, :])
        rhs.append(np.array([-lft - h_T.dt_partial(t, x_hat) - shift_T.margin]))

    sol = solve_qp(QuadraticProgram(H, F, np.vstack(rows), np.concatenate(rhs)))
    if not sol.optimal:
        raise InfeasibleError("Robust FxT QP infeasible", dual_ray=sol.dual_ray,
                              context={"t": t, "x_hat": x_hat.tolist()})
    return sol.z[:m], float(sol.z[m]), float(sol.z[m + 1]), float(sol.z[m + 2])


def estimate_lipschitz(grad_fn, lower, upper, n_samples=2000, seed=0, inflate=1.0):
    """Gradient-norm maximization over a sampled box.

    This is an estimate, not a certificate; callers inflate it as needed.
    """
    rng = np.random.RandomState(seed)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    worst = 0.0
    for _ in range(n_samples):
        x = lower + rng.rand(lower.size) * (upper - lower)
        g = np.asarray(grad_fn(x), dtype=float)
        if np.all(np.isfinite(g)):
            worst = max(worst, float(np.linalg.norm(g)))
    return worst * inflate
