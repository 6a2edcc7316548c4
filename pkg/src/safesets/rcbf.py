"""Constructive robust CBFs for relative-degree-2 constraints.

The constraint h is sublevel-safe here (safe iff h <= 0), matching the
source formulation; superlevel inputs are converted on entry. The inner
barrier H = Phi^-1(Phi(h) - hdot_w|hdot_w|/2) absorbs bounded input and
state disturbances, and the filter enforces

    dH/dt <= alpha(-H) - W,   W = ||grad(H) g|| w_u_max + ||grad(H)|| w_x_max.
"""

from dataclasses import dataclass

import numpy as np

from .core import ConstraintFunction, Orientation, to_sublevel
from .errors import (
    DegenerateRow,
    InfeasibleError,
    InvalidParams,
    NotNegative,
    RangeError,
)
from .numkit import QuadraticProgram, solve_qp


@dataclass
class PhiModel:
    """Antiderivative pair (phi, Phi) with Phi strictly decreasing.

    `lambda_max` bounds the domain on which phi < 0 holds; the inverse is
    confined there. A closed-form inverse can be registered; otherwise a
    safeguarded Newton iteration (bisection fallback, tol 1e-10) is used.
    """

    phi: callable
    Phi: callable
    inverse: callable = None
    lambda_max: float = np.inf

    def inv(self, y, seed=0.0, tol=1e-10, max_iter=200):
        if self.inverse is not None:
            return float(self.inverse(y))
        lam_hi = min(self.lambda_max, 1e18)
        # bracket [lo, hi] with Phi(lo) >= y >= Phi(hi) (Phi decreasing)
        lo = hi = min(seed, lam_hi)
        step = max(1.0, abs(seed) * 0.5)
        for _ in range(200):
            if self.Phi(lo) >= y:
                break
            lo -= step
            step *= 2.0
        else:
            raise RangeError("could not bracket Phi inverse from below")
        step = max(1.0, abs(seed) * 0.5)
        for _ in range(200):
            if hi >= lam_hi or self.Phi(hi) <= y:
                hi = min(hi, lam_hi)
                break
            hi = min(hi + step, lam_hi)
            step *= 2.0
        if self.Phi(hi) > y + max(1.0, abs(y)) * 1e-9 and hi >= lam_hi:
            raise RangeError(f"target {y} below Phi({lam_hi}) on the admissible domain")
        lam = 0.5 * (lo + hi)
        for _ in range(max_iter):
            val = self.Phi(lam) - y
            if abs(val) <= tol * max(1.0, abs(y)):
                return float(lam)
            d = self.phi(lam)
            new = lam - val / d if d < 0 else None
            if new is None or not lo <= new <= hi:
                new = 0.5 * (lo + hi)  # bisection fallback
            if self.Phi(new) >= y:
                lo = new
            else:
                hi = new
            lam = new
        return float(lam)

    def validate(self, lambdas, fd_eps=1e-6, require_negative=True):
        """Check Phi' = phi by finite differences and phi < 0 on the samples."""
        for lam in lambdas:
            fd = (self.Phi(lam + fd_eps) - self.Phi(lam - fd_eps)) / (2.0 * fd_eps)
            if abs(fd - self.phi(lam)) > 1e-6 * max(1.0, abs(self.phi(lam))):
                raise InvalidParams(f"Phi' != phi at {lam}")
            if require_negative and self.phi(lam) >= 0.0:
                raise NotNegative(f"phi({lam}) = {self.phi(lam)} is not negative")
        return True


@dataclass
class RcbfState:
    """Diagnostic snapshot of the robust-barrier quantities at one state."""

    h: float
    hdot_w: float
    W: float
    H: float
    w_u_max: float
    w_x_max: float


def hdot_w(h_cf: ConstraintFunction, system, t, x):
    """Worst-case rate of h over state disturbances on the bound sphere."""
    cf = to_sublevel(h_cf)
    g = cf.gradient(t, x)
    return cf.dt_partial(t, x) + float(g @ system.drift(t, x)) \
        + float(np.linalg.norm(g)) * system.w_x_max


def construct_H(phi_model: PhiModel, h_value, hdot_w_value):
    """H = Phi^-1(Phi(h) - hdot_w |hdot_w| / 2); equals h when hdot_w = 0."""
    if hdot_w_value == 0.0:
        return float(h_value)
    y = phi_model.Phi(h_value) - 0.5 * hdot_w_value * abs(hdot_w_value)
    return phi_model.inv(y, seed=h_value)


class RcbfBarrier:
    """Bundles h, its Phi model, and the system; evaluates H and its slopes.

    grad(H) is computed by central finite differences of construct_H, as the
    chain rule through Phi^-1 and |.| is error-prone.
    """

    def __init__(self, h_cf, phi_model, system, fd_step=1e-4):
        self.h = to_sublevel(h_cf)
        self.phi_model = phi_model
        self.system = system
        self.fd_step = fd_step

    def hdot_w(self, t, x):
        return hdot_w(self.h, self.system, t, x)

    def value(self, t, x):
        return construct_H(self.phi_model, self.h.value(t, x), self.hdot_w(t, x))

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.size)
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = self.fd_step * max(1.0, abs(x[i]))
            g[i] = (self.value(t, x + e) - self.value(t, x - e)) / (2.0 * e[i])
        return g

    def dt_partial(self, t, x):
        if self.h.time_partial is None:
            return 0.0
        dt = self.fd_step
        return (self.value(t + dt, x) - self.value(t - dt, x)) / (2.0 * dt)

    def w_margin(self, t, x):
        return w_margin(self, self.system, t, x)

    def state(self, t, x) -> RcbfState:
        return RcbfState(h=self.h.value(t, x), hdot_w=self.hdot_w(t, x),
                         W=self.w_margin(t, x), H=self.value(t, x),
                         w_u_max=self.system.w_u_max, w_x_max=self.system.w_x_max)


def w_margin(barrier: RcbfBarrier, system, t, x):
    """W = ||grad(H) g|| w_u_max + ||grad(H)|| w_x_max."""
    gH = barrier.grad(t, x)
    row = gH @ system.input_map(t, x)
    return float(np.linalg.norm(row)) * system.w_u_max \
        + float(np.linalg.norm(gH)) * system.w_x_max


RESTRICTED_SET_TOL = 1e-9


def rcbf_filter(barrier: RcbfBarrier, alpha, u_ref, input_set, t, x):
    """Min-norm deviation from u_ref subject to the robust barrier row.

    Requires the state in the restricted safe set (h <= tol and H <= tol).
    """
    x = np.asarray(x, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float).ravel()
    sysm = barrier.system
    h_val = barrier.h.value(t, x)
    H_val = barrier.value(t, x)
    if h_val > RESTRICTED_SET_TOL or H_val > RESTRICTED_SET_TOL:
        raise InfeasibleError("state outside the restricted safe set",
                              context={"h": h_val, "H": H_val})
    gH = barrier.grad(t, x)
    row = gH @ sysm.input_map(t, x)
    W = barrier.w_margin(t, x)
    rhs = alpha(-H_val) - W - barrier.dt_partial(t, x) - float(gH @ sysm.drift(t, x))

    m = sysm.m
    H = 2.0 * np.eye(m)
    F = -2.0 * u_ref
    rows = [row[None, :]]
    bs = [np.array([rhs])]
    if input_set is not None:
        rows.append(input_set.A_u)
        bs.append(input_set.b_u)
    sol = solve_qp(QuadraticProgram(H, F, np.vstack(rows), np.concatenate(bs)))
    if not sol.optimal:
        raise InfeasibleError("RCBF filter infeasible", dual_ray=sol.dual_ray,
                              context={"h": h_val, "H": H_val, "t": t})
    return sol.z


def orbit_phi(mu, rho, u_max, w_u_max=0.0, w_x_max=0.0, check_range=None):
    """Phi model for the orbital keep-out constraint h = rho - ||r||.

    phi(h) = mu/(rho - h)^2 + w_x_max + w_u_max - u_max, with antiderivative
    Phi(lambda) = mu/(rho - lambda) + (w_u_max + w_x_max - u_max) lambda.
    Raises NotNegative when the available authority cannot dominate gravity
    at the constraint boundary.
    """
    c = w_u_max + w_x_max - u_max
    if c >= 0.0:
        raise NotNegative("u_max must exceed the combined disturbance bounds")
    lam_max = rho - np.sqrt(mu / (-c))
    model = PhiModel(
        phi=lambda lam: mu / (rho - lam) ** 2 + w_x_max + w_u_max - u_max,
        Phi=lambda lam: mu / (rho - lam) + c * lam,
        lambda_max=lam_max,
    )
    if model.phi(0.0) >= 0.0:
        raise NotNegative(f"phi(0) = {model.phi(0.0):.4f} >= 0 at the boundary")
    if check_range is not None:
        model.validate(np.linspace(check_range[0], check_range[1], 25))
    return model


def asymptotic_equality_controller(barrier: RcbfBarrier, alpha_w, system, t, x,
                                   eta_bounds=(1e-12, np.inf)):
    """Least-norm u solving dH/dt + W = alpha_w(-H) W exactly.

    Trajectories under this law approach {H in [-alpha_w^-1(2), 0]}.
    """
    x = np.asarray(x, dtype=float)
    W = barrier.w_margin(t, x)
    if not eta_bounds[0] <= W <= eta_bounds[1]:
        raise InvalidParams(f"W = {W} outside [{eta_bounds[0]}, {eta_bounds[1]}]")
    gH = barrier.grad(t, x)
    row = gH @ system.input_map(t, x)
    nrm2 = float(row @ row)
    if nrm2 <= 1e-16:
        raise DegenerateRow("grad(H) g vanished")
    H_val = barrier.value(t, x)
    target = alpha_w(-H_val) * W - W - barrier.dt_partial(t, x) - float(gH @ system.drift(t, x))
    return row * (target / nrm2)


def tr_cbf_row(h_cf: ConstraintFunction, system, kappa, alpha, t, x):
    """Tunable-robust CBF row (superlevel-safe h, safe iff h >= 0).

    Returns (coeff, rhs) encoding coeff @ u <= rhs, i.e.
    L_f h + L_g h u >= -alpha(h) + kappa(h) ||L_{g_d} h|| d_bar.
    kappa(h) = 1 at the boundary recovers the worst-case margin.
    """
    cf = h_cf if h_cf.orientation is Orientation.SUPERLEVEL else h_cf  # caller intent
    h_val = cf.value(t, x)
    g = cf.gradient(t, x)
    lf = cf.dt_partial(t, x) + float(g @ system.drift(t, x))
    lg = g @ system.input_map(t, x)
    margin = 0.0
    if system.g_d is not None and system.d_bar > 0.0:
        lgd = g @ np.atleast_2d(np.asarray(system.g_d(x), dtype=float).reshape(len(g), -1))
        margin = float(kappa(h_val)) * float(np.linalg.norm(lgd)) * system.d_bar
    return -lg, lf + alpha(h_val) - margin


def kappa_sigmoid(r):
    """kappa(r) = 2 / (1 + e^r): equals 1 at the boundary, relaxes inside."""
    return 2.0 / (1.0 + np.exp(r))
