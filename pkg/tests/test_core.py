import numpy as np
import pytest

from safesets import errors
from safesets.core import (
    ClassKappa,
    ClfSpec,
    ConstraintFunction,
    ControlAffineSystem,
    HocbfChain,
    InputPolytope,
    Orientation,
    clf_hocbf_qp_filter,
    eval_psi_chain,
    to_sublevel,
    to_superlevel,
)
from safesets.numkit import OdeProblem, finite_diff, integrate_zoh


def single_integrator_1d():
    return ControlAffineSystem(
        n=1, m=1,
        f=lambda t, x: np.zeros(1),
        g=lambda t, x: np.ones((1, 1)),
    )


def double_integrator():
    # x1dot = x2, x2dot = u
    return ControlAffineSystem(
        n=2, m=1,
        f=lambda t, x: np.array([x[1], 0.0]),
        g=lambda t, x: np.array([[0.0], [1.0]]),
    )


def h_ceiling(rel_degree=2):
    # h = 1 - x1, superlevel-safe
    return ConstraintFunction(
        h=lambda t, x: 1.0 - x[0],
        grad=lambda t, x: np.array([-1.0, 0.0]),
        rel_degree=rel_degree,
    )


def ceiling_chain(alpha):
    sys = double_integrator()
    cf = h_ceiling()
    return HocbfChain(
        cf, [alpha],
        hdots=[lambda t, x: -x[1]],
        terminal_drift=lambda t, x: 0.0,
        terminal_input=lambda t, x: np.array([-1.0]),
    ), sys


class TestClassKappa:
    def test_linear(self):
        a = ClassKappa.linear(2.0)
        assert a(3.0) == 6.0 and a(0.0) == 0.0
        assert a.derivative(5.0) == 2.0
        assert a.inverse(6.0) == pytest.approx(3.0)

    def test_power_odd_extension(self):
        a = ClassKappa.power(2.0, 3.0)
        assert a(-2.0) == pytest.approx(-16.0)
        assert a.derivative(2.0) == pytest.approx(24.0)
        assert a.derivative(-2.0) == pytest.approx(24.0)
        assert a.derivative(-2.0, order=2) == pytest.approx(-24.0)
        assert a.inverse(a(1.7)) == pytest.approx(1.7)

    def test_sqrt(self):
        a = ClassKappa.scaled_sqrt(7.0)
        assert a(4.0) == pytest.approx(14.0)
        assert a(-4.0) == pytest.approx(-14.0)

    def test_invalid(self):
        with pytest.raises(errors.InvalidParams):
            ClassKappa.linear(0.0)


class TestOrientation:
    def test_sublevel_to_superlevel(self):
        cf = ConstraintFunction(h=lambda t, x: x[0] - 1.0,
                                grad=lambda t, x: np.array([1.0]),
                                orientation=Orientation.SUBLEVEL)
        sup = to_superlevel(cf)
        assert sup.orientation is Orientation.SUPERLEVEL
        assert sup.value(0.0, np.array([3.0])) == pytest.approx(-2.0)
        np.testing.assert_allclose(sup.gradient(0.0, np.array([3.0])), [-1.0])

    def test_superlevel_copy(self):
        cf = ConstraintFunction(h=lambda t, x: x[0], grad=lambda t, x: np.array([1.0]))
        out = to_superlevel(cf)
        x = np.array([0.7])
        assert out.value(0, x) == cf.value(0, x)

    def test_involution(self):
        cf = ConstraintFunction(h=lambda t, x: np.sin(x[0]),
                                grad=lambda t, x: np.array([np.cos(x[0])]),
                                time_partial=lambda t, x: 0.5,
                                orientation=Orientation.SUBLEVEL)
        once = to_superlevel(cf)
        twice = to_superlevel(once)
        x = np.array([0.3])
        assert twice.value(0, x) == pytest.approx(once.value(0, x))
        np.testing.assert_allclose(twice.gradient(0, x), once.gradient(0, x))
        assert twice.dt_partial(0, x) == pytest.approx(once.dt_partial(0, x))

    def test_converted_gradient_matches_finite_diff(self):
        cf = ConstraintFunction(h=lambda t, x: x[0] ** 2 + np.sin(x[1]),
                                grad=lambda t, x: np.array([2 * x[0], np.cos(x[1])]),
                                orientation=Orientation.SUBLEVEL)
        sup = to_superlevel(cf)
        x = np.array([0.4, -0.8])
        g_fd = finite_diff(lambda xx: sup.h(0.0, xx), x, eps=1e-6)
        np.testing.assert_allclose(sup.gradient(0.0, x), g_fd, atol=1e-7)


class TestPsiChain:
    def test_rel_degree_one(self):
        sys = single_integrator_1d()
        cf = ConstraintFunction(h=lambda t, x: 1.0 - x[0], grad=lambda t, x: np.array([-1.0]))
        chain = HocbfChain.first_order(cf, sys)
        psis = eval_psi_chain(chain, 0.0, np.array([0.25]))
        assert psis == [pytest.approx(0.75)]

    def test_double_integrator_identity_alpha(self):
        chain, _ = ceiling_chain(ClassKappa.linear(1.0))
        x = np.array([0.5, 0.2])
        psis = eval_psi_chain(chain, 0.0, x)
        assert psis[0] == pytest.approx(0.5)
        assert psis[1] == pytest.approx(-0.2 + 0.5)

    def test_double_integrator_scaled_alpha(self):
        chain, _ = ceiling_chain(ClassKappa.linear(2.0))
        psis = eval_psi_chain(chain, 0.0, np.array([0.5, 0.2]))
        assert psis[1] == pytest.approx(-0.2 + 1.0)

    def test_terminal_pair_affine_in_u(self):
        chain, _ = ceiling_chain(ClassKappa.linear(2.0))
        x = np.array([0.5, 0.2])
        a, row = chain.terminal_pair(0.0, x)
        # psi1 = -x2 + 2(1 - x1); d/dt psi1 = -u + 2(-x2)
        assert a == pytest.approx(2.0 * -0.2)
        np.testing.assert_allclose(row, [-1.0])

    def test_missing_derivative(self):
        cf = h_ceiling()
        with pytest.raises(errors.MissingDerivative):
            HocbfChain(cf, [ClassKappa.linear(1.0)], hdots=[]).psi_values(0, np.zeros(2))

    def test_chain_consistency_along_flow(self):
        # numerically differentiating psi^0 along the flow matches psi^1 - alpha(psi^0)
        chain, sys = ceiling_chain(ClassKappa.linear(1.5))
        x = np.array([0.3, -0.4])
        u = np.array([0.7])
        dt = 1e-4
        prob = OdeProblem(lambda t, xx, uu: sys.xdot(t, xx, uu), x, dt, substeps=4)
        x2 = integrate_zoh(prob, u)
        p0a = eval_psi_chain(chain, 0.0, x)
        p0b = eval_psi_chain(chain, dt, x2)
        dpsi0 = (p0b[0] - p0a[0]) / dt
        assert dpsi0 == pytest.approx(p0a[1] - 1.5 * p0a[0], abs=1e-3)


class TestQpFilter:
    def test_inactive_constraints_pass_reference(self):
        sys = single_integrator_1d()
        cf = ConstraintFunction(h=lambda t, x: 10.0 - x[0], grad=lambda t, x: np.array([-1.0]))
        chain = HocbfChain.first_order(cf, sys)
        box = InputPolytope.box([-5.0], [5.0])
        u, delta = clf_hocbf_qp_filter(sys, box, [chain], None, np.array([0.3]), 0.0, np.array([0.0]))
        assert u[0] == pytest.approx(0.3, abs=1e-7)
        assert delta == pytest.approx(0.0, abs=1e-6)

    def test_boundary_clamps_reference(self):
        # h = -x superlevel-safe (safe iff x <= 0); at x = 0 row forces u <= 0
        sys = single_integrator_1d()
        cf = ConstraintFunction(h=lambda t, x: -x[0], grad=lambda t, x: np.array([-1.0]))
        chain = HocbfChain.first_order(cf, sys)
        u, _ = clf_hocbf_qp_filter(sys, None, [chain], None, np.array([1.0]), 0.0, np.array([0.0]))
        assert u[0] == pytest.approx(0.0, abs=1e-7)

    def test_outside_safe_set_requires_decrease(self):
        sys = single_integrator_1d()
        cf = ConstraintFunction(h=lambda t, x: -x[0], grad=lambda t, x: np.array([-1.0]))
        chain = HocbfChain.first_order(cf, sys)
        box = InputPolytope.box([-1.0], [1.0])
        u, _ = clf_hocbf_qp_filter(sys, box, [chain], None, np.array([1.0]), 0.0, np.array([0.5]))
        assert u[0] == pytest.approx(-0.5, abs=1e-7)

    def test_infeasible_raises(self):
        sys = single_integrator_1d()
        cf = ConstraintFunction(h=lambda t, x: -x[0], grad=lambda t, x: np.array([-1.0]))
        chain = HocbfChain.first_order(cf, sys)
        box = InputPolytope.box([-0.1], [0.1])
        with pytest.raises(errors.InfeasibleError):
            clf_hocbf_qp_filter(sys, box, [chain], None, np.array([0.0]), 0.0, np.array([5.0]))

    def test_closed_loop_safety_double_integrator(self):
        chain, sys = ceiling_chain(ClassKappa.linear(2.0))
        box = InputPolytope.box([-4.0], [4.0])
        clf = ClfSpec(value=lambda t, x: (x[0] - 2.0) ** 2 + x[1] ** 2,
                      grad=lambda t, x: np.array([2 * (x[0] - 2.0), 2 * x[1]]),
                      rate=1.0)
        x = np.array([-1.0, 0.0])
        dt = 0.01
        min_h = np.inf
        for k in range(800):
            u, _ = clf_hocbf_qp_filter(sys, box, [chain], clf, np.zeros(1), k * dt, x,
                                       terminal_alphas=[ClassKappa.linear(2.0)])
            prob = OdeProblem(lambda t, xx, uu: sys.xdot(t, xx, uu), x, dt, substeps=2)
            x = integrate_zoh(prob, u)
            min_h = min(min_h, 1.0 - x[0])
        assert min_h >= -1e-3  # goal at x1=2 is blocked by the ceiling at 1


class TestInputPolytope:
    def test_box_linear_extrema(self):
        box = InputPolytope.box([-1.0, -2.0], [3.0, 2.0])
        row = np.array([1.0, -1.0])
        assert box.inf_linear(row) == pytest.approx(-1.0 - 2.0)
        assert box.sup_linear(row) == pytest.approx(3.0 + 2.0)
        u = box.arg_sup_linear(row)
        assert box.contains(u)
        assert row @ u == pytest.approx(box.sup_linear(row))

    def test_umax(self):
        box = InputPolytope.box([-1.0, -1.0], [1.0, 1.0])
        assert box.u_max == pytest.approx(np.sqrt(2.0))

    def test_polytope_lp_fallback(self):
        tri = InputPolytope(np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]),
                            np.array([0.0, 0.0, 1.0]))
        assert tri.sup_linear(np.array([1.0, 0.0])) == pytest.approx(1.0, abs=1e-6)
