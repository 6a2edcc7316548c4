import numpy as np
import pytest

from safesets import errors
from safesets.core import (
    ClassKappa,
    ConstraintFunction,
    ControlAffineSystem,
    HocbfChain,
    InputPolytope,
    eval_psi_chain,
)
from safesets.iccbf import IccbfRegion, IccbfSequence, eval_b, iccbf_qp, verify_iccbf
from safesets.numkit import QuadraticProgram, enumerate_active_sets


def scalar_system():
    return ControlAffineSystem(n=1, m=1, f=lambda t, x: np.zeros(1),
                               g=lambda t, x: np.ones((1, 1)))


def double_integrator():
    return ControlAffineSystem(n=2, m=1,
                               f=lambda t, x: np.array([x[1], 0.0]),
                               g=lambda t, x: np.array([[0.0], [1.0]]))


def seq_1d():
    # h = -x (safe iff x <= 0), U = [-1, 1], alpha_0 = identity
    sys = scalar_system()
    cf = ConstraintFunction(h=lambda t, x: -x[0], grad=lambda t, x: np.array([-1.0]))
    return IccbfSequence(cf, [ClassKappa.linear(1.0)], InputPolytope.box([-1.0], [1.0]), sys)


class TestEvalB:
    def test_b0_is_h(self):
        seq = seq_1d()
        assert eval_b(seq, 0, np.array([0.3])) == pytest.approx(-0.3)

    def test_hand_inf_over_box(self):
        # b1 = inf_u(-u) + (-x) = -1 - x
        seq = seq_1d()
        for x in (-2.0, 0.0, 1.5):
            assert eval_b(seq, 1, np.array([x])) == pytest.approx(-1.0 - x, abs=1e-9)

    def test_remark2_control_free_reduction(self):
        # relative degree 2: L_g b0 = 0, so b1 = L_f h + alpha_0(h) with no inf
        sys = double_integrator()
        cf = ConstraintFunction(h=lambda t, x: 1.0 - x[0],
                                grad=lambda t, x: np.array([-1.0, 0.0]), rel_degree=2)
        seq = IccbfSequence(cf, [ClassKappa.linear(4.0)],
                            InputPolytope.box([-1.0], [1.0]), sys)
        x = np.array([0.4, 0.6])
        assert eval_b(seq, 1, x) == pytest.approx(-0.6 + 4.0 * 0.6)

    def test_remark2_matches_hocbf_chain(self):
        sys = double_integrator()
        cf = ConstraintFunction(h=lambda t, x: 1.0 - x[0],
                                grad=lambda t, x: np.array([-1.0, 0.0]), rel_degree=2)
        alpha = ClassKappa.linear(2.5)
        seq = IccbfSequence(cf, [alpha], InputPolytope.box([-1.0], [1.0]), sys)
        chain = HocbfChain(cf, [alpha], hdots=[lambda t, x: -x[1]],
                           terminal_drift=lambda t, x: 0.0,
                           terminal_input=lambda t, x: np.array([-1.0]))
        rng = np.random.RandomState(0)
        for _ in range(1000):
            x = rng.randn(2) * 3.0
            psi = eval_psi_chain(chain, 0.0, x)
            assert eval_b(seq, 1, x) == pytest.approx(psi[1], abs=1e-9)

    def test_out_of_range(self):
        with pytest.raises(errors.GradientUnavailable):
            eval_b(seq_1d(), 2, np.array([0.0]))


class TestVerify:
    def test_slack_authority_verifies(self):
        # 1-D with huge input authority: condition holds with positive margin
        sys = scalar_system()
        cf = ConstraintFunction(h=lambda t, x: -x[0], grad=lambda t, x: np.array([-1.0]))
        seq = IccbfSequence(cf, [ClassKappa.linear(1.0)],
                            InputPolytope.box([-100.0], [100.0]), sys)
        region = IccbfRegion([-3.0], [-1.0], resolution=50)
        report = verify_iccbf(seq, region, ClassKappa.linear(1.0))
        assert report.verified
        assert report.worst_margin > 0

    def test_weak_authority_fails_with_witness(self):
        sys = scalar_system()
        cf = ConstraintFunction(h=lambda t, x: -x[0], grad=lambda t, x: np.array([-1.0]))
        seq = IccbfSequence(cf, [ClassKappa.linear(1.0)],
                            InputPolytope.box([-0.01], [0.01]), sys)
        # b1 = -0.01 - x >= 0 iff x <= -0.01: region inside C*
        region = IccbfRegion([-3.0], [-0.02], resolution=60)
        # sup-side uses a tiny box too: margin = 0.01 + alpha_N(b1) + ... compare
        # against a demanding alpha_N rate that the authority cannot meet
        strong_alpha = ClassKappa.custom(lambda z: 5.0 * z - 1.0 * (z < -1e9))
        report = verify_iccbf(seq, region, lambda z: 5.0 * z - 2.0)
        assert not report.verified
        assert len(report.witness) == 1

    def test_empty_region(self):
        seq = seq_1d()
        region = IccbfRegion([5.0], [6.0], resolution=10)  # h < 0 there
        with pytest.raises(errors.EmptyRegion):
            verify_iccbf(seq, region, ClassKappa.linear(1.0))

    def test_nesting(self):
        seq = seq_1d()
        pts = IccbfRegion([-3.0], [3.0], resolution=101).grid()
        for x in pts:
            if seq.membership(x):
                assert all(eval_b(seq, k, x) >= 0 for k in range(seq.N + 1))


class TestIccbfQp:
    def test_interior_reference_passthrough(self):
        seq = seq_1d()
        u = iccbf_qp(seq, ClassKappa.linear(1.0), np.array([0.2]),
                     seq.input_set, np.array([-5.0]))
        assert u[0] == pytest.approx(0.2, abs=1e-7)

    def test_input_bound_clamps_reference(self):
        seq = seq_1d()
        u = iccbf_qp(seq, ClassKappa.linear(1.0), np.array([9.0]),
                     seq.input_set, np.array([-50.0]))
        assert u[0] == pytest.approx(1.0, abs=1e-7)

    def test_matches_oracle_near_boundary(self):
        seq = seq_1d()
        x = np.array([-1.05])  # b1 = 0.05, row binds under a pushy reference
        lf, lg, b1 = seq.terminal_row(x)
        u_ref = np.array([5.0])
        qp = QuadraticProgram(2.0 * np.eye(1), -2.0 * u_ref,
                              np.vstack([-np.atleast_2d(lg), seq.input_set.A_u]),
                              np.concatenate([[lf + b1], seq.input_set.b_u]))
        z_ref, _ = enumerate_active_sets(qp)
        u = iccbf_qp(seq, ClassKappa.linear(1.0), u_ref, seq.input_set, x)
        np.testing.assert_allclose(u, z_ref, atol=1e-6)

    def test_outside_region_warns(self):
        seq = seq_1d()
        with pytest.warns(RuntimeWarning):
            iccbf_qp(seq, ClassKappa.linear(1.0), np.array([0.0]),
                     seq.input_set, np.array([2.0]))
