import numpy as np
import pytest

from builder import build_intertwiner, certify_intertwining, kernel_operator, kernel_residual, partner_hamiltonian
from chains import Chain, ChainSet, exponential_chain
from core import SingularLeadingCoefficient
from diffop import Hamiltonian, MatDiffOperator, add, coefficient_residual, compose, matrix_operator
from jets import X, Const, ConstantMatrix, ExprMatrix
from susy import diagonal_pair

POINTS = [-1.7, -0.4, 0.6, 1.8]
C = np.array([[2.0, 0.5], [0.5, 1.0]])


def _ladder_operator():
    return MatDiffOperator.from_coeffs([ExprMatrix.diagonal([X, X]), ConstantMatrix(np.eye(2))], name="a")


class TestDiagonalPair:
    def test_gaussian_kernel_gives_ladder_operator(self):
        cs = diagonal_pair([0.0, 1.0])
        q = build_intertwiner(cs)
        assert (q.n, q.order) == (2, 1)
        assert coefficient_residual(q, _ladder_operator(), POINTS) < 1e-10
        assert kernel_residual(q, cs.members(), POINTS) < 1e-12

    def test_partner_potential(self):
        cs = diagonal_pair([0.0, 1.0])
        q = build_intertwiner(cs)
        h_minus = partner_hamiltonian(q, cs.hamiltonian)
        for x in POINTS:
            expected = np.diag([x * x + 1.0, x * x + 2.0])
            np.testing.assert_allclose(h_minus.potential.value(x), expected, atol=1e-10)

    def test_certificate(self, fast):
        cs = diagonal_pair([0.0, 1.0])
        report = certify_intertwining(build_intertwiner(cs), cs.hamiltonian, cs, fast)
        assert report.passed
        assert {e.anchor for e in report.entries} == {"intertwining", "kernel"}

    def test_perturbation_breaks_intertwining(self, fast):
        cs = diagonal_pair([0.0, 1.0])
        q = build_intertwiner(cs)
        bumped = add(q, matrix_operator(1e-3 * np.array([[0.0, 1.0], [0.0, 0.0]])))
        assert not certify_intertwining(bumped, cs.hamiltonian, settings=fast).passed


class TestKernelOperator:
    def test_free_second_derivative(self):
        free = Hamiltonian(ConstantMatrix([[0.0]]))
        cs = ChainSet(free, [Chain(0.0, (ExprMatrix([[Const(1.0)]]),)), Chain(0.0, (ExprMatrix([[X]]),))])
        q = build_intertwiner(cs)
        assert q.order == 2
        for x in POINTS:
            np.testing.assert_allclose(q.values(x)[:, 0, 0], [0.0, 0.0, 1.0], atol=1e-12)
            assert partner_hamiltonian(q, free).potential.value(x)[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_exponential_chains(self, fast):
        h = Hamiltonian(ConstantMatrix(C), name="H+")
        cs = ChainSet(h, [exponential_chain(C, -1.0, 0), exponential_chain(C, -1.5, 1, sign=-1)])
        q = build_intertwiner(cs)
        assert kernel_residual(q, cs.members(), POINTS) < 1e-10
        assert certify_intertwining(q, h, cs, fast).passed

    def test_leading_coefficient_is_respected(self, fast):
        h = Hamiltonian(ConstantMatrix(C))
        cs = ChainSet(h, [exponential_chain(C, -1.0, 0), exponential_chain(C, -1.0, 1)])
        lead = np.array([[1.0, 2.0], [0.0, 1.0]])
        monic = build_intertwiner(cs)
        q = build_intertwiner(cs, leading=lead)
        np.testing.assert_allclose(q.leading, lead)
        np.testing.assert_allclose(q.values(0.3)[1], lead)
        assert coefficient_residual(q, compose(matrix_operator(lead), monic), POINTS) < 1e-10
        assert certify_intertwining(q, h, cs, fast).passed

    def test_singular_leading_rejected(self):
        cs = diagonal_pair([0.0, 1.0])
        with pytest.raises(SingularLeadingCoefficient):
            build_intertwiner(cs, leading=[[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SingularLeadingCoefficient):
            build_intertwiner(cs, leading=[[1.0, 0.0], [0.0, 0.0]])

    def test_kernel_has_dimension_n_times_order(self, fast):
        h = Hamiltonian(ConstantMatrix(C))
        pairs = [(-1.0, 0, 1), (-1.0, 1, 1), (-2.5, 0, -1), (-2.5, 1, -1)]
        cs = ChainSet(h, [exponential_chain(C, lam, i, sign=s) for lam, i, s in pairs])
        q = build_intertwiner(cs)
        assert q.order * q.n == len(cs.members()) == 4
        assert kernel_residual(q, cs.members(), POINTS) < 1e-9
        assert certify_intertwining(q, h, cs, fast).passed

    @pytest.mark.parametrize("lead", [np.diag([1.0, 2.0]), np.array([[0.0, 1.0], [-3.0, 0.5]]), np.eye(2) * (1.0 + 1.0j)])
    def test_scaling_leading_scales_operator(self, lead):
        h = Hamiltonian(ConstantMatrix(C))
        cs = ChainSet(h, [exponential_chain(C, -1.0, 0), exponential_chain(C, -2.0, 1, sign=-1)])
        monic = build_intertwiner(cs)
        scaled = build_intertwiner(cs, leading=lead)
        assert coefficient_residual(scaled, compose(matrix_operator(lead), monic), POINTS) < 1e-10
        assert kernel_residual(scaled, cs.members(), POINTS) < 1e-10

    def test_member_count_must_fit(self):
        with pytest.raises(ValueError):
            kernel_operator([ExprMatrix.column([X, X])] * 3, 2)
