import numpy as np
import pytest

from builder import build_intertwiner
from chains import Chain, ChainSet, exponential_chain
from core import BadScalarData, DegenerateBasis, NotRegularlyReducible
from diffop import Hamiltonian, coefficient_residual, compose, matrix_operator
from factor import (
    factorize,
    first_order_chain,
    irreducible_example,
    mirror_factorization,
    reduce,
    wronskian_sign,
)
from jets import X, Const, ConstantMatrix, ExprMatrix

POINTS = [-1.2, 0.1, 0.8, 1.6]
C = np.diag([1.0, 2.0])


def _first_order_chainset():
    h = Hamiltonian(ConstantMatrix(C), name="H+")
    chains = [
        exponential_chain(C, -1.0, 0),
        exponential_chain(C, -1.0, 1),
        exponential_chain(C, -2.5, 0, sign=-1),
        exponential_chain(C, -2.5, 1, sign=-1),
    ]
    return ChainSet(h, chains)


class TestFactorize:
    def test_first_order_ladder(self, fast):
        cs = _first_order_chainset()
        q = build_intertwiner(cs)
        fc = factorize(q, cs, settings=fast)
        assert fc.ladder == [1, 2]
        assert fc.orders == [1, 1]
        assert fc.report.passed
        assert coefficient_residual(fc.recomposed(), q, POINTS) < 1e-9

    def test_first_order_shifts_are_scalar(self, fast):
        cs = _first_order_chainset()
        fc = factorize(build_intertwiner(cs), cs, settings=fast)
        steps, report = first_order_chain(fc, fast)
        assert report.passed
        assert len(steps) == 2
        for step, lam in zip(steps, (-1.0, -2.5)):
            np.testing.assert_allclose(step.u0.value(0.7), lam * np.eye(2), atol=1e-9)
        shifts = report.find("U_1 scalar")[0].detail["scalar_values"]
        assert shifts[0] == pytest.approx(-1.0)

    def test_scalar_two_step(self, fast):
        c = np.array([[1.0]])
        h = Hamiltonian(ConstantMatrix(c), name="H+")
        cs = ChainSet(h, [exponential_chain(c, -1.0, 0), exponential_chain(c, -2.5, 0, sign=-1)])
        q = build_intertwiner(cs)
        fc = factorize(q, cs, settings=fast)
        assert (fc.ladder, fc.orders) == ([1, 2], [1, 1])
        assert fc.report.passed
        assert coefficient_residual(fc.recomposed(), q, POINTS) < 1e-9
        steps, report = first_order_chain(fc, fast)
        assert report.passed
        assert [complex(s.u0.value(0.3)[0, 0]) for s in steps] == [pytest.approx(-1.0), pytest.approx(-2.5)]

    def test_commuting_non_scalar_shift(self, fast):
        h = Hamiltonian(ConstantMatrix(C), name="H+")
        cs = ChainSet(h, [exponential_chain(C, -1.0, 0), exponential_chain(C, -2.0, 1)])
        fc = factorize(build_intertwiner(cs), cs, settings=fast)
        steps, report = first_order_chain(fc, fast)
        assert report.passed
        np.testing.assert_allclose(steps[0].u0.value(0.4), np.diag([-1.0, -2.0]), atol=1e-9)
        assert report.find("U_1 scalar")[0].residual > 0.1
        assert report.find("[U_1, Q-_1] = 0")[0].verdict

    @pytest.mark.parametrize("lead", [np.array([[1.0, 0.5], [0.0, 2.0]]), np.diag([1.0, 2.0])])
    def test_mirror(self, fast, lead):
        cs = _first_order_chainset()
        q = build_intertwiner(cs, leading=lead)
        fc = factorize(q, cs, settings=fast)
        assert fc.report.passed
        mirrored = mirror_factorization(fc, settings=fast)
        assert (fc.side, mirrored.side) == ("left", "right")
        assert mirrored.report.passed
        assert coefficient_residual(mirrored.recomposed(), q, POINTS) < 1e-9
        conjugated = compose(compose(matrix_operator(lead), fc.factors[0]), matrix_operator(np.linalg.inv(lead)))
        assert coefficient_residual(mirrored.factors[0], conjugated, POINTS) < 1e-10

    def test_ladder_validation(self, fast):
        cs = _first_order_chainset()
        q = build_intertwiner(cs)
        assert factorize(q, cs, [2], fast).orders == [2]
        with pytest.raises(ValueError):
            factorize(q, cs, [1, 1], fast)

    def test_first_order_steps_need_order_one(self, fast):
        cs = _first_order_chainset()
        fc = factorize(build_intertwiner(cs), cs, [2], fast)
        with pytest.raises(ValueError):
            first_order_chain(fc, fast)


class TestReduce:
    def test_regular_reduction(self, fast):
        cs = _first_order_chainset()
        q = build_intertwiner(cs)
        outer, inner, h_mid = reduce(q, cs, 1, fast)
        assert (outer.order, inner.order) == (1, 1)
        assert h_mid.n == 2

    def test_reduction_report(self, fast):
        cs = _first_order_chainset()
        assert reduce(build_intertwiner(cs), cs, 1, fast).report.passed

    def test_reduction_agrees_with_factorization(self, fast):
        cs = _first_order_chainset()
        q = build_intertwiner(cs)
        fc = factorize(q, cs, settings=fast)
        outer, inner, h_mid = reduce(q, cs, 1, fast)
        assert coefficient_residual(inner, fc.factors[0], POINTS) < 1e-9
        assert coefficient_residual(outer, fc.factors[1], POINTS) < 1e-9
        for x in POINTS:
            np.testing.assert_allclose(h_mid.potential.value(x), fc.intermediates[1].potential.value(x), atol=1e-9)

    def test_real_zero_blocks_reduction(self, fast):
        free = Hamiltonian(ConstantMatrix([[0.0]]))
        cs = ChainSet(free, [Chain(0.0, (ExprMatrix([[X]]),)), Chain(0.0, (ExprMatrix([[Const(1.0)]]),))])
        q = build_intertwiner(cs)
        with pytest.raises(NotRegularlyReducible) as err:
            reduce(q, cs, 1, fast)
        assert err.value.prefix == 1

    def test_prefix_range(self, fast):
        cs = _first_order_chainset()
        with pytest.raises(ValueError):
            reduce(build_intertwiner(cs), cs, 3, fast)


class TestIrreducible:
    @pytest.mark.parametrize(
        "n, big, sign", [(1, 2, 1), (2, 1, 1), (2, 2, -1), (2, 3, -1), (3, 2, -1), (2, 4, 1), (4, 2, 1)]
    )
    def test_wronskian_sign(self, n, big, sign):
        assert wronskian_sign(n, big) == sign

    @pytest.mark.parametrize("n, big", [(2, 2), (2, 3), (3, 2)])
    def test_stacked_examples(self, n, big, fast):
        example = irreducible_example(n, big, settings=fast)
        assert (example.q.n, example.q.order) == (n, big)
        assert example.report.passed
        assert example.report.find("stacked Wronskian sign identity")[0].detail["sign"] == wronskian_sign(n, big)
        for m in range(1, big):
            assert example.report.find(f"W_{m} = 0")[0].verdict
            with pytest.raises(NotRegularlyReducible):
                reduce(example.q, example.chainset, m, fast)

    def test_vanishing_prefix_cannot_be_a_ladder_step(self, fast):
        example = irreducible_example(2, 2, settings=fast)
        with pytest.raises(DegenerateBasis):
            factorize(example.q, example.chainset, [1, 2], fast)
        assert factorize(example.q, example.chainset, settings=fast).orders == [2]

    def test_bad_scalar_data(self, fast):
        one = ExprMatrix([[Const(1.0)]])
        with pytest.raises(BadScalarData) as err:
            irreducible_example(1, 2, [(Const(0.0), [one, one])], settings=fast)
        assert err.value.block == 1
