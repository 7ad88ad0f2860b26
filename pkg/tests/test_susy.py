import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builder import build_intertwiner
from chains import ChainSet, JordanSpec, exponential_chain
from core import ConjugateConditionsFail, InconsistentJordanSpec, NonScalarShift, UnequalJordanBlocks
from diffop import Hamiltonian, MatDiffOperator, coefficient_residual, compose
from factor import factorize
from jets import ConstantMatrix
from susy import (
    StrongMinimizationClaim,
    chain_conjugate,
    closure_operator,
    complement,
    complement_composition_check,
    conjugate_general,
    conjugate_order,
    det_identity_check,
    diagonal_pair,
    diagonal_pair_cubic,
    effective_order,
    equal_block_check,
    jordan_of_conjugate,
    minimize_weak,
    removable_roots,
    susy_algebra,
    uniqueness_check,
)

POINTS = [-1.4, -0.3, 0.5, 1.7]
C = np.diag([1.0, 2.0])


def _padded_complement(orders, n):
    """Brute-force block orders of the conjugate kernel at one spectral value."""
    kappa = max(orders)
    padded = sorted(orders, reverse=True) + [0] * (2 * n - len(orders))
    return tuple(sorted((kappa - k for k in padded if kappa - k > 0), reverse=True))


def _diagonal_setup(lams):
    cs = diagonal_pair(lams)
    q = build_intertwiner(cs)
    return cs, q, cs.jordan_spec()


def _exponential_chainset(pairs):
    h = Hamiltonian(ConstantMatrix(C), name="H+")
    return ChainSet(h, [exponential_chain(C, lam, i, sign=s) for lam, i, s in pairs])


FIRST_ORDER = [(-1.0, 0, 1), (-1.0, 1, 1), (-2.5, 0, -1), (-2.5, 1, -1)]


class TestJordanBookkeeping:
    @pytest.mark.parametrize(
        "orders, n, expected",
        [([1, 1, 1, 1], 2, None), ([2, 1], 2, (2, 2, 1)), ([1], 1, (1,)), ([3, 1, 1], 2, (3, 2, 2))],
    )
    def test_examples(self, orders, n, expected):
        out = jordan_of_conjugate(JordanSpec.from_dict({0.0: orders}), n)
        if expected is None:
            assert out.lambdas == []
        else:
            assert out.blocks(0.0) == expected

    def test_exhaustive_small_ranks(self):
        for n in (1, 2):
            for count in range(1, 2 * n + 1):
                for orders in itertools.combinations_with_replacement(range(1, 5), count):
                    js = JordanSpec.from_dict({1.5: list(orders)})
                    out = jordan_of_conjugate(js, n)
                    expected = _padded_complement(list(orders), n)
                    assert (out.blocks(1.5) if out.lambdas else ()) == expected
                    assert js.multiplicity(1.5) + out.multiplicity(1.5) == 2 * n * max(orders)

    @settings(max_examples=50, deadline=None)
    @given(orders=st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=3))
    def test_double_map_returns_original(self, orders):
        js = JordanSpec.from_dict({-0.5: orders})
        back = jordan_of_conjugate(jordan_of_conjugate(js, 2), 2)
        assert back.blocks(-0.5) == js.blocks(-0.5)

    def test_conjugate_order(self):
        js = JordanSpec.from_dict({0.0: [2, 1], 1.0: [1]})
        assert conjugate_order(js, 2, 2) == 4

    @pytest.mark.parametrize(
        "blocks, expected",
        [({0.0: [1, 1]}, 1), ({0.0: [2]}, 3), ({0.0: [1], 1.0: [1]}, 3)],
    )
    def test_conjugate_order_first_order_rank_two(self, blocks, expected):
        assert conjugate_order(JordanSpec.from_dict(blocks), 2, 1) == expected

    def test_removable_roots(self):
        assert removable_roots(JordanSpec.from_dict({0.0: [2, 2, 1, 1]}), 2) == [(0.0, 1)]
        assert removable_roots(JordanSpec.from_dict({0.0: [2, 1]}), 2) == []


class TestMinimization:
    @pytest.mark.parametrize("lam", [3.0, -1.5, 2.0 + 0.5j])
    def test_planted_factor_is_removed(self, lam, fast):
        cs, q, _ = _diagonal_setup([0.0, 1.0])
        planted = compose(q, cs.hamiltonian.shifted(lam).scale(-1.0))
        js = JordanSpec.from_dict({0.0: [1], 1.0: [1], lam: [1, 1, 1, 1]})
        result = minimize_weak(planted, js, cs.hamiltonian, fast)
        assert result.order == 1
        assert result.order_check == (3, 1, 1)
        assert result.report.passed
        assert coefficient_residual(result.p, q, POINTS) < 1e-9
        assert result.remaining.blocks(lam) == ()

    def test_nothing_to_remove(self, fast):
        cs, q, js = _diagonal_setup([0.0, 1.0])
        result = minimize_weak(q, js, cs.hamiltonian, fast)
        assert result.p is q
        assert result.report.passed

    def test_size_mismatch(self, fast):
        cs, q, _ = _diagonal_setup([0.0, 1.0])
        with pytest.raises(InconsistentJordanSpec):
            minimize_weak(q, JordanSpec.from_dict({0.0: [1]}), cs.hamiltonian, fast)

    def test_wrong_jordan_data_leaves_remainder(self, fast):
        cs, q, _ = _diagonal_setup([0.0, 1.0])
        planted = compose(q, cs.hamiltonian.shifted(3.0).scale(-1.0))
        js = JordanSpec.from_dict({0.0: [1], 1.0: [1], 5.0: [1, 1, 1, 1]})
        with pytest.raises(InconsistentJordanSpec):
            minimize_weak(planted, js, cs.hamiltonian, fast)


class TestDiagonalPair:
    def test_distinct_values_give_cubic(self, fast):
        cs, q, js = _diagonal_setup([0.0, 1.0])
        result = conjugate_general(q, js, cs.hamiltonian, fast)
        assert result.order == 3
        assert result.report.passed
        cubic = diagonal_pair_cubic(cs.hamiltonian, [0.0, 1.0])
        assert coefficient_residual(result.q_plus, cubic, POINTS) < 1e-8

    def test_conjugate_order_read_from_coefficients(self, fast):
        cs, q, js = _diagonal_setup([0.0, 1.0])
        result = conjugate_general(q, js, cs.hamiltonian, fast)
        assert result.report.find("N' = -N + 2 sum kappa")[0].detail["observed"] == 3
        padded = MatDiffOperator.from_coeffs([ConstantMatrix(np.eye(2)), ConstantMatrix(np.zeros((2, 2)))])
        assert padded.order == 1
        assert effective_order(padded, POINTS) == 0
        assert effective_order(result.q_plus, POINTS) == 3

    def test_equal_values_give_closure(self, fast):
        cs, q, js = _diagonal_setup([0.5, 0.5])
        assert js.blocks(0.5) == (1, 1)
        result = conjugate_general(q, js, cs.hamiltonian, fast)
        assert result.order == 1
        assert coefficient_residual(result.q_plus, closure_operator(2), POINTS) < 1e-9

    def test_cubic_minimizes_to_closure(self, fast):
        cs, q, js = _diagonal_setup([0.5, 0.5])
        h_minus = conjugate_general(q, js, cs.hamiltonian, fast).h_minus
        cubic = diagonal_pair_cubic(cs.hamiltonian, [0.5, 0.5])
        result = minimize_weak(cubic, JordanSpec.from_dict({0.5: [2, 2, 1, 1]}), h_minus, fast)
        assert result.order == 1
        assert result.report.passed
        assert coefficient_residual(result.p, closure_operator(2).scale(-1.0), POINTS) < 1e-9

    def test_cubic_needs_two_values(self):
        cs = diagonal_pair([0.0, 1.0])
        with pytest.raises(ValueError):
            diagonal_pair_cubic(cs.hamiltonian, [0.0, 1.0, 2.0])

    def test_complement_is_an_involution(self, fast):
        cs, q, js = _diagonal_setup([0.5, 0.5])
        result = conjugate_general(q, js, cs.hamiltonian, fast)
        twice = complement(result.q_plus, result.js_minus, result.h_minus, fast)
        assert coefficient_residual(twice, q, POINTS) < 1e-9


class TestChainConjugate:
    def test_matches_division(self, fast):
        cs = _exponential_chainset(FIRST_ORDER)
        q = build_intertwiner(cs)
        fc = factorize(q, cs, settings=fast)
        reordered = cs.reordered([2, 3, 0, 1])
        alternative = factorize(build_intertwiner(reordered), reordered, settings=fast)
        q_plus, poly, report = chain_conjugate(fc, cs.jordan_spec(), alternative, fast)
        assert report.passed
        assert report.find("shift multiplicities = block sizes")[0].verdict
        assert poly.degree == 2
        assert sorted(lam.real for lam, _ in poly.roots) == pytest.approx([-2.5, -1.0])
        divided = conjugate_general(q, cs.jordan_spec(), cs.hamiltonian, fast).q_plus
        assert coefficient_residual(q_plus, divided, POINTS) < 1e-8

    def test_non_scalar_shift(self, fast):
        # equal blocks per value, but the first factor mixes two values
        cs = _exponential_chainset([(-1.0, 0, 1), (-2.0, 1, 1), (-1.0, 1, 1), (-2.0, 0, 1)])
        fc = factorize(build_intertwiner(cs), cs, settings=fast)
        with pytest.raises(NonScalarShift) as err:
            chain_conjugate(fc, cs.jordan_spec(), settings=fast)
        assert err.value.step == 1

    @pytest.mark.parametrize(
        "pairs",
        [[(-1.0, 0, 1), (-2.0, 1, 1)], [(-1.0, 0, 1), (-1.0, 1, 1), (-2.0, 0, -1), (-2.5, 1, -1)]],
    )
    def test_unequal_blocks_rejected(self, fast, pairs):
        cs = _exponential_chainset(pairs)
        fc = factorize(build_intertwiner(cs), cs, settings=fast)
        with pytest.raises(UnequalJordanBlocks) as err:
            chain_conjugate(fc, cs.jordan_spec(), settings=fast)
        assert isinstance(err.value, ConjugateConditionsFail)
        assert len(err.value.blocks) == 1

    def test_equal_block_check(self):
        js = JordanSpec.from_dict({0.0: [2, 1]})
        with pytest.raises(UnequalJordanBlocks):
            equal_block_check(js, 2)
        equal_block_check(JordanSpec.from_dict({0.0: [2, 2], 1.0: [1, 1]}), 2)


class TestVerification:
    def test_superalgebra(self, fast):
        cs, q, js = _diagonal_setup([0.0, 1.0])
        result = conjugate_general(q, js, cs.hamiltonian, fast)
        report = susy_algebra(cs.hamiltonian, result.h_minus, q, result.q_plus, result.polynomial, fast)
        assert report.passed
        assert len(report.entries) == 5

    def test_det_identity(self, fast):
        cs, q, js = _diagonal_setup([0.0, 1.0])
        result = conjugate_general(q, js, cs.hamiltonian, fast)
        assert result.js_minus.blocks(0.0) == (1, 1, 1)
        assert det_identity_check(js, result.js_minus, result.polynomial, 2, fast).passed
        assert not det_identity_check(js, js, result.polynomial, 2, fast).passed

    def test_uniqueness(self, fast):
        cs, q, js = _diagonal_setup([0.0, 1.0])
        result = conjugate_general(q, js, cs.hamiltonian, fast)
        report = uniqueness_check(q, result.q_plus, js, cs.hamiltonian, fast)
        assert report.passed
        assert len(report.entries) == 3
        assert report.entries[-1].detail["candidates"] == 2

    def test_complement_composition(self, fast):
        cs = _exponential_chainset(FIRST_ORDER)
        fc = factorize(build_intertwiner(cs), cs, settings=fast)
        inner, outer = fc.factors
        report = complement_composition_check(
            outer,
            inner,
            JordanSpec.from_dict({-2.5: [1, 1]}),
            JordanSpec.from_dict({-1.0: [1, 1]}),
            JordanSpec.from_dict({-1.0: [1, 1], -2.5: [1, 1]}),
            cs.hamiltonian,
            fc.intermediates[1],
            fast,
        )
        assert report.passed
        assert report.entries[0].detail["excess"] == 0

    @pytest.mark.parametrize(
        "chains, blocks, excess",
        [
            # one length-2 chain split between its two members
            ([(-1.0, 1, 2)], {"inner": [1], "outer": [1], "whole": [2]}, 0),
            # two eigenfunctions at one value: kappa does not add up
            ([(-1.0, 1, 1), (-1.0, -1, 1)], {"inner": [1], "outer": [1], "whole": [1, 1]}, 1),
        ],
    )
    def test_complement_composition_scalar_split(self, fast, chains, blocks, excess):
        c = np.array([[1.0]])
        h = Hamiltonian(ConstantMatrix(c), name="H+")
        cs = ChainSet(h, [exponential_chain(c, lam, 0, sign=s, length=k) for lam, s, k in chains])
        fc = factorize(build_intertwiner(cs), cs, [1, 2], fast)
        inner, outer = fc.factors
        report = complement_composition_check(
            outer,
            inner,
            JordanSpec.from_dict({-1.0: blocks["outer"]}),
            JordanSpec.from_dict({-1.0: blocks["inner"]}),
            JordanSpec.from_dict({-1.0: blocks["whole"]}),
            h,
            fc.intermediates[1],
            fast,
        )
        assert report.entries[0].detail["excess"] == excess
        assert report.passed


class TestStrongMinimizationClaim:
    def test_side_is_checked(self):
        claim = StrongMinimizationClaim("Q3+", "right", 1, note="recorded only")
        assert claim.reduced_order == 1
        with pytest.raises(ValueError):
            StrongMinimizationClaim("Q3+", "middle", 1)
