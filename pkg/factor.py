"""Factorization of intertwiners through intermediate Hamiltonians.

Covers the chain of factors defined by a Wronskian ladder, first-order
closure operators, the mirrored factorization, regular reduction through a
pole-free intermediate Hamiltonian and the stacked irreducible construction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from builder import build_intertwiner, certify_intertwining, kernel_operator, partner_hamiltonian
from chains import (
    Chain,
    ChainSet,
    assemble_diag,
    chain_residual,
    hadamard_ratio,
    nonvanishing_ladder,
    polynomial_chain,
    prefix_ratio,
    random_shifts,
    scan_prefix,
    wronskian_matrix,
)
from core import (
    DEFAULT_SETTINGS,
    BadScalarData,
    DegenerateBasis,
    FactorizationResidual,
    NotRegularlyReducible,
    PointSampler,
    Settings,
    VerificationReport,
    relative_residual,
)
from diffop import (
    Hamiltonian,
    MatDiffOperator,
    chained,
    coefficient_residual,
    compose,
    compose_all,
    derivative_operator,
    intertwining_residual,
    matrix_operator,
    probe_battery,
    probe_residual,
    remainder_residual,
    right_divide,
)
from jets import Const, ExprMatrix, MatrixFunctionEvaluator, ProceduralMatrix, ScalarExpr, series_derivative, series_matmul

logger = logging.getLogger(__name__)


@dataclass
class FactorizationChain:
    """Factors Q_1..Q_M (applied in that order) with H_0 = H+, ..., H_M.

    ``side`` tells where the constant leading coefficient sits:
    "left" means Q = X_N Q_M...Q_1, "right" means Q = Q_M...Q_1 X_N.
    """

    factors: list[MatDiffOperator]
    intermediates: list[Hamiltonian]
    ladder: list[int]
    leading: np.ndarray
    side: str = "left"
    report: VerificationReport = field(default_factory=lambda: VerificationReport("factorize"))

    @property
    def orders(self) -> list[int]:
        return [f.order for f in self.factors]

    @property
    def singular_sets(self) -> list[tuple[float, ...]]:
        return [f.singular_set for f in self.factors]

    def composition(self) -> MatDiffOperator:
        return compose_all(list(reversed(self.factors)))

    def recomposed(self) -> MatDiffOperator:
        xn = matrix_operator(self.leading, name="X_N")
        if self.side == "left":
            return compose(xn, self.composition())
        return compose(self.composition(), xn)

    def image(self, f: MatrixFunctionEvaluator, steps: int) -> MatrixFunctionEvaluator:
        """Q_steps...Q_1 f by chained application."""
        return chained(*reversed(self.factors[:steps]))(f) if steps else f


def regular_points(
    ops: Sequence[MatDiffOperator], settings: Settings, stage: str, count: int | None = None
) -> list[float]:
    """Seeded sample points at which every operator's coefficients evaluate."""
    avoid = {p for op in ops for p in op.singular_set}
    sampler = PointSampler(settings, avoid)
    checked = sampler.evaluate(lambda x: [op.values(x) for op in ops], count or settings.sample_points, stage=stage)
    return [x for x, _ in checked]


def _validate_ladder(cs: ChainSet, ladder: Sequence[int], settings: Settings) -> list[int]:
    ladder = [int(j) for j in ladder]
    big = cs.order
    if not ladder or ladder[-1] != big or any(b <= a for a, b in zip(ladder, ladder[1:])) or ladder[0] < 1:
        raise ValueError(f"ladder {ladder} must increase strictly and end at N={big}")
    allowed = set(nonvanishing_ladder(cs, settings))
    for j in ladder[:-1]:
        if j not in allowed:
            raise DegenerateBasis(f"prefix Wronskian W_{j} vanishes identically; {j} cannot be a ladder step")
    return ladder


def factorize(
    q: MatDiffOperator,
    cs: ChainSet,
    ladder: Sequence[int] | None = None,
    settings: Settings = DEFAULT_SETTINGS,
) -> FactorizationChain:
    """Split Q = X_N Q_M...Q_1 along a ladder of nonvanishing prefix Wronskians.

    The default ladder is the maximal one.  Factors m < M annihilate the
    images of their slice of the basis; the last factor is the exact quotient.
    """
    ladder = nonvanishing_ladder(cs, settings) if ladder is None else _validate_ladder(cs, ladder, settings)
    n = cs.n
    members = cs.members()
    xn = q.leading if q.leading is not None else np.eye(n, dtype=complex)
    running = compose(matrix_operator(np.linalg.inv(xn)), q)
    h_plus = cs.hamiltonian
    factors: list[MatDiffOperator] = []
    intermediates: list[Hamiltonian] = [h_plus]
    remainders: list[tuple[MatDiffOperator, MatDiffOperator, MatDiffOperator]] = []
    previous = 0
    for m, j in enumerate(ladder, start=1):
        if m < len(ladder):
            images = [chained(*reversed(factors))(f) if factors else f for f in members[n * previous : n * j]]
            factor = kernel_operator(images, n, name=f"Q_{m}", settings=settings)
            dividend = running
            running, remainder = right_divide(dividend, factor, settings)
            remainders.append((dividend, factor, remainder))
        else:
            factor = running
            factor.name = f"Q_{m}"
        factors.append(factor)
        intermediates.append(partner_hamiltonian(factor, intermediates[-1], name=f"H_{m}"))
        previous = j
    fc = FactorizationChain(factors, intermediates, list(ladder), xn)
    logger.info("factorized %s along ladder %s into orders %s", q.name, ladder, fc.orders)

    points = regular_points(factors + [q], settings, "factorize")
    report = fc.report
    for dividend, factor, remainder in remainders:
        residual = remainder_residual(dividend, remainder, points)
        if residual > settings.tol_chain:
            raise FactorizationResidual(f"division by {factor.name} is inexact", residual=residual)
        report.add(f"remainder after {factor.name}", "factor-division", residual, settings.tol_accept, points=points)
    probes = probe_battery(n)
    report.add(
        "Q = X_N Q_M...Q_1",
        "factor-recomposition",
        probe_residual(q, chained(matrix_operator(xn), *reversed(factors)), probes, points),
        settings.tol_accept,
        points=points,
    )
    for m, factor in enumerate(factors, start=1):
        link = intertwining_residual(factor, intermediates[m - 1], intermediates[m], probes, points, settings)
        report.add(
            f"Q_{m} H_{m - 1} = H_{m} Q_{m}",
            "chain-intertwining",
            max(e.residual for e in link.entries),
            settings.tol_accept,
            points=points,
        )
    for m, j in enumerate(ladder, start=1):
        killed = [fc.image(f, m) for f in members[: n * j]]
        residual = max(
            (float(np.max(np.abs(k.value(x)))) / max(1.0, float(np.max(np.abs(f.value(x)))))
             for k, f in zip(killed, members[: n * j]) for x in points),
            default=0.0,
        )
        report.add(f"Q_{m}...Q_1 Phi_l = 0, l < {n * j}", "factor-kernel", residual, settings.tol_accept, points=points)
    transport = 0.0
    for m in range(len(factors)):
        for chain in cs.chains:
            images = Chain(chain.lam, tuple(fc.image(f, m) for f in chain.members))
            transport = max(transport, chain_residual(intermediates[m], images, points))
    report.add("eigenvalue transport", "factor-eigenvalues", transport, settings.tol_accept, points=points)
    h_minus = partner_hamiltonian(q, h_plus)
    report.add(
        "X_N H_M = H- X_N",
        "chain-closing",
        coefficient_residual(
            compose(matrix_operator(xn), intermediates[-1]), compose(h_minus, matrix_operator(xn)), points
        ),
        settings.tol_accept,
        points=points,
    )
    report.add(
        "backward potential recurrence",
        "potential-recurrence",
        _backward_potentials(fc, h_minus, points),
        settings.tol_accept,
        points=points,
    )
    return fc


def _backward_potentials(fc: FactorizationChain, h_minus: Hamiltonian, points: Sequence[float]) -> float:
    """Run V_{m-1} = V_m - 2 X'_{N_m - 1, m} down from X_N^{-1} V- X_N."""
    xn, xn_inv = fc.leading, np.linalg.inv(fc.leading)
    worst = 0.0
    for x in points:
        v = xn_inv @ h_minus.potential.value(x) @ xn
        for m in range(len(fc.factors), 0, -1):
            factor = fc.factors[m - 1]
            if factor.order:
                lower = series_derivative(factor.eval(x, 1)[factor.order - 1], 1)[..., 0]
                v = v - 2.0 * lower
            worst = max(worst, relative_residual(v, fc.intermediates[m - 1].potential.value(x)))
    return worst


# First-order steps -----------------------------------------------------------


@dataclass
class FirstOrderStep:
    """Q- = I d + X_0, its closure Q+ = -I d + X_0 and U_0 = V - X_0^2 + X_0'."""

    q_minus: MatDiffOperator
    q_plus: MatDiffOperator
    u0: ProceduralMatrix
    h_before: Hamiltonian
    h_after: Hamiltonian


def _shift_potential(q: MatDiffOperator, v: MatrixFunctionEvaluator) -> ProceduralMatrix:
    def compute(x0: complex, order: int) -> np.ndarray:
        x_0 = q.eval(x0, order + 1)[0]
        square = series_matmul(x_0[..., : order + 1], x_0[..., : order + 1])
        return v.eval(x0, order).coeffs - square + series_derivative(x_0, 1)

    return ProceduralMatrix(v.shape, compute, name=f"U[{q.name}]", singular_set=q.singular_set)


def scalar_deviation(matrix: np.ndarray) -> float:
    """Distance of a matrix from the scalar matrices, relative to its size."""
    n = matrix.shape[0]
    scalar = np.trace(matrix) / n
    return float(np.max(np.abs(matrix - scalar * np.eye(n)))) / max(1.0, float(np.max(np.abs(matrix))))


def first_order_chain(
    fc: FactorizationChain, settings: Settings = DEFAULT_SETTINGS
) -> tuple[list[FirstOrderStep], VerificationReport]:
    """Closure operators and U_0 per first-order step, with their identities checked."""
    if any(k != 1 for k in fc.orders):
        raise ValueError(f"first-order steps need all factor orders 1, got {fc.orders}")
    n = fc.leading.shape[0]
    steps = []
    for m, q in enumerate(fc.factors, start=1):
        lower = MatDiffOperator(
            n, 0, lambda x0, k, q=q: q.eval(x0, k)[:1], name=f"X_0[{q.name}]", singular_set=q.singular_set
        )
        q_plus = derivative_operator(n, -np.eye(n)) + lower
        q_plus.name = f"Q+_{m}"
        u0 = _shift_potential(q, fc.intermediates[m - 1].potential)
        steps.append(FirstOrderStep(q, q_plus, u0, fc.intermediates[m - 1], fc.intermediates[m]))

    report = VerificationReport("first-order")
    points = regular_points(fc.factors, settings, "first-order")
    for m, step in enumerate(steps, start=1):
        u_op = MatDiffOperator.from_coeffs([step.u0], name=f"U_{m}")
        closure = compose(step.q_plus, step.q_minus) + u_op
        report.add(
            f"H_{m - 1} = Q+_{m} Q-_{m} + U_{m}",
            "first-order-closure",
            coefficient_residual(step.h_before, closure, points),
            settings.tol_accept,
            points=points,
        )
        commutator = coefficient_residual(compose(u_op, step.q_minus), compose(step.q_minus, u_op), points)
        report.add(f"[U_{m}, Q-_{m}] = 0", "first-order-commutation", commutator, settings.tol_accept, points=points)
        deviation = max(scalar_deviation(step.u0.value(x)) for x in points)
        report.add(
            f"U_{m} scalar",
            "first-order-scalar",
            deviation,
            verdict=True,
            points=points,
            scalar_values=[complex(np.trace(step.u0.value(x)) / n) for x in points[:3]],
        )
        if not commutator < settings.tol_accept:
            logger.warning("commutation residual %.3g at step %d exceeds tolerance", commutator, m)
    return steps, report


def mirror_factorization(
    fc: FactorizationChain, leading: Any = None, settings: Settings = DEFAULT_SETTINGS
) -> FactorizationChain:
    """Conjugate every factor and intermediate by X_N so that Q = Q~_M...Q~_1 X_N."""
    xn = np.array(fc.leading if leading is None else leading, dtype=complex)
    xn_inv = np.linalg.inv(xn)
    left, right = matrix_operator(xn, name="X_N"), matrix_operator(xn_inv, name="X_N^-1")
    factors = []
    for m, q in enumerate(fc.factors, start=1):
        tilde = compose(compose(left, q), right)
        tilde.name = f"Q~_{m}"
        factors.append(tilde)
    intermediates = []
    for m, h in enumerate(fc.intermediates):
        v = h.potential
        conj = ProceduralMatrix(
            v.shape,
            lambda x0, k, v=v: np.einsum("ij,jkq,kl->ilq", xn, v.eval(x0, k).coeffs, xn_inv),
            name=f"V~_{m}",
            singular_set=v.singular_set,
        )
        intermediates.append(Hamiltonian(conj, name=f"H~_{m}"))
    mirrored = FactorizationChain(factors, intermediates, list(fc.ladder), xn, side="right")
    mirrored.report = VerificationReport("mirror")
    points = regular_points(fc.factors, settings, "mirror")
    original = fc.recomposed()
    mirrored.report.add(
        "Q = Q~_M...Q~_1 X_N",
        "mirror-recomposition",
        probe_residual(original, chained(*reversed(factors), left), probe_battery(xn.shape[0]), points),
        settings.tol_accept,
        points=points,
    )
    return mirrored


# Regular reduction -----------------------------------------------------------


@dataclass
class Reduction:
    """Q = K∘P through the intermediate Hamiltonian H_M."""

    outer: MatDiffOperator
    inner: MatDiffOperator
    intermediate: Hamiltonian
    report: VerificationReport

    def __iter__(self):
        return iter((self.outer, self.inner, self.intermediate))


def reduce(
    q: MatDiffOperator, cs: ChainSet, prefix: int, settings: Settings = DEFAULT_SETTINGS
) -> Reduction:
    """Split Q through the first n*prefix basis members if their Wronskian never vanishes.

    Nonvanishing is certified at the seeded points and on the scan grid; a
    vanishing prefix Wronskian raises NotRegularlyReducible.
    """
    big, n = cs.order, cs.n
    if not 1 <= prefix <= big:
        raise ValueError(f"prefix {prefix} outside 1..{big}")
    sub = cs.prefix(n * prefix)
    avoid = {p for m in sub.members() for p in m.singular_set}
    points = PointSampler(settings, avoid).draw(settings.zero_points)
    for x in points:
        ratio = prefix_ratio(cs, prefix, x)
        if not ratio > settings.tol_zero:
            raise NotRegularlyReducible(
                f"prefix Wronskian W_{prefix} vanishes (ratio {ratio:.3g})", prefix=prefix, point=x
            )
    min_ratio, changes = scan_prefix(cs, prefix, settings)
    if not min_ratio > settings.tol_zero or changes:
        raise NotRegularlyReducible(
            f"prefix Wronskian W_{prefix} has a zero on the scan grid (min ratio {min_ratio:.3g}, {changes} sign changes)",
            prefix=prefix,
        )
    inner = kernel_operator(sub.members(), n, name=f"P_{prefix}", settings=settings)
    h_mid = partner_hamiltonian(inner, cs.hamiltonian, name=f"H_{prefix}")
    outer, remainder = right_divide(q, inner, settings)
    outer.name = f"K_{prefix}"
    h_minus = partner_hamiltonian(q, cs.hamiltonian)

    report = VerificationReport("reduce")
    points = regular_points([inner, outer, q], settings, "reduce")
    residual = remainder_residual(q, remainder, points)
    if residual > settings.tol_chain:
        raise FactorizationResidual(f"{q.name} is not divisible by {inner.name}", residual=residual)
    probes = probe_battery(n)
    report.add("Q = K P", "reduction", probe_residual(q, chained(outer, inner), probes, points), settings.tol_accept, points=points)
    for op, hp, hm, label in ((inner, cs.hamiltonian, h_mid, "P H+ = H_M P"), (outer, h_mid, h_minus, "K H_M = H- K")):
        link = intertwining_residual(op, hp, hm, probes, points, settings)
        report.add(label, "reduction-intertwining", max(e.residual for e in link.entries), settings.tol_accept, points=points)
    finite = all(np.all(np.isfinite(op.values(x))) for op in (inner, outer) for x in points)
    report.add(
        "P, K pole-free", "reduction-smooth", 0.0 if finite else float("inf"), verdict=finite, points=points,
        scan_min_ratio=min_ratio,
    )
    return Reduction(outer, inner, h_mid, report)


# Stacked irreducible construction -------------------------------------------


@dataclass
class IrreducibleExample:
    h_plus: Hamiltonian
    q: MatDiffOperator
    chainset: ChainSet
    report: VerificationReport


def free_scalar_data(n: int, big: int, seed: int) -> list[tuple[ScalarExpr, list[MatrixFunctionEvaluator]]]:
    """v_i = 0 with polynomial chains of lengths N(n - i + 1), complex-shifted."""
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n):
        exprs = polynomial_chain(random_shifts(big * (n - i), rng))
        data.append((Const(0.0), [ExprMatrix([[e]]) for e in exprs]))
    return data


def wronskian_sign(n: int, big: int) -> int:
    return -1 if (n * (n - 1) * big * (big - 1) // 4) % 2 else 1


def irreducible_example(
    n: int,
    big: int,
    scalar_data: Sequence[tuple[ScalarExpr, Sequence[MatrixFunctionEvaluator]]] | None = None,
    lam: complex = 0.0,
    settings: Settings = DEFAULT_SETTINGS,
) -> IrreducibleExample:
    """Diagonal H+ with stacked chains whose proper prefix Wronskians all vanish.

    The certificate covers the vanishing-prefix obstruction exhibited by this
    construction; it does not rule out every conceivable singular factorization.
    """
    if scalar_data is None:
        scalar_data = free_scalar_data(n, big, settings.seed)
    points = PointSampler(settings).draw(settings.zero_points)
    for i, (_, chain) in enumerate(scalar_data):
        for x in points:
            ratio = hadamard_ratio(wronskian_matrix(list(chain[:big]), big, x, 0)[..., 0])
            if not ratio > settings.tol_zero:
                raise BadScalarData(f"W_{{{i + 1},{big}}} vanishes (ratio {ratio:.3g})", block=i + 1, point=x)
    cs = assemble_diag([v for v, _ in scalar_data], [list(c) for _, c in scalar_data], big, lam)
    q = build_intertwiner(cs, settings=settings)
    report = VerificationReport("irreducible")
    sign = wronskian_sign(n, big)
    worst = 0.0
    for x in points:
        stacked = np.linalg.det(wronskian_matrix(cs.members(), big, x, 0)[..., 0])
        product = np.prod([np.linalg.det(wronskian_matrix(list(c[:big]), big, x, 0)[..., 0]) for _, c in scalar_data])
        worst = max(worst, relative_residual(stacked, sign * product, floor=0.0) if product else float("inf"))
    report.add("stacked Wronskian sign identity", "wronskian-sign", worst, settings.tol_accept, points=points, sign=sign)
    for j in range(1, big):
        ratio = max(prefix_ratio(cs, j, x) for x in points)
        report.add(
            f"W_{j} = 0",
            "vanishing-prefix",
            ratio,
            verdict=ratio < settings.tol_zero,
            points=points,
            note="vanishing-prefix obstruction only",
        )
    report.extend(certify_intertwining(q, cs.hamiltonian, cs, settings))
    return IrreducibleExample(cs.hamiltonian, q, cs, report)
