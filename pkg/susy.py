"""Weak minimization, conjugate operators and polynomial supersymmetry checks.

Jordan data is always supplied (or derived from chain construction) and all
combinatorial statements run exactly over integers; analytic identities are
certified by residuals at seeded sample points.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from builder import partner_hamiltonian
from chains import ChainSet, Chain, JordanSpec
from core import (
    DEFAULT_SETTINGS,
    InconsistentJordanSpec,
    NonScalarShift,
    Settings,
    UnequalJordanBlocks,
    VerificationReport,
    relative_residual,
)
from diffop import (
    Hamiltonian,
    MatDiffOperator,
    SpectralPolynomial,
    add,
    block_operator,
    chained,
    coefficient_residual,
    compose,
    compose_all,
    intertwining_residual,
    matrix_operator,
    poly_of_H,
    probe_battery,
    probe_residual,
    remainder_residual,
    right_divide,
)
from factor import FactorizationChain, first_order_chain, regular_points, scalar_deviation
from jets import X, ConstantMatrix, ExprMatrix, ProceduralMatrix, exp

logger = logging.getLogger(__name__)


def _n_times_order(q: MatDiffOperator, js: JordanSpec) -> None:
    js.check_rank(q.n)
    if js.size != q.n * q.order:
        raise InconsistentJordanSpec(
            f"Jordan data of size {js.size} cannot describe the kernel of an n={q.n}, N={q.order} operator"
        )


# Weak minimization -----------------------------------------------------------


@dataclass
class MinimizationResult:
    p: MatDiffOperator
    removed: SpectralPolynomial
    order_check: tuple[int, int, int]
    remaining: JordanSpec
    report: VerificationReport = field(default_factory=lambda: VerificationReport("minimize"))

    @property
    def order(self) -> int:
        return self.p.order


def removable_roots(js: JordanSpec, n: int) -> list[tuple[complex, int]]:
    """Spectral values carrying exactly 2n blocks, with their minimal block order."""
    return [(lam, min(orders)) for lam, orders in js.entries if len(orders) == 2 * n]


def minimize_weak(
    q: MatDiffOperator, js: JordanSpec, h_source: Hamiltonian, settings: Settings = DEFAULT_SETTINGS
) -> MinimizationResult:
    """Q = P prod(lam_l I - H)^{dk_l} for the spectral values with 2n blocks."""
    _n_times_order(q, js)
    n = q.n
    roots = removable_roots(js, n)
    removed = SpectralPolynomial(tuple(roots))
    remaining = JordanSpec(
        tuple((lam, tuple(k - dict(roots).get(lam, 0) for k in orders)) for lam, orders in js.entries)
    )
    big = q.order
    total = removed.degree
    report = VerificationReport("minimize")
    if not roots:
        p = q
    else:
        divisor = poly_of_H(h_source, removed)
        quotient, remainder = right_divide(q, divisor, settings)
        p = quotient.scale((-1) ** total)
        p.name = f"P[{q.name}]"
        points = regular_points([q, p], settings, "minimize")
        residual = remainder_residual(q, remainder, points)
        if not residual < settings.tol_chain:
            raise InconsistentJordanSpec(
                f"{q.name} is not divisible by prod(lam I - H)^dk for the supplied Jordan data", residual=residual
            )
        report.add("Q = P prod(lam I - H)^dk", "weak-minimization", residual, settings.tol_accept, points=points)
        if q.leading is not None and p.leading is not None:
            report.add(
                "leading(P) = X_N", "minimized-leading", relative_residual(p.leading, q.leading), settings.tol_accept
            )
    formula = remaining.size // n if remaining.size % n == 0 else -1
    order_check = (big, total, formula)
    report.add(
        "M = N - 2 sum dk = sum k_l / n",
        "minimized-order",
        0.0 if p.order == big - 2 * total == formula else 1.0,
        verdict=p.order == big - 2 * total == formula,
        N=big,
        removed=total,
        M=p.order,
    )
    fixed = not removable_roots(remaining, n)
    report.add("P weakly non-minimizable", "minimization-fixed-point", 0.0 if fixed else 1.0, verdict=fixed)
    logger.info("minimized %s: removed degree %d, order %d -> %d", q.name, total, big, p.order)
    return MinimizationResult(p, removed, order_check, remaining, report)


# Conjugate operators ---------------------------------------------------------


def jordan_of_conjugate(js: JordanSpec, n: int) -> JordanSpec:
    """Jordan data of the conjugate operator's kernel, by block-order bookkeeping."""
    js.check_rank(n)
    entries = []
    for lam, orders in js.entries:
        kappa, mu, g_minus = orders[0], js.mu(lam), len(orders)
        if mu == 2 * n:
            continue
        g_plus = 2 * n - mu
        plus = []
        for j in range(1, g_plus + 1):
            k = kappa if j <= 2 * n - g_minus else kappa - orders[2 * n - j]
            if k > 0:
                plus.append(k)
        entries.append((lam, tuple(plus)))
    return JordanSpec(tuple(entries))


def conjugate_order(js: JordanSpec, n: int, big: int) -> int:
    """N' = -N + 2 sum kappa_l."""
    js.check_rank(n)
    return -big + 2 * sum(orders[0] for _, orders in js.entries)


@dataclass
class ConjugateResult:
    q_plus: MatDiffOperator
    polynomial: SpectralPolynomial
    order: int
    js_minus: JordanSpec
    h_minus: Hamiltonian
    report: VerificationReport


def _is_real(ops: Sequence[MatDiffOperator], points: Sequence[float]) -> bool:
    return all(float(np.max(np.abs(op.values(x).imag))) < 1e-12 for op in ops for x in points)


def effective_order(op: MatDiffOperator, points: Sequence[float], rel: float = 1e-9) -> int:
    """Highest j whose coefficient is nonzero at the points, relative to the largest coefficient."""
    values = np.array([op.values(x) for x in points])
    sizes = np.max(np.abs(values), axis=(0, 2, 3))
    scale = float(np.max(sizes, initial=0.0))
    alive = np.nonzero(sizes > rel * max(scale, 1.0))[0]
    return int(alive[-1]) if alive.size else -1


def conjugate_general(
    q: MatDiffOperator, js: JordanSpec, h_plus: Hamiltonian, settings: Settings = DEFAULT_SETTINGS
) -> ConjugateResult:
    """Q+ with Q+ Q- = prod(H+ - lam_l)^{kappa_l}, found by exact right division."""
    _n_times_order(q, js)
    if q.leading is None:
        raise ValueError(f"{q.name} needs a constant leading coefficient")
    n, big = q.n, q.order
    poly = SpectralPolynomial(tuple((lam, orders[0]) for lam, orders in js.entries))
    product = poly_of_H(h_plus, poly)
    q_plus, remainder = right_divide(product, q, settings)
    q_plus.name = f"{q.name}^c"
    order = 2 * poly.degree - big
    h_minus = partner_hamiltonian(q, h_plus)
    report = VerificationReport("conjugate")
    points = regular_points([q, q_plus], settings, "conjugate")
    residual = remainder_residual(product, remainder, points)
    if not residual < settings.tol_chain:
        raise InconsistentJordanSpec(
            f"prod(H+ - lam)^kappa is not divisible by {q.name} for the supplied Jordan data", residual=residual
        )
    report.add("prod(H+ - lam)^kappa = Q+ Q-", "conjugate-division", residual, settings.tol_accept, points=points)
    observed = effective_order(q_plus, points)
    if (big + observed) % 2:
        raise AssertionError(f"conjugate order parity: N={big}, observed N'={observed}")
    matched = observed == order == conjugate_order(js, n, big)
    report.add(
        "N' = -N + 2 sum kappa",
        "conjugate-order",
        0.0 if matched else 1.0,
        verdict=matched,
        N=big,
        N_prime=order,
        observed=observed,
    )
    expected = (-1) ** poly.degree * np.linalg.inv(q.leading)
    report.add(
        "leading(Q+) = (-1)^sum kappa X_N^-1",
        "conjugate-leading",
        relative_residual(q_plus.leading, expected),
        1e-9,
    )
    probes = probe_battery(n)
    link = intertwining_residual(q_plus, h_minus, h_plus, probes, points, settings)
    report.add("H+ Q+ = Q+ H-", "reverse-intertwining", max(e.residual for e in link.entries), settings.tol_accept, points=points)
    report.add(
        "Q+ Q- = P(H+)",
        "conjugate-product",
        probe_residual(chained(q_plus, q), product, probes, points),
        settings.tol_accept,
        points=points,
    )
    report.add(
        "Q- Q+ = P(H-)",
        "conjugate-product",
        probe_residual(chained(q, q_plus), poly_of_H(h_minus, poly), probes, points),
        settings.tol_accept,
        points=points,
    )
    real_lams = all(abs(lam.imag) < 1e-12 for lam in js.lambdas)
    if real_lams and _is_real([q, h_plus], points):
        imag = max(float(np.max(np.abs(q_plus.values(x).imag))) for x in points)
        report.add("Q+ real", "conjugate-reality", imag, 1e-9, points=points)
    js_minus = jordan_of_conjugate(js, n)
    logger.info("conjugate of %s: N=%d, N'=%d, P degree %d", q.name, big, order, poly.degree)
    return ConjugateResult(q_plus, poly, order, js_minus, h_minus, report)


def complement(
    q: MatDiffOperator, js: JordanSpec, h_plus: Hamiltonian, settings: Settings = DEFAULT_SETTINGS
) -> MatDiffOperator:
    return conjugate_general(q, js, h_plus, settings).q_plus


def equal_block_check(js: JordanSpec, n: int) -> None:
    """Raise UnequalJordanBlocks unless every value carries n blocks of one size."""
    for lam, orders in js.entries:
        if len(orders) != n or len(set(orders)) != 1:
            raise UnequalJordanBlocks(
                f"lambda={lam:.6g} carries blocks {list(orders)}; the closure product needs {n} equal blocks",
                lam=lam,
                blocks=orders,
            )


def chain_conjugate(
    fc: FactorizationChain,
    js: JordanSpec,
    alternative: FactorizationChain | None = None,
    settings: Settings = DEFAULT_SETTINGS,
) -> tuple[MatDiffOperator, SpectralPolynomial, VerificationReport]:
    """Q+ = Q+_1...Q+_N X_N^-1 for a first-order factorization with scalar shifts.

    ``js`` is the Jordan data of the kernel and must hold n equal blocks per
    spectral value. ``alternative`` is the factorization of the same Q along
    another ordering of the spectral values; its conjugate must coincide.
    """
    n = fc.leading.shape[0]
    equal_block_check(js, n)
    steps, report = first_order_chain(fc, settings)
    report.stage = "chain-conjugate"
    points = regular_points(fc.factors, settings, "chain-conjugate")
    grouped: list[list[Any]] = []
    for m, step in enumerate(steps, start=1):
        deviation = max(scalar_deviation(step.u0.value(x)) for x in points)
        if deviation > settings.tol_chain:
            raise NonScalarShift(f"U_{m} is not a multiple of the identity", step=m, deviation=deviation)
        lam = complex(np.trace(step.u0.value(points[0])) / fc.leading.shape[0])
        for item in grouped:
            if abs(item[0] - lam) < 1e-6 * max(1.0, abs(lam)):
                item[1] += 1
                break
        else:
            grouped.append([lam, 1])
    poly = SpectralPolynomial(tuple((lam, m) for lam, m in grouped))
    shifts = sorted(m for _, m in grouped)
    sizes = sorted(orders[0] for _, orders in js.entries)
    report.add(
        "shift multiplicities = block sizes",
        "chain-blocks",
        0.0 if shifts == sizes else 1.0,
        verdict=shifts == sizes,
        shifts=shifts,
        blocks=sizes,
    )
    xn_inv = matrix_operator(np.linalg.inv(fc.leading), name="X_N^-1")
    q_plus = compose_all([s.q_plus for s in steps] + [xn_inv])
    q_plus.name = "Q+"
    q_minus = fc.recomposed()
    h_plus, h_minus = fc.intermediates[0], partner_hamiltonian(q_minus, fc.intermediates[0])
    probes = probe_battery(q_plus.n)
    report.add(
        "Q+ Q- = P_N(H+)",
        "chain-product",
        probe_residual(chained(q_plus, q_minus), poly_of_H(h_plus, poly), probes, points),
        settings.tol_accept,
        points=points,
    )
    report.add(
        "Q- Q+ = P_N(H-)",
        "chain-product",
        probe_residual(chained(q_minus, q_plus), poly_of_H(h_minus, poly), probes, points),
        settings.tol_accept,
        points=points,
    )
    if alternative is not None:
        other, _, _ = chain_conjugate(alternative, js, None, settings)
        report.add(
            "Q+ independent of ordering",
            "chain-ordering",
            coefficient_residual(q_plus, other, points),
            settings.tol_accept,
            points=points,
        )
    return q_plus, poly, report


# Complement composition ------------------------------------------------------


def complement_composition_check(
    outer: MatDiffOperator,
    inner: MatDiffOperator,
    js_outer: JordanSpec,
    js_inner: JordanSpec,
    js_whole: JordanSpec,
    h_plus: Hamiltonian,
    h_mid: Hamiltonian,
    settings: Settings = DEFAULT_SETTINGS,
) -> VerificationReport:
    """(P)^c (K)^c = prod(H+ - lam)^{k1 + k2 - k} (KP)^c for Q = K P.

    The product of complements is then reduced back to (KP)^c by exact right
    division by prod(H- - lam)^{k1 + k2 - k}.
    """
    whole = compose(outer, inner)
    h_minus = partner_hamiltonian(whole, h_plus)
    inner_c = complement(inner, js_inner, h_plus, settings)
    outer_c = complement(outer, js_outer, h_mid, settings)
    whole_c = complement(whole, js_whole, h_plus, settings)
    lams = list(js_whole.lambdas)
    for lam in js_inner.lambdas + js_outer.lambdas:
        if all(abs(lam - other) >= 1e-12 for other in lams):
            lams.append(lam)
    excess = SpectralPolynomial(
        tuple((lam, js_inner.kappa(lam) + js_outer.kappa(lam) - js_whole.kappa(lam)) for lam in lams)
    )
    report = VerificationReport("complement-composition")
    points = regular_points([inner_c, outer_c, whole_c], settings, "complement-composition")
    probes = probe_battery(whole.n)
    report.add(
        "P^c K^c = prod(H+ - lam)^excess (KP)^c",
        "complement-composition",
        probe_residual(chained(inner_c, outer_c), chained(poly_of_H(h_plus, excess), whole_c), probes, points),
        settings.tol_accept,
        points=points,
        excess=excess.degree,
    )
    product = compose(inner_c, outer_c)
    quotient, remainder = right_divide(product, poly_of_H(h_minus, excess), settings)
    report.add(
        "(KP)^c from P^c K^c by weak minimization",
        "complement-minimization",
        max(remainder_residual(product, remainder, points), coefficient_residual(quotient, whole_c, points)),
        settings.tol_accept,
        points=points,
        direct=excess.degree == 0,
    )
    return report


# Supersymmetry ---------------------------------------------------------------


class SusyAlgebraReport(VerificationReport):
    """Residuals of the polynomial superalgebra built on (H+, H-, Q-, Q+)."""


def _block_hamiltonian(h_plus: Hamiltonian, h_minus: Hamiltonian) -> Hamiltonian:
    n = h_plus.n

    def compute(x0: complex, order: int) -> np.ndarray:
        out = np.zeros((2 * n, 2 * n, order + 1), dtype=complex)
        out[:n, :n] = h_plus.potential.eval(x0, order).coeffs
        out[n:, n:] = h_minus.potential.eval(x0, order).coeffs
        return out

    singular = set(h_plus.singular_set) | set(h_minus.singular_set)
    return Hamiltonian(ProceduralMatrix((2 * n, 2 * n), compute, name="V_super", singular_set=singular), name="H_super")


def susy_algebra(
    h_plus: Hamiltonian,
    h_minus: Hamiltonian,
    q_minus: MatDiffOperator,
    q_plus: MatDiffOperator,
    poly: SpectralPolynomial,
    settings: Settings = DEFAULT_SETTINGS,
) -> SusyAlgebraReport:
    """{Q, Qbar} = P(H), [H, Q] = [H, Qbar] = 0, Q^2 = Qbar^2 = 0, blockwise."""
    n = q_minus.n
    h = _block_hamiltonian(h_plus, h_minus)
    charge = block_operator([[None, None], [q_minus, None]], n)
    cocharge = block_operator([[None, q_plus], [None, None]], n)
    report = SusyAlgebraReport("susy-algebra")
    points = regular_points([q_minus, q_plus, h], settings, "susy-algebra")
    probes = probe_battery(2 * n)
    anti = add(compose(charge, cocharge), compose(cocharge, charge))
    target = poly_of_H(h, poly)
    report.add(
        "{Q, Qbar} = P(H)",
        "superalgebra",
        max(
            probe_residual(anti, target, probes, points),
            coefficient_residual(anti, target, points),
        ),
        settings.tol_accept,
        points=points,
    )
    report.add(
        "[H, Q] = 0",
        "superalgebra",
        probe_residual(chained(h, charge), chained(charge, h), probes, points),
        settings.tol_accept,
        points=points,
    )
    report.add(
        "[H, Qbar] = 0",
        "superalgebra",
        probe_residual(chained(h, cocharge), chained(cocharge, h), probes, points),
        settings.tol_accept,
        points=points,
    )
    report.add("Q^2 = 0", "superalgebra", 0.0, verdict=True, structural=True)
    report.add("Qbar^2 = 0", "superalgebra", 0.0, verdict=True, structural=True)
    return report


def det_identity_check(
    js_plus: JordanSpec,
    js_minus: JordanSpec,
    poly: SpectralPolynomial,
    n: int,
    settings: Settings = DEFAULT_SETTINGS,
    samples: int = 10,
) -> VerificationReport:
    """det(lam - T+) det(lam - T-) = P(lam)^{2n}, as multiplicities and numerically."""
    report = VerificationReport("det-identity")
    lams = list(js_plus.lambdas)
    for lam, _ in poly.roots:
        if all(abs(lam - other) >= 1e-12 for other in lams):
            lams.append(lam)
    for lam in js_minus.lambdas:
        if all(abs(lam - other) >= 1e-12 for other in lams):
            lams.append(lam)
    mismatches = {
        str(lam): (js_plus.multiplicity(lam), js_minus.multiplicity(lam), 2 * n * poly.multiplicity(lam))
        for lam in lams
        if js_plus.multiplicity(lam) + js_minus.multiplicity(lam) != 2 * n * poly.multiplicity(lam)
    }
    report.add(
        "mult T+ + mult T- = 2n mult P",
        "det-multiplicity",
        float(len(mismatches)),
        verdict=not mismatches,
        mismatches=mismatches,
    )
    t_plus, t_minus = js_plus.to_matrix(), js_minus.to_matrix()
    rng = np.random.default_rng(settings.seed)
    worst = 0.0
    for _ in range(samples):
        lam = complex(rng.normal(), rng.normal())
        lhs = np.linalg.det(lam * np.eye(t_plus.shape[0]) - t_plus) * np.linalg.det(lam * np.eye(t_minus.shape[0]) - t_minus)
        worst = max(worst, relative_residual(lhs, poly(lam) ** (2 * n), floor=0.0))
    report.add("det(lam - T+) det(lam - T-) = P(lam)^2n", "det-identity", worst, 1e-9, samples=samples)
    return report


def _exponents(bounds: Sequence[int], total: int):
    for combo in itertools.product(*(range(min(b, total) + 1) for b in bounds)):
        if sum(combo) == total:
            yield combo


def uniqueness_check(
    q: MatDiffOperator,
    q_plus: MatDiffOperator,
    js: JordanSpec,
    h_plus: Hamiltonian,
    settings: Settings = DEFAULT_SETTINGS,
) -> VerificationReport:
    """Falsification sweep: no lower-order conjugate divides a product of (H+ - lam)^m exactly.

    Every order M < N' with M + N even is tried against all exponent vectors
    over the spectral values of ``js``, bounded by their maximal block orders;
    the order-N' solution is confirmed.
    """
    big, prime = q.order, q_plus.order
    lams = js.lambdas
    report = VerificationReport("uniqueness")
    kappas = tuple(js.kappa(lam) for lam in lams)
    points = regular_points([q, q_plus], settings, "uniqueness")
    closest = float("inf")
    tried = 0
    for m_order in range(prime):
        if (m_order + big) % 2:
            continue
        for combo in _exponents(kappas, (m_order + big) // 2):
            product = poly_of_H(h_plus, SpectralPolynomial(tuple(zip(lams, combo))))
            _, remainder = right_divide(product, q, settings)
            residual = remainder_residual(product, remainder, points)
            closest = min(closest, residual)
            tried += 1
            report.add(
                f"no order-{m_order} conjugate for exponents {list(combo)}",
                "conjugate-uniqueness",
                residual,
                verdict=residual > settings.falsify_margin,
                points=points,
            )
    product = poly_of_H(h_plus, SpectralPolynomial(tuple(zip(lams, kappas))))
    _, remainder = right_divide(product, q, settings)
    report.add(
        f"order-{prime} conjugate exists",
        "conjugate-uniqueness",
        remainder_residual(product, remainder, points),
        settings.tol_accept,
        points=points,
        candidates=tried,
        closest_remainder=closest,
    )
    return report


@dataclass(frozen=True)
class StrongMinimizationClaim:
    """A claimed strong minimization Q = P R (side "right") or Q = R P (side "left").

    No decision procedure exists for these; instances only record a claim.
    """

    operator: str
    side: str
    reduced_order: int
    note: str = ""

    def __post_init__(self) -> None:
        if self.side not in ("right", "left"):
            raise ValueError(f"side must be 'right' or 'left', got {self.side!r}")


# Example families ------------------------------------------------------------


def diagonal_pair(lams: Sequence[complex], name: str = "H+") -> ChainSet:
    """H+ = diag(-d^2 + x^2 - 1 + lam_i) with the Gaussian kernel of I d + x I.

    Equal spectral values give one Jordan entry with two blocks.
    """
    n = len(lams)
    potentials = [X * X + (complex(lam) - 1.0) for lam in lams]
    h = Hamiltonian(ExprMatrix.diagonal(potentials), name=name)
    gauss = exp(-0.5 * X * X)
    chains = []
    for i, lam in enumerate(lams):
        column = [gauss if j == i else None for j in range(n)]
        chains.append(Chain(lam, (ExprMatrix.column(column),)))
    return ChainSet(h, chains)


def closure_operator(n: int) -> MatDiffOperator:
    """-I d + x I."""
    return MatDiffOperator.from_coeffs([ExprMatrix.diagonal([X] * n), ConstantMatrix(-np.eye(n))], name="Q1+")


def diagonal_pair_cubic(h_plus: Hamiltonian, lams: Sequence[complex]) -> MatDiffOperator:
    """diag((h_1 - lam_2) q_1, (h_2 - lam_1) q_2) with q_i = -d + x."""
    if len(lams) != 2:
        raise ValueError("the cubic closure is defined for two spectral values")
    swap = matrix_operator(-np.diag([complex(lams[1]), complex(lams[0])]))
    op = compose(add(h_plus, swap), closure_operator(2))
    op.name = "Q3+"
    return op


def off_diagonal_size(op: MatDiffOperator, points: Sequence[float]) -> float:
    worst = 0.0
    for x in points:
        values = op.values(x)
        mask = ~np.eye(op.n, dtype=bool)
        worst = max(worst, float(np.max(np.abs(values[:, mask]), initial=0.0)))
    return worst
