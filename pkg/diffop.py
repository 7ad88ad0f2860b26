"""Matrix linear differential operators, Hamiltonians and right division.

An operator of order N is stored as a source ``(x0, K) -> array`` of shape
(N+1, n, n, K+1): index j is the jet of the coefficient of d^j/dx^j.  Every
operation documents the order at which it queries its inputs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy.special import comb

from core import (
    DEFAULT_SETTINGS,
    SingularLeadingCoefficient,
    SingularWronskian,
    Settings,
    VerificationReport,
    PointSampler,
    relative_residual,
)
from jets import (
    ConstantMatrix,
    ExprMatrix,
    JetCache,
    MatrixFunctionEvaluator,
    MatrixJet,
    X,
    complex_to_json,
    cos,
    exp,
    poly,
    row_equilibrated_condition,
    series_derivative,
    series_matmul,
    series_solve,
    sin,
)

logger = logging.getLogger(__name__)

Source = Callable[[complex, int], np.ndarray]


class CoefficientView(MatrixFunctionEvaluator):
    """Evaluator for coefficient ``index`` of an operator."""

    def __init__(self, op: "MatDiffOperator", index: int):
        self.op = op
        self.index = index
        self.shape = (op.n, op.n)
        self.singular_set = op.singular_set
        self.is_constant = index == op.order and op.leading is not None

    def eval(self, x0: complex, order: int) -> MatrixJet:
        return MatrixJet(self.op.eval(x0, order)[self.index], x0)


class MatDiffOperator:
    """sum_j X_j(x) d^j for n x n coefficient matrices X_j."""

    def __init__(
        self,
        n: int,
        order: int,
        source: Source,
        *,
        leading: np.ndarray | None = None,
        name: str = "Q",
        singular_set: Iterable[float] = (),
        evaluators: Sequence[MatrixFunctionEvaluator] | None = None,
    ):
        if order < 0:
            raise ValueError(f"operator order must be non-negative, got {order}")
        self.n = int(n)
        self.order = int(order)
        self.name = name
        self.singular_set = tuple(sorted(set(singular_set)))
        self.evaluators = tuple(evaluators) if evaluators is not None else None
        if leading is not None:
            leading = np.array(leading, dtype=complex).reshape(self.n, self.n)
            leading.setflags(write=False)
        self.leading = leading
        self._source = source
        self._cache = JetCache()

    @classmethod
    def from_coeffs(cls, coeffs: Sequence[MatrixFunctionEvaluator], name: str = "Q") -> "MatDiffOperator":
        if not coeffs:
            raise ValueError("an operator needs at least one coefficient")
        n = coeffs[0].shape[0]
        for c in coeffs:
            if c.shape != (n, n):
                raise ValueError(f"coefficient shape {c.shape} differs from ({n}, {n})")
        top = coeffs[-1]
        leading = top.matrix if isinstance(top, ConstantMatrix) else None
        singular = {p for c in coeffs for p in c.singular_set}

        def source(x0: complex, order: int) -> np.ndarray:
            return np.stack([c.eval(x0, order).coeffs for c in coeffs])

        return cls(n, len(coeffs) - 1, source, leading=leading, name=name, singular_set=singular, evaluators=coeffs)

    def eval(self, x0: complex, order: int) -> np.ndarray:
        """Coefficient jets, shape (N+1, n, n, order+1); read-only."""
        x0 = complex(x0)
        return self._cache.get(x0, order, lambda: self._source(x0, order))

    def values(self, x0: complex) -> np.ndarray:
        return np.array(self.eval(x0, 0)[..., 0])

    @property
    def coeffs(self) -> list[CoefficientView]:
        return [CoefficientView(self, j) for j in range(self.order + 1)]

    @property
    def is_leading_constant(self) -> bool:
        return self.leading is not None

    def __add__(self, other: "MatDiffOperator") -> "MatDiffOperator":
        return add(self, other)

    def __sub__(self, other: "MatDiffOperator") -> "MatDiffOperator":
        return add(self, other.scale(-1.0))

    def __matmul__(self, other: "MatDiffOperator") -> "MatDiffOperator":
        return compose(self, other)

    def scale(self, factor: complex) -> "MatDiffOperator":
        factor = complex(factor)
        leading = None if self.leading is None else self.leading * factor
        return MatDiffOperator(
            self.n,
            self.order,
            lambda x0, k: self.eval(x0, k) * factor,
            leading=leading,
            name=f"{factor:g}*{self.name}",
            singular_set=self.singular_set,
        )

    def __repr__(self) -> str:
        return f"MatDiffOperator(name={self.name!r}, n={self.n}, order={self.order})"


def matrix_operator(matrix: Any, name: str | None = None) -> MatDiffOperator:
    m = ConstantMatrix(matrix)
    return MatDiffOperator.from_coeffs([m], name=name or "M")


def identity_operator(n: int) -> MatDiffOperator:
    return matrix_operator(np.eye(n), name="I")


def derivative_operator(n: int, leading: Any = None) -> MatDiffOperator:
    """leading * d/dx (default I d/dx)."""
    top = np.eye(n) if leading is None else leading
    return MatDiffOperator.from_coeffs([ConstantMatrix(np.zeros((n, n))), ConstantMatrix(top)], name="D")


def zero_operator(n: int, order: int = 0) -> MatDiffOperator:
    return MatDiffOperator(
        n, order, lambda x0, k: np.zeros((order + 1, n, n, k + 1), dtype=complex), name="0"
    )


class Hamiltonian(MatDiffOperator):
    """-I d^2 + V(x)."""

    def __init__(self, potential: MatrixFunctionEvaluator, name: str = "H"):
        n = potential.shape[0]
        if potential.shape != (n, n):
            raise ValueError(f"potential must be square, got {potential.shape}")
        self.potential = potential
        zero = ConstantMatrix(np.zeros((n, n)))
        lead = ConstantMatrix(-np.eye(n))
        coeffs = [potential, zero, lead]

        def source(x0: complex, order: int) -> np.ndarray:
            out = np.zeros((3, n, n, order + 1), dtype=complex)
            out[0] = potential.eval(x0, order).coeffs
            out[2, :, :, 0] = -np.eye(n)
            return out

        super().__init__(
            n, 2, source, leading=-np.eye(n), name=name, singular_set=potential.singular_set, evaluators=coeffs
        )

    def shifted(self, lam: complex) -> MatDiffOperator:
        """H - lam I."""
        return add(self, matrix_operator(-complex(lam) * np.eye(self.n), name=f"{lam}"))


@dataclass(frozen=True)
class SpectralPolynomial:
    """prod_l (lam - lam_l)^{m_l}."""

    roots: tuple[tuple[complex, int], ...] = ()

    def __post_init__(self) -> None:
        cleaned = tuple((complex(lam), int(m)) for lam, m in self.roots if int(m) != 0)
        seen = [lam for lam, _ in cleaned]
        if len(set(seen)) != len(seen):
            raise ValueError("spectral polynomial roots must be distinct")
        if any(m < 0 for _, m in cleaned):
            raise ValueError("root multiplicities must be positive")
        object.__setattr__(self, "roots", cleaned)

    @property
    def degree(self) -> int:
        return sum(m for _, m in self.roots)

    def __call__(self, lam: complex) -> complex:
        out = 1.0 + 0j
        for root, m in self.roots:
            out *= (complex(lam) - root) ** m
        return out

    def power(self, k: int) -> "SpectralPolynomial":
        return SpectralPolynomial(tuple((lam, m * k) for lam, m in self.roots))

    def multiplicity(self, lam: complex) -> int:
        return sum(m for root, m in self.roots if abs(root - complex(lam)) < 1e-12)

    def to_json(self) -> list[dict[str, Any]]:
        return [{"lambda": complex_to_json(lam), "multiplicity": m} for lam, m in self.roots]


# Core operations -------------------------------------------------------------


def apply(op: MatDiffOperator, f: MatrixFunctionEvaluator, x0: complex, order: int) -> MatrixJet:
    """Jet of sum_j X_j f^{(j)} at x0; f is queried at order + op.order."""
    if f.shape[0] != op.n:
        raise ValueError(f"operator of size {op.n} applied to a {f.shape} function")
    x0 = complex(x0)
    fj = f.eval(x0, order + op.order).coeffs
    coeffs = op.eval(x0, order)
    out = np.zeros((op.n, f.shape[1], order + 1), dtype=complex)
    for j in range(op.order + 1):
        if not np.any(coeffs[j]):
            continue
        out += series_matmul(coeffs[j], series_derivative(fj, j)[..., : order + 1])
    return MatrixJet(out, x0)


class AppliedVector(MatrixFunctionEvaluator):
    """Evaluator of op(f)."""

    def __init__(self, op: MatDiffOperator, f: MatrixFunctionEvaluator):
        self.op = op
        self.f = f
        self.shape = (op.n, f.shape[1])
        self.singular_set = tuple(sorted(set(op.singular_set) | set(f.singular_set)))

    def eval(self, x0: complex, order: int) -> MatrixJet:
        return apply(self.op, self.f, x0, order)


def add(a: MatDiffOperator, b: MatDiffOperator) -> MatDiffOperator:
    if a.n != b.n:
        raise ValueError(f"cannot add operators of sizes {a.n} and {b.n}")
    order = max(a.order, b.order)
    n = a.n

    def source(x0: complex, k: int) -> np.ndarray:
        out = np.zeros((order + 1, n, n, k + 1), dtype=complex)
        out[: a.order + 1] += a.eval(x0, k)
        out[: b.order + 1] += b.eval(x0, k)
        return out

    if a.order > b.order:
        leading = a.leading
    elif b.order > a.order:
        leading = b.leading
    else:
        leading = None if a.leading is None or b.leading is None else a.leading + b.leading
    return MatDiffOperator(
        n, order, source, leading=leading, name=f"{a.name}+{b.name}", singular_set=a.singular_set + b.singular_set
    )


def compose(a: MatDiffOperator, b: MatDiffOperator) -> MatDiffOperator:
    """a∘b via the Leibniz rule; b is queried at order K + a.order."""
    if a.n != b.n:
        raise ValueError(f"cannot compose operators of sizes {a.n} and {b.n}")
    na, nb, n = a.order, b.order, a.n

    def source(x0: complex, k: int) -> np.ndarray:
        ac = a.eval(x0, k)
        bc = b.eval(x0, k + na)
        out = np.zeros((na + nb + 1, n, n, k + 1), dtype=complex)
        for i in range(na + 1):
            if not np.any(ac[i]):
                continue
            for s in range(i + 1):
                binom = comb(i, s, exact=True)
                for j in range(nb + 1):
                    out[i - s + j] += binom * series_matmul(ac[i], series_derivative(bc[j], s)[..., : k + 1])
        return out

    leading = None if a.leading is None or b.leading is None else a.leading @ b.leading
    return MatDiffOperator(
        n,
        na + nb,
        source,
        leading=leading,
        name=f"({a.name})({b.name})",
        singular_set=a.singular_set + b.singular_set,
    )


def compose_all(ops: Sequence[MatDiffOperator]) -> MatDiffOperator:
    """ops[0]∘ops[1]∘…; the empty product needs at least one operator."""
    out = ops[0]
    for op in ops[1:]:
        out = compose(out, op)
    return out


def poly_of_H(h: Hamiltonian, p: SpectralPolynomial) -> MatDiffOperator:
    """prod_l (H - lam_l I)^{m_l}; order 2 deg P, leading (-1)^{deg P} I."""
    factors = [h.shifted(lam) for lam, m in p.roots for _ in range(m)]
    if not factors:
        return identity_operator(h.n)
    out = compose_all(factors)
    out.name = f"P({h.name})"
    return out


def right_divide(
    a: MatDiffOperator, b: MatDiffOperator, settings: Settings = DEFAULT_SETTINGS
) -> tuple[MatDiffOperator, MatDiffOperator]:
    """Q, R with a = Q∘b + R and ord R < ord b.

    b is queried at order K + (ord a - ord b).  A non-constant leading
    coefficient of b is inverted over jets pointwise.
    """
    if a.n != b.n:
        raise ValueError(f"cannot divide operators of sizes {a.n} and {b.n}")
    n, na, nb = a.n, a.order, b.order
    if nb > na:
        return zero_operator(n), a
    qn = na - nb
    lead_inv = None
    if b.leading is not None:
        cond = row_equilibrated_condition(b.leading)
        if cond > settings.cond_max:
            raise SingularLeadingCoefficient(
                f"constant leading coefficient of {b.name} is singular (condition estimate {cond:.3g})"
            )
        lead_inv = np.linalg.inv(b.leading)
    cache = JetCache()

    def divide(x0: complex, k: int) -> np.ndarray:
        rem = np.array(a.eval(x0, k), dtype=complex)
        bc = b.eval(x0, k + qn)
        q = np.zeros((qn + 1, n, n, k + 1), dtype=complex)
        lead_t = None
        if lead_inv is None:
            lead_t = np.swapaxes(bc[nb, ..., : k + 1], 0, 1)
        for d in range(qn, -1, -1):
            top = rem[d + nb]
            if lead_inv is not None:
                qd = np.einsum("ijk,jl->ilk", top, lead_inv)
            else:
                try:
                    qd = np.swapaxes(series_solve(lead_t, np.swapaxes(top, 0, 1), x0, settings), 0, 1)
                except SingularWronskian as exc:
                    raise SingularLeadingCoefficient(
                        f"leading coefficient of {b.name} is singular at x={x0}", point=x0
                    ) from exc
            q[d] = qd
            for s in range(d + 1):
                binom = comb(d, s, exact=True)
                for j in range(nb + 1):
                    rem[d - s + j] -= binom * series_matmul(qd, series_derivative(bc[j], s)[..., : k + 1])
        return np.concatenate([q, rem[:nb] if nb else np.zeros((1, n, n, k + 1), dtype=complex)])

    def quotient(x0: complex, k: int) -> np.ndarray:
        return cache.get(x0, k, lambda: divide(x0, k))[: qn + 1]

    def remainder(x0: complex, k: int) -> np.ndarray:
        return cache.get(x0, k, lambda: divide(x0, k))[qn + 1 :]

    leading = None
    if a.leading is not None and lead_inv is not None:
        leading = a.leading @ lead_inv
    singular = a.singular_set + b.singular_set
    q_op = MatDiffOperator(n, qn, quotient, leading=leading, name=f"{a.name}/{b.name}", singular_set=singular)
    r_op = MatDiffOperator(n, max(nb - 1, 0), remainder, name=f"{a.name}%{b.name}", singular_set=singular)
    return q_op, r_op


def block_operator(blocks: Sequence[Sequence[MatDiffOperator | None]], n: int) -> MatDiffOperator:
    """Assemble a (rows*n) x (cols*n) operator from n x n blocks (None = 0)."""
    size = len(blocks)
    present = [op for row in blocks for op in row if op is not None]
    order = max((op.order for op in present), default=0)

    def source(x0: complex, k: int) -> np.ndarray:
        out = np.zeros((order + 1, size * n, size * n, k + 1), dtype=complex)
        for r, row in enumerate(blocks):
            for c, op in enumerate(row):
                if op is not None:
                    out[: op.order + 1, r * n : (r + 1) * n, c * n : (c + 1) * n] = op.eval(x0, k)
        return out

    singular = tuple(p for op in present for p in op.singular_set)
    return MatDiffOperator(size * n, order, source, name="block", singular_set=singular)


def operator_to_json(op: MatDiffOperator) -> dict[str, Any]:
    coefficients: list[Any] = []
    if op.evaluators is not None:
        for ev in op.evaluators:
            if isinstance(ev, (ExprMatrix, ConstantMatrix)):
                coefficients.append(ev.to_json())
            else:
                coefficients.append({"procedural": getattr(ev, "name", type(ev).__name__)})
    else:
        coefficients = [{"procedural": f"{op.name}[{j}]"} for j in range(op.order + 1)]
    out: dict[str, Any] = {"name": op.name, "n": op.n, "order": op.order, "coefficients": coefficients}
    if op.leading is not None:
        out["leading"] = [[complex_to_json(v) for v in row] for row in op.leading]
    return out


# Residuals -------------------------------------------------------------------


def probe_battery(n: int) -> list[ExprMatrix]:
    """Six smooth n-vector probes: polynomials, Gaussians and trig functions."""
    probes = []
    gauss = exp(-0.25 * X * X)
    for kind in range(6):
        column = []
        for i in range(n):
            if kind == 0:
                e = poly([1.0, i + 1.0, 0.5])
            elif kind == 1:
                e = poly([0.0, -(i + 1.0), 0.0, 1.0])
            elif kind == 2:
                e = exp(-0.25 * (X - 0.5 * i) * (X - 0.5 * i))
            elif kind == 3:
                e = poly([1.0, 0.0, 0.3 * (i + 1)]) * gauss
            elif kind == 4:
                e = sin((i + 1.0) * X)
            else:
                e = cos(0.5 * X + i) * exp(0.1 * X)
            column.append(e)
        probes.append(ExprMatrix.column(column))
    return probes


def coefficient_residual(a: MatDiffOperator, b: MatDiffOperator, points: Iterable[float]) -> float:
    """Max relative difference of coefficient values, orders padded."""
    order = max(a.order, b.order)
    worst = 0.0
    for x in points:
        av = np.zeros((order + 1, a.n, a.n), dtype=complex)
        bv = np.zeros_like(av)
        av[: a.order + 1] = a.values(x)
        bv[: b.order + 1] = b.values(x)
        worst = max(worst, relative_residual(av, bv))
    return worst


def operator_scale(op: MatDiffOperator, points: Iterable[float]) -> float:
    return max((float(np.max(np.abs(op.values(x)))) for x in points), default=0.0)


def remainder_residual(a: MatDiffOperator, r: MatDiffOperator, points: Sequence[float]) -> float:
    """Size of a division remainder relative to the dividend's coefficients."""
    scale = max(operator_scale(a, points), 1.0)
    return operator_scale(r, points) / scale


def probe_residual(
    lhs: MatDiffOperator | Callable[[MatrixFunctionEvaluator], MatrixFunctionEvaluator],
    rhs: MatDiffOperator | Callable[[MatrixFunctionEvaluator], MatrixFunctionEvaluator],
    probes: Sequence[MatrixFunctionEvaluator],
    points: Iterable[float],
) -> float:
    """Max relative difference of two actions over probes and points.

    Either side is an operator or a callable mapping a probe to the evaluator
    of its image (used for chained application).
    """
    points = list(points)
    worst = 0.0
    for f in probes:
        left = AppliedVector(lhs, f) if isinstance(lhs, MatDiffOperator) else lhs(f)
        right = AppliedVector(rhs, f) if isinstance(rhs, MatDiffOperator) else rhs(f)
        for x in points:
            worst = max(worst, relative_residual(left.value(x), right.value(x)))
    return worst


def chained(*ops: MatDiffOperator) -> Callable[[MatrixFunctionEvaluator], MatrixFunctionEvaluator]:
    """f -> ops[0](ops[1](…(f))) without composing coefficients."""

    def image(f: MatrixFunctionEvaluator) -> MatrixFunctionEvaluator:
        out = f
        for op in reversed(ops):
            out = AppliedVector(op, out)
        return out

    return image


def intertwining_residual(
    q: MatDiffOperator,
    h_plus: MatDiffOperator,
    h_minus: MatDiffOperator,
    probes: Sequence[MatrixFunctionEvaluator] | None = None,
    points: Sequence[float] | None = None,
    settings: Settings = DEFAULT_SETTINGS,
    tol: float | None = None,
) -> VerificationReport:
    """Residuals of Q H+ = H- Q, by chained probe action and coefficientwise."""
    tol = settings.tol_accept if tol is None else tol
    probes = probe_battery(q.n) if probes is None else probes
    report = VerificationReport("intertwining")
    left, right = compose(q, h_plus), compose(h_minus, q)
    if points is None:
        sampler = PointSampler(settings, q.singular_set + h_plus.singular_set + h_minus.singular_set)
        checked = sampler.evaluate(
            lambda x: (
                probe_residual(chained(q, h_plus), chained(h_minus, q), probes, [x]),
                coefficient_residual(left, right, [x]),
            ),
            settings.sample_points,
            stage="intertwining",
        )
        points = [x for x, _ in checked]
        probe_res = max((r[0] for _, r in checked), default=0.0)
        coeff_res = max((r[1] for _, r in checked), default=0.0)
    else:
        probe_res = probe_residual(chained(q, h_plus), chained(h_minus, q), probes, points)
        coeff_res = coefficient_residual(left, right, points)
    report.add("Q H+ = H- Q (probes)", "intertwining", probe_res, tol, points=points, probes=len(probes))
    report.add("Q H+ = H- Q (coefficients)", "intertwining", coeff_res, tol, points=points)
    logger.debug("intertwining residuals for %s: probes %.3g, coefficients %.3g", q.name, probe_res, coeff_res)
    return report
