"""Truncated Taylor jets over complex scalars and matrices.

A jet of order K at x0 stores c_k = f^{(k)}(x0)/k! for k = 0..K.  All array
helpers keep the Taylor index on the trailing axis, so a matrix jet is an
array of shape (rows, cols, K+1).  Truncation is always explicit: no helper
ever reads a coefficient past index K of its inputs.
"""
from __future__ import annotations

import cmath
import logging
import threading
from abc import ABC, abstractmethod
from collections import OrderedDict
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import poch

from core import DEFAULT_SETTINGS, SingularPoint, SingularWronskian, Settings

logger = logging.getLogger(__name__)


# Series kernels (trailing axis = Taylor index) --------------------------------


def series_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated Cauchy product, broadcasting over leading axes."""
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"jet orders differ: {a.shape[-1] - 1} vs {b.shape[-1] - 1}")
    size = a.shape[-1]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=complex)
    for p in range(size):
        out[..., p:] += a[..., p : p + 1] * b[..., : size - p]
    return out


def series_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of matrix jets: (r, s, K+1) x (s, c, K+1) -> (r, c, K+1)."""
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"jet orders differ: {a.shape[-1] - 1} vs {b.shape[-1] - 1}")
    size = a.shape[-1]
    batch = np.broadcast_shapes(a.shape[:-3], b.shape[:-3])
    out = np.zeros(batch + (a.shape[-3], b.shape[-2], size), dtype=complex)
    for p in range(size):
        out[..., p:] += np.einsum("...ij,...jkq->...ikq", a[..., p], b[..., : size - p])
    return out


def series_inv(a: np.ndarray, x0: complex = 0.0, settings: Settings = DEFAULT_SETTINGS) -> np.ndarray:
    scale = float(np.max(np.abs(a), initial=0.0))
    if scale == 0.0 or abs(a[0]) <= settings.eps_pivot * scale:
        raise SingularPoint(f"division by a jet with vanishing constant term at x={x0}", point=x0)
    out = np.zeros_like(a, dtype=complex)
    out[0] = 1.0 / a[0]
    for k in range(1, a.shape[-1]):
        out[k] = -np.dot(a[1 : k + 1], out[k - 1 :: -1][:k]) * out[0]
    return out


def series_derivative(a: np.ndarray, times: int = 1) -> np.ndarray:
    """Jet of the ``times``-th derivative; the order drops by ``times``."""
    if times == 0:
        return np.array(a, dtype=complex)
    size = a.shape[-1] - times
    if size <= 0:
        raise ValueError(f"cannot differentiate an order-{a.shape[-1] - 1} jet {times} times")
    k = np.arange(size)
    return a[..., times:] * poch(k + 1, times)


def series_truncate(a: np.ndarray, order: int) -> np.ndarray:
    if a.shape[-1] < order + 1:
        raise ValueError(f"jet of order {a.shape[-1] - 1} cannot be read at order {order}")
    return a[..., : order + 1]


def row_equilibrated_condition(a0: np.ndarray) -> float:
    """1-norm condition number after scaling rows to unit max; inf if singular."""
    rows = np.max(np.abs(a0), axis=1)
    if np.any(rows == 0.0):
        return float("inf")
    try:
        with np.errstate(all="ignore"):
            cond = float(np.linalg.cond(a0 / rows[:, None], 1))
    except np.linalg.LinAlgError:
        return float("inf")
    return cond if np.isfinite(cond) else float("inf")


def series_solve(
    a: np.ndarray, b: np.ndarray, x0: complex = 0.0, settings: Settings = DEFAULT_SETTINGS
) -> np.ndarray:
    """Solve A X = B over jets: pivoted LU of A_0, then order-by-order back-substitution."""
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"jet system matrix must be square, got {a.shape[:2]}")
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("system and right-hand side jets have different orders")
    a0 = a[..., 0]
    cond = row_equilibrated_condition(a0)
    if cond > settings.cond_max:
        raise SingularWronskian(
            f"jet system is singular at x={x0} (condition estimate {cond:.3g})", point=x0, condition=cond
        )
    lu = scipy.linalg.lu_factor(a0, check_finite=False)
    out = np.zeros((a.shape[0], b.shape[1], b.shape[-1]), dtype=complex)
    for k in range(b.shape[-1]):
        rhs = np.array(b[..., k], dtype=complex)
        for j in range(1, k + 1):
            rhs -= a[..., j] @ out[..., k - j]
        out[..., k] = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    return out


def _det_by_cofactors(a: np.ndarray) -> np.ndarray:
    m = a.shape[0]
    if m == 1:
        return np.array(a[0, 0], dtype=complex)
    total = np.zeros(a.shape[-1], dtype=complex)
    for j in range(m):
        if not np.any(a[0, j]):
            continue
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        term = series_mul(a[0, j], _det_by_cofactors(minor))
        total += term if j % 2 == 0 else -term
    return total


def _det_by_interpolation(a: np.ndarray) -> np.ndarray:
    # det A(t) is a polynomial of degree <= m*K; sample it on the unit circle.
    m, order = a.shape[0], a.shape[-1] - 1
    samples = m * order + 1
    t = np.exp(2j * np.pi * np.arange(samples) / samples)
    powers = t[:, None] ** np.arange(order + 1)[None, :]
    mats = np.einsum("ijk,tk->tij", a, powers)
    coeffs = np.fft.fft(np.linalg.det(mats)) / samples
    return coeffs[: order + 1]


def series_det(a: np.ndarray, x0: complex = 0.0, settings: Settings = DEFAULT_SETTINGS) -> np.ndarray:
    m = a.shape[0]
    size = a.shape[-1]
    det = np.zeros(size, dtype=complex)
    det[0] = 1.0
    if m == 0:
        return det
    scale = float(np.max(np.abs(a[..., 0]), initial=0.0))
    work = np.array(a, dtype=complex)
    for c in range(m):
        column = np.abs(work[c:, c, 0])
        r = c + int(np.argmax(column))
        if scale == 0.0 or column[r - c] <= settings.eps_pivot * scale:
            logger.debug("pivot failure in jet determinant at x=%s (dim %d)", x0, m)
            return _det_by_cofactors(a) if m <= 4 else _det_by_interpolation(a)
        if r != c:
            work[[c, r]] = work[[r, c]]
            det = -det
        pivot = work[c, c]
        det = series_mul(det, pivot)
        inverse = series_inv(pivot, x0, settings)
        for row in range(c + 1, m):
            factor = series_mul(work[row, c], inverse)
            work[row, c:] -= series_mul(factor[None, :], work[c, c:])
    return det


# Scalar jets -----------------------------------------------------------------


class Jet:
    """Truncated Taylor expansion of a complex scalar at ``x0``."""

    __slots__ = ("x0", "coeffs")
    __array_ufunc__ = None

    def __init__(self, coeffs: Sequence[complex] | np.ndarray, x0: complex = 0.0):
        data = np.array(coeffs, dtype=complex)
        if data.ndim != 1 or data.size == 0:
            raise ValueError("a jet needs a non-empty 1-d coefficient list")
        data.setflags(write=False)
        self.coeffs = data
        self.x0 = complex(x0)

    @classmethod
    def constant(cls, value: complex, x0: complex = 0.0, order: int = 0) -> "Jet":
        coeffs = np.zeros(order + 1, dtype=complex)
        coeffs[0] = value
        return cls(coeffs, x0)

    @classmethod
    def variable(cls, x0: complex = 0.0, order: int = 0) -> "Jet":
        coeffs = np.zeros(order + 1, dtype=complex)
        coeffs[0] = x0
        if order >= 1:
            coeffs[1] = 1.0
        return cls(coeffs, x0)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    @property
    def value(self) -> complex:
        return complex(self.coeffs[0])

    def _lift(self, other: Any) -> "Jet":
        if isinstance(other, Jet):
            if other.x0 != self.x0 or other.order != self.order:
                raise ValueError(
                    f"jet mismatch: (x0={self.x0}, K={self.order}) vs (x0={other.x0}, K={other.order})"
                )
            return other
        return Jet.constant(complex(other), self.x0, self.order)

    def __add__(self, other: Any) -> "Jet":
        return jet_add(self, self._lift(other))

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return Jet(-self.coeffs, self.x0)

    def __sub__(self, other: Any) -> "Jet":
        return jet_add(self, -self._lift(other))

    def __rsub__(self, other: Any) -> "Jet":
        return jet_add(self._lift(other), -self)

    def __mul__(self, other: Any) -> "Jet":
        if isinstance(other, Jet):
            return jet_mul(self, other)
        return Jet(self.coeffs * complex(other), self.x0)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Jet":
        if isinstance(other, Jet):
            return jet_mul(self, jet_inv(other))
        return Jet(self.coeffs / complex(other), self.x0)

    def __rtruediv__(self, other: Any) -> "Jet":
        return jet_mul(self._lift(other), jet_inv(self))

    def __pow__(self, exponent: int) -> "Jet":
        return jet_pow(self, exponent)

    def derivative(self, times: int = 1) -> "Jet":
        return Jet(series_derivative(self.coeffs, times), self.x0)

    def truncate(self, order: int) -> "Jet":
        return Jet(series_truncate(self.coeffs, order), self.x0)

    def __repr__(self) -> str:
        return f"Jet(x0={self.x0}, coeffs={np.round(self.coeffs, 12).tolist()})"


def _check_pair(a: Jet, b: Jet) -> None:
    if a.x0 != b.x0 or a.order != b.order:
        raise ValueError(f"jet mismatch: (x0={a.x0}, K={a.order}) vs (x0={b.x0}, K={b.order})")


def jet_add(a: Jet, b: Jet) -> Jet:
    _check_pair(a, b)
    return Jet(a.coeffs + b.coeffs, a.x0)


def jet_mul(a: Jet, b: Jet) -> Jet:
    _check_pair(a, b)
    return Jet(series_mul(a.coeffs, b.coeffs), a.x0)


def jet_inv(a: Jet, settings: Settings = DEFAULT_SETTINGS) -> Jet:
    return Jet(series_inv(a.coeffs, a.x0, settings), a.x0)


def jet_pow(a: Jet, exponent: int) -> Jet:
    exponent = int(exponent)
    if exponent < 0:
        return jet_pow(jet_inv(a), -exponent)
    result = Jet.constant(1.0, a.x0, a.order)
    base = a
    while exponent:
        if exponent & 1:
            result = jet_mul(result, base)
        exponent >>= 1
        if exponent:
            base = jet_mul(base, base)
    return result


def jet_exp(u: Jet) -> Jet:
    c = u.coeffs
    out = np.zeros_like(c)
    out[0] = cmath.exp(c[0])
    j = np.arange(1, c.size)
    for k in range(1, c.size):
        out[k] = np.dot(j[:k] * c[1 : k + 1], out[k - 1 :: -1][:k]) / k
    return Jet(out, u.x0)


def jet_sin_cos(u: Jet) -> tuple[Jet, Jet]:
    c = u.coeffs
    s = np.zeros_like(c)
    co = np.zeros_like(c)
    s[0], co[0] = cmath.sin(c[0]), cmath.cos(c[0])
    j = np.arange(1, c.size)
    for k in range(1, c.size):
        weights = j[:k] * c[1 : k + 1]
        s[k] = np.dot(weights, co[k - 1 :: -1][:k]) / k
        co[k] = -np.dot(weights, s[k - 1 :: -1][:k]) / k
    return Jet(s, u.x0), Jet(co, u.x0)


# Closed-form scalar expressions ----------------------------------------------


def _as_complex(value: Any) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ValueError(f"complex numbers are [re, im] pairs, got {value!r}")
        return complex(float(value[0]), float(value[1]))
    return complex(value)


def complex_to_json(value: complex) -> list[float]:
    value = complex(value)
    return [float(value.real), float(value.imag)]


class ScalarExpr(ABC):
    """Expression tree in one variable x; ``jet(u)`` evaluates it at the jet u."""

    # numpy scalars on the left defer to the reflected operators below
    __array_ufunc__ = None

    @abstractmethod
    def jet(self, u: Jet) -> Jet: ...

    @abstractmethod
    def to_json(self) -> dict[str, Any]: ...

    def singular_points(self) -> tuple[complex, ...]:
        return ()

    def __add__(self, other: Any) -> "ScalarExpr":
        return Add(self, as_expr(other))

    def __radd__(self, other: Any) -> "ScalarExpr":
        return Add(as_expr(other), self)

    def __sub__(self, other: Any) -> "ScalarExpr":
        return Add(self, Mul(Const(-1.0), as_expr(other)))

    def __rsub__(self, other: Any) -> "ScalarExpr":
        return Add(as_expr(other), Mul(Const(-1.0), self))

    def __neg__(self) -> "ScalarExpr":
        return Mul(Const(-1.0), self)

    def __mul__(self, other: Any) -> "ScalarExpr":
        return Mul(self, as_expr(other))

    def __rmul__(self, other: Any) -> "ScalarExpr":
        return Mul(as_expr(other), self)

    def __truediv__(self, other: Any) -> "ScalarExpr":
        return Div(self, as_expr(other))

    def __rtruediv__(self, other: Any) -> "ScalarExpr":
        return Div(as_expr(other), self)

    def __pow__(self, exponent: int) -> "ScalarExpr":
        return Pow(self, exponent)


class Const(ScalarExpr):
    def __init__(self, value: Any):
        self.value = _as_complex(value)

    def jet(self, u: Jet) -> Jet:
        return Jet.constant(self.value, u.x0, u.order)

    def to_json(self) -> dict[str, Any]:
        return {"op": "const", "value": complex_to_json(self.value)}


class Var(ScalarExpr):
    def jet(self, u: Jet) -> Jet:
        return u

    def to_json(self) -> dict[str, Any]:
        return {"op": "x"}


class Add(ScalarExpr):
    def __init__(self, *terms: ScalarExpr):
        self.terms = tuple(terms)

    def jet(self, u: Jet) -> Jet:
        out = Jet.constant(0.0, u.x0, u.order)
        for term in self.terms:
            out = jet_add(out, term.jet(u))
        return out

    def singular_points(self) -> tuple[complex, ...]:
        return tuple(p for t in self.terms for p in t.singular_points())

    def to_json(self) -> dict[str, Any]:
        return {"op": "add", "args": [t.to_json() for t in self.terms]}


class Mul(ScalarExpr):
    def __init__(self, *factors: ScalarExpr):
        self.factors = tuple(factors)

    def jet(self, u: Jet) -> Jet:
        out = Jet.constant(1.0, u.x0, u.order)
        for factor in self.factors:
            out = jet_mul(out, factor.jet(u))
        return out

    def singular_points(self) -> tuple[complex, ...]:
        return tuple(p for f in self.factors for p in f.singular_points())

    def to_json(self) -> dict[str, Any]:
        return {"op": "mul", "args": [f.to_json() for f in self.factors]}


class Div(ScalarExpr):
    """Quotient; ``singular`` lists the known zeros of the denominator."""

    def __init__(self, num: ScalarExpr, den: ScalarExpr, singular: Iterable[Any] = ()):
        self.num = num
        self.den = den
        self.singular = tuple(_as_complex(s) for s in singular)

    def jet(self, u: Jet) -> Jet:
        return jet_mul(self.num.jet(u), jet_inv(self.den.jet(u)))

    def singular_points(self) -> tuple[complex, ...]:
        return self.singular + self.num.singular_points() + self.den.singular_points()

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"op": "div", "args": [self.num.to_json(), self.den.to_json()]}
        if self.singular:
            out["singular"] = [complex_to_json(s) for s in self.singular]
        return out


class Pow(ScalarExpr):
    def __init__(self, base: ScalarExpr, exponent: int):
        if int(exponent) != exponent:
            raise ValueError("only integer powers are supported")
        self.base = base
        self.exponent = int(exponent)

    def jet(self, u: Jet) -> Jet:
        return jet_pow(self.base.jet(u), self.exponent)

    def singular_points(self) -> tuple[complex, ...]:
        return self.base.singular_points()

    def to_json(self) -> dict[str, Any]:
        return {"op": "pow", "args": [self.base.to_json()], "n": self.exponent}


class _Unary(ScalarExpr):
    kind = ""

    def __init__(self, arg: ScalarExpr):
        self.arg = arg

    def singular_points(self) -> tuple[complex, ...]:
        return self.arg.singular_points()

    def to_json(self) -> dict[str, Any]:
        return {"op": self.kind, "args": [self.arg.to_json()]}


class Exp(_Unary):
    kind = "exp"

    def jet(self, u: Jet) -> Jet:
        return jet_exp(self.arg.jet(u))


class Sin(_Unary):
    kind = "sin"

    def jet(self, u: Jet) -> Jet:
        return jet_sin_cos(self.arg.jet(u))[0]


class Cos(_Unary):
    kind = "cos"

    def jet(self, u: Jet) -> Jet:
        return jet_sin_cos(self.arg.jet(u))[1]


class Affine(ScalarExpr):
    """``inner(a*x + b)``."""

    def __init__(self, inner: ScalarExpr, a: Any = 1.0, b: Any = 0.0):
        self.inner = inner
        self.a = _as_complex(a)
        self.b = _as_complex(b)
        if self.a == 0:
            raise ValueError("affine composition needs a nonzero slope")

    def jet(self, u: Jet) -> Jet:
        return self.inner.jet(u * self.a + self.b)

    def singular_points(self) -> tuple[complex, ...]:
        return tuple((p - self.b) / self.a for p in self.inner.singular_points())

    def to_json(self) -> dict[str, Any]:
        return {
            "op": "affine-compose",
            "args": [self.inner.to_json()],
            "a": complex_to_json(self.a),
            "b": complex_to_json(self.b),
        }


X = Var()


def as_expr(value: Any) -> ScalarExpr:
    if isinstance(value, ScalarExpr):
        return value
    return Const(value)


def exp(e: Any) -> ScalarExpr:
    return Exp(as_expr(e))


def sin(e: Any) -> ScalarExpr:
    return Sin(as_expr(e))


def cos(e: Any) -> ScalarExpr:
    return Cos(as_expr(e))


def poly(coeffs: Sequence[complex]) -> ScalarExpr:
    """Polynomial sum_k coeffs[k] x^k."""
    terms: list[ScalarExpr] = []
    for k, c in enumerate(coeffs):
        if c == 0:
            continue
        if k == 0:
            terms.append(Const(c))
        elif k == 1:
            terms.append(Mul(Const(c), X))
        else:
            terms.append(Mul(Const(c), Pow(X, k)))
    if not terms:
        return Const(0.0)
    return terms[0] if len(terms) == 1 else Add(*terms)


_UNARY = {"exp": Exp, "sin": Sin, "cos": Cos}


def expr_from_json(data: Any) -> ScalarExpr:
    if isinstance(data, (int, float)) or (isinstance(data, list) and len(data) == 2):
        return Const(data)
    if not isinstance(data, dict) or "op" not in data:
        raise ValueError(f"not an expression node: {data!r}")
    op = data["op"]
    args = [expr_from_json(a) for a in data.get("args", [])]
    if op == "const":
        return Const(data["value"])
    if op == "x":
        return Var()
    if op == "add":
        return Add(*args)
    if op == "mul":
        return Mul(*args)
    if op == "div":
        if len(args) != 2:
            raise ValueError("div takes exactly two arguments")
        return Div(args[0], args[1], data.get("singular", ()))
    if op == "pow":
        return Pow(args[0], int(data["n"]))
    if op in _UNARY:
        return _UNARY[op](args[0])
    if op == "affine-compose":
        return Affine(args[0], data.get("a", 1.0), data.get("b", 0.0))
    raise ValueError(f"unknown expression node kind {op!r}")


def _check_regular(points: Iterable[complex], x0: complex) -> None:
    for p in points:
        if abs(x0 - p) <= 1e-12 * max(1.0, abs(p)):
            raise SingularPoint(f"x={x0} is a declared singular point", point=x0)


def eval_expr(e: ScalarExpr, x0: complex, order: int) -> Jet:
    """Order-``order`` Taylor jet of ``e`` at ``x0``."""
    _check_regular(e.singular_points(), complex(x0))
    return e.jet(Jet.variable(x0, order))


# Matrix jets -----------------------------------------------------------------


class MatrixJet:
    """Row-major grid of jets sharing base point and order."""

    __slots__ = ("x0", "coeffs")

    def __init__(self, coeffs: np.ndarray, x0: complex = 0.0):
        data = np.array(coeffs, dtype=complex)
        if data.ndim != 3:
            raise ValueError("matrix jet coefficients must have shape (rows, cols, K+1)")
        data.setflags(write=False)
        self.coeffs = data
        self.x0 = complex(x0)

    @classmethod
    def from_entries(cls, grid: Sequence[Sequence[Jet]]) -> "MatrixJet":
        first = grid[0][0]
        for row in grid:
            for entry in row:
                _check_pair(first, entry)
        return cls(np.array([[e.coeffs for e in row] for row in grid]), first.x0)

    @classmethod
    def constant(cls, matrix: np.ndarray, x0: complex = 0.0, order: int = 0) -> "MatrixJet":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
        coeffs = np.zeros(matrix.shape + (order + 1,), dtype=complex)
        coeffs[..., 0] = matrix
        return cls(coeffs, x0)

    @classmethod
    def identity(cls, n: int, x0: complex = 0.0, order: int = 0) -> "MatrixJet":
        return cls.constant(np.eye(n), x0, order)

    @property
    def rows(self) -> int:
        return self.coeffs.shape[0]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[0], self.coeffs.shape[1]

    @property
    def order(self) -> int:
        return self.coeffs.shape[-1] - 1

    @property
    def value(self) -> np.ndarray:
        return np.array(self.coeffs[..., 0])

    def entry(self, i: int, j: int) -> Jet:
        return Jet(self.coeffs[i, j], self.x0)

    def _other(self, other: "MatrixJet") -> np.ndarray:
        if other.x0 != self.x0 or other.order != self.order:
            raise ValueError("matrix jets differ in base point or order")
        return other.coeffs

    def __add__(self, other: "MatrixJet") -> "MatrixJet":
        return MatrixJet(self.coeffs + self._other(other), self.x0)

    def __sub__(self, other: "MatrixJet") -> "MatrixJet":
        return MatrixJet(self.coeffs - self._other(other), self.x0)

    def __neg__(self) -> "MatrixJet":
        return MatrixJet(-self.coeffs, self.x0)

    def __matmul__(self, other: "MatrixJet") -> "MatrixJet":
        return MatrixJet(series_matmul(self.coeffs, self._other(other)), self.x0)

    def scale(self, factor: complex | Jet) -> "MatrixJet":
        if isinstance(factor, Jet):
            _check_pair(Jet(self.coeffs[0, 0], self.x0), factor)
            return MatrixJet(series_mul(self.coeffs, factor.coeffs[None, None, :]), self.x0)
        return MatrixJet(self.coeffs * complex(factor), self.x0)

    def derivative(self, times: int = 1) -> "MatrixJet":
        return MatrixJet(series_derivative(self.coeffs, times), self.x0)

    def truncate(self, order: int) -> "MatrixJet":
        return MatrixJet(series_truncate(self.coeffs, order), self.x0)

    def __repr__(self) -> str:
        return f"MatrixJet(x0={self.x0}, shape={self.shape}, K={self.order})"


def mat_jet_solve(a: MatrixJet, b: MatrixJet, settings: Settings = DEFAULT_SETTINGS) -> MatrixJet:
    if a.x0 != b.x0 or a.order != b.order:
        raise ValueError("system and right-hand side differ in base point or order")
    return MatrixJet(series_solve(a.coeffs, b.coeffs, a.x0, settings), a.x0)


def mat_jet_det(a: MatrixJet, settings: Settings = DEFAULT_SETTINGS) -> Jet:
    if a.rows != a.cols:
        raise ValueError(f"determinant of a non-square {a.shape} matrix jet")
    det = series_det(a.coeffs, a.x0, settings)
    if not np.all(np.isfinite(det)):
        raise OverflowError(f"determinant overflow at x={a.x0}")
    return Jet(det, a.x0)


# Evaluators ------------------------------------------------------------------


class JetCache:
    """Per-(x0, K) memo shared by concurrent callers."""

    def __init__(self, maxsize: int = 4096):
        self._data: OrderedDict[tuple[complex, int], np.ndarray] = OrderedDict()
        self._lock = threading.Lock()
        self.maxsize = maxsize

    def get(self, x0: complex, order: int, compute: Callable[[], np.ndarray]) -> np.ndarray:
        key = (complex(x0), int(order))
        with self._lock:
            hit = self._data.get(key)
        if hit is not None:
            return hit
        value = np.array(compute(), dtype=complex)
        value.setflags(write=False)
        with self._lock:
            value = self._data.setdefault(key, value)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)
        return value


class MatrixFunctionEvaluator(ABC):
    """Contract (x0, K) -> MatrixJet with declared singular points."""

    shape: tuple[int, int] = (1, 1)
    singular_set: tuple[float, ...] = ()
    is_constant: bool = False

    @abstractmethod
    def eval(self, x0: complex, order: int) -> MatrixJet: ...

    def value(self, x0: complex) -> np.ndarray:
        return self.eval(x0, 0).value


class ConstantMatrix(MatrixFunctionEvaluator):
    is_constant = True

    def __init__(self, matrix: Any):
        data = np.atleast_2d(np.asarray(matrix, dtype=complex))
        data.setflags(write=False)
        self.matrix = data
        self.shape = data.shape

    def eval(self, x0: complex, order: int) -> MatrixJet:
        return MatrixJet.constant(self.matrix, x0, order)

    def to_json(self) -> dict[str, Any]:
        return {"constant": [[complex_to_json(v) for v in row] for row in self.matrix]}


class ExprMatrix(MatrixFunctionEvaluator):
    """Matrix of closed-form expressions; ``None`` entries are identically zero."""

    def __init__(self, grid: Sequence[Sequence[ScalarExpr | None]]):
        self.grid = tuple(tuple(e if e is None else as_expr(e) for e in row) for row in grid)
        self.shape = (len(self.grid), len(self.grid[0]))
        points = {p for row in self.grid for e in row if e is not None for p in e.singular_points()}
        self.singular_set = tuple(sorted(float(p.real) for p in points if abs(p.imag) < 1e-12))
        self._points = tuple(points)

    @classmethod
    def column(cls, entries: Sequence[ScalarExpr | None]) -> "ExprMatrix":
        return cls([[e] for e in entries])

    @classmethod
    def diagonal(cls, entries: Sequence[ScalarExpr | None]) -> "ExprMatrix":
        n = len(entries)
        return cls([[entries[i] if i == j else None for j in range(n)] for i in range(n)])

    def eval(self, x0: complex, order: int) -> MatrixJet:
        x0 = complex(x0)
        _check_regular(self._points, x0)
        u = Jet.variable(x0, order)
        coeffs = np.zeros(self.shape + (order + 1,), dtype=complex)
        for i, row in enumerate(self.grid):
            for j, e in enumerate(row):
                if e is not None:
                    coeffs[i, j] = e.jet(u).coeffs
        return MatrixJet(coeffs, x0)

    def to_json(self) -> dict[str, Any]:
        return {"expr": [[None if e is None else e.to_json() for e in row] for row in self.grid]}

    @classmethod
    def from_json(cls, data: Sequence[Sequence[Any]]) -> "ExprMatrix":
        return cls([[None if e is None else expr_from_json(e) for e in row] for row in data])


class ProceduralMatrix(MatrixFunctionEvaluator):
    """Evaluator defined by a pointwise jet computation, memoized per (x0, K)."""

    def __init__(
        self,
        shape: tuple[int, int],
        compute: Callable[[complex, int], np.ndarray],
        name: str = "procedural",
        singular_set: Iterable[float] = (),
    ):
        self.shape = tuple(shape)
        self.name = name
        self.singular_set = tuple(singular_set)
        self._compute = compute
        self._cache = JetCache()

    def eval(self, x0: complex, order: int) -> MatrixJet:
        x0 = complex(x0)
        return MatrixJet(self._cache.get(x0, order, lambda: self._compute(x0, order)), x0)


class StackedVector(MatrixFunctionEvaluator):
    """Column vector whose components are 1x1 evaluators (``None`` = zero)."""

    def __init__(self, components: Sequence[MatrixFunctionEvaluator | None]):
        self.components = tuple(components)
        self.shape = (len(self.components), 1)
        self.singular_set = tuple(sorted({p for c in self.components if c is not None for p in c.singular_set}))

    def eval(self, x0: complex, order: int) -> MatrixJet:
        coeffs = np.zeros(self.shape + (order + 1,), dtype=complex)
        for i, comp in enumerate(self.components):
            if comp is not None:
                coeffs[i, 0] = comp.eval(x0, order).coeffs[0, 0]
        return MatrixJet(coeffs, x0)


def scalar_evaluator(e: ScalarExpr) -> ExprMatrix:
    return ExprMatrix([[e]])
