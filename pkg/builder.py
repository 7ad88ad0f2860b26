"""Intertwining operators from kernel data and their partner potentials."""
from __future__ import annotations

import logging
from typing import Any, Sequence

import numpy as np

from chains import ChainSet, wronskian_matrix
from core import DEFAULT_SETTINGS, PointSampler, Settings, SingularLeadingCoefficient, VerificationReport
from diffop import Hamiltonian, MatDiffOperator, apply, intertwining_residual, probe_battery
from jets import MatrixFunctionEvaluator, ProceduralMatrix, row_equilibrated_condition, series_derivative, series_solve

logger = logging.getLogger(__name__)


def _leading(n: int, leading: Any, settings: Settings = DEFAULT_SETTINGS) -> np.ndarray:
    xn = np.eye(n, dtype=complex) if leading is None else np.array(leading, dtype=complex).reshape(n, n)
    cond = row_equilibrated_condition(xn)
    if cond > settings.cond_max:
        raise SingularLeadingCoefficient(f"the leading coefficient X_N must be invertible (condition estimate {cond:.3g})")
    return xn


def kernel_operator(
    members: Sequence[MatrixFunctionEvaluator],
    n: int,
    leading: Any = None,
    name: str = "Q-",
    settings: Settings = DEFAULT_SETTINGS,
) -> MatDiffOperator:
    """Order-N operator with constant leading ``leading`` annihilating n*N members.

    At each (x0, K) the lower coefficients solve
    sum_{j<N} X_j Phi_l^{(j)} = -X_N Phi_l^{(N)} over jets; members are
    queried at order K + N.
    """
    if len(members) % n:
        raise ValueError(f"{len(members)} kernel members do not fit n={n}")
    big = len(members) // n
    xn = _leading(n, leading, settings)

    def source(x0: complex, order: int) -> np.ndarray:
        w = wronskian_matrix(members, big + 1, x0, order)
        rhs = -np.einsum("ij,jlk->ilk", xn, w[n * big :])
        rows = series_solve(np.swapaxes(w[: n * big], 0, 1), np.swapaxes(rhs, 0, 1), x0, settings)
        rows = np.swapaxes(rows, 0, 1)
        out = np.zeros((big + 1, n, n, order + 1), dtype=complex)
        for j in range(big):
            out[j] = rows[:, j * n : (j + 1) * n]
        out[big, :, :, 0] = xn
        return out

    singular = {p for m in members for p in m.singular_set}
    return MatDiffOperator(n, big, source, leading=xn, name=name, singular_set=singular)


def build_intertwiner(
    cs: ChainSet, leading: Any = None, settings: Settings = DEFAULT_SETTINGS, name: str = "Q-"
) -> MatDiffOperator:
    """The intertwiner whose kernel is spanned by the chain set (default X_N = I)."""
    q = kernel_operator(cs.members(), cs.n, leading, name, settings)
    logger.info("built %s: n=%d, N=%d from %d chains", name, cs.n, q.order, len(cs.chains))
    return q


def partner_potential(q: MatDiffOperator, v_plus: MatrixFunctionEvaluator) -> ProceduralMatrix:
    """V- = X_N V+ X_N^{-1} + 2 X'_{N-1} X_N^{-1}; X_{N-1} is queried at order K + 1."""
    if q.leading is None:
        raise ValueError(f"{q.name} needs a constant leading coefficient")
    xn = q.leading
    xn_inv = np.linalg.inv(xn)
    big = q.order

    def compute(x0: complex, order: int) -> np.ndarray:
        vp = v_plus.eval(x0, order).coeffs
        out = np.einsum("ij,jkq,kl->ilq", xn, vp, xn_inv)
        if big >= 1:
            lower = series_derivative(q.eval(x0, order + 1)[big - 1], 1)
            out += 2.0 * np.einsum("ijq,jk->ikq", lower, xn_inv)
        return out

    singular = set(q.singular_set) | set(v_plus.singular_set)
    return ProceduralMatrix(v_plus.shape, compute, name=f"V[{q.name}]", singular_set=singular)


def partner_hamiltonian(q: MatDiffOperator, h_plus: Hamiltonian, name: str = "H-") -> Hamiltonian:
    return Hamiltonian(partner_potential(q, h_plus.potential), name=name)


def kernel_residual(q: MatDiffOperator, members: Sequence[MatrixFunctionEvaluator], points: Sequence[float]) -> float:
    """Max of |Q Phi| relative to |X_N Phi^{(N)}| over members and points."""
    worst = 0.0
    lead = np.eye(q.n) if q.leading is None else q.leading
    for m in members:
        for x in points:
            image = apply(q, m, x, 0).value
            top = series_derivative(m.eval(x, q.order).coeffs, q.order)[..., 0]
            floor = max(1.0, float(np.max(np.abs(lead @ top))))
            worst = max(worst, float(np.max(np.abs(image))) / floor)
    return worst


def certify_intertwining(
    q: MatDiffOperator,
    h_plus: Hamiltonian,
    cs: ChainSet | None = None,
    settings: Settings = DEFAULT_SETTINGS,
) -> VerificationReport:
    """Check Q H+ = H- Q with H- from the partner potential.

    Residual failures become report entries; evaluation failures that
    sampling cannot step around still raise.
    """
    h_minus = partner_hamiltonian(q, h_plus)
    report = VerificationReport("build")
    report.extend(intertwining_residual(q, h_plus, h_minus, probe_battery(q.n), settings=settings))
    if cs is not None:
        sampler = PointSampler(settings, q.singular_set)
        checked = sampler.evaluate(
            lambda x: kernel_residual(q, cs.members(), [x]), settings.sample_points, stage="build"
        )
        residual = max((r for _, r in checked), default=0.0)
        report.add("Q Phi_l = 0", "kernel", residual, settings.tol_accept, points=[x for x, _ in checked])
    return report
