"""Chains of associated vector-functions, Jordan data and Wronskians."""
from __future__ import annotations

import bisect
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from core import (
    DEFAULT_SETTINGS,
    BadChainLengths,
    DegenerateBasis,
    IntegrationFailure,
    InvalidChain,
    InvalidJordanSpec,
    PointSampler,
    Settings,
    scan_grid,
)
from diffop import Hamiltonian, apply
from jets import (
    Const,
    ExprMatrix,
    JetCache,
    MatrixFunctionEvaluator,
    MatrixJet,
    ProceduralMatrix,
    ScalarExpr,
    StackedVector,
    X,
    complex_to_json,
    eval_expr,
    exp,
    poly,
    series_derivative,
    series_det,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Chain:
    """Phi_0..Phi_p with (H - lam)Phi_0 = 0 and (H - lam)Phi_i = Phi_{i-1}."""

    lam: complex
    members: tuple[MatrixFunctionEvaluator, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lam", complex(self.lam))
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise BadChainLengths("a chain needs at least one member")

    @property
    def length(self) -> int:
        return len(self.members)

    def truncated(self, length: int) -> "Chain":
        return Chain(self.lam, self.members[:length])


@dataclass(frozen=True)
class JordanSpec:
    """(lam, nonincreasing block orders) per distinct spectral value."""

    entries: tuple[tuple[complex, tuple[int, ...]], ...] = ()

    def __post_init__(self) -> None:
        cleaned = []
        for lam, orders in self.entries:
            orders = tuple(sorted((int(k) for k in orders if int(k) != 0), reverse=True))
            if any(k < 0 for k in orders):
                raise InvalidJordanSpec(f"negative block order for lambda={lam}")
            if orders:
                cleaned.append((complex(lam), orders))
        lams = [lam for lam, _ in cleaned]
        for i, a in enumerate(lams):
            if any(abs(a - b) < 1e-12 for b in lams[i + 1 :]):
                raise InvalidJordanSpec(f"repeated spectral value {a} in Jordan data")
        object.__setattr__(self, "entries", tuple(cleaned))

    @classmethod
    def from_dict(cls, blocks: dict[complex, Sequence[int]]) -> "JordanSpec":
        return cls(tuple((lam, tuple(orders)) for lam, orders in blocks.items()))

    @property
    def lambdas(self) -> list[complex]:
        return [lam for lam, _ in self.entries]

    @property
    def size(self) -> int:
        return sum(sum(orders) for _, orders in self.entries)

    def blocks(self, lam: complex) -> tuple[int, ...]:
        for root, orders in self.entries:
            if abs(root - complex(lam)) < 1e-12:
                return orders
        return ()

    def kappa(self, lam: complex) -> int:
        return max(self.blocks(lam), default=0)

    def mu(self, lam: complex) -> int:
        """Number of blocks of maximal order."""
        orders = self.blocks(lam)
        return sum(1 for k in orders if k == orders[0]) if orders else 0

    def multiplicity(self, lam: complex) -> int:
        return sum(self.blocks(lam))

    def check_rank(self, n: int) -> "JordanSpec":
        for lam, orders in self.entries:
            if len(orders) > 2 * n:
                raise InvalidJordanSpec(f"lambda={lam} has {len(orders)} blocks, at most {2 * n} allowed for n={n}")
        return self

    def to_matrix(self) -> np.ndarray:
        """Explicit T: lam on the diagonal, 1 below it inside each block."""
        d = self.size
        t = np.zeros((d, d), dtype=complex)
        pos = 0
        for lam, orders in self.entries:
            for k in orders:
                for i in range(k):
                    t[pos + i, pos + i] = lam
                    if i:
                        t[pos + i, pos + i - 1] = 1.0
                pos += k
        return t

    def to_json(self) -> list[dict[str, Any]]:
        return [{"lambda": complex_to_json(lam), "blocks": list(orders)} for lam, orders in self.entries]

    @classmethod
    def from_json(cls, data: Iterable[dict[str, Any]]) -> "JordanSpec":
        entries = []
        for item in data:
            lam = item["lambda"]
            lam = complex(lam[0], lam[1]) if isinstance(lam, list) else complex(lam)
            entries.append((lam, tuple(item["blocks"])))
        return cls(tuple(entries))


@dataclass
class ChainSet:
    """Chains of one Hamiltonian plus the flat numbering l = 0..d-1.

    ``ordering`` is "sequential" (chain after chain), "by_level" (all
    Phi_0, then all Phi_1, ...) or an explicit list of (chain, member) pairs.
    """

    hamiltonian: Hamiltonian
    chains: list[Chain]
    ordering: str | list[tuple[int, int]] = "sequential"
    flat: list[tuple[int, int]] = field(init=False)

    def __post_init__(self) -> None:
        self.chains = list(self.chains)
        if isinstance(self.ordering, str):
            if self.ordering == "sequential":
                self.flat = [(c, i) for c, ch in enumerate(self.chains) for i in range(ch.length)]
            elif self.ordering == "by_level":
                depth = max((ch.length for ch in self.chains), default=0)
                self.flat = [(c, i) for i in range(depth) for c, ch in enumerate(self.chains) if i < ch.length]
            else:
                raise ValueError(f"unknown chain ordering {self.ordering!r}")
        else:
            self.flat = [tuple(p) for p in self.ordering]
            expected = {(c, i) for c, ch in enumerate(self.chains) for i in range(ch.length)}
            if set(self.flat) != expected or len(self.flat) != len(expected):
                raise BadChainLengths("explicit ordering must enumerate every chain member once")
        for ch in self.chains:
            for m in ch.members:
                if m.shape != (self.n, 1):
                    raise BadChainLengths(f"chain member of shape {m.shape} for an n={self.n} Hamiltonian")
        self._check_prefix_closed()

    def _check_prefix_closed(self) -> None:
        seen: dict[int, int] = {}
        for c, i in self.flat:
            if seen.get(c, -1) != i - 1:
                raise BadChainLengths(f"member {i} of chain {c} precedes member {i - 1} in the flat ordering")
            seen[c] = i

    @property
    def n(self) -> int:
        return self.hamiltonian.n

    @property
    def size(self) -> int:
        return len(self.flat)

    @property
    def order(self) -> int:
        if self.size % self.n:
            raise BadChainLengths(f"{self.size} members do not form an order-N basis for n={self.n}")
        return self.size // self.n

    def members(self) -> list[MatrixFunctionEvaluator]:
        return [self.chains[c].members[i] for c, i in self.flat]

    def lambdas(self) -> list[complex]:
        return [self.chains[c].lam for c, _ in self.flat]

    def prefix(self, count: int) -> "ChainSet":
        """Chain set spanned by the first ``count`` flat members."""
        lengths: dict[int, int] = {}
        for c, i in self.flat[:count]:
            lengths[c] = i + 1
        keep = sorted(lengths)
        remap = {c: k for k, c in enumerate(keep)}
        chains = [self.chains[c].truncated(lengths[c]) for c in keep]
        ordering = [(remap[c], i) for c, i in self.flat[:count]]
        return ChainSet(self.hamiltonian, chains, ordering)

    def reordered(self, chain_order: Sequence[int], ordering: str = "sequential") -> "ChainSet":
        return ChainSet(self.hamiltonian, [self.chains[c] for c in chain_order], ordering)

    def jordan_spec(self) -> JordanSpec:
        grouped: list[tuple[complex, list[int]]] = []
        for ch in self.chains:
            for lam, orders in grouped:
                if abs(lam - ch.lam) < 1e-12:
                    orders.append(ch.length)
                    break
            else:
                grouped.append((ch.lam, [ch.length]))
        return JordanSpec(tuple((lam, tuple(orders)) for lam, orders in grouped))


# Scalar chain generation -----------------------------------------------------


class TaylorChainIntegrator:
    """Adaptive Taylor integration of -phi_i'' + (v - lam) phi_i = phi_{i-1}.

    All chain members are advanced together.  Accepted nodes are kept in one
    append-only table per direction from ``x0``; a query integrates the
    remaining distance with a final partial step from the last node.
    """

    safety = 0.8
    max_step = 1.0

    def __init__(
        self,
        potential: ScalarExpr,
        lam: complex,
        seeds: Sequence[Sequence[complex]],
        x0: float = 0.0,
        settings: Settings = DEFAULT_SETTINGS,
    ):
        state = np.array([[complex(v) for v in seed] for seed in seeds], dtype=complex)
        if state.ndim != 2 or state.shape[1] != 2:
            raise ValueError("each seed is a (value, derivative) pair")
        self.potential = potential
        self.lam = complex(lam)
        self.x0 = float(x0)
        self.settings = settings
        self.length = state.shape[0]
        self._nodes = {
            1: ([self.x0], [state], [0.0]),
            -1: ([self.x0], [state], [0.0]),
        }
        self._lock = threading.Lock()

    def coefficients(self, t: float, state: np.ndarray, order: int) -> np.ndarray:
        """Taylor coefficients of every member at t, shape (p, order+1)."""
        order = max(order, 1)
        w = np.array(eval_expr(self.potential, t, order).coeffs)
        w[0] -= self.lam
        c = np.zeros((self.length, order + 1), dtype=complex)
        for i in range(self.length):
            c[i, 0], c[i, 1] = state[i]
            for k in range(order - 1):
                s = np.dot(w[: k + 1], c[i, k::-1])
                if i:
                    s -= c[i - 1, k]
                c[i, k + 2] = s / ((k + 2) * (k + 1))
        return c

    def _step_size(self, c: np.ndarray) -> float:
        q = self.settings.taylor_order
        tol = self.settings.taylor_tol * max(1.0, float(np.max(np.abs(c[:, 0]))))
        h = self.max_step
        for power, coeff in ((q, c[:, q]), (q - 1, c[:, q - 1])):
            top = float(np.max(np.abs(coeff)))
            if top > 0.0:
                h = min(h, (tol / top) ** (1.0 / power))
        return self.safety * h

    @staticmethod
    def _advance(c: np.ndarray, h: float) -> np.ndarray:
        k = np.arange(c.shape[1])
        powers = h ** k
        values = c @ powers
        slopes = c[:, 1:] @ (k[1:] * powers[:-1])
        return np.stack([values, slopes], axis=1)

    def state_at(self, x: float) -> np.ndarray:
        direction = 1 if x >= self.x0 else -1
        dist = abs(x - self.x0)
        q = self.settings.taylor_order
        with self._lock:
            ts, states, dists = self._nodes[direction]
            while dists[-1] < dist:
                c = self.coefficients(ts[-1], states[-1], q)
                h = self._step_size(c)
                if h < self.settings.min_step:
                    raise IntegrationFailure(f"Taylor step underflow ({h:.3g}) at x={ts[-1]}", point=ts[-1])
                if dists[-1] + h > dist:
                    break
                states.append(self._advance(c, direction * h))
                ts.append(ts[-1] + direction * h)
                dists.append(dists[-1] + h)
            i = bisect.bisect_right(dists, dist) - 1
            t, state = ts[i], states[i]
        if t == x:
            return state
        return self._advance(self.coefficients(t, state, q), x - t)

    def jet(self, x: complex, order: int) -> np.ndarray:
        """Jets of all members at x, shape (p, order+1)."""
        x = complex(x)
        if abs(x.imag) > 0.0:
            raise ValueError("integrated chain members are evaluated at real points only")
        state = self.state_at(x.real)
        return self.coefficients(x.real, state, order)[:, : order + 1]


class ChainMember(MatrixFunctionEvaluator):
    """1x1 evaluator for one member of an integrated scalar chain."""

    def __init__(self, integrator: TaylorChainIntegrator, index: int):
        self.integrator = integrator
        self.index = index
        self.shape = (1, 1)
        self.singular_set = ()
        self._cache = JetCache()

    def eval(self, x0: complex, order: int) -> MatrixJet:
        x0 = complex(x0)
        row = self._cache.get(x0, order, lambda: self.integrator.jet(x0, order)[self.index])
        return MatrixJet(row[None, None, :], x0)


def chain_from_scalar(
    v: ScalarExpr,
    lam: complex,
    seeds: Sequence[Sequence[complex]],
    length: int | None = None,
    x0: float = 0.0,
    settings: Settings = DEFAULT_SETTINGS,
) -> Chain:
    """Scalar chain of h = -d^2 + v at lam from (phi_i(x0), phi_i'(x0)) seeds."""
    length = len(seeds) if length is None else length
    if len(seeds) != length:
        raise BadChainLengths(f"{len(seeds)} seeds given for a chain of length {length}")
    integrator = TaylorChainIntegrator(v, lam, seeds, x0, settings)
    return Chain(lam, tuple(ChainMember(integrator, i) for i in range(length)))


def polynomial_chain(shifts: Sequence[tuple[complex, complex]]) -> list[ScalarExpr]:
    """Chain of -d^2 at 0: phi_0 = 1, phi_j = -∫∫phi_{j-1} + a_j x + b_j.

    ``shifts`` holds (a_j, b_j) for j = 1..p-1; complex slopes keep the
    Wronskians of chain prefixes off the real axis.
    """
    members = [Polynomial([1.0 + 0j])]
    for a, b in shifts:
        members.append(-members[-1].integ(2) + Polynomial([complex(b), complex(a)]))
    return [poly(p.coef) for p in members]


def random_shifts(length: int, rng: np.random.Generator) -> list[tuple[complex, complex]]:
    shifts = []
    for _ in range(length - 1):
        a = complex(rng.normal(), 0.5 + abs(rng.normal()))
        b = complex(rng.normal(), rng.normal())
        shifts.append((a, b))
    return shifts


def exponential_chain(potential: np.ndarray, lam: complex, index: int, sign: int = 1, length: int = 1) -> Chain:
    """Chain of -d^2 + C at lam built on the eigenvector u_index of C.

    Phi_0 = e^{k x} u and Phi_1 = -x e^{k x} u / (2k) with k^2 = mu - lam.
    """
    if length not in (1, 2):
        raise BadChainLengths("exponential chains have length 1 or 2")
    c = np.atleast_2d(np.asarray(potential, dtype=complex))
    mus, vecs = np.linalg.eig(c)
    mu, u = mus[index], vecs[:, index]
    k = complex(sign * np.sqrt(complex(mu - lam)))
    if length == 2 and abs(k) < 1e-12:
        raise BadChainLengths("a length-2 exponential chain needs mu != lambda")
    wave = exp(k * X)
    members = [ExprMatrix.column([None if u[i] == 0 else Const(u[i]) * wave for i in range(len(u))])]
    if length == 2:
        scale = -1.0 / (2.0 * k)
        members.append(
            ExprMatrix.column([None if u[i] == 0 else Const(scale * u[i]) * X * wave for i in range(len(u))])
        )
    return Chain(lam, tuple(members))


def assemble_diag(
    potentials: Sequence[ScalarExpr],
    scalar_chains: Sequence[Sequence[MatrixFunctionEvaluator]],
    order: int,
    lam: complex = 0.0,
) -> ChainSet:
    """Stack scalar chains of h_i = -d^2 + v_i into one chain of H = diag(h_i).

    Member l is (phi_{1,l}, phi_{2,l-N}, ..., phi_{n,l-(n-1)N}) with
    phi_{i,j} = 0 for j < 0; chain i must have length N(n - i + 1).
    """
    n = len(potentials)
    if len(scalar_chains) != n:
        raise BadChainLengths(f"{len(scalar_chains)} scalar chains for {n} potentials")
    for i, chain in enumerate(scalar_chains):
        want = order * (n - i)
        if len(chain) != want:
            raise BadChainLengths(f"scalar chain {i + 1} has length {len(chain)}, expected {want}")
    h = Hamiltonian(ExprMatrix.diagonal(list(potentials)), name="H+")
    members = []
    for l in range(n * order):
        comps = [scalar_chains[i][l - i * order] if l - i * order >= 0 else None for i in range(n)]
        members.append(StackedVector(comps))
    return ChainSet(h, [Chain(lam, tuple(members))])


# Wronskians ------------------------------------------------------------------


def wronskian_matrix(members: Sequence[MatrixFunctionEvaluator], rows: int, x0: complex, order: int) -> np.ndarray:
    """Jets of the (n*rows) x len(members) matrix of derivatives 0..rows-1.

    Row s*n + c holds component c of the s-th derivative.
    """
    n = members[0].shape[0]
    out = np.zeros((n * rows, len(members), order + 1), dtype=complex)
    for l, m in enumerate(members):
        fj = m.eval(x0, order + rows - 1).coeffs[:, 0, :]
        for s in range(rows):
            out[s * n : (s + 1) * n, l] = series_derivative(fj, s)[..., : order + 1]
    return out


def hadamard_ratio(matrix: np.ndarray) -> float:
    """|det A| / prod of row norms after scaling columns to unit max; 0 for a zero row or column."""
    columns = np.max(np.abs(matrix), axis=0)
    if np.any(columns == 0.0):
        return 0.0
    scaled = matrix / columns[None, :]
    norms = np.linalg.norm(scaled, axis=1)
    if np.any(norms == 0.0):
        return 0.0
    return float(abs(np.linalg.det(scaled / norms[:, None])))


def prefix_wronskian(cs: ChainSet, j: int, settings: Settings = DEFAULT_SETTINGS) -> ProceduralMatrix:
    """Evaluator of W_j, the determinant of the first n*j members and derivatives < j."""
    if not 1 <= j <= cs.order:
        raise ValueError(f"prefix index {j} outside 1..{cs.order}")
    members = cs.members()[: cs.n * j]

    def compute(x0: complex, order: int) -> np.ndarray:
        det = series_det(wronskian_matrix(members, j, x0, order), x0, settings)
        return det[None, None, :]

    singular = {p for m in members for p in m.singular_set}
    return ProceduralMatrix((1, 1), compute, name=f"W_{j}", singular_set=singular)


def prefix_ratio(cs: ChainSet, j: int, x: float) -> float:
    members = cs.members()[: cs.n * j]
    return hadamard_ratio(wronskian_matrix(members, j, x, 0)[..., 0])


def nonvanishing_ladder(cs: ChainSet, settings: Settings = DEFAULT_SETTINGS) -> list[int]:
    """Prefix sizes j whose Wronskian is not identically zero; always ends at N."""
    big = cs.order
    avoid = {p for m in cs.members() for p in m.singular_set}
    points = PointSampler(settings, avoid).draw(settings.zero_points)
    ladder = []
    for j in range(1, big + 1):
        ratios = [prefix_ratio(cs, j, x) for x in points]
        # W_j is identically zero only if it vanishes at every sample point
        best = int(np.argmax(ratios))
        if ratios[best] > settings.tol_zero:
            ladder.append(j)
        elif j == big:
            raise DegenerateBasis(
                f"full Wronskian W_{big} vanishes identically (best ratio {ratios[best]:.3g})", point=points[best]
            )
    logger.debug("nonvanishing ladder %s for N=%d", ladder, big)
    return ladder


def scan_prefix(cs: ChainSet, j: int, settings: Settings = DEFAULT_SETTINGS) -> tuple[float, int]:
    """Minimal ratio of W_j over the scan grid and the number of real sign changes."""
    w = prefix_wronskian(cs, j, settings)
    grid = scan_grid(settings)
    ratios = np.array([prefix_ratio(cs, j, x) for x in grid])
    values = np.array([w.value(x)[0, 0] for x in grid])
    scale = np.maximum(np.abs(values), 1e-300)
    real_like = np.abs(values.imag) <= settings.tol_zero * scale
    flips = np.sign(values.real[1:]) != np.sign(values.real[:-1])
    changes = int(np.count_nonzero(flips & real_like[1:] & real_like[:-1]))
    return float(ratios.min()), changes


# Chain relations and T -------------------------------------------------------


def chain_residual(h: Hamiltonian, chain: Chain, points: Iterable[float], lam: complex | None = None) -> float:
    """Max relative residual of (H - lam)Phi_i = Phi_{i-1} over the points."""
    lam = chain.lam if lam is None else complex(lam)
    shifted = h.shifted(lam)
    worst = 0.0
    for x in points:
        for i, member in enumerate(chain.members):
            lhs = apply(shifted, member, x, 0).value
            rhs = chain.members[i - 1].value(x) if i else np.zeros_like(lhs)
            floor = max(1.0, float(np.max(np.abs(member.value(x)))))
            diff = float(np.max(np.abs(lhs - rhs)))
            worst = max(worst, diff / floor)
    return worst


def t_matrix(cs: ChainSet, settings: Settings = DEFAULT_SETTINGS) -> tuple[np.ndarray, JordanSpec]:
    """Matrix of H on the flat basis: H Phi_i = sum_j T_ij Phi_j."""
    avoid = {p for m in cs.members() for p in m.singular_set} | set(cs.hamiltonian.singular_set)
    points = PointSampler(settings, avoid).draw(settings.sample_points)
    for c, chain in enumerate(cs.chains):
        residual = chain_residual(cs.hamiltonian, chain, points)
        if not residual < settings.tol_chain:
            raise InvalidChain(f"chain {c} (lambda={chain.lam}) violates its relations", residual=residual)
        if max(float(np.max(np.abs(chain.members[0].value(x)))) for x in points) == 0.0:
            raise InvalidChain(f"chain {c} starts with an identically zero member", residual=0.0)
    position = {p: k for k, p in enumerate(cs.flat)}
    t = np.zeros((cs.size, cs.size), dtype=complex)
    for (c, i), k in position.items():
        t[k, k] = cs.chains[c].lam
        if i:
            t[k, position[(c, i - 1)]] = 1.0
    return t, cs.jordan_spec()
