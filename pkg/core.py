"""Shared settings, errors, seeded sampling and verification reports."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

REPORT_SCHEMA = 1


@dataclass(frozen=True)
class Settings:
    """Tolerances and sampling constants used across the pipeline."""

    eps_pivot: float = 1e-12
    cond_max: float = 1e10
    tol_accept: float = 1e-7
    # structural checks that raise (chain validity, exact divisions) use this;
    # tol_accept only sets report verdicts
    tol_chain: float = 1e-7
    tol_zero: float = 1e-9
    zero_points: int = 7
    sample_points: int = 12
    seed: int = 20240601
    window: tuple[float, float] = (-5.0, 5.0)
    falsify_margin: float = 1e-4
    resample_retries: int = 16
    taylor_order: int = 12
    taylor_tol: float = 1e-12
    scan_points: int = 512
    min_step: float = 1e-10
    singular_clearance: float = 1e-3

    def replace(self, **changes: Any) -> "Settings":
        return dataclasses.replace(self, **changes)


DEFAULT_SETTINGS = Settings()


# Errors ----------------------------------------------------------------------


class SusyMatrixError(Exception):
    """Base class for numerical failures; carries the stage and offending point."""

    def __init__(self, message: str, point: complex | None = None, stage: str | None = None):
        super().__init__(message)
        self.point = point
        self.stage = stage

    def describe(self) -> str:
        parts = [str(self)]
        if self.stage:
            parts.append(f"stage={self.stage}")
        if self.point is not None:
            parts.append(f"point={_fmt_point(self.point)}")
        return ", ".join(parts)


class SingularPoint(SusyMatrixError):
    pass


class SingularWronskian(SusyMatrixError):
    def __init__(self, message: str, point: complex | None = None, condition: float = float("inf")):
        super().__init__(message, point)
        self.condition = condition


class SingularLeadingCoefficient(SusyMatrixError):
    pass


class IntegrationFailure(SusyMatrixError):
    pass


class BadChainLengths(SusyMatrixError):
    pass


class DegenerateBasis(SusyMatrixError):
    pass


class InvalidChain(SusyMatrixError):
    def __init__(self, message: str, residual: float = float("nan"), point: complex | None = None):
        super().__init__(message, point)
        self.residual = residual


class PoleCluster(SusyMatrixError):
    def __init__(self, message: str, attempts: int = 0, point: complex | None = None):
        super().__init__(message, point)
        self.attempts = attempts


class FactorizationResidual(SusyMatrixError):
    def __init__(self, message: str, residual: float = float("nan"), point: complex | None = None):
        super().__init__(message, point)
        self.residual = residual


class NotRegularlyReducible(SusyMatrixError):
    def __init__(self, message: str, prefix: int = 0, point: complex | None = None):
        super().__init__(message, point)
        self.prefix = prefix


class BadScalarData(SusyMatrixError):
    def __init__(self, message: str, block: int = -1, point: complex | None = None):
        super().__init__(message, point)
        self.block = block


class InconsistentJordanSpec(SusyMatrixError):
    def __init__(self, message: str, residual: float = float("nan"), point: complex | None = None):
        super().__init__(message, point)
        self.residual = residual


class ConjugateConditionsFail(SusyMatrixError):
    """The factorization does not admit the first-order closure product."""


class NonScalarShift(ConjugateConditionsFail):
    def __init__(self, message: str, step: int = -1, deviation: float = float("nan")):
        super().__init__(message)
        self.step = step
        self.deviation = deviation


class UnequalJordanBlocks(ConjugateConditionsFail):
    def __init__(self, message: str, lam: complex | None = None, blocks: tuple[int, ...] = ()):
        super().__init__(message)
        self.lam = lam
        self.blocks = blocks


class InvalidJordanSpec(SusyMatrixError):
    pass


class ScenarioError(ValueError):
    """Malformed scenario input (cli exit code 2)."""


# Evaluation failures that sampling is allowed to step around.
RESAMPLABLE = (SingularPoint, SingularWronskian, SingularLeadingCoefficient)


def _fmt_point(x: complex) -> str:
    x = complex(x)
    return f"{x.real:.6g}" if x.imag == 0 else f"{x.real:.6g}{x.imag:+.6g}j"


# Sampling --------------------------------------------------------------------


class PointSampler:
    """Deterministic stream of real sample points drawn from the window.

    Points closer than ``singular_clearance`` to a declared singular point are
    skipped; the stream depends only on the seed, so every check drawing from a
    fresh sampler sees the same points.
    """

    def __init__(self, settings: Settings = DEFAULT_SETTINGS, avoid: Iterable[float] = ()):
        self.settings = settings
        self.avoid = tuple(float(np.real(a)) for a in avoid)
        self._rng = np.random.default_rng(settings.seed)

    def __iter__(self) -> Iterator[float]:
        lo, hi = self.settings.window
        while True:
            x = float(self._rng.uniform(lo, hi))
            if all(abs(x - a) > self.settings.singular_clearance for a in self.avoid):
                yield x

    def draw(self, count: int) -> list[float]:
        stream = iter(self)
        return [next(stream) for _ in range(count)]

    def evaluate(self, fn: Callable[[float], Any], count: int, stage: str = "") -> list[tuple[float, Any]]:
        """Evaluate ``fn`` at ``count`` points, resampling past singular points.

        Raises PoleCluster when more than ``resample_retries`` draws fail.
        """
        results: list[tuple[float, Any]] = []
        failures = 0
        last_error: Exception | None = None
        for x in self:
            if len(results) == count:
                break
            try:
                results.append((x, fn(x)))
            except RESAMPLABLE as exc:
                failures += 1
                last_error = exc
                logger.warning("resampling past x=%.6g in %s: %s", x, stage or "check", exc)
                if failures > self.settings.resample_retries:
                    err = PoleCluster(
                        f"more than {self.settings.resample_retries} sample points hit poles",
                        attempts=failures,
                        point=getattr(last_error, "point", x),
                    )
                    err.stage = stage or None
                    raise err from exc
        return results


def scan_grid(settings: Settings = DEFAULT_SETTINGS) -> np.ndarray:
    lo, hi = settings.window
    return np.linspace(lo, hi, settings.scan_points)


def relative_residual(lhs: np.ndarray, rhs: np.ndarray, floor: float = 1.0) -> float:
    lhs = np.asarray(lhs)
    rhs = np.asarray(rhs)
    scale = max(float(np.max(np.abs(lhs), initial=0.0)), float(np.max(np.abs(rhs), initial=0.0)), floor)
    return float(np.max(np.abs(lhs - rhs), initial=0.0)) / scale


# Reports ---------------------------------------------------------------------


@dataclass
class ReportEntry:
    identity: str
    anchor: str
    residual: float
    verdict: bool
    points: list[float] = field(default_factory=list)
    detail: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "identity": self.identity,
            "anchor": self.anchor,
            "residual": _json_float(self.residual),
            "verdict": "pass" if self.verdict else "fail",
            "points": [round(float(p), 12) for p in self.points],
            "detail": jsonable(self.detail),
        }


@dataclass
class VerificationReport:
    stage: str
    entries: list[ReportEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(entry.verdict for entry in self.entries)

    @property
    def max_residual(self) -> float:
        return max((e.residual for e in self.entries if np.isfinite(e.residual)), default=0.0)

    def add(
        self,
        identity: str,
        anchor: str,
        residual: float,
        tol: float | None = None,
        verdict: bool | None = None,
        points: Sequence[float] = (),
        **detail: Any,
    ) -> ReportEntry:
        if verdict is None:
            verdict = bool(np.isfinite(residual) and residual < (tol if tol is not None else 0.0))
        entry = ReportEntry(identity, anchor, float(residual), bool(verdict), list(points), dict(detail))
        self.entries.append(entry)
        return entry

    def extend(self, other: "VerificationReport") -> "VerificationReport":
        self.entries.extend(other.entries)
        return self

    def find(self, identity: str) -> list[ReportEntry]:
        return [e for e in self.entries if e.identity == identity]

    def to_json(self) -> dict[str, Any]:
        return {"stage": self.stage, "passed": self.passed, "entries": [e.to_json() for e in self.entries]}

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "stage": self.stage,
                "identity": e.identity,
                "anchor": e.anchor,
                "residual": e.residual,
                "verdict": "pass" if e.verdict else "fail",
            }
            for e in self.entries
        ]
        return pd.DataFrame(rows, columns=["stage", "identity", "anchor", "residual", "verdict"])


def _json_float(x: float) -> float | str:
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf"
    return float(f"{x:.6e}")


def jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _json_float(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [_json_float(value.real), _json_float(value.imag)]
    return value


def reports_frame(reports: Iterable[VerificationReport]) -> pd.DataFrame:
    frames = [r.to_frame() for r in reports]
    if not frames:
        return pd.DataFrame(columns=["stage", "identity", "anchor", "residual", "verdict"])
    return pd.concat(frames, ignore_index=True)
