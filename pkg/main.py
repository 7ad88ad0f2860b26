"""susy-matrix: build, factorize, minimize and conjugate matrix intertwiners from scenario files.

    python main.py run scenarios/diagonal_pair.json --out-dir out
    python main.py gen irreducible --n 2 --N 3 --seed 7 --out scenarios/irr.json
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
import scipy

from builder import build_intertwiner, certify_intertwining
from chains import Chain, ChainSet, JordanSpec, chain_from_scalar, exponential_chain, t_matrix
from core import (
    DEFAULT_SETTINGS,
    REPORT_SCHEMA,
    InvalidJordanSpec,
    NotRegularlyReducible,
    ScenarioError,
    Settings,
    SusyMatrixError,
    VerificationReport,
    jsonable,
    reports_frame,
)
from diffop import Hamiltonian, MatDiffOperator, coefficient_residual, operator_to_json
from factor import factorize, first_order_chain, irreducible_example, mirror_factorization, reduce, regular_points
from jets import Const, ConstantMatrix, ExprMatrix, StackedVector, complex_to_json, expr_from_json
from susy import (
    chain_conjugate,
    closure_operator,
    complement,
    conjugate_general,
    det_identity_check,
    diagonal_pair,
    diagonal_pair_cubic,
    jordan_of_conjugate,
    minimize_weak,
    off_diagonal_size,
    removable_roots,
    susy_algebra,
    uniqueness_check,
)

logger = logging.getLogger("susy-matrix")

STAGES = ("build", "factorize", "reduce", "minimize", "conjugate", "verify", "irreducible")
SCENARIO_KINDS = ("chains", "diagonal-pair", "irreducible")
GEN_KINDS = ("irreducible", "diagonal-pair", "first-order", "random")
# the two worked examples of the construction, by their usual names
GEN_ALIASES = {"remark9": "diagonal-pair", "theorem2": "first-order"}
SEED_ENV = "SUSY_MATRIX_SEED"

EXIT_OK, EXIT_FAILED, EXIT_SCENARIO, EXIT_NUMERICAL = 0, 1, 2, 3


# Scenario parsing ------------------------------------------------------------


def _parse_real(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise ScenarioError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _parse_complex(value: Any, where: str) -> complex:
    if isinstance(value, list) and len(value) == 2:
        return complex(_parse_real(value[0], where), _parse_real(value[1], where))
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    raise ScenarioError(f"{where}: expected a number or [re, im], got {value!r}")


def _parse_matrix(value: Any, n: int, where: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != n or any(not isinstance(r, list) or len(r) != n for r in value):
        raise ScenarioError(f"{where}: expected an {n}x{n} matrix")
    return np.array([[_parse_complex(v, where) for v in row] for row in value], dtype=complex)


def _parse_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value) or value != int(value):
        raise ScenarioError(f"{where}: expected an integer, got {value!r}")
    return int(value)


def _parse_int_list(value: Any, where: str) -> list[int]:
    if not isinstance(value, list):
        raise ScenarioError(f"{where}: expected a list of integers")
    return [_parse_int(v, where) for v in value]


def _require(data: dict[str, Any], key: str, kind: type | tuple[type, ...], where: str = "scenario") -> Any:
    if key not in data:
        raise ScenarioError(f"{where}: missing key {key!r}")
    if not isinstance(data[key], kind):
        raise ScenarioError(f"{where}: key {key!r} has the wrong type")
    return data[key]


def load_scenario(path: str | Path) -> dict[str, Any]:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ScenarioError(f"scenario file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    if data.get("schema", REPORT_SCHEMA) != REPORT_SCHEMA:
        raise ScenarioError(f"unsupported scenario schema {data.get('schema')!r}")
    kind = data.setdefault("kind", "chains")
    if kind not in SCENARIO_KINDS:
        raise ScenarioError(f"unknown scenario kind {kind!r}; expected one of {', '.join(SCENARIO_KINDS)}")
    stages = data.setdefault("stages", list(STAGES))
    if not isinstance(stages, list) or any(s not in STAGES for s in stages):
        raise ScenarioError(f"stages must be a list drawn from {', '.join(STAGES)}")
    data.setdefault("name", Path(path).stem)
    return data


def scenario_settings(data: dict[str, Any], base: Settings = DEFAULT_SETTINGS) -> Settings:
    overrides = data.get("settings", {})
    if not isinstance(overrides, dict):
        raise ScenarioError("settings must be an object")
    known = {f.name for f in dataclasses.fields(Settings)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ScenarioError(f"unknown settings {unknown}")
    cleaned: dict[str, Any] = {}
    for key, value in overrides.items():
        where = f"settings.{key}"
        if key == "window":
            if not isinstance(value, list) or len(value) != 2:
                raise ScenarioError(f"{where}: expected [lo, hi]")
            lo, hi = (_parse_real(v, where) for v in value)
            if not lo < hi:
                raise ScenarioError(f"{where}: lo must be below hi")
            cleaned[key] = (lo, hi)
        elif isinstance(getattr(base, key), int):
            cleaned[key] = _parse_int(value, where)
        else:
            cleaned[key] = _parse_real(value, where)
    if "seed" in data:
        cleaned["seed"] = _parse_int(data["seed"], "seed")
    return base.replace(**cleaned)


def _potential(data: dict[str, Any], n: int) -> Any:
    given = _require(data, "potential", dict)
    if "expr" in given:
        grid = given["expr"]
        if not isinstance(grid, list) or len(grid) != n:
            raise ScenarioError(f"potential: expected {n} rows of expressions")
        try:
            return ExprMatrix.from_json(grid)
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"potential: bad expression ({exc})") from exc
    if "constant" in given:
        return ConstantMatrix(_parse_matrix(given["constant"], n, "potential"))
    raise ScenarioError("potential needs an 'expr' grid or a 'constant' matrix")


def _chain(item: dict[str, Any], potential: Any, n: int, settings: Settings, where: str) -> Chain:
    lam = _parse_complex(_require(item, "lambda", (int, float, list), where), where)
    if "members" in item:
        members = []
        for column in _require(item, "members", list, where):
            if not isinstance(column, list) or len(column) != n:
                raise ScenarioError(f"{where}: each member is a list of {n} expressions")
            try:
                members.append(ExprMatrix.column([None if e is None else expr_from_json(e) for e in column]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ScenarioError(f"{where}: bad member expression ({exc})") from exc
        return Chain(lam, tuple(members))
    if "eigen" in item:
        if not isinstance(potential, ConstantMatrix):
            raise ScenarioError(f"{where}: 'eigen' chains need a constant potential")
        eigen = _parse_int(item["eigen"], f"{where}.eigen")
        sign = _parse_int(item.get("sign", 1), f"{where}.sign")
        length = _parse_int(item.get("length", 1), f"{where}.length")
        if not 0 <= eigen < n or sign not in (-1, 1) or length < 1:
            raise ScenarioError(f"{where}: need 0 <= eigen < {n}, sign of +-1 and length >= 1")
        return exponential_chain(potential.matrix, lam, eigen, sign, length)
    if "seeds" in item:
        component = _parse_int(item.get("component", 0), f"{where}.component")
        if not isinstance(potential, ExprMatrix) or not 0 <= component < n:
            raise ScenarioError(f"{where}: integrated chains need an expression potential and a valid component")
        v = potential.grid[component][component] or Const(0.0)
        pairs = _require(item, "seeds", list, where)
        if not pairs or any(not isinstance(pair, list) or len(pair) != 2 for pair in pairs):
            raise ScenarioError(f"{where}: seeds are [value, derivative] pairs")
        seeds = [[_parse_complex(v_, where) for v_ in pair] for pair in pairs]
        x0 = _parse_real(item.get("x0", 0.0), f"{where}.x0")
        scalar = chain_from_scalar(v, lam, seeds, x0=x0, settings=settings)
        lifted = [StackedVector([m if i == component else None for i in range(n)]) for m in scalar.members]
        return Chain(lam, tuple(lifted))
    raise ScenarioError(f"{where}: a chain needs 'members', 'eigen' or 'seeds'")


def build_chainset(data: dict[str, Any], settings: Settings) -> ChainSet:
    if data["kind"] == "diagonal-pair":
        lams = [_parse_complex(v, "lambdas") for v in _require(data, "lambdas", list)]
        if len(lams) != 2:
            raise ScenarioError("a diagonal-pair scenario takes exactly two lambdas")
        return diagonal_pair(lams)
    n = _parse_int(_require(data, "n", int), "n")
    if n < 1:
        raise ScenarioError("n must be positive")
    potential = _potential(data, n)
    h = Hamiltonian(potential, name="H+")
    chains = []
    for c, item in enumerate(_require(data, "chains", list)):
        if not isinstance(item, dict):
            raise ScenarioError(f"chains[{c}]: expected an object")
        chains.append(_chain(item, potential, n, settings, f"chains[{c}]"))
    ordering = data.get("ordering", "sequential")
    if isinstance(ordering, list):
        ordering = [tuple(_parse_int_list(pair, "ordering")) for pair in ordering]
        if any(len(pair) != 2 for pair in ordering):
            raise ScenarioError("ordering: explicit entries are [chain, member] pairs")
    elif ordering not in ("sequential", "by_level"):
        raise ScenarioError(f"ordering must be 'sequential', 'by_level' or a list of pairs, got {ordering!r}")
    return ChainSet(h, chains, ordering)


def _jordan(data: dict[str, Any]) -> JordanSpec:
    try:
        return JordanSpec.from_json(data["jordan"])
    except (AttributeError, KeyError, TypeError, ValueError, InvalidJordanSpec) as exc:
        raise ScenarioError(f"jordan: malformed Jordan data ({exc})") from exc


def _ladder(data: dict[str, Any]) -> list[int] | None:
    if data.get("ladder") is None:
        return None
    return _parse_int_list(data["ladder"], "ladder")


# Pipeline --------------------------------------------------------------------


@dataclass
class RunResult:
    name: str
    reports: list[VerificationReport] = field(default_factory=list)
    operators: dict[str, MatDiffOperator] = field(default_factory=dict)
    facts: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


class _Stage:
    """Tags numerical failures raised inside a pipeline stage with its name."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self) -> "_Stage":
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if isinstance(exc, SusyMatrixError) and exc.stage is None:
            exc.stage = self.name
        return False


def _run_irreducible(data: dict[str, Any], settings: Settings, result: RunResult) -> tuple[Any, ...]:
    n, big = _parse_int(_require(data, "n", int), "n"), _parse_int(_require(data, "N", int), "N")
    if n < 1 or big < 1:
        raise ScenarioError("irreducible examples need n >= 1 and N >= 1")
    with _Stage("irreducible"):
        example = irreducible_example(n, big, settings=settings)
        report = example.report
        for m in range(1, big):
            try:
                reduce(example.q, example.chainset, m, settings)
                blocked = False
            except NotRegularlyReducible:
                blocked = True
            report.add(f"no regular reduction through M={m}", "irreducible", 0.0 if blocked else 1.0, verdict=blocked)
        result.reports.append(report)
    return example.h_plus, example.q, example.chainset


def run_scenario(data: dict[str, Any], settings: Settings, stages: Sequence[str] | None = None) -> RunResult:
    """Execute the requested stages in order and collect their reports."""
    stages = list(data["stages"] if stages is None else stages)
    result = RunResult(data["name"])
    kind = data["kind"]

    if kind == "irreducible":
        h_plus, q, cs = _run_irreducible(data, settings, result)
    else:
        with _Stage("build"):
            cs = build_chainset(data, settings)
            h_plus = cs.hamiltonian
            leading = data.get("leading")
            if leading is not None:
                leading = _parse_matrix(leading, cs.n, "leading")
            q = build_intertwiner(cs, leading, settings)
            if "build" in stages:
                result.reports.append(certify_intertwining(q, h_plus, cs, settings))
    n, big = q.n, q.order
    result.operators["Q-"] = q

    with _Stage("build"):
        if "jordan" in data:
            js = _jordan(data)
        else:
            _, js = t_matrix(cs, settings)
    js.check_rank(n)
    result.facts.update(n=n, N=big, jordan=js.to_json())

    fc = None
    if "factorize" in stages:
        with _Stage("factorize"):
            fc = factorize(q, cs, _ladder(data), settings)
            result.reports.append(fc.report)
            result.reports.append(mirror_factorization(fc, settings=settings).report)
            result.facts["factor_orders"] = fc.orders
            if all(k == 1 for k in fc.orders):
                result.reports.append(first_order_chain(fc, settings)[1])

    if "reduce" in stages and "reduce_prefix" in data:
        with _Stage("reduce"):
            result.reports.append(reduce(q, cs, _parse_int(data["reduce_prefix"], "reduce_prefix"), settings).report)

    if "minimize" in stages:
        with _Stage("minimize"):
            mr = minimize_weak(q, js, h_plus, settings)
            result.reports.append(mr.report)
            result.operators["P"] = mr.p
            result.facts.update(M=mr.order, removed=mr.removed.to_json())

    if "conjugate" not in stages and "verify" not in stages:
        return result

    with _Stage("conjugate"):
        cr = conjugate_general(q, js, h_plus, settings)
        result.operators["Q+"] = cr.q_plus
        result.facts.update(N_prime=cr.order, jordan_minus=cr.js_minus.to_json(), polynomial=cr.polynomial.to_json())
        if "conjugate" in stages:
            result.reports.append(cr.report)
            if data.get("first_order"):
                _chain_conjugate(data, cs, q, fc, cr, settings, result)
            if kind == "diagonal-pair":
                result.reports.append(_diagonal_pair_checks(cs, cr, settings))

    if "verify" in stages:
        with _Stage("verify"):
            result.reports.append(susy_algebra(h_plus, cr.h_minus, q, cr.q_plus, cr.polynomial, settings))
            result.reports.append(det_identity_check(js, cr.js_minus, cr.polynomial, n, settings))
            result.reports.append(uniqueness_check(q, cr.q_plus, js, h_plus, settings))
            if not removable_roots(js, n):
                result.reports.append(_double_complement(q, js, cr, settings))
    return result


def _chain_conjugate(
    data: dict[str, Any],
    cs: ChainSet,
    q: MatDiffOperator,
    fc: Any,
    cr: Any,
    settings: Settings,
    result: RunResult,
) -> None:
    if fc is None:
        fc = factorize(q, cs, _ladder(data), settings)
    alternative = None
    if "permutation" in data:
        permutation = _parse_int_list(data["permutation"], "permutation")
        if sorted(permutation) != list(range(len(cs.chains))):
            raise ScenarioError(f"permutation must reorder the chain indices 0..{len(cs.chains) - 1}")
        reordered = cs.reordered(permutation)
        alternative = factorize(build_intertwiner(reordered, q.leading, settings), reordered, None, settings)
    q_plus, _, report = chain_conjugate(fc, cs.jordan_spec(), alternative, settings)
    points = regular_points([q_plus, cr.q_plus], settings, "conjugate")
    report.add(
        "closure-chain Q+ = division Q+",
        "chain-conjugate",
        coefficient_residual(q_plus, cr.q_plus, points),
        settings.tol_accept,
        points=points,
    )
    result.reports.append(report)


def _diagonal_pair_checks(cs: ChainSet, cr: Any, settings: Settings) -> VerificationReport:
    lams = [ch.lam for ch in cs.chains]
    cubic = diagonal_pair_cubic(cs.hamiltonian, lams)
    report = VerificationReport("diagonal-pair")
    points = regular_points([cubic, cr.q_plus], settings, "diagonal-pair")
    if abs(lams[0] - lams[1]) > 1e-12:
        report.add(
            "Q+ = diag((h1 - lam2) q1, (h2 - lam1) q2)",
            "diagonal-cubic",
            coefficient_residual(cr.q_plus, cubic, points),
            settings.tol_accept,
            points=points,
        )
        report.add("Q+ block diagonal", "diagonal-cubic", off_diagonal_size(cr.q_plus, points), settings.tol_accept)
    else:
        cubic_js = JordanSpec(((lams[0], (2, 2, 1, 1)),))
        mr = minimize_weak(cubic, cubic_js, cr.h_minus, settings)
        report.extend(mr.report)
        report.add(
            "Q3+ minimizes to -Q1+",
            "diagonal-minimization",
            coefficient_residual(mr.p, closure_operator(2).scale(-1.0), points),
            settings.tol_accept,
            points=points,
        )
    return report


def _double_complement(q: MatDiffOperator, js: JordanSpec, cr: Any, settings: Settings) -> VerificationReport:
    report = VerificationReport("double-complement")
    twice = complement(cr.q_plus, cr.js_minus, cr.h_minus, settings)
    points = regular_points([q, twice], settings, "double-complement")
    report.add("(Q^c)^c = Q", "double-complement", coefficient_residual(twice, q, points), settings.tol_accept, points=points)
    back = jordan_of_conjugate(cr.js_minus, q.n)
    same = all(back.kappa(lam) == js.kappa(lam) for lam in js.lambdas) and len(back.lambdas) == len(js.lambdas)
    report.add("kappa preserved by the double map", "double-complement", 0.0 if same else 1.0, verdict=same)
    return report


# Output ----------------------------------------------------------------------


def report_document(result: RunResult, settings: Settings) -> dict[str, Any]:
    return {
        "schema": REPORT_SCHEMA,
        "scenario": result.name,
        "seed": settings.seed,
        "passed": result.passed,
        "facts": jsonable(result.facts),
        "reports": [r.to_json() for r in result.reports],
    }


def summary_text(result: RunResult) -> str:
    frame = reports_frame(result.reports)
    if frame.empty:
        return "no identities checked\n"
    frame = frame[["anchor", "identity", "residual", "verdict"]]
    body = frame.to_string(index=False, formatters={"residual": "{:.3e}".format})
    status = "PASS" if result.passed else "FAIL"
    return f"{body}\n{status}: {int((frame['verdict'] == 'pass').sum())}/{len(frame)} identities\n"


def write_outputs(result: RunResult, settings: Settings, out_dir: str | Path, argv: Sequence[str]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report_document(result, settings), indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(summary_text(result))
    operators = {key: operator_to_json(op) for key, op in result.operators.items()}
    (out / "operators.json").write_text(json.dumps(jsonable(operators), indent=2, sort_keys=True) + "\n")
    metadata = {
        "created": datetime.now(timezone.utc).isoformat(),
        "argv": list(argv),
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__},
    }
    (out / "metadata.json").write_text(json.dumps(metadata, indent=2) + "\n")
    return out


# Scenario generation ---------------------------------------------------------


def _const_json(value: complex) -> list[float]:
    return complex_to_json(complex(value))


def gen_example(kind: str, n: int = 2, big: int = 2, seed: int = DEFAULT_SETTINGS.seed, lambdas: Sequence[float] = (0.0, 1.0)) -> dict[str, Any]:
    """Deterministic scenario template for ``kind`` (or one of its aliases)."""
    alias = kind if kind in GEN_ALIASES else None
    kind = GEN_ALIASES.get(kind, kind)
    if kind not in GEN_KINDS:
        choices = ", ".join(GEN_KINDS + tuple(GEN_ALIASES))
        raise ScenarioError(f"unknown generator kind {kind!r}; expected one of {choices}")
    base: dict[str, Any] = {"schema": REPORT_SCHEMA, "seed": int(seed)}
    if kind == "irreducible":
        return base | {
            "name": f"irreducible_n{n}_N{big}",
            "kind": "irreducible",
            "n": n,
            "N": big,
            "stages": ["build", "irreducible", "minimize", "conjugate"],
        }
    if kind == "diagonal-pair":
        return base | {
            "name": alias or "diagonal_pair",
            "kind": "diagonal-pair",
            "lambdas": [float(v) for v in lambdas],
            "stages": ["build", "factorize", "minimize", "conjugate", "verify"],
        }
    rng = np.random.default_rng(seed)
    rotation, _ = np.linalg.qr(rng.normal(size=(n, n)))
    mus = 1.0 + np.sort(rng.uniform(0.0, 2.0, size=n))
    potential = rotation @ np.diag(mus) @ rotation.T
    potential = 0.5 * (potential + potential.T)
    scenario = base | {
        "kind": "chains",
        "n": n,
        "potential": {"constant": [[_const_json(v) for v in row] for row in potential]},
    }
    if kind == "first-order":
        steps = -1.0 - np.cumsum(rng.uniform(0.5, 1.5, size=big))
        chains = [
            {"lambda": float(lam), "eigen": i, "sign": 1 if m % 2 == 0 else -1}
            for m, lam in enumerate(steps)
            for i in range(n)
        ]
        permutation = [m * n + i for m in reversed(range(big)) for i in range(n)]
        return scenario | {
            "name": alias or f"first_order_n{n}_N{big}",
            "chains": chains,
            "first_order": True,
            "permutation": permutation,
            "stages": ["build", "factorize", "minimize", "conjugate", "verify"],
        }
    lams = -1.0 - np.cumsum(rng.uniform(0.5, 1.5, size=n * big))
    chains = [
        {"lambda": float(lam), "eigen": l % n, "sign": int(rng.choice([-1, 1]))} for l, lam in enumerate(lams)
    ]
    return scenario | {
        "name": f"random_n{n}_N{big}",
        "chains": chains,
        "stages": ["build", "factorize", "minimize", "conjugate"],
    }


# Command line ----------------------------------------------------------------


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="susy-matrix", description="Matrix intertwining operators and their conjugates.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario and write reports")
    run.add_argument("scenario", help="scenario JSON file")
    run.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    run.add_argument("--tol", type=float, help="acceptance tolerance for identity residuals")
    run.add_argument("--points", type=int, help="number of sample points per check")
    run.add_argument("--seed", type=int, help="seed for every sample-point draw")
    run.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"), help="sampling interval")
    run.add_argument("--out-dir", default="out", help="directory for report.json and friends")

    gen = sub.add_parser("gen", help="write a scenario template")
    gen.add_argument("kind", help=f"one of {', '.join(GEN_KINDS + tuple(GEN_ALIASES))}")
    gen.add_argument("--n", type=int, default=2)
    gen.add_argument("--N", dest="big", type=int, default=2)
    gen.add_argument("--seed", type=int, default=DEFAULT_SETTINGS.seed)
    gen.add_argument("--lambdas", type=float, nargs=2, default=(0.0, 1.0))
    gen.add_argument("--out", help="output path (default: stdout)")
    return parser.parse_args(argv)


def resolve_settings(data: dict[str, Any], args: argparse.Namespace) -> Settings:
    settings = scenario_settings(data)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed:
        try:
            settings = settings.replace(seed=int(env_seed))
        except ValueError as exc:
            raise ScenarioError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from exc
    changes: dict[str, Any] = {}
    if args.tol is not None:
        changes["tol_accept"] = args.tol
    if args.points is not None:
        changes["sample_points"] = args.points
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.window is not None:
        changes["window"] = tuple(args.window)
    return settings.replace(**changes)


def _stages(args: argparse.Namespace, data: dict[str, Any]) -> list[str]:
    if not args.stages:
        return list(data["stages"])
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ScenarioError(f"unknown stages {unknown}")
    return stages


def cmd_run(args: argparse.Namespace, argv: Sequence[str]) -> int:
    data = load_scenario(args.scenario)
    settings = resolve_settings(data, args)
    result = run_scenario(data, settings, _stages(args, data))
    out = write_outputs(result, settings, args.out_dir, argv)
    print(summary_text(result), end="")
    logger.info("reports written to %s", out)
    return EXIT_OK if result.passed else EXIT_FAILED


def cmd_gen(args: argparse.Namespace) -> int:
    scenario = gen_example(args.kind, args.n, args.big, args.seed, args.lambdas)
    text = json.dumps(scenario, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        logger.info("scenario written to %s", args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args, argv)
        return cmd_gen(args)
    except ScenarioError as exc:
        logger.error("scenario error: %s", exc)
        return EXIT_SCENARIO
    except SusyMatrixError as exc:
        logger.error("numerical failure: %s", exc.describe())
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
