import json

import pytest

from builder import build_intertwiner, partner_hamiltonian
from core import DEFAULT_SETTINGS, REPORT_SCHEMA, ScenarioError
from diffop import intertwining_residual, probe_battery
from main import (
    EXIT_FAILED,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_SCENARIO,
    SEED_ENV,
    RunResult,
    build_chainset,
    gen_example,
    load_scenario,
    main,
    parse_args,
    resolve_settings,
    summary_text,
)

BUNDLED = ["diagonal_pair.json", "first_order.json", "irreducible_n2_N2.json", "remark9.json"]

FIRST_ORDER = {
    "n": 2,
    "potential": {"constant": [[1.0, 0.0], [0.0, 2.0]]},
    "chains": [
        {"lambda": -1.0, "eigen": 0, "sign": 1},
        {"lambda": -1.0, "eigen": 1, "sign": 1},
        {"lambda": -2.5, "eigen": 0, "sign": -1},
        {"lambda": -2.5, "eigen": 1, "sign": -1},
    ],
    "stages": ["build"],
}


def _write(path, payload):
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return path


class TestRun:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_scenarios_pass(self, name, scenario_dir, tmp_path):
        out = tmp_path / "out"
        code = main(["run", str(scenario_dir / name), "--points", "4", "--out-dir", str(out)])
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["schema"] == REPORT_SCHEMA
        assert report["passed"] is True
        assert report["scenario"] == name.removesuffix(".json")
        assert all(entry["verdict"] == "pass" for r in report["reports"] for entry in r["entries"])
        assert (out / "summary.txt").read_text().splitlines()[-1].startswith("PASS")
        assert "Q-" in json.loads((out / "operators.json").read_text())
        assert "versions" in json.loads((out / "metadata.json").read_text())

    def test_diagonal_pair_facts(self, scenario_dir, tmp_path):
        main(["run", str(scenario_dir / "diagonal_pair.json"), "--points", "4", "--out-dir", str(tmp_path)])
        facts = json.loads((tmp_path / "report.json").read_text())["facts"]
        assert (facts["n"], facts["N"], facts["N_prime"], facts["M"]) == (2, 1, 3, 1)

    def test_stage_subset(self, scenario_dir, tmp_path):
        code = main(
            ["run", str(scenario_dir / "diagonal_pair.json"), "--stages", "build", "--points", "4", "--out-dir", str(tmp_path)]
        )
        assert code == EXIT_OK
        stages = [r["stage"] for r in json.loads((tmp_path / "report.json").read_text())["reports"]]
        assert stages == ["build"]

    def test_failed_verdict_exit_code(self, scenario_dir, tmp_path):
        code = main(
            ["run", str(scenario_dir / "diagonal_pair.json"), "--stages", "build", "--tol", "0", "--out-dir", str(tmp_path)]
        )
        assert code == EXIT_FAILED
        assert (tmp_path / "summary.txt").read_text().splitlines()[-1].startswith("FAIL")

    @pytest.mark.parametrize("name", ["diagonal_pair.json", "first_order.json"])
    def test_zero_tolerance_fails_verdicts_without_raising(self, name, scenario_dir, tmp_path):
        code = main(["run", str(scenario_dir / name), "--tol", "0", "--points", "4", "--out-dir", str(tmp_path)])
        assert code == EXIT_FAILED
        assert json.loads((tmp_path / "report.json").read_text())["passed"] is False

    def test_alias_scenario_facts(self, scenario_dir, tmp_path):
        main(["run", str(scenario_dir / "remark9.json"), "--points", "4", "--out-dir", str(tmp_path)])
        facts = json.loads((tmp_path / "report.json").read_text())["facts"]
        assert (facts["n"], facts["N"], facts["N_prime"]) == (2, 1, 3)

    def test_singular_leading_is_numerical_failure(self, tmp_path):
        path = _write(tmp_path / "lead.json", FIRST_ORDER | {"leading": [[1.0, 0.0], [0.0, 0.0]]})
        assert main(["run", str(path), "--points", "4", "--out-dir", str(tmp_path / "out")]) == EXIT_NUMERICAL

    @pytest.mark.parametrize("seed", range(20))
    def test_random_scenarios_intertwine(self, seed):
        n, big = 1 + seed % 3, 1 + (seed // 3) % 3
        data = gen_example("random", n, big, seed=seed)
        settings = DEFAULT_SETTINGS.replace(sample_points=12, window=(-2.0, 2.0), seed=seed)
        cs = build_chainset(data, settings)
        q = build_intertwiner(cs, settings=settings)
        assert (q.n, q.order) == (n, big)
        h_minus = partner_hamiltonian(q, cs.hamiltonian)
        report = intertwining_residual(q, cs.hamiltonian, h_minus, probe_battery(n), settings=settings)
        assert report.passed
        assert report.max_residual < 1e-7

    def test_degenerate_chains_are_numerical_failures(self, tmp_path):
        chain = {"lambda": -1.0, "eigen": 0}
        scenario = {
            "n": 1,
            "potential": {"constant": [[1.0]]},
            "chains": [chain, chain],
            "stages": ["build"],
        }
        path = _write(tmp_path / "degenerate.json", scenario)
        assert main(["run", str(path), "--points", "4", "--out-dir", str(tmp_path / "out")]) == EXIT_NUMERICAL


class TestScenarioErrors:
    def test_malformed_json(self, tmp_path):
        path = _write(tmp_path / "bad.json", "{not json")
        assert main(["run", str(path), "--out-dir", str(tmp_path)]) == EXIT_SCENARIO

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(tmp_path / "absent.json")

    def test_unknown_kind(self, tmp_path):
        path = _write(tmp_path / "kind.json", {"kind": "triangle"})
        assert main(["run", str(path), "--out-dir", str(tmp_path)]) == EXIT_SCENARIO

    def test_unknown_stage(self, scenario_dir, tmp_path):
        args = ["run", str(scenario_dir / "diagonal_pair.json"), "--stages", "build,polish", "--out-dir", str(tmp_path)]
        assert main(args) == EXIT_SCENARIO

    def test_missing_chains(self, tmp_path):
        path = _write(tmp_path / "nochains.json", {"n": 1, "potential": {"constant": [[0.0]]}})
        assert main(["run", str(path), "--out-dir", str(tmp_path)]) == EXIT_SCENARIO

    def test_defaults(self, tmp_path):
        data = load_scenario(_write(tmp_path / "plain.json", {"n": 1}))
        assert data["kind"] == "chains"
        assert data["name"] == "plain"
        assert "verify" in data["stages"]

    @pytest.mark.parametrize(
        "changes",
        [
            {"seed": "abc"},
            {"seed": 1.5},
            {"chains": [{"lambda": -1.0, "eigen": "a"}] * 4},
            {"chains": [{"lambda": -1.0, "eigen": 0, "sign": 2}] * 4},
            {"chains": [{"lambda": ["a", 0.0], "eigen": 0}] * 4},
            {"chains": ["not an object"]},
            {"jordan": [{"lambda": -1.0}]},
            {"jordan": [{"lambda": "minus one", "blocks": [1, 1]}]},
            {"jordan": "none"},
            {"ladder": ["x"], "stages": ["build", "factorize"]},
            {"reduce_prefix": "one", "stages": ["build", "reduce"]},
            {"ordering": "sideways"},
            {"settings": {"window": [1.0]}},
            {"settings": {"sample_points": "many"}},
        ],
    )
    def test_malformed_values(self, changes, tmp_path):
        path = _write(tmp_path / "bad.json", FIRST_ORDER | changes)
        assert main(["run", str(path), "--points", "4", "--out-dir", str(tmp_path / "out")]) == EXIT_SCENARIO

    def test_permutation_must_reorder_chains(self, tmp_path):
        scenario = FIRST_ORDER | {"first_order": True, "permutation": [0, 0, 1, 2], "stages": ["build", "conjugate"]}
        path = _write(tmp_path / "perm.json", scenario)
        assert main(["run", str(path), "--points", "4", "--out-dir", str(tmp_path / "out")]) == EXIT_SCENARIO


class TestSettings:
    def test_seed_precedence(self, monkeypatch):
        data = {"seed": 3}
        monkeypatch.delenv(SEED_ENV, raising=False)
        assert resolve_settings(data, parse_args(["run", "x.json"])).seed == 3
        monkeypatch.setenv(SEED_ENV, "11")
        assert resolve_settings(data, parse_args(["run", "x.json"])).seed == 11
        assert resolve_settings(data, parse_args(["run", "x.json", "--seed", "5"])).seed == 5

    def test_bad_env_seed(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "abc")
        with pytest.raises(ScenarioError):
            resolve_settings({}, parse_args(["run", "x.json"]))

    def test_flags(self, monkeypatch):
        monkeypatch.delenv(SEED_ENV, raising=False)
        args = parse_args(["run", "x.json", "--tol", "1e-6", "--points", "3", "--window", "-2", "2"])
        settings = resolve_settings({"settings": {"scan_points": 64}}, args)
        assert (settings.tol_accept, settings.sample_points, settings.window) == (1e-6, 3, (-2.0, 2.0))
        assert settings.scan_points == 64

    def test_unknown_setting(self):
        with pytest.raises(ScenarioError):
            resolve_settings({"settings": {"bogus": 1}}, parse_args(["run", "x.json"]))


class TestGen:
    def test_templates_match_bundled(self, scenario_dir):
        assert gen_example("diagonal-pair") == json.loads((scenario_dir / "diagonal_pair.json").read_text())
        assert gen_example("irreducible", 2, 2) == json.loads((scenario_dir / "irreducible_n2_N2.json").read_text())

    def test_deterministic(self):
        assert gen_example("random", 2, 2, seed=7) == gen_example("random", 2, 2, seed=7)
        assert gen_example("random", 2, 2, seed=7) != gen_example("random", 2, 2, seed=8)

    def test_first_order_template(self):
        scenario = gen_example("first-order", 2, 3, seed=4)
        assert len(scenario["chains"]) == 6
        assert sorted(scenario["permutation"]) == list(range(6))
        assert scenario["first_order"] is True

    def test_unknown_kind(self):
        assert main(["gen", "spiral"]) == EXIT_SCENARIO

    def test_generated_scenario_runs(self, tmp_path):
        path = tmp_path / "fo.json"
        assert main(["gen", "first-order", "--N", "2", "--seed", "9", "--out", str(path)]) == EXIT_OK
        assert main(["run", str(path), "--points", "4", "--window", "-3", "3", "--out-dir", str(tmp_path / "out")]) == EXIT_OK

    def test_aliases(self, scenario_dir):
        assert gen_example("remark9") == json.loads((scenario_dir / "remark9.json").read_text())
        assert gen_example("remark9")["kind"] == "diagonal-pair"
        scenario = gen_example("theorem2", 2, 2, seed=4)
        assert scenario["name"] == "theorem2"
        assert scenario["chains"] == gen_example("first-order", 2, 2, seed=4)["chains"]

    def test_alias_scenario_runs(self, tmp_path):
        path = tmp_path / "t2.json"
        assert main(["gen", "theorem2", "--N", "2", "--seed", "9", "--out", str(path)]) == EXIT_OK
        assert main(["run", str(path), "--points", "4", "--window", "-3", "3", "--out-dir", str(tmp_path / "out")]) == EXIT_OK


def test_empty_summary():
    assert summary_text(RunResult("empty")) == "no identities checked\n"
