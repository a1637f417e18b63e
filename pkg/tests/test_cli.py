import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from sis import cli
from sis.cli import (EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_OK, EXIT_SCHEMA, ReportRecord, emit,
                     exit_code, format_value, main, parse_scenario, parse_scenario_obj,
                     read_jsonl)
from sis.errors import SchemaError

HAT = {"generator": [{"kind": "bspline", "order": 1}], "measure": [{"atoms": [{"at": 0.0, "weight": 1.0}]}]}


def scenario(**over):
    sc = {"id": "t", "pipeline": "bounds", "model": json.loads(json.dumps(HAT)),
          "window": {"K": 4, "doublings": 1}}
    sc.update(over)
    return sc


def write(tmp_path, obj, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


class TestSchema:
    def test_defaults_are_filled(self):
        sc = parse_scenario_obj(scenario())
        assert sc["seed"] == 0
        assert sc["tolerances"]["relative"] == 0.02
        assert sc["window"] == {"K": 4, "doublings": 1}

    def test_list_form(self, tmp_path):
        path = write(tmp_path, {"scenarios": [scenario(id="a"), scenario(id="b")]})
        assert [s["id"] for s in parse_scenario(path)] == ["a", "b"]

    @pytest.mark.parametrize("mutate, where", [
        (lambda s: s["model"]["generator"][0].update(kind="wavelet"), "model.generator[0].kind"),
        (lambda s: s["model"].pop("measure"), "model.measure"),
        (lambda s: s["window"].update(K=-1), "window.K"),
        (lambda s: s.update(pipeline="plot"), "pipeline"),
        (lambda s: s.update(surprise=1), "surprise"),
        (lambda s: s["model"]["measure"][0]["atoms"][0].update(weight="x"),
         "model.measure[0].atoms[0].weight"),
    ])
    def test_errors_name_the_field(self, mutate, where):
        sc = scenario()
        mutate(sc)
        with pytest.raises(SchemaError) as info:
            parse_scenario_obj(sc)
        assert where in info.value.path

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(SchemaError):
            parse_scenario(path)

    def test_generator_kinds_build(self):
        sc = scenario(model={
            "generator": [{"kind": "bspline", "order": 2}, {"kind": "gaussian", "sigma": 0.5, "radius": 1.5},
                          {"kind": "polydecay", "s": 2.5}, {"kind": "tabulated", "h": 0.5, "values": [0, 1, 0]}],
            "measure": [{"density": {"h": 0.5, "values": [1.0, 1.0], "origin": -0.5}}],
        })
        model = cli.build_model(parse_scenario_obj(sc), 0)
        assert model.phi.r == 4 and model.mu.t == 1


class TestFormatting:
    @pytest.mark.parametrize("v, want", [
        (0.1, "0.10000000000000001"), (1.0, "1"), (None, ""), (True, "true"), (3, "3"),
        (np.float64(1 / 3), "0.33333333333333331"), ("stable", "stable"),
    ])
    def test_format_value(self, v, want):
        assert format_value(v) == want

    def test_seventeen_digits_round_trip(self):
        for x in np.random.default_rng(0).standard_normal(100):
            assert float(format_value(x)) == x

    def test_empty_records_give_header_only_csv(self, tmp_path):
        emit([], tmp_path)
        assert (tmp_path / "report.csv").read_text() == "scenario_id,pipeline,key,value,verdict\n"
        assert (tmp_path / "report.jsonl").read_text() == ""

    def test_jsonl_round_trip(self, tmp_path):
        recs = [ReportRecord("a", "bounds", "x", 0.1, "pass", 0.1, 0.2, "<=", "p=2"),
                ReportRecord("a", "bounds", "y", math.inf, "", detail={"z": complex(1, 2)})]
        emit(recs, tmp_path)
        back = read_jsonl(tmp_path / "report.jsonl")
        assert back == [r.as_json() for r in recs]
        assert back[1]["value"] == "inf"
        assert back[1]["detail"]["z"] == [1.0, 2.0]

    def test_exit_codes(self):
        def rec(v):
            return ReportRecord("a", "b", "k", 1, v)
        assert exit_code([rec("pass"), rec("")]) == EXIT_OK
        assert exit_code([rec("pass"), rec("inconclusive")]) == EXIT_INCONCLUSIVE
        assert exit_code([rec("inconclusive"), rec("fail")]) == EXIT_FAIL
        assert exit_code([]) == EXIT_OK


class TestMain:
    def test_bounds_run(self, tmp_path):
        path = write(tmp_path, scenario(p=[1, 2, "inf"], export_operator=True))
        out = tmp_path / "out"
        assert main(["bounds", "--scenario", str(path), "--out", str(out)]) == EXIT_OK
        recs = read_jsonl(out / "report.jsonl")
        assert recs[0]["key"] == "scenario.resolved"
        assert recs[0]["detail"]["window"]["K"] == 4
        rows = list(csv.DictReader((out / "report.csv").open()))
        assert len(rows) == len(recs)
        assert (out / "t.operator.csv").exists()

    def test_expected_instability_passes(self, tmp_path):
        sc = scenario(sampling={"offset": 0.5}, expect={"stability": "unstable"},
                      window={"K": 8, "doublings": 2})
        path = write(tmp_path, sc)
        assert main(["bounds", "--scenario", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK

    def test_unexpected_instability_fails(self, tmp_path):
        sc = scenario(sampling={"offset": 0.5}, window={"K": 8, "doublings": 2})
        path = write(tmp_path, sc)
        assert main(["bounds", "--scenario", str(path), "--out", str(tmp_path / "o")]) == EXIT_FAIL

    def test_schema_error_exit(self, tmp_path, capsys):
        sc = scenario()
        sc["model"]["generator"][0]["kind"] = "wavelet"
        path = write(tmp_path, sc)
        assert main(["bounds", "--scenario", str(path), "--out", str(tmp_path / "o")]) == EXIT_SCHEMA
        assert "model.generator[0].kind" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["bounds", "--scenario", str(tmp_path / "nope.json")]) == EXIT_SCHEMA

    def test_seed_override_is_recorded(self, tmp_path):
        path = write(tmp_path, scenario(sampling={"jitter": 0.05}))
        out = tmp_path / "o"
        main(["bounds", "--scenario", str(path), "--out", str(out), "--seed", "7",
              "--window-doublings", "1"])
        assert read_jsonl(out / "report.jsonl")[0]["detail"]["seed"] == 7

    def test_numerical_failure_becomes_a_record(self, tmp_path):
        sc = scenario(model={"generator": [{"kind": "bspline", "order": 1}], "measure": [{"atoms": []}]})
        path = write(tmp_path, sc)
        out = tmp_path / "o"
        assert main(["bounds", "--scenario", str(path), "--out", str(out)]) == EXIT_FAIL
        recs = read_jsonl(out / "report.jsonl")
        assert any(r["verdict"] == "fail" for r in recs)

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        path = write(tmp_path, scenario(sampling={"jitter": 0.1}, seed=3))
        for name in ("a", "b"):
            main(["bounds", "--scenario", str(path), "--out", str(tmp_path / name)])
        assert (tmp_path / "a" / "report.jsonl").read_bytes() == (tmp_path / "b" / "report.jsonl").read_bytes()

    def test_console_entry_point(self, tmp_path):
        path = write(tmp_path, scenario())
        proc = subprocess.run([sys.executable, "-m", "sis.cli", "bounds", "--scenario", str(path),
                               "--out", str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == EXIT_OK, proc.stderr
