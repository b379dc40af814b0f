"""Config validation, CLI dispatch, records, reports."""

import json
import math

import pytest
import yaml

from lrcp.cli import main, run_experiment
from lrcp.config import ConfigError, validate_config
from lrcp.records import read_records
from lrcp.report import generate_report


def base_config(**overrides):
    cfg = {
        "experiment": "t",
        "operation": "survival",
        "seed": 5,
        "samples": 50,
        "kernel": {"family": "nearest-neighbor", "dimension": 1, "beta": 1.0},
        "process": {"delta": 1.0, "horizon": 3.0},
        "seed_set": [[0]],
    }
    cfg.update(overrides)
    return cfg


INVALID_CONFIGS = [
    # one entry per validated precondition
    ("missing experiment", {k: v for k, v in base_config().items() if k != "experiment"}),
    ("unknown operation", base_config(operation="frobnicate")),
    ("bad seed", base_config(seed=-1)),
    ("bad samples", base_config(samples=0)),
    ("bad workers", base_config(workers=0)),
    ("unknown family", base_config(kernel={"family": "exp", "dimension": 1, "beta": 1.0})),
    ("bad dimension", base_config(kernel={"family": "nearest-neighbor", "dimension": 0, "beta": 1.0})),
    ("summability", base_config(kernel={"family": "power-law", "dimension": 2, "alpha": 1.5, "beta": 1.0})),
    ("bad beta", base_config(kernel={"family": "nearest-neighbor", "dimension": 1, "beta": -1.0})),
    ("bad alpha", base_config(kernel={"family": "power-law", "dimension": 1, "alpha": -2.0, "beta": 1.0})),
    ("origin rate", base_config(kernel={"family": "finite-table", "dimension": 1,
                                        "entries": [[[0], 1.0], [[1], 1.0]]})),
    ("negative table rate", base_config(kernel={"family": "finite-table", "dimension": 1,
                                                "entries": [[[1], -0.5]]})),
    ("negative delta", base_config(process={"delta": -1.0, "horizon": 3.0})),
    ("infinite horizon", base_config(process={"delta": 1.0, "horizon": math.inf})),
    ("zero horizon", base_config(process={"delta": 1.0, "horizon": 0.0})),
    ("empty seed set", base_config(seed_set=[])),
    ("seed dimension mismatch", base_config(seed_set=[[0, 0]])),
    ("empty domain", base_config(process={"delta": 1.0, "horizon": 3.0, "domain_sites": []})),
    ("bad escape radius", base_config(process={"delta": 1.0, "horizon": 3.0, "escape_radius": 0})),
    ("empty sweep grid", base_config(operation="sweep",
                                     sweep={"parameter": "delta", "grid": []})),
    ("bad sweep parameter", base_config(operation="sweep",
                                        sweep={"parameter": "gamma", "grid": [1.0]})),
    ("bad cutoff grid", base_config(operation="sweep",
                                    sweep={"parameter": "cutoff", "grid": [0]})),
    ("bad op probability", {"experiment": "t", "operation": "op-demo",
                            "op": {"p": 1.5, "rows": 10, "width": 10}}),
    ("bad op rows", {"experiment": "t", "operation": "op-demo",
                     "op": {"p": 0.5, "rows": 0, "width": 10}}),
    ("bad epsilon", base_config(operation="fstc-search", search={"epsilon": 1.5})),
    ("bad shell scale", base_config(operation="fstc-check",
                                    block={"half_width": 2.0, "height": 2.0, "r": 0.5})),
    ("missing face", base_config(operation="fstc-check",
                                 block={"half_width": 2.0, "height": 2.0,
                                        "condition": "c2"})),
    ("bad threshold", base_config(operation="delta-c",
                                  protocol={"survival_threshold": 2.0})),
    ("bad window", base_config(operation="upper-density",
                               window={"half_width": -1.0, "height": 1.0})),
    ("bad dump mode", base_config(operation="simulate", dump={"mode": "movie"})),
]


class TestValidation:
    @pytest.mark.parametrize("label,cfg", INVALID_CONFIGS,
                             ids=[x[0] for x in INVALID_CONFIGS])
    def test_invalid_configs_rejected(self, label, cfg):
        with pytest.raises(ConfigError):
            validate_config(cfg)

    def test_valid_config_passes(self):
        exp = validate_config(base_config())
        assert exp.operation == "survival"
        assert exp.samples == 50

    def test_command_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            validate_config(base_config(), operation="sweep")


class TestRunExperiment:
    def test_survival_delta_zero_is_one(self, tmp_path):
        cfg = base_config(process={"delta": 0.0, "horizon": 3.0})
        code, records = run_experiment(cfg)
        assert code == 0
        assert records[0].value == 1.0

    def test_records_roundtrip(self, tmp_path):
        out = tmp_path / "r.jsonl"
        cfg = base_config(out=str(out))
        code, records = run_experiment(cfg)
        assert code == 0
        loaded = read_records(str(out))
        assert loaded[0]["value"] == records[0].value
        assert loaded[0]["config"]["kernel"] == cfg["kernel"]

    def test_value_fields_identical_across_workers(self):
        _, rec1 = run_experiment(base_config(), workers=1)
        _, rec2 = run_experiment(base_config(), workers=2)
        assert rec1[0].to_json().split('"wall_s"')[0] != ""
        strip = lambda r: {k: v for k, v in json.loads(r.to_json()).items()
                           if k != "wall_s"}
        assert strip(rec1[0]) == strip(rec2[0])

    def test_sweep_monotonicity_audit(self):
        cfg = base_config(
            operation="sweep",
            samples=300,
            sweep={"parameter": "delta", "grid": [0.25, 1.0, 4.0]},
        )
        code, records = run_experiment(cfg)
        assert code == 0
        assert len(records) == 3
        values = [r.value for r in records]
        assert values[0] > values[2]
        assert not any("monotonicity-violation" in r.flags for r in records)

    def test_extinction_tail_inconclusive_exit(self):
        cfg = base_config(
            operation="extinction-tail",
            samples=60,
            process={"delta": 0.0, "horizon": 5.0},
        )
        code, records = run_experiment(cfg)
        assert code == 3
        assert "inconclusive" in records[0].flags

    def test_simulate_dump(self, tmp_path):
        out = tmp_path / "events.txt"
        cfg = base_config(operation="simulate", dump={"mode": "trajectory"},
                          process={"delta": 1.0, "horizon": 2.0,
                                   "escape_radius": 30})
        code, _ = run_experiment(cfg, out=str(out))
        assert code == 0
        for line in out.read_text().splitlines():
            t, coords, flip = line.split("\t")
            float(t)
            assert flip in "+-"

    def test_samples_override(self):
        _, records = run_experiment(base_config(), samples=17)
        assert records[0].n_samples == 17


class TestCliMain:
    def write(self, tmp_path, cfg, name="c.yaml"):
        p = tmp_path / name
        p.write_text(yaml.safe_dump(cfg))
        return str(p)

    def test_survival_command(self, tmp_path, capsys):
        path = self.write(tmp_path, base_config())
        assert main(["survival", "--config", path]) == 0
        assert "value=" in capsys.readouterr().out

    def test_validate_command_rejects(self, tmp_path, capsys):
        path = self.write(tmp_path, base_config(samples=0))
        assert main(["validate", "--config", path]) == 2
        assert "samples" in capsys.readouterr().err

    def test_missing_file(self, capsys):
        assert main(["survival", "--config", "/nonexistent.yaml"]) == 2

    def test_op_demo_and_report(self, tmp_path, capsys):
        cfg = {"experiment": "op", "operation": "op-demo", "samples": 30,
               "op": {"p": 1.0, "rows": 20, "width": 20}}
        path = self.write(tmp_path, cfg)
        out = tmp_path / "recs.jsonl"
        assert main(["op-demo", "--config", path, "--out", str(out)]) == 0
        rep_dir = tmp_path / "rep"
        assert main(["report", "--records", str(out), "--out", str(rep_dir)]) == 0
        assert (rep_dir / "report.csv").exists()
        assert (rep_dir / "estimates.png").exists()

    def test_sweep_report_renders_curve(self, tmp_path):
        cfg = base_config(operation="sweep", samples=120,
                          sweep={"parameter": "delta", "grid": [0.5, 1.0, 2.0]})
        path = self.write(tmp_path, cfg)
        out = tmp_path / "sweep.jsonl"
        assert main(["sweep", "--config", path, "--out", str(out)]) == 0
        rep_dir = tmp_path / "rep"
        result = generate_report(str(out), str(rep_dir))
        assert any("sweep_" in f for f in result["figures"])

    def test_seed_override_changes_stream(self, tmp_path):
        path = self.write(tmp_path, base_config(samples=400))
        out1 = tmp_path / "a.jsonl"
        out2 = tmp_path / "b.jsonl"
        main(["survival", "--config", path, "--out", str(out1), "--seed", "1"])
        main(["survival", "--config", path, "--out", str(out2), "--seed", "1"])
        v1 = read_records(str(out1))[0]["value"]
        v2 = read_records(str(out2))[0]["value"]
        assert v1 == v2
