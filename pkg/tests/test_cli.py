import hashlib
import json
import subprocess
import sys

import pytest

from apload import cli
from apload.forecasters import load_model
from apload.load_derivation import read_series_csv
from apload.trace_ingest import parse_records_file


def run(argv, capsys=None):
    code = cli.main(argv)
    if capsys is None:
        return code
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Shared workspace: records synthesized once, series derived once."""
    root = tmp_path_factory.mktemp("ws")
    assert cli.main(
        ["synth", "--out", str(root / "raw"), "--num-aps", "3",
         "--days", "1.0", "--seed", "7"]
    ) == 0
    assert cli.main(
        ["derive", "--records", str(root / "raw" / "records.csv"),
         "--granularity-s", "600", "--out", str(root / "load")]
    ) == 0
    return root


@pytest.fixture(scope="module")
def persistence_ckpt(ws):
    out = ws / "pers"
    assert cli.main(
        ["train", "--series", str(ws / "load" / "series.csv"),
         "--model", "persistence", "--lookback-steps", "12",
         "--horizon-steps", "4", "--out", str(out)]
    ) == 0
    return out / "model.ckpt"


@pytest.fixture(scope="module")
def lstm_ckpt(ws):
    out = ws / "lstm"
    assert cli.main(
        ["train", "--series", str(ws / "load" / "series.csv"),
         "--model", "lstm", "--lookback-steps", "12", "--horizon-steps", "4",
         "--epochs", "3", "--patience", "3", "--hidden", "8",
         "--out", str(out), "--seed", "3"]
    ) == 0
    return out / "model.ckpt"


class TestPipeline:
    def test_synth_output_and_manifest(self, ws):
        rec_path = ws / "raw" / "records.csv"
        assert rec_path.exists()
        manifest = json.loads((ws / "raw" / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["seed"] == 7
        assert manifest["config"]["num_aps"] == 3
        (out_entry,) = [
            e for e in manifest["outputs"] if e["path"].endswith("records.csv")
        ]
        assert out_entry["sha256"] == hashlib.sha256(
            rec_path.read_bytes()
        ).hexdigest()
        for key in ("python", "numpy", "apload"):
            assert manifest["versions"][key]

    def test_derive_series_readable(self, ws):
        series = read_series_csv(ws / "load" / "series.csv")
        assert len(series) == 3
        assert all(s.granularity_s == 600 for s in series.values())
        manifest = json.loads((ws / "load" / "manifest.json").read_text())
        assert manifest["inputs"][0]["path"].endswith("records.csv")

    def test_train_persistence_checkpoint(self, persistence_ckpt):
        model = load_model(persistence_ckpt)
        assert model.meta.kind == "persistence"
        assert model.meta.lookback_steps == 12
        assert model.meta.horizon_steps == 4

    def test_eval_writes_report(self, ws, persistence_ckpt, capsys):
        out = ws / "eval"
        code, stdout, _ = run(
            ["eval", "--series", str(ws / "load" / "series.csv"),
             "--ckpt", str(persistence_ckpt), "--out", str(out)],
            capsys,
        )
        assert code == 0
        assert "mean MAPE" in stdout
        rows = (out / "reports.csv").read_text().splitlines()
        assert len(rows) == 2  # header + one report
        assert rows[1].startswith("persistence,600,4,")
        assert ",on_prem," in rows[1]
        assert (out / "reports.jsonl").exists()

    def test_eval_rejects_unknown_ap(self, ws, persistence_ckpt, capsys):
        code, _, stderr = run(
            ["eval", "--series", str(ws / "load" / "series.csv"),
             "--ckpt", str(persistence_ckpt), "--aps", "nosuch",
             "--out", str(ws / "evalbad")],
            capsys,
        )
        assert code == 1
        assert "nosuch" in stderr

    def test_report_reemits_charts(self, ws, persistence_ckpt, capsys):
        eval_dir = ws / "eval4report"
        assert cli.main(
            ["eval", "--series", str(ws / "load" / "series.csv"),
             "--ckpt", str(persistence_ckpt), "--out", str(eval_dir)]
        ) == 0
        out = ws / "charts"
        code, stdout, _ = run(
            ["report", "--inputs", str(eval_dir), "--out", str(out)], capsys
        )
        assert code == 0
        svgs = list(out.glob("*.svg"))
        assert svgs
        assert all(b"<svg" in p.read_bytes()[:512] for p in svgs)

    def test_quantize_then_profile(self, ws, lstm_ckpt, capsys):
        qdir = ws / "quant"
        code, stdout, _ = run(
            ["quantize", "--ckpt", str(lstm_ckpt),
             "--series", str(ws / "load" / "series.csv"),
             "--calib-windows", "48", "--out", str(qdir)],
            capsys,
        )
        assert code == 0
        stats = json.loads((qdir / "quant_report.json").read_text())
        assert stats["payload_ratio"] == 0.25
        assert stats["calibration_windows"] == 48
        assert stats["quant_mape"] == pytest.approx(
            stats["float_mape"] + stats["mape_gap_pp"]
        )

        pdir = ws / "prof"
        code, stdout, _ = run(
            ["profile", "--ckpt", str(lstm_ckpt),
             "--series", str(ws / "load" / "series.csv"),
             "--quantized-ckpt", str(qdir / "model_int8.ckpt"),
             "--profile-epochs", "1", "--infer-reps", "5", "--epochs", "1",
             "--hidden", "8", "--out", str(pdir)],
            capsys,
        )
        assert code == 0
        assert "speedup" in stdout
        table = (pdir / "deployment.csv").read_text().splitlines()
        assert len(table) == 3
        envs = [line.split(",")[1] for line in table[1:]]
        assert envs == ["float32", "int8"]
        prof = json.loads((pdir / "profile.json").read_text())
        assert prof["quantized_speedup"] is not None
        assert prof["cadence"]["inference_calls_per_month"] == 86400.0


class TestExitCodes:
    def test_unknown_command(self, capsys):
        assert run(["frobnicate"], capsys)[0] == 1

    def test_missing_required_flag(self, capsys):
        assert run(["derive"], capsys)[0] == 1

    def test_missing_input_file(self, tmp_path, capsys):
        code, _, stderr = run(
            ["derive", "--records", str(tmp_path / "nope.csv"),
             "--out", str(tmp_path / "o")],
            capsys,
        )
        assert code == 1
        assert "derive" in stderr

    def test_runtime_failure_is_exit_2(self, tmp_path, capsys, monkeypatch):
        def boom(args):
            raise RuntimeError("wedged")

        monkeypatch.setattr(cli, "cmd_synth", boom)
        code, _, stderr = run(["synth", "--out", str(tmp_path / "o")], capsys)
        assert code == 2
        assert "wedged" in stderr

    def test_version_flag(self, capsys):
        assert run(["--version"], capsys)[0] == 0

    def test_selftest_passes(self, capsys):
        code, stdout, _ = run(["selftest"], capsys)
        assert code == 0
        assert "all checks passed" in stdout
        assert "FAIL" not in stdout

    def test_module_entrypoint(self):
        proc = subprocess.run(
            [sys.executable, "-m", "apload.cli", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "apload" in proc.stdout


class TestConfigFile:
    def test_config_overrides_default_flag_overrides_config(self, tmp_path, capsys):
        conf = tmp_path / "apload.conf"
        conf.write_text("# comment\nnum_aps = 2\n\ndays = 0.5\n")
        out1 = tmp_path / "a"
        assert run(
            ["synth", "--out", str(out1), "--config", str(conf)], capsys
        )[0] == 0
        parsed = parse_records_file(out1 / "records.csv")
        assert len(parsed.record_set.ap_ids()) == 2

        out2 = tmp_path / "b"
        assert run(
            ["synth", "--out", str(out2), "--config", str(conf),
             "--num-aps", "4"],
            capsys,
        )[0] == 0
        parsed = parse_records_file(out2 / "records.csv")
        assert len(parsed.record_set.ap_ids()) == 4

    def test_dashed_keys_accepted(self, tmp_path, capsys):
        conf = tmp_path / "apload.conf"
        conf.write_text("num-aps = 2\ndays = 0.5\n")
        out = tmp_path / "c"
        assert run(
            ["synth", "--out", str(out), "--config", str(conf)], capsys
        )[0] == 0
        assert len(parse_records_file(out / "records.csv").record_set.ap_ids()) == 2

    def test_malformed_config_is_exit_1(self, tmp_path, capsys):
        conf = tmp_path / "bad.conf"
        conf.write_text("this line has no equals sign\n")
        code, _, stderr = run(
            ["synth", "--out", str(tmp_path / "o"), "--config", str(conf)],
            capsys,
        )
        assert code == 1
        assert "config" in stderr

    def test_missing_config_is_exit_1(self, tmp_path, capsys):
        code, _, stderr = run(
            ["synth", "--out", str(tmp_path / "o"),
             "--config", str(tmp_path / "absent.conf")],
            capsys,
        )
        assert code == 1


class TestDeterminism:
    def test_synth_same_seed_same_bytes(self, tmp_path):
        args = ["synth", "--num-aps", "2", "--days", "0.5", "--seed", "11"]
        assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
        assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "records.csv").read_bytes()
        b = (tmp_path / "b" / "records.csv").read_bytes()
        assert a == b

    def test_synth_seed_changes_output(self, tmp_path):
        base = ["synth", "--num-aps", "2", "--days", "0.5"]
        assert cli.main(base + ["--seed", "11", "--out", str(tmp_path / "a")]) == 0
        assert cli.main(base + ["--seed", "12", "--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "records.csv").read_bytes()
        b = (tmp_path / "b" / "records.csv").read_bytes()
        assert a != b

    def test_derive_is_deterministic(self, ws, tmp_path):
        args = ["derive", "--records", str(ws / "raw" / "records.csv"),
                "--granularity-s", "600"]
        assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
        assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "series.csv").read_bytes()
        b = (tmp_path / "b" / "series.csv").read_bytes()
        assert a == b
