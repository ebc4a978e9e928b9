"""CLI tests: exit-code contract, config resolution, report regeneration,
and the self-describing output directory."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from edustate import cli, dataio
from edustate.nn import GradCheckReport

from conftest import FIXTURE_DIR


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture()
def tiny_dataset(tmp_path):
    out = tmp_path / "ds"
    code = run_cli(
        "simulate", "--out", str(out), "--n-users", "3", "--n-lectures", "3",
        "--stream-minutes", "1", "--seed", "5", "--signal-strength", "2.0",
    )
    assert code == 0
    return out


class TestSimulate:
    def test_writes_loadable_dataset_and_config(self, tiny_dataset):
        result = dataio.load_dataset(tiny_dataset)
        assert len(result.sessions) == 3
        resolved = json.loads((tiny_dataset / "resolved_config.json").read_text())
        assert resolved["command"] == "simulate"
        assert resolved["seed"] == 5

    def test_seed_repeat_is_byte_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli("simulate", "--out", str(out), "--n-users", "2",
                           "--n-lectures", "2", "--stream-minutes", "1",
                           "--seed", "9") == 0
            outs.append({
                p.relative_to(out).as_posix(): p.read_bytes()
                for p in sorted(out.rglob("*")) if p.is_file()
            })
        assert outs[0] == outs[1]

    def test_single_user_warns_but_succeeds(self, tmp_path, capsys):
        out = tmp_path / "one"
        assert run_cli("simulate", "--out", str(out), "--n-users", "1",
                       "--n-lectures", "2", "--no-streams") == 0
        assert "at least 2 users" in capsys.readouterr().err

    def test_collision_without_force(self, tmp_path, tiny_dataset):
        assert run_cli("simulate", "--out", str(tiny_dataset), "--n-users", "2",
                       "--n-lectures", "2", "--no-streams") == 2
        assert run_cli("simulate", "--out", str(tiny_dataset), "--n-users", "2",
                       "--n-lectures", "2", "--no-streams", "--force") == 0

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_users": 2, "n_lectures": 2,
                                   "generate_streams": False, "seed": 1}))
        out = tmp_path / "ds"
        assert run_cli("simulate", "--out", str(out), "--config", str(cfg),
                       "--seed", "7") == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["seed"] == 7  # flag wins
        assert resolved["n_users"] == 2  # file wins over default

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_players": 4}))
        assert run_cli("simulate", "--out", str(tmp_path / "x"),
                       "--config", str(cfg)) == 2


class TestEvaluate:
    def test_pipeline_outputs(self, tmp_path, tiny_dataset):
        out = tmp_path / "report"
        code = run_cli(
            "evaluate", "--dataset", str(tiny_dataset), "--out", str(out),
            "--variants", "rasch,smart-mlp", "--wl", "1", "--epochs", "10",
            "--pool-stride", "10", "--seed", "2",
        )
        assert code == 0
        for name in ("accuracy_vs_window.csv", "difficulty_table.csv",
                     "summary.json", "accuracy_vs_window.svg", "resolved_config.json"):
            assert (out / name).exists()
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["variants"]) == {"rasch", "smart-mlp"}
        svg = (out / "accuracy_vs_window.svg").read_text()
        assert svg.startswith("<svg") and "rasch" in svg and "smart-mlp" in svg

    def test_missing_dataset_is_data_error(self, tmp_path):
        assert run_cli("evaluate", "--dataset", str(tmp_path / "nope"),
                       "--out", str(tmp_path / "r")) == 3

    def test_unknown_variant_is_config_error(self, tmp_path, tiny_dataset):
        assert run_cli("evaluate", "--dataset", str(tiny_dataset),
                       "--out", str(tmp_path / "r"), "--variants", "magic") == 2

    def test_output_collision(self, tmp_path, tiny_dataset):
        out = tmp_path / "r"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        assert run_cli("evaluate", "--dataset", str(tiny_dataset), "--out", str(out),
                       "--variants", "rasch", "--wl", "1") == 2

    def test_wl_spec_parsing(self):
        assert cli._parse_wl("1-3") == [1, 2, 3]
        assert cli._parse_wl("1,4,8") == [1, 4, 8]
        assert cli._parse_wl("1,3-5") == [1, 3, 4, 5]


class TestImport:
    def test_identity_import_round_trips(self, tmp_path):
        mapping = tmp_path / "mapping.json"
        mapping.write_text(json.dumps(dataio.canonical_mapping()))
        out = tmp_path / "imported"
        assert run_cli("import", "--source", str(FIXTURE_DIR),
                       "--mapping", str(mapping), "--out", str(out)) == 0
        result = dataio.load_dataset(out)
        ref = dataio.load_dataset(FIXTURE_DIR)
        assert list(result.sessions) == list(ref.sessions)

    def test_missing_mapping_is_config_error(self, tmp_path):
        assert run_cli("import", "--source", str(FIXTURE_DIR),
                       "--mapping", str(tmp_path / "nope.json"),
                       "--out", str(tmp_path / "o")) == 2


class TestGradcheck:
    def _fake_reports(self, worst):
        return {
            "none": GradCheckReport((("ability.0.w", worst),), worst),
            "mlp": GradCheckReport((("state.0.w", 1e-9),), 1e-9),
        }

    def test_pass_exit_zero(self, monkeypatch, capsys):
        monkeypatch.setattr(cli.models, "gradcheck_architectures",
                            lambda **kw: self._fake_reports(1e-9))
        assert run_cli("gradcheck") == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "ability.0.w" in out

    def test_failure_exit_nonzero(self, monkeypatch, capsys):
        monkeypatch.setattr(cli.models, "gradcheck_architectures",
                            lambda **kw: self._fake_reports(0.5))
        assert run_cli("gradcheck", "--corrupt") == 4
        assert "FAIL" in capsys.readouterr().out

    def test_corrupt_flag_reaches_harness(self, monkeypatch):
        seen = {}

        def fake(**kw):
            seen.update(kw)
            return self._fake_reports(1e-9)

        monkeypatch.setattr(cli.models, "gradcheck_architectures", fake)
        run_cli("gradcheck", "--corrupt", "--seed", "11")
        assert seen["corrupt"] is True and seen["seed"] == 11


class TestReport:
    def test_regenerates_identical_files(self, tmp_path, tiny_dataset):
        out = tmp_path / "report"
        assert run_cli("evaluate", "--dataset", str(tiny_dataset), "--out", str(out),
                       "--variants", "rasch", "--wl", "1,2") == 0
        regen = tmp_path / "regen"
        assert run_cli("report", "--summary", str(out / "summary.json"),
                       "--out", str(regen)) == 0
        for name in ("accuracy_vs_window.csv", "difficulty_table.csv",
                     "accuracy_vs_window.svg"):
            assert (regen / name).read_bytes() == (out / name).read_bytes()

    def test_missing_summary(self, tmp_path):
        assert run_cli("report", "--summary", str(tmp_path / "none.json"),
                       "--out", str(tmp_path / "o")) == 2


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "edustate.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    for name in ("simulate", "import", "evaluate", "gradcheck", "report"):
        assert name in out.stdout
