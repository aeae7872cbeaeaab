"""Command-line surface and exit codes."""
import io

import pandas as pd
import pytest

from mbansec.cli import EXIT_CONFIG, EXIT_OK, EXIT_USAGE, run_cli


def cli(*argv) -> tuple:
    out, err = io.StringIO(), io.StringIO()
    code = run_cli(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


class TestUsage:
    def test_help(self, capsys):
        assert run_cli(["--help"]) == EXIT_OK
        assert "handshake" in capsys.readouterr().out

    def test_help_goes_to_given_stream(self, capsys):
        code, out, _ = cli("--help")
        assert code == EXIT_OK
        assert "handshake" in out
        assert capsys.readouterr().out == ""

    def test_subcommand_help(self):
        code, out, _ = cli("simulate", "--help")
        assert code == EXIT_OK
        assert "--fail" in out

    def test_no_command(self):
        code, _, err = cli()
        assert code == EXIT_USAGE
        assert "usage" in err

    def test_unknown_subcommand(self):
        assert cli("teleport")[0] == EXIT_USAGE

    @pytest.mark.parametrize("argv", [
        ["handshake", "--protocol", "VI"],
        ["handshake", "--protocol", "X"],
        ["simulate", "lcp.scn", "--profile", "paranoid"],
        ["simulate", "lcp.scn", "--fail", "0xFF00"],
        ["attack", "lcp.scn", "--kinds", "teleport"],
        ["attack", "lcp.scn"],
    ])
    def test_bad_arguments(self, argv):
        assert cli(*argv)[0] == EXIT_USAGE

    def test_missing_scenario(self):
        code, _, err = cli("simulate", "nowhere.scn")
        assert code == EXIT_CONFIG
        assert "nowhere.scn" in err

    def test_broken_scenario(self, tmp_path):
        path = tmp_path / "broken.scn"
        path.write_text("[topology]\nkind = T9\n", encoding="utf-8")
        assert cli("simulate", str(path))[0] == EXIT_CONFIG

    def test_missing_assessment_data(self, tmp_path):
        assert cli("assess", "--data", str(tmp_path / "none.yml"))[0] == EXIT_CONFIG


class TestCommands:
    def test_vectors(self):
        code, out, _ = cli("vectors")
        assert code == EXIT_OK
        lines = out.splitlines()
        assert lines and all(line.startswith("PASS ") for line in lines)

    @pytest.mark.parametrize("protocol", ["I", "II", "III", "IV", "V"])
    def test_handshake(self, protocol):
        code, out, _ = cli("handshake", "--protocol", protocol, "--seed", "4")
        assert code == EXIT_OK
        assert f"protocol={protocol} initiator=1 responder=65280 messages=3" in out
        assert "mk=" in out

    def test_handshake_mitm(self):
        code, out, _ = cli("handshake", "--protocol", "II", "--mitm")
        assert code == EXIT_OK
        frame = pd.read_csv(io.StringIO(out))
        assert frame.loc[0, "successes"] == 1

    def test_simulate_is_deterministic(self):
        first = cli("simulate", "lcp.scn", "--seed", "7", "--ticks", "40")
        second = cli("simulate", "lcp.scn", "--seed", "7", "--ticks", "40")
        assert first[0] == EXIT_OK
        assert first[1] == second[1]
        assert first[1].splitlines()[0] == "tick,src,dst,type,level,outcome,reason"

    def test_simulate_table_to_file(self, tmp_path):
        path = tmp_path / "trace.txt"
        code, out, _ = cli("simulate", "lcp.scn", "--ticks", "20", "--format", "table", "--out", str(path),
                           "--fail", "0xFF00@5")
        assert code == EXIT_OK
        assert out == ""
        assert path.read_text(encoding="utf-8").startswith("scenario=")

    def test_attack_replay(self):
        code, out, _ = cli("attack", "pancreas.scn", "--kinds", "replay", "--profile", "baseline,hardened",
                           "--attempts", "40")
        assert code == EXIT_OK
        frame = pd.read_csv(io.StringIO(out))
        assert frame["profile"].tolist() == ["baseline", "hardened"]
        assert frame["success_rate"].tolist() == [1.0, 0.0]

    def test_assess_table(self):
        code, out, _ = cli("assess", "--profile", "hardened")
        assert code == EXIT_OK
        assert "gaps: none" in out
        assert "Legend:" in out

    def test_assess_gaps(self):
        code, out, _ = cli("assess", "--use-cases", "UC1,UC2")
        assert code == EXIT_OK
        assert "T3" in out.split("gaps:")[1].splitlines()[0]
