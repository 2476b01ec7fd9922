import json

import pytest

from app import dispatch
from core.errors import UsageError
from core.ui.command_parser import parse_command


def run(capsys, *argv):
    code = dispatch(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


@pytest.fixture
def campaign_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(
        "# tiny\nname = tiny\ndim = 2\nLs = 2,3,4\nreplicas = 20\nseed = 7\ntcap = L^4\n",
        encoding="utf-8",
    )
    return path


class TestParser:
    def test_abbreviated_flag_rejected(self):
        with pytest.raises(UsageError):
            parse_command(["geometry", "--d", "2", "--L", "3", "--check"])

    def test_subcommand_required(self):
        with pytest.raises(UsageError):
            parse_command([])

    def test_log_level_is_case_insensitive(self):
        args = parse_command(["--log-level", "debug", "geometry", "--d", "2", "--L", "3"])
        assert args.log_level == "DEBUG"


class TestDispatch:
    def test_version(self, capsys):
        code, data = run(capsys, "--version")
        assert code == 0
        assert data["name"] == "lifshitz-arena"
        assert data["c1"] > 6.5

    def test_unknown_flag_is_usage_error(self, capsys):
        code, data = run(capsys, "geometry", "--d", "2", "--L", "3", "--bogus")
        assert code == 1
        assert data is None

    def test_geometry_with_partition_check(self, capsys):
        code, data = run(capsys, "geometry", "--d", "4", "--L", "3", "--check-bdecop", "--i", "0")
        assert code == 0
        assert data["command"] == "geometry"
        assert data["result"]["bdecop"][0]["i"] == 0
        assert data["config"]["L"] == 3

    def test_geometry_cylinder_in_low_dimension(self, capsys):
        code, _ = run(capsys, "geometry", "--d", "3", "--L", "3", "--check-bdecop")
        assert code == 1

    def test_simulate(self, capsys):
        code, data = run(capsys, "simulate", "--d", "2", "--L", "4", "--seed", "9")
        assert code == 0
        assert data["result"]["record"]["L"] == 4
        assert data["result"]["t_cap"] == 64.0

    def test_simulate_output_is_byte_identical(self, capsys):
        argv = ["simulate", "--d", "2", "--L", "3", "--seed", "5"]
        assert dispatch(argv) == 0
        first = capsys.readouterr().out
        assert dispatch(argv) == 0
        second = capsys.readouterr().out
        assert first == second
        data = json.loads(first)
        assert len(data["config_hash"]) == 16
        assert data["seed"] == 5
        assert data["result"]["record"]["wall_ms"] == 0.0

    def test_config_hash_follows_arguments(self, capsys):
        _, a = run(capsys, "simulate", "--d", "2", "--L", "3", "--seed", "5")
        _, b = run(capsys, "simulate", "--d", "2", "--L", "3", "--seed", "6")
        _, c = run(capsys, "geometry", "--d", "2", "--L", "3")
        assert a["config_hash"] != b["config_hash"]
        assert c["config_hash"] and c["seed"] is None

    def test_block_minus_outside_outside_cylinder(self, capsys):
        code, data = run(capsys, "simulate", "--d", "4", "--L", "3", "--geometry", "hypercube",
                         "--filter", "block_minus_outside", "--engine", "graphical")
        assert code == 1
        assert data is None

    def test_couple_check(self, capsys):
        code, data = run(capsys, "couple-check", "--d", "3", "--L", "3", "--runs", "2")
        assert code == 0
        assert data["result"]["violations"] == 0

    def test_injected_fault_exits_with_witness(self, capsys):
        code, data = run(capsys, "couple-check", "--d", "2", "--L", "3", "--runs", "1",
                         "--inject-order-fault", "1")
        assert code == 2
        assert data["witness"]["event_index"] == 1
        assert "seed" in data["witness"]
        assert data["seed"] == 0 and data["config_hash"]

    def test_censor_check(self, capsys):
        code, data = run(capsys, "couple-check", "--d", "2", "--L", "4", "--runs", "3", "--censor")
        assert code == 0
        assert data["result"]["runs"] == 3

    def test_slice_check(self, capsys):
        code, data = run(capsys, "slice-check", "--d", "4", "--L", "3", "--i", "1", "--min-events", "1000")
        assert code == 0
        assert data["result"]["slices"][0]["events"] == 1000

    def test_missing_config(self, capsys, tmp_path):
        code, _ = run(capsys, "campaign", "--config", str(tmp_path / "absent.cfg"))
        assert code == 1

    def test_invalid_constants(self, capsys, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("d = 2\nLs = 4\nc0 = 1\n", encoding="utf-8")
        code, _ = run(capsys, "campaign", "--config", str(path), "--out", str(tmp_path))
        assert code == 1


class TestCampaignAndFit:
    def test_campaign_then_fit(self, capsys, tmp_path, campaign_file):
        out = tmp_path / "out"
        code, data = run(capsys, "--jobs", "1", "campaign", "--config", str(campaign_file), "--out", str(out))
        assert code == 0
        csv_path = data["result"]["files"]["csv"]
        assert data["seed"] == 7
        assert (out / "tiny.summary.json").exists()

        plot = tmp_path / "tmix.dat"
        code, data = run(capsys, "fit", "--in", csv_path, "--min-samples", "20", "--emit-plot", str(plot))
        assert code == 0
        assert sorted(data["result"]["tmix"]) == ["2", "3", "4"]
        assert data["result"]["fit"]["exponent"] > 0
        lines = plot.read_text(encoding="utf-8").splitlines()
        assert lines[0].endswith(" seed=7")
        assert lines[-1].startswith("4  ")
        assert data["seed"] == "7"

    def test_fit_with_too_few_sizes(self, capsys, tmp_path):
        path = tmp_path / "two.cfg"
        path.write_text("name = two\nd = 2\nLs = 2,3\nreplicas = 20\ntcap = L^4\n", encoding="utf-8")
        code, data = run(capsys, "--jobs", "1", "campaign", "--config", str(path), "--out", str(tmp_path))
        assert code == 0
        code, _ = run(capsys, "fit", "--in", data["result"]["files"]["csv"])
        assert code == 3

    def test_fit_missing_file(self, capsys, tmp_path):
        code, _ = run(capsys, "fit", "--in", str(tmp_path / "none.csv"))
        assert code == 1
