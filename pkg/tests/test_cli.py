import csv
import io
import json

import pytest

from tactile_filter.cli import CliError, main, parse_args, parse_pose, parse_seeds, tree_digests

TINY_GRID = ["--grid", "custom", "--x-values=-4,0,4", "--y-values", "0,4", "--theta-values=-30,0,30"]


def cli(wd, *argv):
    return main(["--workdir", str(wd), *argv])


@pytest.fixture
def tiny(tmp_path):
    assert cli(tmp_path, "bank", "--glyphs", "A,E,L", *TINY_GRID) == 0
    return tmp_path


def json_files(d):
    return sorted(p.name for p in d.glob("*.json") if p.name != "run_manifest.json")


def test_parse_helpers():
    assert parse_seeds("3") == [3]
    assert parse_seeds("0-4") == [0, 1, 2, 3, 4]
    assert parse_seeds("1,4,7") == [1, 4, 7]
    assert parse_seeds("0-1,5") == [0, 1, 5]
    with pytest.raises(CliError):
        parse_seeds("x")
    assert parse_pose("4,-8,30").as_tuple() == (4.0, -8.0, 30.0)
    with pytest.raises(CliError):
        parse_pose("1,2")


def test_defaults_match_filter_hyperparameters():
    a = parse_args(["run", "--category", "A"])
    assert (a.K, a.n_max, a.delta_prob) == (100, 10, 0.95)
    assert a.resample == "systematic" and a.action_frame == "world"


def test_shapes_glyph_sets(tmp_path):
    assert cli(tmp_path, "shapes", "glyphs", "--set", "A-L", "--scale", "large", "--out", "g") == 0
    assert len(json_files(tmp_path / "g")) == 12
    assert cli(tmp_path, "shapes", "glyphs", "--set", "MLTF", "--scale", "32x28", "--out", "m") == 0
    assert json_files(tmp_path / "m") == ["F.json", "L.json", "M.json", "T.json"]
    assert (tmp_path / "g" / "run_manifest.json").exists()


def test_maze_is_reproducible(tmp_path):
    assert cli(tmp_path, "shapes", "maze", "--seed", "7", "--out", "a") == 0
    assert cli(tmp_path, "shapes", "maze", "--seed", "7", "--out", "b") == 0
    assert tree_digests(tmp_path / "a") == tree_digests(tmp_path / "b")
    assert cli(tmp_path, "shapes", "maze", "--seed", "8", "--out", "c") == 0
    assert tree_digests(tmp_path / "a") != tree_digests(tmp_path / "c")


def test_bad_glyph_fails(tmp_path, capsys):
    assert cli(tmp_path, "shapes", "glyphs", "--set", "A,?") == 1
    captured = capsys.readouterr()
    assert captured.err and not captured.out


def test_small_bank_entries(tmp_path, capsys):
    assert cli(tmp_path, "bank") == 0
    assert "2100 entries" in capsys.readouterr().out
    man = json.loads((tmp_path / "bank" / "manifest.json").read_text())
    assert man["entries"] == 2100
    first = tree_digests(tmp_path / "bank")
    assert cli(tmp_path, "bank") == 0
    assert tree_digests(tmp_path / "bank") == first


def test_bank_mismatch_needs_force(tiny, capsys):
    assert cli(tiny, "bank", "--glyphs", "A,E,L") == 1
    assert "--force" in capsys.readouterr().err
    assert cli(tiny, "bank", "--glyphs", "A,E,L", "--grid", "custom", "--x-values", "0", "--y-values", "0", "--theta-values", "0", "--force") == 0
    assert json.loads((tiny / "bank" / "manifest.json").read_text())["entries"] == 3


def test_missing_bank_is_an_error(tmp_path, capsys):
    assert cli(tmp_path, "run", "--category", "A") == 1
    assert "no peg image bank" in capsys.readouterr().err


def test_run_is_byte_identical(tiny):
    args = ("run", "--category", "E", "--pose", "0,4,30", "--seed", "3", "--noise-flip", "0.05")
    assert cli(tiny, *args, "--out", "r1") == 0
    assert cli(tiny, *args, "--out", "r2") == 0
    assert (tiny / "r1" / "transcript.jsonl").read_bytes() == (tiny / "r2" / "transcript.jsonl").read_bytes()
    res = json.loads((tiny / "r1" / "result.json").read_text())
    assert res["category"] == "E"


def test_run_rejects_off_grid_pose(tiny, capsys):
    assert cli(tiny, "run", "--category", "E", "--pose", "1,0,0") == 1
    assert "pose grid" in capsys.readouterr().err


def test_experiment_and_report_replay(tiny, capsys):
    assert cli(tiny, "experiment", "--seeds", "0-1", "--subsample", "0.5", "--baselines", "--transcripts") == 0
    out = tiny / "experiment"
    for name in ("report.json", "accuracy.csv", "entropy.csv", "run_manifest.json"):
        assert (out / name).exists()
    assert list((out / "transcripts").glob("*.jsonl"))
    man = json.loads((out / "run_manifest.json").read_text())
    assert man["seeds"] == [0, 1] and man["command"] == "experiment"
    assert any(k.startswith("bank/") for k in man["inputs"])
    capsys.readouterr()
    assert cli(tiny, "report", "experiment/run_manifest.json") == 0
    assert "0 mismatched" in capsys.readouterr().out
    assert not list(tiny.glob(".replay-*"))


def test_report_detects_changed_outputs(tiny, capsys):
    assert cli(tiny, "run", "--category", "A", "--out", "r") == 0
    man_path = tiny / "r" / "run_manifest.json"
    man = json.loads(man_path.read_text())
    man["outputs"]["result.json"] = "0" * 64
    man_path.write_text(json.dumps(man))
    assert cli(tiny, "report", "r/run_manifest.json") == 1
    assert "MISMATCH result.json" in capsys.readouterr().err


def test_report_detects_changed_inputs(tiny, capsys):
    assert cli(tiny, "run", "--category", "A", "--out", "r") == 0
    entry = tiny / "bank" / "entry_000000.tfp"
    entry.write_bytes(entry.read_bytes() + b"\1")
    assert cli(tiny, "report", "r/run_manifest.json") == 1
    assert "changed" in capsys.readouterr().err


def test_config_file_with_flag_override(tiny):
    (tiny / "conf.json").write_text(json.dumps({"K": 7, "n_max": 3}))
    a = parse_args(["--workdir", str(tiny), "--config", "conf.json", "run", "--category", "A", "--K", "9"])
    assert a.K == 9 and a.n_max == 3
    assert cli(tiny, "--config", "conf.json", "run", "--category", "A", "--out", "c") == 0
    man = json.loads((tiny / "c" / "run_manifest.json").read_text())
    assert man["config"]["K"] == 7 and man["config"]["n_max"] == 3
    assert len(json.loads((tiny / "c" / "transcript.jsonl").read_text().splitlines()[0])["particles"]) == 7


def test_bad_config_is_an_error(tiny, capsys):
    (tiny / "bad.json").write_text(json.dumps({"particles": 5}))
    assert cli(tiny, "--config", "bad.json", "run", "--category", "A") == 1
    (tiny / "broken.json").write_text("{")
    assert cli(tiny, "--config", "broken.json", "run", "--category", "A") == 1
    assert "config" in capsys.readouterr().err


def test_ablate_csv_schema(tiny):
    assert cli(tiny, "ablate", "--seeds", "0-2", "--subsample", "0.5", "--bootstrap", "200") == 0
    rows = list(csv.reader(io.StringIO((tiny / "ablate" / "ablation.csv").read_text())))
    assert rows[0] == ["n", "informed", "random", "diff", "ci_low", "ci_high"]
    assert [r[0] for r in rows[1:]] == ["1", "3", "5", "10", "touches"]
    for name in ("ablation.json", "informed_report.json", "random_report.json", "run_manifest.json"):
        assert (tiny / "ablate" / name).exists()


def test_jobs_do_not_change_outputs(tiny):
    assert cli(tiny, "experiment", "--seeds", "0", "--subsample", "0.5", "--out", "j1") == 0
    assert cli(tiny, "--jobs", "2", "experiment", "--seeds", "0", "--subsample", "0.5", "--out", "j2") == 0
    assert (tiny / "j1" / "report.json").read_bytes() == (tiny / "j2" / "report.json").read_bytes()
