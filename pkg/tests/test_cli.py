import csv
import json

import pytest

from uwbdess.cli import derive_seed, main
from uwbdess.dataset import load_csv

SMALL = {"scenario": {"packets_per_cell": 4}}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def test_simulate_counts(tmp_path, capsys):
    assert main(["simulate", "--preset", "hallway_agc_off", "--seed", "1", "-o", str(tmp_path)]) == 0
    path = tmp_path / "hallway_agc_off_seed1.csv"
    with open(path) as fh:
        assert sum(1 for _ in fh) == 13 * 68 * 16 + 1
    assert "14144 records" in capsys.readouterr().out


def test_simulate_two_agc_states(tmp_path, small_config):
    for name in ("hallway_agc_on", "hallway_agc_off"):
        assert main(["simulate", "--preset", name, "--config", small_config, "-o", str(tmp_path)]) == 0
    on = load_csv(tmp_path / "hallway_agc_on_seed0.csv")
    off = load_csv(tmp_path / "hallway_agc_off_seed0.csv")
    assert on.agc_on and not off.agc_on


def test_unknown_preset(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--preset", "attic", "-o", str(tmp_path)])
    assert exc.value.code != 0
    assert "hallway_agc_off" in capsys.readouterr().err


def test_unknown_preset_in_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"preset": "attic"}')
    assert main(["simulate", "--config", str(cfg), "-o", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "hall_agc_off" in err and str(cfg) in err


def test_flags_override_config(tmp_path, small_config):
    cfg = json.loads(open(small_config).read())
    cfg["seed"] = 5
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(path), "--seed", "6", "-o", str(tmp_path)]) == 0
    assert (tmp_path / "hallway_agc_off_seed6.csv").exists()


def test_ingest(tmp_path, small_config, capsys):
    main(["simulate", "--config", small_config, "-o", str(tmp_path)])
    src = tmp_path / "hallway_agc_off_seed0.csv"
    assert main(["ingest", str(src), "-o", str(tmp_path / "n")]) == 0
    assert (tmp_path / "n" / "hallway_agc_off_seed0.normalized.csv").read_bytes() == src.read_bytes()
    assert "min gain per distance" in capsys.readouterr().out


def test_ingest_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("env_id,rx_id\nx,0\n")
    assert main(["ingest", str(bad), "-o", str(tmp_path)]) == 1
    assert "missing column" in capsys.readouterr().err


def test_agc_study_report(tmp_path, small_config):
    assert main(["agc-study", "--config", small_config, "--seed", "42", "-o", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "agc_study.json").read_text())
    keys = {(c["agc"], c["gain_policy"]) for c in report["cells"]}
    assert keys == {(a, p) for a in ("on", "off") for p in ("max_gain", "all_gains")}


def test_transfer_outputs(tmp_path, small_config):
    assert main(["transfer", "--config", small_config, "-o", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "transfer.json").read_text())
    assert data["envs"] == ["hall", "hallway"] and len(data["cells"]) == 4
    rows = list(csv.reader(open(tmp_path / "transfer.csv")))
    assert rows[0] == ["train_env", "test_env", "distance_m", "mae_m"] and len(rows) == 1 + 4 * 13
    assert "train \\ test" in (tmp_path / "transfer.txt").read_text()


def test_transfer_from_csv(tmp_path, small_config):
    for name in ("hall_agc_off", "hallway_agc_off"):
        main(["simulate", "--preset", name, "--config", small_config, "-o", str(tmp_path)])
    files = [str(tmp_path / f"{n}_seed0.csv") for n in ("hall_agc_off", "hallway_agc_off")]
    assert main(["transfer", "--csv", *files, "--no-gain", "-o", str(tmp_path / "t")]) == 0
    assert json.loads((tmp_path / "t" / "transfer.json").read_text())["features"] == "cir32_nogain"
    assert main(["transfer", "--csv", files[0], files[0], "-o", str(tmp_path / "t")]) == 1


def test_transfer_loo(tmp_path, small_config):
    assert main(["transfer", "--loo", "--config", small_config, "-o", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "loo.json").read_text())
    for env in ("hall", "hallway"):
        assert data["environments"][env]["loo"]["averaged_mae"] > data["environments"][env]["split"]["averaged_mae"]


def test_protocol_bench(tmp_path, capsys):
    assert main(["protocol-bench", "-n", "30", "--seed", "3", "-o", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "protocol_trials.csv")))
    assert len(rows) == 31 and all(len(r) == 6 for r in rows)
    summary = json.loads((tmp_path / "protocol_summary.json").read_text())
    assert summary["n_trials"] == 30
    assert "baseline" in capsys.readouterr().out


def test_protocol_bench_rejects_zero_trials(tmp_path, capsys):
    assert main(["protocol-bench", "-n", "0", "-o", str(tmp_path)]) == 1
    assert "trials" in capsys.readouterr().err


def test_protocol_bench_rejects_agc_on(tmp_path):
    assert main(["protocol-bench", "-n", "5", "--test-preset", "hall_agc_on", "-o", str(tmp_path)]) == 1


def test_report(tmp_path, capsys):
    assert main(["report", "-o", str(tmp_path)]) == 1
    main(["protocol-bench", "-n", "10", "-o", str(tmp_path)])
    assert main(["report", "-o", str(tmp_path)]) == 0
    assert "protocol_summary.json" in (tmp_path / "report.txt").read_text()


def test_global_flags_before_subcommand(tmp_path, small_config):
    assert main(["--config", small_config, "--seed", "2", "--out", str(tmp_path), "simulate"]) == 0
    assert (tmp_path / "hallway_agc_off_seed2.csv").exists()


def test_derive_seed():
    assert derive_seed(1, 0) == derive_seed(1, 0)
    assert len({derive_seed(1, 0), derive_seed(1, 1), derive_seed(2, 0)}) == 3
