import csv

import pytest

from daomtl import cli, verify
from daomtl.checkpoint import read_checkpoint

TINY = "vocab_size = 256\nd_embed = 8\nd_hidden = 8\nd_mid = 4\nepochs = 1\nsynth_n = 40\nwarmup_steps = 2\n"


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(TINY)
    return p


def test_gen_data_train_eval(tmp_path, cfg_file, capsys):
    data = tmp_path / "d.jsonl"
    assert cli.main(["gen-data", "--n", "50", "--mix", "0.2", "0.2", "0.2", "0.2", "0.2", "--noise", "0.1",
                     "--seed", "1", "--out", str(data)]) == 0
    assert len(data.read_text().splitlines()) == 50
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_file), "--mode", "constant", "--wc", "0.2", "--lora-rank", "2",
                     "--data", str(data), "--out", str(out)]) == 0
    meta, _ = read_checkpoint(out / "checkpoint.bin")
    assert meta["config"]["mode"] == "constant" and meta["config"]["w_c"] == 0.2
    assert meta["config"]["lora_rank"] == 2
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint.bin"), "--data", str(data)]) == 0
    lines = dict(l.split("=", 1) for l in capsys.readouterr().out.splitlines())
    assert lines["weighted_recall"] == lines["acc"]


def test_single_task_mode_flag(tmp_path, cfg_file):
    assert cli.main(["train", "--config", str(cfg_file), "--mode", "single-task", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "steps.csv").open()))
    assert {r["w_c"] for r in rows} == {"0.0"}


def test_sweep_command(tmp_path, cfg_file, capsys):
    assert cli.main(["sweep", "--config", str(cfg_file), "--wc", "0.05,0.30", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "mode,w_c,mse,acc" and len(out) == 4 and out[-1].startswith("dao,")


@pytest.mark.parametrize("argv", [[], ["train", "--bogus"], ["gen-data", "--n", "x", "--out", "f"],
                                  ["sweep", "--wc", "a,b"]])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 1


def test_bad_config_exits_1(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("mode = nonsense\n")
    assert cli.main(["train", "--config", str(p), "--out", str(tmp_path)]) == 1


def test_data_errors_exit_2(tmp_path, cfg_file):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"text": "a", "score": 3}\n')
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.bin"), "--data", str(bad)]) == 2
    assert cli.main(["train", "--config", str(cfg_file), "--data", str(bad), "--out", str(tmp_path)]) == 2
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"nope")
    assert cli.main(["eval", "--checkpoint", str(junk), "--data", str(bad)]) == 2


def test_numeric_failure_exits_3(tmp_path, monkeypatch):
    from daomtl.errors import NumericError

    def boom(*a, **k):
        raise NumericError("diverged")

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["train", "--out", str(tmp_path)]) == 3


def test_verify_exit_status_follows_checks(monkeypatch):
    ok = verify.CheckResult("a", True, "")
    monkeypatch.setattr(verify, "run_all", lambda: [ok])
    assert cli.main(["verify"]) == 0
    monkeypatch.setattr(verify, "run_all", lambda: [ok, verify.CheckResult("b", False, "")])
    assert cli.main(["verify"]) != 0
