import json
from pathlib import Path

from personasim.cli import main

DATA = Path(__file__).parent / "data"


def test_cli_ngram(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("in a small town in ohio\n")
    code = main(["ngram", "--corpus", str(corpus), "--n", "3", "--k", "2",
                 "--phrase", "small town"])
    out = capsys.readouterr().out
    assert code == 0
    assert "a small town" in out


def test_cli_full_pipeline(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("E2E_STORAGE", str(tmp_path / "run"))
    config = str(DATA / "e2e_config.yaml")
    roster = str(DATA / "e2e_roster.csv")
    assert main(["generate", "--config", config, "--count", "4"]) == 0
    assert main(["annotate", "--config", config]) == 0
    assert main(["match", "--config", config, "--roster", roster]) == 0
    assert main(["survey", "--config", config]) == 0
    assert main(["evaluate", "--config", config]) == 0
    out = capsys.readouterr().out
    assert "atp_w110" in out
    assert main(["report", "--config", config]) == 0


def test_cli_error_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("E2E_STORAGE", str(tmp_path / "run"))
    config = str(DATA / "e2e_config.yaml")
    code = main(["annotate", "--config", config])  # generate never ran
    assert code == 1
    assert "stage 'annotate'" in capsys.readouterr().err


def test_cli_missing_config(capsys, monkeypatch):
    monkeypatch.delenv("PERSONASIM_CONFIG", raising=False)
    assert main(["generate"]) == 1
    assert "config" in capsys.readouterr().err


def test_cli_exports(tmp_path, capsys):
    refs = tmp_path / "refs.json"
    banks = tmp_path / "banks.json"
    sets_path = tmp_path / "sets.json"
    code = main([
        "report", "--export-human-refs", str(refs),
        "--export-banks", str(banks), "--export-option-sets", str(sets_path),
    ])
    assert code == 0
    data = json.loads(refs.read_text())
    assert any(r["delta"] == 1.630 for r in data["rows"])
    banks_data = json.loads(banks.read_text())
    assert len(banks_data["subversion"]) == 24
    sets_data = json.loads(sets_path.read_text())
    assert len(sets_data) == 6


def test_cli_human_only_evaluate(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("E2E_STORAGE", str(tmp_path / "run"))
    config = str(DATA / "e2e_config.yaml")
    assert main(["evaluate", "--config", config, "--human-only"]) == 0
    out = capsys.readouterr().out
    assert "1.630" in out and "12.400" in out
