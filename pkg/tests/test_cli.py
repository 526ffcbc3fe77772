import json
import subprocess
import sys

import pytest

from mixcl.cli import main


def test_spans(capsys):
    assert main(["spans", "--text", "He was born in Montreal, Quebec, Canada"]) == 0
    assert capsys.readouterr().out.strip() == "4\t9\tplace\tMontreal, Quebec, Canada"


def test_spans_constituent(capsys):
    assert main(["spans", "--kind", "constituent", "--text", "the big dog barked"]) == 0
    assert capsys.readouterr().out.splitlines() == ["0\t3\tNP\tthe big dog", "3\t4\tVP\tbarked"]


def test_preview_mix(capsys):
    argv = ["preview-mix", "--pos", "He was born and raised in Paris", "--neg", "He was born in Montreal, Quebec, Canada", "--strategy", "entity"]
    assert main(argv) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "He was born and raised in [Montreal, Quebec, Canada]"
    assert out[1] == "signs\t1 1 1 1 1 1 0 0 0 0 0"
    assert out[2] == "strategy\tentity"


def test_preview_mix_failure(capsys):
    assert main(["preview-mix", "--pos", "Paris", "--neg", "it was fine", "--strategy", "entity"]) == 1


def test_validate_data(tmp_path, capsys):
    good = tmp_path / "good.jsonl"
    good.write_text(json.dumps({"topic": "t", "turns": [{"speaker": "a", "text": "hi", "response": "yo"}]}) + "\n")
    assert main(["validate-data", "--dialogues", str(good)]) == 0
    assert "violations\t0" in capsys.readouterr().out
    bad = tmp_path / "bad.jsonl"
    bad.write_text(
        "{oops\n"
        + json.dumps({"topic": "t", "turns": [{"speaker": "a", "text": "hi", "response": "yo", "positives": ["k"], "candidates": ["k", "j"], "gold_candidate": 1}]})
        + "\n"
    )
    assert main(["validate-data", "--dialogues", str(bad)]) == 2
    out = capsys.readouterr().out
    assert "bad.jsonl:1" in out and "bad.jsonl:2" in out and "violations\t2" in out


def test_label_report(tmp_path, capsys):
    path = tmp_path / "labels.jsonl"
    path.write_text("\n".join(json.dumps({"example_id": str(i), "category": c}) for i, c in enumerate(["other_ok", "intrinsic_entity"])))
    assert main(["label-report", "--labels", str(path)]) == 0
    assert "intrinsic (total)" in capsys.readouterr().out


def test_missing_input_is_config_error(tmp_path):
    assert main(["index", "--corpus", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "i.idx")]) == 3
    bad = tmp_path / "c.cfg"
    bad.write_text("colour = blue\n")
    assert main(["index", "--config", str(bad), "--out", str(tmp_path / "i.idx")]) == 2


def test_index_and_mine_flags(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--entities", "4", "--dialogues", "30"]) == 0
    assert main(["index", "--corpus", str(tmp_path / "corpus.jsonl"), "--out", str(tmp_path / "i.idx")]) == 0
    argv = ["mine", "--dialogues", str(tmp_path / "train.jsonl"), "--index", str(tmp_path / "i.idx"), "--out", str(tmp_path / "n.jsonl"), "--beta-neg", "0.5", "--m", "3", "--seed", "13"]
    assert main(argv) == 0
    lines = (tmp_path / "n.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["provenance"]["seed"] == 13
    assert all(len(json.loads(l)["negatives"]) == 3 for l in lines[1:])


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "mixcl.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("index", "mine", "train", "decode", "eval", "preview-mix", "spans", "synth", "ablate", "validate-data"):
        assert cmd in res.stdout
