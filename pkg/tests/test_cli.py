import json
import re
import subprocess
import sys

import numpy as np
import pytest

from clinasr import __version__
from clinasr.audio import Waveform, write_wav
from clinasr.checkpoints import TensorFile, read_tensor_file, write_tensor_file
from clinasr.cli import build_parser, main
from clinasr.corpus import read_manifest, write_manifest
from clinasr.demo_data import TERMS
from clinasr.harness import read_report_csv, read_run

VERBS = ["synth", "augment", "snr-estimate", "mfcc", "tsne", "split", "validate", "eval", "score", "report", "ckpt-avg"]


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_verb_and_flag(capsys):
    assert main(["frobnicate"]) == 2
    assert main(["split", "m.jsonl", "--out", "x", "--bogus"]) == 2


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


@pytest.mark.parametrize("verb", VERBS)
def test_help_for_every_verb(verb, capsys):
    assert main([verb, "--help"]) == 0
    text = capsys.readouterr().out
    for flag in ("--seed", "--jobs", "--quiet", "--config"):
        assert flag in text
    sub = build_parser()._subparsers._group_actions[0].choices[verb]
    known = {s for a in sub._actions for s in a.option_strings}
    assert set(re.findall(r"(?<![\w-])--[a-z][a-z-]*", text)) <= known


def test_console_entry_point_runs_as_module():
    proc = subprocess.run([sys.executable, "-m", "clinasr"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_validate_exit_codes(fixture_manifest, tmp_path, capsys):
    path = str(fixture_manifest.root / "manifest.jsonl")
    assert main(["validate", path, "--expect", "5x6x10", "--quiet"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True
    assert main(["validate", path, "--expect", "5x6x11", "--quiet"]) == 1
    out = json.loads(capsys.readouterr().out)
    assert out["passed"] is False and any(not r["passed"] for r in out["rules"])


def test_missing_noise_dir_is_data_error(fixture_manifest, tmp_path, capsys):
    missing = tmp_path / "no-such-noise"
    code = main(["augment", str(fixture_manifest.root / "manifest.jsonl"), "--noise-dir", str(missing), "--out-dir", str(tmp_path / "o"), "--quiet"])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_config_precedence(fixture_manifest, tmp_path, capsys):
    src = str(fixture_manifest.root / "manifest.jsonl")
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# split settings\nfractions = 0.5,0.5,0\nseed = 3\nquiet = true\n", encoding="utf-8")
    assert main(["split", src, "--out", str(tmp_path / "a.jsonl"), "--config", str(cfg)]) == 0
    a = read_manifest(tmp_path / "a.jsonl")
    assert sum(r.split == "train" for r in a.records) == 150
    assert "options" not in capsys.readouterr().err  # quiet came from the file

    # an explicit flag beats the file
    assert main(["split", src, "--out", str(tmp_path / "b.jsonl"), "--config", str(cfg), "--fractions", "1,0,0"]) == 0
    assert all(r.split == "train" for r in read_manifest(tmp_path / "b.jsonl").records)

    # required flags may come from the file too
    cfg.write_text(f"out = {tmp_path / 'c.jsonl'}\n", encoding="utf-8")
    assert main(["split", src, "--config", str(cfg), "--quiet"]) == 0
    assert (tmp_path / "c.jsonl").exists()

    cfg.write_text("perplexity = 5\n", encoding="utf-8")
    assert main(["split", src, "--out", str(tmp_path / "d.jsonl"), "--config", str(cfg)]) == 2
    assert "perplexity" in capsys.readouterr().err
    assert main(["split", src, "--out", str(tmp_path / "d.jsonl"), "--config", str(tmp_path / "absent.cfg")]) == 2


def test_resolved_options_logged(fixture_manifest, tmp_path, capsys):
    src = str(fixture_manifest.root / "manifest.jsonl")
    assert main(["split", src, "--out", str(tmp_path / "a.jsonl"), "--seed", "11"]) == 0
    err = capsys.readouterr().err
    logged = json.loads(err.split("split options ", 1)[1].splitlines()[0])
    assert logged["seed"] == 11 and logged["fractions"] == [0.8, 0.1, 0.1]


def test_snr_estimate_output(tmp_path, capsys):
    rng = np.random.default_rng(0)
    path = tmp_path / "n.wav"
    write_wav(Waveform((0.1 * rng.standard_normal(16000)).astype(np.float32), 16000), path)
    assert main(["snr-estimate", str(path), "--quiet"]) == 0
    line = capsys.readouterr().out.strip()
    name, value = line.split("\t")
    assert name == str(path) and re.fullmatch(r"-?\d+\.\d\d", value)
    assert main(["snr-estimate", str(path), str(tmp_path / "gone.wav"), "--quiet"]) == 1
    captured = capsys.readouterr()
    assert captured.out.count("\n") == 1 and "gone.wav" in captured.err


def test_eval_score_report_pipeline(fixture_manifest, tmp_path, capsys):
    src = str(fixture_manifest.root / "manifest.jsonl")
    lex = tmp_path / "terms.txt"
    lex.write_text("".join(f"{t}\t{c}\n" for t, c in TERMS), encoding="utf-8")
    raw, scored = tmp_path / "raw.jsonl", tmp_path / "scored.jsonl"
    assert main(["eval", src, "--adapter", "corrupt:6", "--out", str(raw), "--jobs", "4", "--quiet"]) == 0
    assert main(["score", str(raw), "--lexicon", str(lex), "--out", str(scored), "--quiet"]) == 0
    run = read_run(scored)
    assert len(run.results) == 300 and run.lexicon_sha256
    assert main(["report", str(scored), "--format", "csv", "--out", str(tmp_path / "r.csv"), "--quiet"]) == 0
    provenance, rows = read_report_csv(tmp_path / "r.csv")
    overall = [r for r in rows if r["axis"] == "overall"][0]
    expected = np.mean([r.score.cer for r in run.results])
    assert abs(overall["cer_mean"] - expected) <= 1e-12
    capsys.readouterr()
    assert main(["report", str(scored), str(scored), "--no-timing", "--quiet"]) == 0
    md = capsys.readouterr().out
    assert md.startswith("# ASR evaluation report") and "RTF" not in md
    assert main(["eval", src, "--adapter", "whisper", "--out", str(raw), "--quiet"]) == 2
    assert main(["report", str(tmp_path / "missing.jsonl"), "--quiet"]) == 1


def test_ckpt_avg(tmp_path, capsys):
    lines = ["path,step,val_loss"]
    for i in range(1, 6):
        write_tensor_file(TensorFile({"w": np.full(3, float(i))}), tmp_path / f"c{i}.tf")
        lines.append(f"c{i}.tf,{i},{10 - i}")
    (tmp_path / "metas.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert main(["ckpt-avg", "--metas", str(tmp_path / "metas.csv"), "--retain", "3", "--average", "2", "--out", str(tmp_path / "a.tf"), "--quiet"]) == 0
    assert np.array_equal(read_tensor_file(tmp_path / "a.tf").entries["w"], np.full(3, 4.5, np.float32))
    assert main(["ckpt-avg", str(tmp_path / "c1.tf"), str(tmp_path / "c3.tf"), "--out", str(tmp_path / "b.tf"), "--quiet"]) == 0
    assert np.array_equal(read_tensor_file(tmp_path / "b.tf").entries["w"], np.full(3, 2.0, np.float32))
    write_tensor_file(TensorFile({"v": np.ones(3)}), tmp_path / "odd.tf")
    assert main(["ckpt-avg", str(tmp_path / "c1.tf"), str(tmp_path / "odd.tf"), "--out", str(tmp_path / "x.tf"), "--quiet"]) == 1
    assert "odd.tf" in capsys.readouterr().err
    assert main(["ckpt-avg", "--out", str(tmp_path / "x.tf"), "--quiet"]) == 1
