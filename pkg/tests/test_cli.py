import json
import xml.etree.ElementTree as ET

import pytest

from coordloc.cli import EXIT_DATA, EXIT_INCOMPLETE, EXIT_OK, EXIT_USAGE, build_parser, main
from coordloc.report import IncompleteLogError, build_report, write_report
from coordloc.train import LogRow, read_log

ARMS = ["full/coordconv", "full/intensity_weighted", "reduced/coordconv", "reduced/intensity_weighted"]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    assert main(["synth", "--task", "ecg", "--n-base", "10", "--augment", "1", "--seed", "4",
                 "--out", str(root / "data")]) == EXIT_OK
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(dict(dataset=str(root / "data"), epochs=3, k_folds=3, batch_size=8,
                                   save_checkpoints=False)))
    assert main(["train", str(cfg), "--out", str(root / "run")]) == EXIT_OK
    return root


def synthetic_rows(k=3, epochs=4):
    rows = []
    for a, arm in enumerate(ARMS):
        for f in range(k):
            for e in range(1, epochs + 1):
                rows.append(LogRow(arm, f, e, 0.5 + 0.1 * e - 0.01 * a, 0.4 + 0.1 * e + 0.02 * f, 1.0 / e))
    return rows


def test_help_for_every_command(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        assert main([name, "--help"]) == EXIT_OK
        text = capsys.readouterr().out
        for act in p._actions:
            for opt in act.option_strings:
                assert opt in text, (name, opt)


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["synth", "--task", "audio", "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert main(["synth", "--task", "ecg", "--n-base", "2", "--out", str(tmp_path / "x")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(batch_size=0, epochs=0)))
    assert main(["train", str(bad), "--out", str(tmp_path / "r")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "batch_size" in err and "epochs" in err


def test_synth_counts_refusal_and_hash(tmp_path, capsys):
    args = ["synth", "--task", "ecg", "--n-base", "6", "--augment", "2", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert "wrote 18 samples" in capsys.readouterr().out
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_USAGE
    assert main(args + ["--out", str(tmp_path / "a"), "--force"]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_ingest_errors(tmp_path):
    assert main(["ingest", "vfdb", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    (tmp_path / "empty").mkdir()
    assert main(["ingest", "sipakmed", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_train_logs_all_arms_and_resumes(run, capsys):
    rows = read_log(run / "run" / "train_log.csv")
    assert [r.arm for r in rows[::9]] == ARMS and len(rows) == 4 * 3 * 3
    before = (run / "run" / "train_log.csv").read_bytes()
    assert main(["train", str(run / "cfg.json"), "--out", str(run / "run")]) == EXIT_OK
    assert (run / "run" / "train_log.csv").read_bytes() == before
    # a different config into the same directory needs --force
    assert main(["train", str(run / "cfg.json"), "--out", str(run / "run"), "--set", "epochs=2"]) == EXIT_USAGE


def test_arms_filter_and_force(run, tmp_path):
    out = tmp_path / "r"
    argv = ["train", str(run / "cfg.json"), "--out", str(out), "--arms", "coordconv,intensity_weighted,reduced",
            "--set", "epochs=1"]
    assert main(argv) == EXIT_OK
    assert {r.arm for r in read_log(out / "train_log.csv")} == {"reduced/coordconv", "reduced/intensity_weighted"}
    assert main(["train", str(run / "cfg.json"), "--out", str(out), "--arms", "coordconv", "--set", "epochs=1",
                 "--force"]) == EXIT_OK
    assert {r.arm for r in read_log(out / "train_log.csv")} == {"full/coordconv", "reduced/coordconv"}
    assert main(["train", str(run / "cfg.json"), "--out", str(out), "--arms", "resnet"]) == EXIT_USAGE
    assert main(["train", str(run / "cfg.json"), "--out", str(tmp_path / "z"),
                 "--dataset", str(tmp_path / "nope")]) == EXIT_DATA


def test_report_from_run(run, tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["report", str(run / "run"), "--out", str(out), "--B", "2000"]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "NimeshaNet" in printed and "R.P. NimeshaNet" in printed
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "model,metric,mean_diff,ci_low,ci_high,p_one_sided,conclusion"
    assert [l.split(",")[:2] for l in lines[1:]] == [
        [m, k] for m in ("NimeshaNet", "R.P. NimeshaNet") for k in ("Instability", "Test R²", "Train R²")]
    meta = json.loads((out / "report.json").read_text())
    assert meta["task"] == "ecg" and meta["figures"] == ["r2_curves_full.svg", "r2_curves_reduced.svg"]
    out2 = tmp_path / "rep2"
    assert main(["report", str(run / "run" / "train_log.csv"), "--out", str(out2), "--B", "2000"]) == EXIT_OK
    for f in ("report.csv", "report.txt", "report.json", "r2_curves_full.svg", "r2_curves_reduced.svg"):
        assert (out / f).read_bytes() == (out2 / f).read_bytes(), f


def test_report_incomplete_and_missing(run, tmp_path):
    log = tmp_path / "cut" / "train_log.csv"
    log.parent.mkdir()
    text = (run / "run" / "train_log.csv").read_text().splitlines(keepends=True)
    log.write_text("".join(text[:-1]))
    assert main(["report", str(log), "--task", "ecg", "--k-folds", "3", "--epochs", "3",
                 "--out", str(tmp_path / "o")]) == EXIT_INCOMPLETE
    assert main(["report", str(tmp_path / "nothing"), "--task", "ecg"]) == EXIT_INCOMPLETE
    assert main(["report", str(log), "--out", str(tmp_path / "o")]) == EXIT_USAGE  # task unknown
    assert main(["report", str(run / "run"), "--epochs", "2", "--k-folds", "3",
                 "--out", str(tmp_path / "o2")]) == EXIT_DATA
    (tmp_path / "junk.csv").write_text("x,y\n1,2\n")
    assert main(["report", str(tmp_path / "junk.csv"), "--task", "ecg"]) == EXIT_DATA


def test_svg_has_one_line_per_arm_and_split(tmp_path):
    write_report(synthetic_rows(), "image", tmp_path, k_folds=3, epochs=4, B=500)
    for v in ("full", "reduced"):
        root = ET.parse(tmp_path / f"r2_curves_{v}.svg").getroot()
        ids = [el.get("id") for el in root.iter() if el.get("id")]
        want = {f"{v}/{enc}:{split}" for enc in ("coordconv", "intensity_weighted") for split in ("train", "test")}
        assert want <= set(ids)
        for gid in want:
            grp = next(el for el in root.iter() if el.get("id") == gid)
            assert len([p for p in grp.iter() if p.tag.endswith("path")]) == 1


def test_svg_bytes_stable(tmp_path):
    write_report(synthetic_rows(), "image", tmp_path / "a", k_folds=3, epochs=4, B=500)
    write_report(synthetic_rows(), "image", tmp_path / "b", k_folds=3, epochs=4, B=500)
    for f in ("r2_curves_full.svg", "r2_curves_reduced.svg", "report.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_build_report_checks_completeness():
    rows = synthetic_rows()
    with pytest.raises(IncompleteLogError):
        build_report(rows, "image", k_folds=4, epochs=4, B=100)
    with pytest.raises(IncompleteLogError):
        build_report([r for r in rows if not (r.fold == 1 and r.epoch == 4)], "image", 3, 4, B=100)
    with pytest.raises(IncompleteLogError):
        build_report([], "image", 3, 4, B=100)


def test_gradcheck_ops_only(capsys):
    assert main(["gradcheck", "--ops-only"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "conv2d" in out
