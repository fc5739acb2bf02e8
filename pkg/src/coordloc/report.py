"""Training logs -> superiority table, direction summary and R^2 figures."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import stats
from .plotting import plot_r2_curves
from .train import LogRow, arm_name, curves, final_scores

CONTROL, STUDY = "coordconv", "intensity_weighted"
MODEL_NAMES = {("image", "full"): "LakshyaNet", ("image", "reduced"): "R.P. LakshyaNet",
               ("ecg", "full"): "NimeshaNet", ("ecg", "reduced"): "R.P. NimeshaNet"}


class IncompleteLogError(ValueError):
    pass


def variants_in(rows: list[LogRow]) -> list[str]:
    seen = []
    for r in rows:
        v = r.arm.split("/")[0]
        if v not in seen:
            seen.append(v)
    return seen


def check_complete(rows: list[LogRow], variant: str, k_folds: int, epochs: int):
    for enc in (CONTROL, STUDY):
        c = curves(rows, arm_name(variant, enc), "test_r2")
        if sorted(c) != list(range(k_folds)):
            raise IncompleteLogError(f"{arm_name(variant, enc)}: folds {sorted(c)} of {k_folds} present")
        short = [f for f, v in c.items() if len(v) != epochs]
        if short:
            raise IncompleteLogError(f"{arm_name(variant, enc)}: folds {short} lack {epochs} epochs")


def metric_vectors(rows: list[LogRow], variant: str, lam: float = stats.DEFAULT_LAMBDA) -> dict:
    """``metric -> (study, control)`` per-fold vectors for one model variant."""
    out = {}
    arms = {enc: arm_name(variant, enc) for enc in (CONTROL, STUDY)}
    inst = {enc: np.array([stats.instability_score(c, lam) for _, c in sorted(curves(rows, a, "test_r2").items())])
            for enc, a in arms.items()}
    out["Instability"] = (inst[STUDY], inst[CONTROL])
    out["Test R²"] = (final_scores(rows, arms[STUDY], "test_r2"), final_scores(rows, arms[CONTROL], "test_r2"))
    out["Train R²"] = (final_scores(rows, arms[STUDY], "train_r2"), final_scores(rows, arms[CONTROL], "train_r2"))
    return out


def direction_summary(rows: list[LogRow], task: str) -> list[str]:
    lines = []
    for v in variants_in(rows):
        s = final_scores(rows, arm_name(v, STUDY)).mean()
        c = final_scores(rows, arm_name(v, CONTROL)).mean()
        verdict = "REPLICATED" if s >= c else "NOT REPLICATED"
        lines.append(f"{MODEL_NAMES[(task, v)]}: mean final test R² intensity_weighted {s:.5f} vs "
                     f"coordconv {c:.5f} -> direction {verdict}")
    return lines


def build_report(rows: list[LogRow], task: str, k_folds: int, epochs: int, B: int = stats.DEFAULT_B,
                 seed: int = 0, lam: float = stats.DEFAULT_LAMBDA) -> list[stats.ReportRow]:
    if epochs < 3:
        raise ValueError(f"the instability score needs at least 3 epochs per fold, got {epochs}")
    arms = {}
    for v in variants_in(rows):
        check_complete(rows, v, k_folds, epochs)
        arms[MODEL_NAMES[(task, v)]] = metric_vectors(rows, v, lam)
    if not arms:
        raise IncompleteLogError("log contains no arms")
    return stats.superiority_report(arms, B, seed)


def write_report(rows: list[LogRow], task: str, out_dir, k_folds: int = 5, epochs: int = 15,
                 B: int = stats.DEFAULT_B, seed: int = 0, lam: float = stats.DEFAULT_LAMBDA) -> dict:
    """Write ``report.csv``, ``report.txt`` and ``r2_curves_<variant>.svg`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rep = build_report(rows, task, k_folds, epochs, B, seed, lam)
    summary = direction_summary(rows, task)
    (out_dir / "report.csv").write_text(stats.report_csv(rep))
    header = ("Superiority of intensity-weighted coordinate channels (study) over CoordConv (control); "
              f"bootstrap B={B}, seed={seed}\n\n")
    text = header + "Direction (mean final-epoch test R²):\n" + "".join(f"  {s}\n" for s in summary)
    text += "\n" + stats.report_text(rep)
    (out_dir / "report.txt").write_text(text)
    figures = []
    for v in variants_in(rows):
        by_arm = {}
        for enc in (CONTROL, STUDY):
            a = arm_name(v, enc)
            by_arm[a] = {split: np.stack([c for _, c in sorted(curves(rows, a, f"{split}_r2").items())])
                         for split in ("train", "test")}
        path = out_dir / f"r2_curves_{v}.svg"
        plot_r2_curves(by_arm, path, title=f"{MODEL_NAMES[(task, v)]}: mean and range over folds")
        figures.append(path.name)
    (out_dir / "report.json").write_text(json.dumps(dict(task=task, B=B, seed=seed, lam=lam,
                                                         direction=summary, figures=figures),
                                                    indent=2, sort_keys=True) + "\n")
    return dict(rows=rep, summary=summary, figures=figures)
