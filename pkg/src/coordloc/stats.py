"""Bootstrap mean-difference superiority tests and training-instability scores."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

DEFAULT_B = 20_000
DEFAULT_LAMBDA = 5.0
ALPHA = 0.05
CHUNK = 4096


@dataclass
class BootstrapResult:
    mean_diff: float
    ci_low: float
    ci_high: float
    p_one_sided: float
    below_resolution: bool  # no resample opposed the hypothesised direction
    direction: str  # "greater" (study > control) or "less"
    B: int

    def p_text(self) -> str:
        if self.below_resolution:
            return f"<{_resolution(self.B)}"
        return f"{self.p_one_sided:.5f}"


def _resolution(B: int) -> str:
    # 1/(B+1) rounded to one significant figure: B=20000 -> 0.00005
    r = 1.0 / (B + 1)
    exp = int(np.floor(np.log10(r)))
    mant = round(r / 10 ** exp)
    if mant == 10:
        mant, exp = 1, exp + 1
    return np.format_float_positional(mant * 10.0 ** exp, trim="-")


def bootstrap_diffs(study, control, B: int = DEFAULT_B, seed: int = 0) -> np.ndarray:
    """``B`` resampled differences ``mean(study*) - mean(control*)``."""
    s = np.asarray(study, dtype=np.float64)
    c = np.asarray(control, dtype=np.float64)
    if s.size == 0 or c.size == 0:
        raise ValueError("both groups must be non-empty")
    rng = np.random.default_rng(seed)
    diffs = np.empty(B)
    for lo in range(0, B, CHUNK):
        hi = min(lo + CHUNK, B)
        si = rng.integers(0, s.size, size=(hi - lo, s.size))
        ci = rng.integers(0, c.size, size=(hi - lo, c.size))
        diffs[lo:hi] = s[si].mean(axis=1) - c[ci].mean(axis=1)
    return diffs


def bootstrap_mean_diff(study, control, B: int = DEFAULT_B, seed: int = 0,
                        direction: str = "greater") -> BootstrapResult:
    """Resample each group with replacement ``B`` times.

    ``p`` counts resampled differences on the wrong side of zero (``<= 0``
    for ``direction="greater"``), add-one corrected.
    """
    if direction not in ("greater", "less"):
        raise ValueError("direction must be 'greater' or 'less'")
    diffs = bootstrap_diffs(study, control, B, seed)
    observed = float(np.mean(np.asarray(study, dtype=np.float64)) - np.mean(np.asarray(control, dtype=np.float64)))
    lo_ci, hi_ci = np.percentile(diffs, [2.5, 97.5])
    opposing = int(np.count_nonzero(diffs <= 0 if direction == "greater" else diffs >= 0))
    p = (opposing + 1) / (B + 1)
    return BootstrapResult(observed, float(lo_ci), float(hi_ci), float(p), opposing == 0, direction, B)


def second_difference_matrix(n: int) -> np.ndarray:
    d = np.zeros((n - 2, n))
    for i in range(n - 2):
        d[i, i:i + 3] = (1.0, -2.0, 1.0)
    return d


def _penalty_bands(n: int, lam: float) -> np.ndarray:
    # I + lam D'D is pentadiagonal; upper bands in solveh_banded layout
    main = np.full(n, 6.0)
    main[[0, -1]] = 1.0
    main[[1, -2]] = 5.0
    off1 = np.full(n - 1, -4.0)
    off1[[0, -1]] = -2.0
    off2 = np.ones(n - 2)
    if n == 3:
        main[:] = (1.0, 4.0, 1.0)
        off1[:] = (-2.0, -2.0)
    ab = np.zeros((3, n))
    ab[2] = 1.0 + lam * main
    ab[1, 1:] = lam * off1
    ab[0, 2:] = lam * off2
    return ab


def _check_curve(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.size < 3:
        raise ValueError("need at least 3 points")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite input")
    return y


def whittaker_smooth(y, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Solve ``(I + lam D'D) z = y`` with D the second-difference operator."""
    y = _check_curve(y)
    if lam == 0:
        return y.copy()
    return solveh_banded(_penalty_bands(y.size, lam), y)


def smoother_residual(y, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """``y - z`` computed as ``lam (I + lam D'D)^-1 D' (D y)``.

    The two forms agree algebraically; this one is exactly zero whenever the
    second differences of ``y`` are, instead of carrying solver round-off.
    """
    y = _check_curve(y)
    d2 = y[:-2] - 2.0 * y[1:-1] + y[2:]
    if lam == 0 or not np.any(d2):
        return np.zeros_like(y)
    dt = np.zeros_like(y)
    dt[:-2] += d2
    dt[1:-1] -= 2.0 * d2
    dt[2:] += d2
    return lam * solveh_banded(_penalty_bands(y.size, lam), dt)


def instability_score(curve, lam: float = DEFAULT_LAMBDA) -> float:
    r = smoother_residual(curve, lam)
    return float((r * r).sum())


# ---------------------------------------------------------------- report

REPORT_HEADER = ["model", "metric", "mean_diff", "ci_low", "ci_high", "p_one_sided", "conclusion"]
METRICS = (("Instability", "less"), ("Test R²", "greater"), ("Train R²", "greater"))


@dataclass
class ReportRow:
    model: str
    metric: str
    result: BootstrapResult

    @property
    def conclusion(self) -> str:
        r = self.result
        if r.p_one_sided >= ALPHA:
            return "not significant"
        return "study > control" if r.direction == "greater" else "study < control"


def superiority_report(arms: dict, B: int = DEFAULT_B, seed: int = 0) -> list[ReportRow]:
    """``arms[model][metric] = (study_values, control_values)`` -> rows in table order."""
    rows = []
    for model, metrics in arms.items():
        for metric, direction in METRICS:
            if metric not in metrics:
                raise KeyError(f"{model}: missing metric {metric!r}")
            study, control = metrics[metric]
            rows.append(ReportRow(model, metric, bootstrap_mean_diff(study, control, B, seed, direction)))
    return rows


def report_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in rows:
        res = r.result
        w.writerow([r.model, r.metric, f"{res.mean_diff:.5f}", f"{res.ci_low:.5f}", f"{res.ci_high:.5f}",
                    res.p_text(), r.conclusion])
    return buf.getvalue()


def report_text(rows: list[ReportRow]) -> str:
    table = [["Model", "Metric", "Mean diff.", "95% CI", "p (one-sided)", "Conclusion"]]
    last = None
    for r in rows:
        res = r.result
        table.append([r.model if r.model != last else "", r.metric, f"{res.mean_diff:.5f}",
                      f"[{res.ci_low:.5f}, {res.ci_high:.5f}]", res.p_text(), r.conclusion])
        last = r.model
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
