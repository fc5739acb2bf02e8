"""Group-aware k-fold training with per-epoch R^2 logging."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import derived_rng
from .encode import CoordMode, EncodingKind, extra_channels
from .ingest.container import Dataset, open_dataset
from .models import Network, build_network, forward, save_checkpoint

log = logging.getLogger(__name__)

LOG_HEADER = ["arm", "fold", "epoch", "train_r2", "test_r2", "train_loss", "wall_time_s"]
ENCODINGS = tuple(e.value for e in EncodingKind)
VARIANTS = ("full", "reduced")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class ExperimentConfig:
    dataset: str = ""
    seed: int = 0
    batch_size: int = 32
    epochs: int = 15
    k_folds: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    encoding: list = field(default_factory=lambda: list(ENCODINGS))
    variant: list = field(default_factory=lambda: list(VARIANTS))
    coord_mode: str = "integer"
    precision: str = "standard"
    eval_batch_size: int = 64
    log_wall_time: bool = False
    save_checkpoints: bool = True

    def __post_init__(self):
        if isinstance(self.encoding, str):
            self.encoding = [self.encoding]
        if isinstance(self.variant, str):
            self.variant = [self.variant]
        self.encoding = list(self.encoding)
        self.variant = list(self.variant)

    def validate(self):
        problems = []
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            problems.append(f"batch_size must be an integer >= 1, got {self.batch_size!r}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            problems.append(f"epochs must be an integer >= 1, got {self.epochs!r}")
        if not isinstance(self.k_folds, int) or self.k_folds < 2:
            problems.append(f"k_folds must be an integer >= 2, got {self.k_folds!r}")
        if not isinstance(self.seed, int):
            problems.append(f"seed must be an integer, got {self.seed!r}")
        if not self.lr or self.lr <= 0:
            problems.append(f"lr must be positive, got {self.lr!r}")
        for b in ("beta1", "beta2"):
            v = getattr(self, b)
            if not 0 <= v < 1:
                problems.append(f"{b} must lie in [0, 1), got {v!r}")
        bad = [e for e in self.encoding if e not in ENCODINGS]
        if bad or not self.encoding:
            problems.append(f"encoding must be a non-empty subset of {list(ENCODINGS)}, got {self.encoding!r}")
        bad = [v for v in self.variant if v not in VARIANTS]
        if bad or not self.variant:
            problems.append(f"variant must be a non-empty subset of {list(VARIANTS)}, got {self.variant!r}")
        if self.coord_mode not in [m.value for m in CoordMode]:
            problems.append(f"coord_mode must be 'integer' or 'normalized', got {self.coord_mode!r}")
        if self.precision not in ("standard", "high"):
            problems.append(f"precision must be 'standard' or 'high', got {self.precision!r}")
        if problems:
            raise ConfigError(problems)
        return self

    def arms(self) -> list[tuple[str, str]]:
        """(variant, encoding) pairs, control arm before study arm within each variant."""
        return [(v, e) for v in self.variant for e in ENCODINGS if e in self.encoding]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown config field {k!r}" for k in unknown])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError([str(exc)]) from None
        return cfg.validate()

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def arm_name(variant: str, encoding: str) -> str:
    return f"{variant}/{encoding}"


@dataclass
class LogRow:
    arm: str
    fold: int
    epoch: int
    train_r2: float
    test_r2: float
    train_loss: float
    wall_time_s: float | None = None


# ---------------------------------------------------------------- folds


def assign_folds(base_ids, k: int = 5, seed: int = 0) -> dict:
    """Shuffle distinct base ids with ``seed`` and deal them round-robin into k folds."""
    uniq = sorted(set(base_ids))
    if len(uniq) < k:
        raise ValueError(f"{len(uniq)} distinct bases cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(uniq))
    return {uniq[j]: pos % k for pos, j in enumerate(order)}


def fold_indices(base_ids, assignment: dict, fold: int) -> tuple[np.ndarray, np.ndarray]:
    f = np.array([assignment[b] for b in base_ids])
    return np.flatnonzero(f != fold), np.flatnonzero(f == fold)


# ---------------------------------------------------------------- metrics


def r2_score(y_true, y_pred) -> float:
    """Coefficient of determination, uniformly averaged over output columns."""
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.ndim == 1:
        yt = yt[:, None]
    if yp.ndim == 1:
        yp = yp[:, None]
    if yt.shape != yp.shape:
        raise ValueError(f"shape mismatch {yt.shape} vs {yp.shape}")
    if len(yt) < 2:
        raise ValueError("R^2 needs at least two samples")
    ss_res = ((yt - yp) ** 2).sum(axis=0)
    ss_tot = ((yt - yt.mean(axis=0)) ** 2).sum(axis=0)
    if np.any(ss_tot == 0):
        warnings.warn("R^2 undefined for constant targets", RuntimeWarning, stacklevel=2)
        return float("nan")
    return float(np.mean(1.0 - ss_res / ss_tot))


# ---------------------------------------------------------------- training


def encode_batch(x: np.ndarray, encoding: str, mode: str, dtype) -> np.ndarray:
    x = np.asarray(x, dtype=dtype)
    extra = extra_channels(x, encoding, mode, batched=True)
    return np.concatenate([x, np.asarray(extra, dtype=dtype)], axis=1)


def evaluate(net: Network, data: Dataset, idx: np.ndarray, cfg: ExperimentConfig, encoding: str) -> np.ndarray:
    preds = []
    for i in range(0, len(idx), cfg.eval_batch_size):
        b = idx[i:i + cfg.eval_batch_size]
        xb = encode_batch(data.arrays[b], encoding, cfg.coord_mode, net.dtype)
        preds.append(forward(net, xb, training=False).data.astype(np.float64))
    return np.concatenate(preds, axis=0)


def clip_targets(y: np.ndarray, task: str) -> np.ndarray:
    hi = 255.0 if task == "image" else 20.0
    return np.clip(y, 0.0, hi)


def train_fold(cfg: ExperimentConfig, variant: str, encoding: str, fold: int, data: Dataset,
               assignment: dict) -> tuple[list[LogRow], Network]:
    """Train one arm on all folds but ``fold``; log train/test R^2 after every epoch.

    Initial weights and batch order depend on (seed, fold) only, so arms
    that differ in encoding see identical optimisation schedules.
    """
    tr, te = fold_indices(data.base_ids, assignment, fold)
    if len(tr) == 0 or len(te) == 0:
        raise ValueError(f"fold {fold} has an empty split (train {len(tr)}, test {len(te)})")
    net = build_network(data.task, variant, seed=int(derived_rng(cfg.seed, "init", fold).integers(2 ** 31)),
                        precision=cfg.precision)
    params = net.parameters()
    opt = T.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    y_all = clip_targets(data.targets, data.task)
    arm = arm_name(variant, encoding)
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = derived_rng(cfg.seed, f"batches/{fold}", epoch).permutation(tr)
        losses, weights = [], []
        for i in range(0, len(order), cfg.batch_size):
            b = np.sort(order[i:i + cfg.batch_size])
            xb = encode_batch(data.arrays[b], encoding, cfg.coord_mode, net.dtype)
            yb = y_all[b].astype(net.dtype)
            loss = T.mse_loss(forward(net, xb, training=True), yb)
            T.backward(loss)
            T.adam_step(params, opt)
            losses.append(float(loss.data))
            weights.append(len(b))
        train_r2 = r2_score(y_all[tr], evaluate(net, data, tr, cfg, encoding))
        test_r2 = r2_score(y_all[te], evaluate(net, data, te, cfg, encoding))
        wall = time.perf_counter() - t0
        rows.append(LogRow(arm, fold, epoch, train_r2, test_r2, float(np.average(losses, weights=weights)), wall))
        log.info("%s fold %d epoch %d: loss %.4g train R2 %.4f test R2 %.4f (%.1fs)",
                 arm, fold, epoch, rows[-1].train_loss, train_r2, test_r2, wall)
    return rows, net


# ---------------------------------------------------------------- logs


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_rows(rows: list[LogRow], with_wall_time: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([r.arm, r.fold, r.epoch, _fmt(r.train_r2), _fmt(r.test_r2), _fmt(r.train_loss),
                    _fmt(r.wall_time_s) if with_wall_time else ""])
    return buf.getvalue()


def write_log(rows: list[LogRow], path, with_wall_time: bool = True):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(LOG_HEADER) + "\n")
        fh.write(format_rows(rows, with_wall_time))


def read_log(path) -> list[LogRow]:
    rows = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != LOG_HEADER:
            raise ValueError(f"{path}: unexpected header {rd.fieldnames}")
        for r in rd:
            rows.append(LogRow(r["arm"], int(r["fold"]), int(r["epoch"]), float(r["train_r2"]),
                               float(r["test_r2"]), float(r["train_loss"]),
                               float(r["wall_time_s"]) if r["wall_time_s"] else None))
    return rows


def curves(rows: list[LogRow], arm: str, column: str) -> dict[int, np.ndarray]:
    """fold -> per-epoch values of ``column`` for one arm, epoch-ordered."""
    out: dict[int, list] = {}
    for r in sorted((r for r in rows if r.arm == arm), key=lambda r: (r.fold, r.epoch)):
        out.setdefault(r.fold, []).append(getattr(r, column))
    return {f: np.asarray(v) for f, v in out.items()}


def final_scores(rows: list[LogRow], arm: str, column: str = "test_r2") -> np.ndarray:
    return np.array([c[-1] for _, c in sorted(curves(rows, arm, column).items())])


# ---------------------------------------------------------------- experiment


def _run_job(args):
    cfg, variant, encoding, fold, dataset_path, assignment, ckpt_dir = args
    data = open_dataset(dataset_path)
    rows, net = train_fold(cfg, variant, encoding, fold, data, assignment)
    if ckpt_dir is not None:
        save_checkpoint(net, Path(ckpt_dir) / f"{variant}_{encoding}_fold{fold}.cloc")
    return rows


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("COORDLOC_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig, out_dir=None, dataset: Dataset | None = None) -> list[LogRow]:
    """Train every (variant, encoding) arm on every fold.

    With ``out_dir``, rows are appended to ``train_log.csv`` fold by fold;
    folds already complete there are not retrained.
    """
    cfg.validate()
    data = dataset if dataset is not None else open_dataset(cfg.dataset)
    assignment = assign_folds(data.base_ids, cfg.k_folds, cfg.seed)
    done: list[LogRow] = []
    log_path = timing_path = ckpt_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path, timing_path = out_dir / "train_log.csv", out_dir / "timings.csv"
        (out_dir / "config.json").write_text(cfg.to_json())
        (out_dir / "run_meta.json").write_text(json.dumps(
            dict(task=data.task, n_samples=len(data), n_bases=len(set(data.base_ids))), sort_keys=True) + "\n")
        (out_dir / "folds.json").write_text(json.dumps(assignment, sort_keys=True, indent=0) + "\n")
        if cfg.save_checkpoints:
            ckpt_dir = out_dir / "checkpoints"
            ckpt_dir.mkdir(exist_ok=True)
        if log_path.exists():
            done = read_log(log_path)
        else:
            write_log([], log_path)
        if not timing_path.exists():
            timing_path.write_text("arm,fold,epoch,wall_time_s\n")

    complete = {(r.arm, r.fold) for r in done
                if sum(1 for s in done if s.arm == r.arm and s.fold == r.fold) == cfg.epochs}
    done = [r for r in done if (r.arm, r.fold) in complete]
    jobs = [(cfg, v, e, f, str(data.path), assignment, ckpt_dir)
            for v, e in cfg.arms() for f in range(cfg.k_folds)
            if (arm_name(v, e), f) not in complete]
    if complete and log_path is not None:
        write_log(_ordered(done, cfg), log_path, cfg.log_wall_time)

    def _sink(rows):
        if log_path is not None:
            with open(log_path, "a", newline="") as fh:
                fh.write(format_rows(rows, cfg.log_wall_time))
            with open(timing_path, "a") as fh:
                fh.writelines(f"{r.arm},{r.fold},{r.epoch},{r.wall_time_s!r}\n" for r in rows)

    results: list[LogRow] = list(done)
    n_workers = worker_count()
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            for rows in ex.map(_run_job, jobs):  # map preserves job order
                _sink(rows)
                results.extend(rows)
    else:
        for job in jobs:
            if dataset is not None:
                cfg_, v, e, f, _, asg, ck = job
                rows, net = train_fold(cfg_, v, e, f, data, asg)
                if ck is not None:
                    save_checkpoint(net, Path(ck) / f"{v}_{e}_fold{f}.cloc")
            else:
                rows = _run_job(job)
            _sink(rows)
            results.extend(rows)
    return _ordered(results, cfg)


def _ordered(rows: list[LogRow], cfg: ExperimentConfig) -> list[LogRow]:
    rank = {arm_name(v, e): i for i, (v, e) in enumerate(cfg.arms())}
    return sorted(rows, key=lambda r: (rank.get(r.arm, len(rank)), r.fold, r.epoch))
