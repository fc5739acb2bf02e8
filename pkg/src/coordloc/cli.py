"""coordloc command-line interface.

Exit codes: 0 success, 2 usage error, 3 data error, 4 incomplete input.
"""
from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INCOMPLETE = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _err(msg: str):
    print(f"coordloc: error: {msg}", file=sys.stderr, flush=True)


def cmd_synth(args) -> int:
    from .synth import gen_dataset

    try:
        n = gen_dataset(args.task, args.n_base, args.augment, args.seed, args.out, force=args.force)
    except FileExistsError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    print(f"wrote {n} samples ({args.n_base} bases x {1 + args.augment}) to {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    from .ingest import NoRecordsError, ingest_sipakmed, ingest_wfdb

    fn = ingest_sipakmed if args.source == "sipakmed" else ingest_wfdb
    if not Path(args.in_dir).is_dir():
        raise CliError(f"{args.in_dir} is not a directory", EXIT_DATA)
    try:
        rep = fn(args.in_dir, args.out, force=args.force, augment=args.augment, seed=args.seed)
    except FileExistsError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    except NoRecordsError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    out = Path(args.out)
    if out.exists():
        lines = [f"{name}\t{reason}\n" for name, reason in rep.excluded]
        lines += [f"{name}\tparse error: {msg}\n" for name, msg in rep.failures]
        (out / "excluded.txt").write_text("".join(lines))
    for name, msg in rep.failures:
        _err(f"{name}: {msg}")
    print(f"wrote {rep.written} samples; {len(rep.excluded)} excluded; {len(rep.failures)} failed")
    if rep.written == 0:
        raise CliError("every record failed or was excluded", EXIT_DATA)
    return EXIT_OK


def _parse_override(text: str):
    key, sep, raw = text.partition("=")
    if not sep:
        raise CliError(f"--set expects key=value, got {text!r}", EXIT_USAGE)
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def load_config(path, overrides=(), arms=None):
    from .train import ENCODINGS, ConfigError, ExperimentConfig

    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_USAGE) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}", EXIT_USAGE) from None
    if not isinstance(d, dict):
        raise CliError("config must be a JSON object", EXIT_USAGE)
    for item in overrides:
        k, v = _parse_override(item)
        d[k] = v
    if arms:
        names = [a.strip() for a in arms.split(",") if a.strip()]
        enc = [a for a in names if a in ENCODINGS]
        var = [a for a in names if a in ("full", "reduced")]
        unknown = [a for a in names if a not in enc and a not in var]
        if unknown:
            raise CliError(f"unknown arms {unknown}; choose from {list(ENCODINGS)} and full, reduced", EXIT_USAGE)
        if enc:
            d["encoding"] = enc
        if var:
            d["variant"] = var
    try:
        return ExperimentConfig.from_dict(d)
    except ConfigError as exc:
        raise CliError("invalid config:\n" + "\n".join(f"  - {p}" for p in exc.problems), EXIT_USAGE) from None


def cmd_train(args) -> int:
    from .ingest.container import ContainerError, open_dataset
    from .train import run_experiment

    cfg = load_config(args.config, args.set or (), args.arms)
    if args.dataset:
        cfg.dataset = args.dataset
    out = Path(args.out)
    prev = out / "config.json"
    if out.exists() and any(out.iterdir()):
        same = prev.exists() and prev.read_text() == cfg.to_json()
        if args.force:
            shutil.rmtree(out)
        elif not same:
            raise CliError(f"{out} holds a different run; pass --force to overwrite", EXIT_USAGE)
    try:
        data = open_dataset(cfg.dataset)
    except (OSError, ContainerError, ValueError) as exc:
        raise CliError(f"cannot open dataset {cfg.dataset!r}: {exc}", EXIT_DATA) from None
    rows = run_experiment(cfg, out, dataset=data)
    print(f"{len(rows)} log rows in {out / 'train_log.csv'}")
    return EXIT_OK


def _task_of(source: Path, explicit):
    if explicit:
        return explicit
    meta = source / "run_meta.json"
    if meta.exists():
        return json.loads(meta.read_text())["task"]
    raise CliError(f"cannot tell the task for {source}; pass --task", EXIT_USAGE)


def cmd_report(args) -> int:
    from .report import IncompleteLogError, write_report
    from .train import read_log

    rows, task, cfg = [], args.task, None
    for src in map(Path, args.logs):
        log = src / "train_log.csv" if src.is_dir() else src
        run_dir = log.parent
        if not log.exists():
            raise CliError(f"no training log at {log}", EXIT_INCOMPLETE)
        try:
            rows.extend(read_log(log))
        except (ValueError, KeyError) as exc:
            raise CliError(f"malformed log {log}: {exc}", EXIT_DATA) from None
        task = _task_of(run_dir, task)
        if cfg is None and (run_dir / "config.json").exists():
            cfg = json.loads((run_dir / "config.json").read_text())
    k_folds = args.k_folds or (cfg or {}).get("k_folds", 5)
    epochs = args.epochs or (cfg or {}).get("epochs", 15)
    out = Path(args.out) if args.out else Path(args.logs[0]) if Path(args.logs[0]).is_dir() else Path(".")
    try:
        res = write_report(rows, task, out, k_folds=k_folds, epochs=epochs, B=args.B, seed=args.seed, lam=args.lam)
    except IncompleteLogError as exc:
        raise CliError(f"incomplete logs: {exc}", EXIT_INCOMPLETE) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    print((out / "report.txt").read_text(), end="")
    print("figures: " + ", ".join(str(out / f) for f in res["figures"]))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import network_check, op_checks

    results = op_checks(args.seed)
    if not args.ops_only:
        for task in ("image", "ecg"):
            results.append(network_check(task, "high", seed=args.seed, tol=1e-3))
    for r in results:
        print(r.line(), flush=True)
    bad = [r for r in results if not r.passed]
    print(f"{len(results) - len(bad)}/{len(results)} checks passed")
    return EXIT_OK if not bad else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coordloc", description=(
        "Coordinate-channel localisation experiments: synthetic data, dataset ingest, "
        "paired training and bootstrap superiority reports."))
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic dataset container",
                       description="Generate ellipse images or synthetic two-lead ECG windows.")
    s.add_argument("--task", required=True, choices=["image", "ecg"], help="which task to synthesise")
    s.add_argument("--n-base", type=int, default=200, help="number of base samples (default 200)")
    s.add_argument("--augment", type=int, default=20, help="augmented variants per base sample (default 20)")
    s.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    s.add_argument("--out", required=True, help="container directory to create")
    s.add_argument("--force", action="store_true", help="overwrite an existing container")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="convert a source dataset into a container",
                       description="Parse SiPaKMeD-style images+contours or WFDB records into a container; "
                                   "writes excluded.txt next to the data.")
    s.add_argument("source", choices=["sipakmed", "vfdb"], help="source format")
    s.add_argument("in_dir", help="directory holding the source files")
    s.add_argument("--out", required=True, help="container directory to create")
    s.add_argument("--augment", type=int, default=0, help="augmented variants per sample (default 0)")
    s.add_argument("--seed", type=int, default=0, help="augmentation seed (default 0)")
    s.add_argument("--force", action="store_true", help="overwrite an existing container")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="run the paired k-fold experiment",
                       description="Train every configured (variant, encoding) arm on every fold. "
                                   "Rerunning into the same directory resumes from completed folds.")
    s.add_argument("config", help="experiment config JSON")
    s.add_argument("--out", required=True, help="run directory (train_log.csv, checkpoints/, ...)")
    s.add_argument("--dataset", help="override the config's dataset path")
    s.add_argument("--arms", help="comma list of encodings and/or variants to train, e.g. coordconv,intensity_weighted")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config field (JSON value); repeatable")
    s.add_argument("--force", action="store_true", help="discard an existing run directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("report", help="superiority table and R^2 figures from training logs",
                       description="Bootstrap the study arm against the control arm per model variant and "
                                   "write report.csv, report.txt, report.json and r2_curves_<variant>.svg.")
    s.add_argument("logs", nargs="+", help="run directories or train_log.csv files")
    s.add_argument("--out", help="output directory (default: the first run directory)")
    s.add_argument("--task", choices=["image", "ecg"], help="task, when run_meta.json is absent")
    s.add_argument("--B", type=int, default=20000, help="bootstrap resamples (default 20000)")
    s.add_argument("--seed", type=int, default=0, help="bootstrap seed (default 0)")
    s.add_argument("--lam", type=float, default=5.0, help="smoother penalty for the instability score (default 5)")
    s.add_argument("--k-folds", type=int, help="expected folds (default from config.json, else 5)")
    s.add_argument("--epochs", type=int, help="expected epochs (default from config.json, else 15)")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op and both networks",
                       description="Compare analytic gradients with central differences in float64.")
    s.add_argument("--seed", type=int, default=0, help="seed for inputs and sampled entries (default 0)")
    s.add_argument("--ops-only", action="store_true", help="skip the full-network checks")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        _err(str(exc))
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
