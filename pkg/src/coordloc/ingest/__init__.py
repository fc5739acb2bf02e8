"""Source-format parsing, preprocessing and the dataset container."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .container import ContainerWriter, Dataset, open_dataset
from .ecg import OUT_LEN, EcgWindow, extract_window, resample_window
from .images import (TARGET_SIZE, ContourParseError, load_rgb, parse_contour_dat, preprocess_image,
                     validate_sample)
from .wfdb import (WfdbError, extract_changepoints, parse_annotations, parse_wfdb_header, read_signal,
                   rhythm_events)

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".bmp", ".png", ".jpg", ".jpeg", ".tif", ".tiff")


class NoRecordsError(RuntimeError):
    pass


@dataclass
class IngestReport:
    written: int = 0
    excluded: list = field(default_factory=list)  # (name, reason)
    failures: list = field(default_factory=list)  # (name, message)


def _contour_for(img: Path) -> Path | None:
    for cand in (img.with_name(img.stem + "_nuc.dat"), img.with_suffix(".dat")):
        if cand.exists():
            return cand
    return None


def ingest_sipakmed(in_dir, out, force: bool = False, augment: int = 0, seed: int = 0) -> IngestReport:
    """Cropped-cell images with ``<stem>_nuc.dat`` (or ``<stem>.dat``) nucleus contours."""
    from ..augment import augment_image

    in_dir = Path(in_dir)
    images = sorted(p for p in in_dir.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    pairs = [(p, _contour_for(p)) for p in images]
    pairs = [(p, c) for p, c in pairs if c is not None]
    if not pairs:
        raise NoRecordsError(f"no records found in {in_dir}")
    rep = IngestReport()
    with ContainerWriter(out, "image", (3, TARGET_SIZE, TARGET_SIZE), force=force,
                         extra_meta=dict(source="sipakmed", augment_count=augment, seed=seed)) as wr:
        for img_path, dat in pairs:
            name = str(img_path.relative_to(in_dir))
            try:
                ann = parse_contour_dat(dat.read_bytes(), name)
                pixels = load_rgb(img_path)
            except (ContourParseError, OSError, ValueError) as exc:
                rep.failures.append((name, str(exc)))
                continue
            if not validate_sample(ann, pixels.shape[1], pixels.shape[2]):
                rep.excluded.append((name, "contour outside image bounds"))
                continue
            base_id = str(img_path.relative_to(in_dir).with_suffix(""))
            sample = preprocess_image(pixels, ann, base_id)
            wr.add(sample.pixels, sample.target, base_id, 0)
            for v in augment_image(sample, augment, seed) if augment else ():
                wr.add(v.pixels, v.target, base_id, v.augment_index)
    rep.written = wr.count
    return rep


def ingest_wfdb(in_dir, out, force: bool = False, augment: int = 0, seed: int = 0) -> IngestReport:
    """Every ``*.hea`` record with a ``.dat`` signal and ``.atr`` annotation file."""
    from ..augment import augment_ecg

    in_dir = Path(in_dir)
    headers = sorted(in_dir.rglob("*.hea"))
    if not headers:
        raise NoRecordsError(f"no records found in {in_dir}")
    rep = IngestReport()
    with ContainerWriter(out, "ecg", (2, OUT_LEN), force=force,
                         extra_meta=dict(source="wfdb", augment_count=augment, seed=seed)) as wr:
        for hea in headers:
            name = hea.stem
            try:
                rec = parse_wfdb_header(hea.read_text())
                sig = read_signal((hea.parent / rec.signals[0].file_name).read_bytes(), rec)
                anns = parse_annotations(hea.with_suffix(".atr").read_bytes(), rec.n_samples)
            except (WfdbError, OSError, ValueError) as exc:
                rep.failures.append((name, str(exc)))
                continue
            if sig.shape[0] < 2:
                rep.excluded.append((name, "fewer than two leads"))
                continue
            cps = extract_changepoints(rhythm_events(anns))
            for cp in cps:
                w = extract_window(sig[:2], rec.fs, cp, [c for c in cps if c < cp], base_id=f"{name}_{cp}")
                if w is None:
                    rep.excluded.append((f"{name}@{cp}", "label outside window"))
                    continue
                r = resample_window(w)
                wr.add(r.signal, r.target, r.base_id, 0)
                for v in augment_ecg(w, augment, seed) if augment else ():
                    rv = resample_window(v)
                    wr.add(rv.signal, rv.target, rv.base_id, rv.augment_index)
    rep.written = wr.count
    return rep


__all__ = ["ContainerWriter", "Dataset", "open_dataset", "EcgWindow", "IngestReport", "NoRecordsError",
           "ingest_sipakmed", "ingest_wfdb"]
