"""Changepoint-centred ECG windows."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..filters import design_butterworth, sosfiltfilt

log = logging.getLogger(__name__)

WINDOW_S = 20.0
HALF_S = 10.0
OUT_LEN = 500
OUT_FS = OUT_LEN / WINDOW_S  # 25 Hz
RESAMPLE_CUTOFF_HZ = 0.4 * OUT_FS  # 10 Hz
RESAMPLE_ORDER = 8


@dataclass
class EcgWindow:
    signal: np.ndarray  # (2, n) physical units
    changepoint_s: float
    base_id: str
    augment_index: int = 0
    fs: float = OUT_FS
    valid: np.ndarray | None = None  # (n,) True where samples came from the record
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(self.signal.shape[-1], dtype=bool)

    @property
    def target(self) -> np.ndarray:
        return np.array([self.changepoint_s], dtype=np.float64)

    @property
    def n(self) -> int:
        return self.signal.shape[-1]

    def copy(self, **changes) -> "EcgWindow":
        kw = dict(signal=self.signal.copy(), changepoint_s=self.changepoint_s, base_id=self.base_id,
                  augment_index=self.augment_index, fs=self.fs, valid=self.valid.copy(),
                  flags=list(self.flags))
        kw.update(changes)
        return EcgWindow(**kw)


def window_bounds(fs: float, changepoint: int, prior_changepoints=()) -> tuple[int, float]:
    """Start sample and label (seconds) for the window around ``changepoint``.

    An earlier changepoint less than 10 s before the current one moves the
    window start onto that earlier changepoint.
    """
    half = int(round(HALF_S * fs))
    earlier = [c for c in prior_changepoints if changepoint - half < c < changepoint]
    if earlier:
        start = max(earlier)
        label = (changepoint - start) / fs
        log.debug("changepoint %d: window starts at earlier changepoint %d (label %.3f s; "
                  "centred reading would give %.3f s)", changepoint, start, label, HALF_S)
        return start, label
    return changepoint - half, HALF_S


def extract_window(signal: np.ndarray, fs: float, changepoint: int, prior_changepoints=(),
                   base_id: str = "") -> EcgWindow | None:
    """Cut a 20 s window; parts outside the record are zero with ``valid=False``.

    Returns ``None`` (and logs) when the label would leave ``[0, 20]``.
    """
    signal = np.atleast_2d(signal)
    n_rec = signal.shape[-1]
    if not 0 <= changepoint < n_rec:
        raise ValueError(f"changepoint {changepoint} outside record of {n_rec} samples")
    n = int(round(WINDOW_S * fs))
    start, label = window_bounds(fs, changepoint, prior_changepoints)
    if not 0.0 <= label <= WINDOW_S:
        log.warning("skipping changepoint %d: label %.3f s outside window", changepoint, label)
        return None
    out = np.zeros((signal.shape[0], n), dtype=np.float64)
    valid = np.zeros(n, dtype=bool)
    lo, hi = max(start, 0), min(start + n, n_rec)
    if hi > lo:
        out[:, lo - start:hi - start] = signal[:, lo:hi]
        valid[lo - start:hi - start] = True
    return EcgWindow(out, float(label), base_id, 0, fs, valid)


def resample_window(window: EcgWindow) -> EcgWindow:
    """Zero-phase 10 Hz low-pass then resample the 20 s window to 500 samples."""
    fs = window.fs
    if fs < OUT_FS:
        raise ValueError(f"sampling rate {fs} Hz below {OUT_FS} Hz")
    n_in = int(round(WINDOW_S * fs))
    if window.n != n_in:
        raise ValueError(f"window has {window.n} samples, expected {n_in} at {fs} Hz")
    if fs == OUT_FS:
        return window.copy()
    filt = design_butterworth("lowpass", RESAMPLE_ORDER, RESAMPLE_CUTOFF_HZ, fs)
    smooth = sosfiltfilt(filt, window.signal, axis=-1)
    t_in = np.arange(n_in) / fs
    t_out = np.arange(OUT_LEN) / OUT_FS
    ratio = fs / OUT_FS
    if float(ratio).is_integer():
        out = smooth[:, ::int(ratio)][:, :OUT_LEN]
        valid = window.valid[::int(ratio)][:OUT_LEN]
    else:
        out = np.stack([np.interp(t_out, t_in, lead) for lead in smooth])
        valid = np.interp(t_out, t_in, window.valid.astype(float)) > 0.5
    out = np.ascontiguousarray(out)
    out[:, ~valid] = 0.0  # filter ringing must not leak into zero padding
    return EcgWindow(out, window.changepoint_s, window.base_id,
                     window.augment_index, OUT_FS, valid, list(window.flags))


def windows_from_record(signal: np.ndarray, fs: float, changepoints: list[int], record_name: str):
    """All resampled windows of one record; ``base_id`` is ``<record>_<changepoint sample>``."""
    out = []
    for cp in changepoints:
        if not 0 <= cp < signal.shape[-1]:
            log.warning("%s: changepoint %d outside record, skipped", record_name, cp)
            continue
        prior = [c for c in changepoints if c < cp]
        w = extract_window(signal[:2], fs, cp, prior, base_id=f"{record_name}_{cp}")
        if w is not None:
            out.append(resample_window(w))
    return out
