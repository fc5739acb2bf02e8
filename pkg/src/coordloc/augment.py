"""Geometric image augmentation and the six-step ECG perturbation stack.

ECG perturbations operate on raw-rate windows (before resampling to 500
samples) so the 30-50 Hz filter ranges stay below Nyquist.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .filters import IirFilter, design_butterworth, sosfilt
from .ingest.ecg import WINDOW_S, EcgWindow
from .ingest.images import TARGET_SIZE, ImageSample

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 100
FILTER_ORDER = 4
PATCH_GUARD_S = 1.0


def derived_rng(seed: int, base_id: str, augment_index: int) -> np.random.Generator:
    """RNG stream that depends only on (seed, base_id, augment_index)."""
    digest = hashlib.sha256(str(base_id).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words, int(augment_index)]))


# ---------------------------------------------------------------- images


@dataclass(frozen=True)
class AffineRanges:
    scale: tuple = (0.9, 1.1)
    rotation_deg: tuple = (-15.0, 15.0)
    translate_px: tuple = (-20.0, 20.0)


@dataclass(frozen=True)
class AffineParams:
    scale: float = 1.0
    rotation: float = 0.0  # radians
    translate: tuple = (0.0, 0.0)  # (dx, dy) pixels

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply_point(self, xy, size: int = TARGET_SIZE) -> np.ndarray:
        centre = np.array([size / 2.0, size / 2.0])
        return self.matrix() @ (np.asarray(xy, dtype=np.float64) - centre) + centre + np.asarray(self.translate)


def draw_affine(rng: np.random.Generator, ranges: AffineRanges = AffineRanges()) -> AffineParams:
    return AffineParams(
        scale=float(rng.uniform(*ranges.scale)),
        rotation=float(np.deg2rad(rng.uniform(*ranges.rotation_deg))),
        translate=(float(rng.uniform(*ranges.translate_px)), float(rng.uniform(*ranges.translate_px))),
    )


def warp_image(pixels: np.ndarray, params: AffineParams) -> np.ndarray:
    """Bilinear warp with zero fill; output pixel q reads input at the inverse map of q."""
    c, h, w = pixels.shape
    centre = np.array([w / 2.0, h / 2.0])
    inv = np.linalg.inv(params.matrix())
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    q = np.stack([cols.ravel(), rows.ravel()])  # x, y
    p = inv @ (q - centre[:, None] - np.asarray(params.translate)[:, None]) + centre[:, None]
    coords = [p[1].reshape(h, w), p[0].reshape(h, w)]
    return np.stack([ndimage.map_coordinates(pixels[k].astype(np.float64), coords, order=1,
                                             mode="constant", cval=0.0) for k in range(c)])


def apply_affine(sample: ImageSample, params: AffineParams, augment_index: int | None = None) -> ImageSample:
    size = sample.pixels.shape[-1]
    px = warp_image(sample.pixels, params).astype(sample.pixels.dtype)
    centre = params.apply_point(sample.center, size)
    return ImageSample(px, (float(centre[0]), float(centre[1])), sample.base_id,
                       sample.augment_index if augment_index is None else augment_index, list(sample.flags))


def random_affine(sample: ImageSample, rng: np.random.Generator, ranges: AffineRanges = AffineRanges(),
                  augment_index: int | None = None) -> ImageSample | None:
    """Warp by random scale/rotation/translation keeping the target on the 0..255 grid."""
    size = sample.pixels.shape[-1]
    for _ in range(MAX_ATTEMPTS):
        params = draw_affine(rng, ranges)
        c = params.apply_point(sample.center, size)
        if np.all(c >= 0) and np.all(c <= size - 1):
            return apply_affine(sample, params, augment_index)
    log.warning("%s: no in-bounds affine after %d attempts; variant skipped", sample.base_id, MAX_ATTEMPTS)
    return None


def augment_image(sample: ImageSample, count: int = 20, seed: int = 0,
                  ranges: AffineRanges = AffineRanges()) -> list[ImageSample]:
    out = []
    for idx in range(1, count + 1):
        v = random_affine(sample, derived_rng(seed, sample.base_id, idx), ranges, augment_index=idx)
        if v is not None:
            out.append(v)
    return out


# ---------------------------------------------------------------- ECG


@dataclass
class EcgAugmentParams:
    shift_s: float = 0.0
    patch: tuple | None = None  # (start_s, dur_s)
    noise_frac: float = 0.0
    wander: tuple = (0.1, 0.0, 0.0)  # (freq_hz, amp_frac, phase)
    filter: tuple = ("none",)
    amp_scale: float = 1.0


@dataclass(frozen=True)
class EcgAugmentConfig:
    max_shift_s: float = 5.0
    patch_dur_s: tuple = (1.0, 2.0)
    noise_frac: tuple = (0.01, 0.05)
    wander_freq: tuple = (0.1, 0.5)
    wander_frac: tuple = (0.01, 0.05)
    lowpass_fc: tuple = (30.0, 50.0)
    highpass_fc: tuple = (0.5, 2.0)
    bandpass: tuple = (0.5, 50.0)
    amp_scale: tuple = (0.8, 1.2)
    shared_wander_phase: bool = True


def _shift_rows(a: np.ndarray, d: int, fill=0):
    out = np.full_like(a, fill)
    n = a.shape[-1]
    if abs(d) >= n:
        return out
    if d >= 0:
        out[..., d:] = a[..., :n - d]
    else:
        out[..., :n + d] = a[..., -d:]
    return out


def temporal_shift(window: EcgWindow, shift_s: float) -> EcgWindow:
    """Delay (positive) or advance the signal, zero-filling the vacated span."""
    d = int(round(shift_s * window.fs))
    label = window.changepoint_s + d / window.fs
    if not 0.0 <= label <= WINDOW_S:
        raise ValueError(f"shift {shift_s} s moves label to {label:.3f} s, outside [0, {WINDOW_S}]")
    return window.copy(signal=_shift_rows(window.signal, d), valid=_shift_rows(window.valid, d, False),
                       changepoint_s=label)


def draw_shift(rng: np.random.Generator, label: float, max_shift: float = 5.0) -> float:
    for _ in range(MAX_ATTEMPTS):
        s = float(rng.uniform(-max_shift, max_shift))
        if 0.0 <= label + s <= WINDOW_S:
            return s
    return 0.0


def zero_patch(window: EcgWindow, start_s: float, dur_s: float) -> EcgWindow:
    lo = int(round(start_s * window.fs))
    hi = min(int(round((start_s + dur_s) * window.fs)), window.n)
    sig = window.signal.copy()
    sig[:, max(lo, 0):hi] = 0.0
    return window.copy(signal=sig)


def patch_allowed(start_s: float, dur_s: float, changepoint_s: float, guard: float = PATCH_GUARD_S) -> bool:
    return start_s + dur_s <= changepoint_s - guard or start_s >= changepoint_s + guard


def draw_patch(rng, window: EcgWindow, dur_range=(1.0, 2.0)):
    for _ in range(MAX_ATTEMPTS):
        dur = float(rng.uniform(*dur_range))
        start = float(rng.uniform(0.0, WINDOW_S - dur))
        if patch_allowed(start, dur, window.changepoint_s):
            return start, dur
    log.info("%s: no non-critical patch position; dropout step skipped", window.base_id)
    return None


def _lead_range(sig: np.ndarray) -> np.ndarray:
    return sig.max(axis=-1) - sig.min(axis=-1)


def add_noise(window: EcgWindow, frac: float, rng: np.random.Generator) -> EcgWindow:
    std = frac * _lead_range(window.signal)
    noise = rng.standard_normal(window.signal.shape) * std[:, None]
    return window.copy(signal=window.signal + noise)


def add_baseline_wander(window: EcgWindow, freq: float, amp_frac: float, phase) -> EcgWindow:
    """Add ``amp * sin(2 pi f t + phase)``; ``phase`` may be per-lead."""
    t = np.arange(window.n) / window.fs
    amp = amp_frac * _lead_range(window.signal)
    ph = np.broadcast_to(np.asarray(phase, dtype=np.float64), (window.signal.shape[0],))
    wave = np.sin(2 * np.pi * freq * t[None, :] + ph[:, None])
    return window.copy(signal=window.signal + amp[:, None] * wave)


def apply_filter(window: EcgWindow, filt: IirFilter) -> EcgWindow:
    if not filt.is_stable():
        raise ValueError("refusing to apply an unstable filter")
    return window.copy(signal=sosfilt(filt, window.signal, axis=-1))


def amplitude_scale(window: EcgWindow, factor: float) -> EcgWindow:
    return window.copy(signal=window.signal * factor)


def draw_filter(rng, fs: float, cfg: EcgAugmentConfig = EcgAugmentConfig()) -> IirFilter:
    kind = ("lowpass", "highpass", "bandpass")[int(rng.integers(3))]
    nyq = fs / 2.0
    if kind == "lowpass":
        cut = (float(rng.uniform(*cfg.lowpass_fc)),)
    elif kind == "highpass":
        cut = (float(rng.uniform(*cfg.highpass_fc)),)
    else:
        cut = cfg.bandpass
    cut = tuple(min(c, 0.95 * nyq) for c in cut)
    return design_butterworth(kind, FILTER_ORDER, cut if len(cut) > 1 else cut[0], fs)


def augment_ecg_once(window: EcgWindow, rng: np.random.Generator, augment_index: int,
                     cfg: EcgAugmentConfig = EcgAugmentConfig()) -> tuple[EcgWindow, EcgAugmentParams]:
    """shift -> dropout patch -> noise -> baseline wander -> filter -> amplitude scale."""
    params = EcgAugmentParams()
    w = window.copy(augment_index=augment_index)

    params.shift_s = draw_shift(rng, w.changepoint_s, cfg.max_shift_s)
    w = temporal_shift(w, params.shift_s)

    patch = draw_patch(rng, w, cfg.patch_dur_s)
    if patch is not None:
        params.patch = patch
        w = zero_patch(w, *patch)

    params.noise_frac = float(rng.uniform(*cfg.noise_frac))
    w = add_noise(w, params.noise_frac, rng)

    freq = float(rng.uniform(*cfg.wander_freq))
    frac = float(rng.uniform(*cfg.wander_frac))
    n_leads = w.signal.shape[0]
    phase = rng.uniform(0, 2 * np.pi, size=1 if cfg.shared_wander_phase else n_leads)
    params.wander = (freq, frac, tuple(float(p) for p in phase))
    w = add_baseline_wander(w, freq, frac, phase if len(phase) > 1 else phase[0])

    filt = draw_filter(rng, w.fs, cfg)
    params.filter = (filt.kind, *filt.cutoffs)
    w = apply_filter(w, filt)

    params.amp_scale = float(rng.uniform(*cfg.amp_scale))
    w = amplitude_scale(w, params.amp_scale)
    return w, params


def augment_ecg(window: EcgWindow, count: int = 100, seed: int = 0,
                cfg: EcgAugmentConfig = EcgAugmentConfig()) -> list[EcgWindow]:
    return [augment_ecg_once(window, derived_rng(seed, window.base_id, i), i, cfg)[0]
            for i in range(1, count + 1)]
