"""Synthetic stand-ins with exact ground truth.

Images: a dark anti-aliased ellipse ("nucleus") on a textured background,
target = analytic centre.  ECG: a two-lead Gaussian pulse train that turns
into a 4-7 Hz oscillation at the changepoint.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .augment import augment_ecg, augment_image, derived_rng
from .ingest.container import ContainerWriter
from .ingest.ecg import OUT_LEN, WINDOW_S, EcgWindow, resample_window
from .ingest.images import TARGET_SIZE, ImageSample, normalize_image

log = logging.getLogger(__name__)

SUPERSAMPLE = 4


@dataclass
class EllipseSpec:
    center: tuple  # (x, y) pixels
    axes: tuple  # semi-axes (a, b) pixels
    rotation: float
    foreground: tuple
    background: tuple
    noise_std: float

    def __post_init__(self):
        a, b = self.axes
        if not (10 <= a <= 60 and 10 <= b <= 60):
            raise ValueError(f"semi-axes {self.axes} outside [10, 60]")
        cx, cy = self.center
        if not (64 <= cx <= TARGET_SIZE - 64 and 64 <= cy <= TARGET_SIZE - 64):
            raise ValueError(f"centre {self.center} violates the 64 px margin")


def draw_ellipse_spec(rng: np.random.Generator) -> EllipseSpec:
    bg = rng.uniform(0.55, 0.85, size=3)
    fg = bg * rng.uniform(0.25, 0.5) + rng.uniform(-0.05, 0.05, size=3)
    return EllipseSpec(
        center=(float(rng.uniform(64, TARGET_SIZE - 64)), float(rng.uniform(64, TARGET_SIZE - 64))),
        axes=(float(rng.uniform(10, 40)), float(rng.uniform(10, 40))),
        rotation=float(rng.uniform(0, np.pi)),
        foreground=tuple(np.clip(fg, 0, 1).tolist()),
        background=tuple(bg.tolist()),
        noise_std=float(rng.uniform(0.01, 0.04)),
    )


def ellipse_coverage(spec: EllipseSpec, size: int = TARGET_SIZE) -> np.ndarray:
    """Fractional pixel coverage from ``SUPERSAMPLE``^2 sub-samples per pixel."""
    off = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    cx, cy = spec.center
    a, b = spec.axes
    c, s = np.cos(spec.rotation), np.sin(spec.rotation)
    cov = np.zeros((size, size))
    cols = np.arange(size, dtype=np.float64)
    rows = np.arange(size, dtype=np.float64)
    for dy in off:
        for dx in off:
            x = cols[None, :] + dx - cx
            y = rows[:, None] + dy - cy
            u = c * x + s * y
            v = -s * x + c * y
            cov += (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return cov / SUPERSAMPLE ** 2


def render_ellipse(spec: EllipseSpec, rng: np.random.Generator, size: int = TARGET_SIZE) -> np.ndarray:
    cov = ellipse_coverage(spec, size)
    texture = np.zeros((size, size))
    if spec.noise_std:  # a noise-free spec renders a clean, symmetric scene
        texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), 3.0)
        texture *= 0.05 / max(texture.std(), 1e-12)
    bg = np.asarray(spec.background)[:, None, None] * (1.0 + texture[None])
    fg = np.asarray(spec.foreground)[:, None, None]
    img = bg * (1.0 - cov[None]) + fg * cov[None]
    if spec.noise_std:
        img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
    return img


def gen_ellipse_sample(rng: np.random.Generator, base_id: str = "ellipse",
                       spec: EllipseSpec | None = None) -> ImageSample:
    spec = spec or draw_ellipse_spec(rng)
    img = render_ellipse(spec, rng)
    norm, _ = normalize_image(img)
    return ImageSample(norm.astype(np.float32), (spec.center[0], spec.center[1]), base_id, 0)


@dataclass
class SynthEcgSpec:
    changepoint_s: float
    beat_rate_hz: float
    pulse_width_s: float
    pulse_amp: float
    osc_freq_hz: float
    osc_amp: float
    lead2_gain: float
    lead2_delay_s: float
    noise_std: float

    def __post_init__(self):
        if not 2.0 <= self.changepoint_s <= 18.0:
            raise ValueError("changepoint must lie in [2, 18] s")


def draw_ecg_spec(rng: np.random.Generator) -> SynthEcgSpec:
    return SynthEcgSpec(
        changepoint_s=float(rng.uniform(2.0, 18.0)),
        beat_rate_hz=float(rng.uniform(1.0, 1.4)),
        pulse_width_s=float(rng.uniform(0.06, 0.1)),
        pulse_amp=float(rng.uniform(0.8, 1.5)),
        osc_freq_hz=float(rng.uniform(4.0, 7.0)),
        osc_amp=float(rng.uniform(0.4, 0.9)),
        lead2_gain=float(rng.uniform(0.5, 0.9)),
        lead2_delay_s=float(rng.uniform(0.0, 0.04)),
        noise_std=float(rng.uniform(0.01, 0.04)),
    )


PULSE_SUPPORT = 4.0  # pulse half-width in standard deviations


def _lead(spec: SynthEcgSpec, t: np.ndarray, phase0: float, osc_phase: float) -> np.ndarray:
    period = 1.0 / spec.beat_rate_hz
    beats = np.arange(phase0 * period, spec.changepoint_s, period)
    # whole pulses only: a pulse clipped by the window start or the changepoint is a step edge
    # whose broadband leakage blurs the spectral contrast between the regimes
    margin = PULSE_SUPPORT * spec.pulse_width_s
    beats = beats[(beats >= margin) & (beats <= spec.changepoint_s - margin)]
    pre = np.zeros_like(t)
    for tb in beats:
        pre += spec.pulse_amp * np.exp(-0.5 * ((t - tb) / spec.pulse_width_s) ** 2)
    post = spec.osc_amp * np.sin(2 * np.pi * spec.osc_freq_hz * (t - spec.changepoint_s) + osc_phase)
    return np.where(t < spec.changepoint_s, pre, post)


def gen_ecg_sample(rng: np.random.Generator, fs: float = 250.0, base_id: str = "ecg",
                   spec: SynthEcgSpec | None = None) -> EcgWindow:
    """Raw-rate 20 s window; pass through ``resample_window`` for the 500-sample form."""
    spec = spec or draw_ecg_spec(rng)
    n = int(round(WINDOW_S * fs))
    t = np.arange(n) / fs
    phase0 = float(rng.uniform(0, 1))
    osc_phase = float(rng.uniform(0, 2 * np.pi))
    lead1 = _lead(spec, t, phase0, osc_phase)
    lead2 = spec.lead2_gain * _lead(spec, t - spec.lead2_delay_s, phase0, osc_phase) + 0.1
    sig = np.stack([lead1, lead2]) + rng.normal(0.0, spec.noise_std, size=(2, n))
    return EcgWindow(sig, spec.changepoint_s, base_id, 0, fs)


def gen_dataset(task: str, n_base: int, augment_count: int, seed: int, out, force: bool = False):
    """Write ``n_base`` originals plus ``augment_count`` variants each to a container."""
    if task not in ("image", "ecg"):
        raise ValueError(f"unknown task {task!r}; expected 'image' or 'ecg'")
    if n_base < 5:
        raise ValueError("need at least 5 base samples for 5-fold grouping")
    shape = (3, TARGET_SIZE, TARGET_SIZE) if task == "image" else (2, OUT_LEN)
    meta = dict(seed=int(seed), n_base=int(n_base), augment_count=int(augment_count), source="synthetic")
    with ContainerWriter(out, task, shape, force=force, extra_meta=meta) as wr:
        for i in range(n_base):
            base_id = f"synth_{task}_{i:05d}"
            rng = derived_rng(seed, base_id, 0)
            if task == "image":
                s = gen_ellipse_sample(rng, base_id)
                wr.add(s.pixels, s.target, base_id, 0)
                for v in augment_image(s, augment_count, seed):
                    wr.add(v.pixels, v.target, base_id, v.augment_index)
            else:
                raw = gen_ecg_sample(rng, base_id=base_id)
                w = resample_window(raw)
                wr.add(w.signal, w.target, base_id, 0)
                for v in augment_ecg(raw, augment_count, seed):
                    r = resample_window(v)
                    wr.add(r.signal, r.target, base_id, r.augment_index)
    return wr.count
