"""Digital Butterworth design as second-order sections.

Analog prototype poles -> frequency-transformed (lowpass/highpass/bandpass)
-> bilinear transform with pre-warped cutoffs -> paired into biquads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps


@dataclass
class IirFilter:
    sos: np.ndarray  # (n_sections, 6): b0 b1 b2 1 a1 a2
    kind: str
    order: int
    cutoffs: tuple
    fs: float

    def __post_init__(self):
        self.sos = np.atleast_2d(np.asarray(self.sos, dtype=np.float64))
        if not self.is_stable():
            raise ValueError("unstable filter section")

    def pole_magnitudes(self) -> np.ndarray:
        mags = []
        for sec in self.sos:
            a = sec[3:] / sec[3]
            mags.extend(np.abs(np.roots(a)) if np.any(a[1:]) else [0.0])
        return np.asarray(mags)

    def is_stable(self) -> bool:
        return bool(np.all(self.pole_magnitudes() < 1.0))

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response evaluated directly from the sections."""
        z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / self.fs)
        zi = 1.0 / z
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h *= (b0 + b1 * zi + b2 * zi ** 2) / (a0 + a1 * zi + a2 * zi ** 2)
        return h


def _pair_sections(zeros: np.ndarray, poles: np.ndarray, gain: float) -> np.ndarray:
    """Group conjugate pole pairs with zeros; real leftovers become first-order sections."""
    poles = list(poles)
    zeros = list(zeros)
    sections = []
    # take poles closest to the unit circle first so every section keeps its own zeros
    poles.sort(key=lambda p: -abs(p))
    while poles:
        p = poles.pop(0)
        if abs(p.imag) > 1e-12:
            j = min(range(len(poles)), key=lambda i: abs(poles[i] - np.conj(p)))
            poles.pop(j)
            pp = [p, np.conj(p)]
        else:
            reals = [i for i, q in enumerate(poles) if abs(q.imag) <= 1e-12]
            if reals:
                pp = [p, poles.pop(reals[0])]
            else:
                pp = [p]
        zz = [zeros.pop(0) for _ in range(min(len(pp), len(zeros)))]
        a = np.real(np.poly(pp))
        b = np.real(np.poly(zz)) if zz else np.array([1.0])
        a = np.pad(a, (0, 3 - len(a)))
        b = np.pad(b, (0, 3 - len(b)))
        sections.append(np.concatenate([b, a]))
    sos = np.array(sections)
    sos[0, :3] *= gain
    return sos


def design_butterworth(kind: str, order: int, cutoffs, fs: float) -> IirFilter:
    """Digital Butterworth filter; magnitude at each cutoff is ``1/sqrt(2)``.

    ``kind`` is ``lowpass``, ``highpass`` or ``bandpass`` (cutoffs a pair).
    """
    c = np.atleast_1d(np.asarray(cutoffs, dtype=np.float64))
    nyq = fs / 2.0
    if kind == "bandpass":
        if c.size != 2 or not c[0] < c[1]:
            raise ValueError("bandpass needs (low, high) cutoffs")
    elif kind in ("lowpass", "highpass"):
        if c.size != 1:
            raise ValueError(f"{kind} needs one cutoff")
    else:
        raise ValueError(f"unknown filter kind {kind!r}")
    if np.any(c <= 0) or np.any(c >= nyq):
        raise ValueError(f"cutoffs {c.tolist()} must lie in (0, {nyq}) Hz")
    if order < 1:
        raise ValueError("order must be >= 1")

    # pre-warped analog edge frequencies for a bilinear transform with T = 1/fs
    warped = 2.0 * fs * np.tan(np.pi * c / fs)
    k = np.arange(order)
    proto = np.exp(1j * np.pi * (2 * k + order + 1) / (2 * order))  # left half-plane, |p| = 1

    if kind == "lowpass":
        wc = warped[0]
        pa, za, ga = proto * wc, np.array([]), wc ** order
    elif kind == "highpass":
        wc = warped[0]
        pa = wc / proto
        za = np.zeros(order)
        ga = 1.0 / np.real(np.prod(-proto))
    else:
        w0 = np.sqrt(warped[0] * warped[1])
        bw = warped[1] - warped[0]
        half = proto * bw / 2.0
        disc = np.sqrt(half ** 2 - w0 ** 2 + 0j)
        pa = np.concatenate([half + disc, half - disc])
        za = np.zeros(order)
        ga = bw ** order

    # bilinear: s -> 2 fs (z-1)/(z+1)
    fs2 = 2.0 * fs
    pd = (fs2 + pa) / (fs2 - pa)
    zd = (fs2 + za) / (fs2 - za)
    n_extra = len(pa) - len(za)
    zd = np.concatenate([zd, -np.ones(n_extra)])
    gd = ga * np.real(np.prod(fs2 - za) / np.prod(fs2 - pa))
    sos = _pair_sections(zd, pd, gd)
    return IirFilter(sos, kind, order, tuple(c.tolist()), fs)


def sosfilt(filt: IirFilter, x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Causal cascade filtering from zero initial state."""
    return sps.sosfilt(filt.sos, x, axis=axis)


def sosfiltfilt(filt: IirFilter, x: np.ndarray, axis: int = -1) -> np.ndarray:
    return sps.sosfiltfilt(filt.sos, x, axis=axis)
