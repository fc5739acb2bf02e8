"""Coordinate and intensity-weighted coordinate channels.

Two coordinate conventions are supported:

``integer``
    2-D planes hold the pixel index (0 .. extent-1); the 1-D temporal channel
    runs linearly from 0 to ``t_max`` seconds inclusive.
``normalized``
    ``2 * i / extent - 1``, the convention under which a one-hot image's
    summed product with the coordinate planes recovers the hot pixel.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

IMAGE_SHAPE = (3, 256, 256)
ECG_SHAPE = (2, 500)
WINDOW_SECONDS = 20.0


class CoordMode(str, Enum):
    INTEGER = "integer"
    NORMALIZED = "normalized"


class EncodingKind(str, Enum):
    COORDCONV = "coordconv"
    INTENSITY_WEIGHTED = "intensity_weighted"


@dataclass(frozen=True)
class EncodedInput:
    channels: np.ndarray
    encoding_kind: EncodingKind
    mode: CoordMode


def coord_channels_2d(h: int, w: int, mode: CoordMode | str = CoordMode.INTEGER, dtype=np.float64):
    """Return ``(X, Y)``; X varies along rows (axis 0), Y along columns."""
    if h < 1 or w < 1:
        raise ValueError(f"extents must be positive, got {h}x{w}")
    mode = CoordMode(mode)
    i = np.arange(h, dtype=dtype)
    j = np.arange(w, dtype=dtype)
    if mode is CoordMode.NORMALIZED:
        i = 2.0 * i / h - 1.0
        j = 2.0 * j / w - 1.0
    x = np.broadcast_to(i[:, None], (h, w)).copy()
    y = np.broadcast_to(j[None, :], (h, w)).copy()
    return x, y


def coord_channel_1d(n: int, t_max: float = WINDOW_SECONDS,
                     mode: CoordMode | str = CoordMode.INTEGER, dtype=np.float64) -> np.ndarray:
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    k = np.arange(n, dtype=dtype)
    if CoordMode(mode) is CoordMode.NORMALIZED:
        return 2.0 * k / n - 1.0
    return t_max * k / (n - 1)


def intensity_weight_2d(image: np.ndarray, coords) -> tuple[np.ndarray, np.ndarray]:
    x, y = coords
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[1:] != x.shape or x.shape != y.shape:
        raise ValueError(f"image {image.shape} does not match coordinate planes {x.shape}")
    intensity = image.mean(axis=0)
    return x * intensity, y * intensity


def intensity_weight_1d(signal: np.ndarray, coord: np.ndarray) -> np.ndarray:
    signal = np.asarray(signal)
    if signal.ndim != 2 or signal.shape[1] != coord.shape[-1]:
        raise ValueError(f"signal {signal.shape} does not match coordinate length {coord.shape[-1]}")
    return coord * signal.mean(axis=0)


def extra_channels(base: np.ndarray, kind: EncodingKind | str,
                   mode: CoordMode | str = CoordMode.INTEGER, batched: bool = False) -> np.ndarray:
    """Channels appended to ``base``: 2 planes for a 3xHxW image, 1 row for a 2xN signal."""
    kind = EncodingKind(kind)
    sample_shape = base.shape[1:] if batched else base.shape
    if len(sample_shape) == 3 and sample_shape[0] == 3:
        x, y = coord_channels_2d(sample_shape[1], sample_shape[2], mode)
        planes = np.stack([x, y]).astype(base.dtype)
        if kind is EncodingKind.COORDCONV:
            return np.broadcast_to(planes, base.shape[:-3] + planes.shape)
        return planes * base.mean(axis=-3, keepdims=True)
    if len(sample_shape) == 2 and sample_shape[0] == 2:
        t = coord_channel_1d(sample_shape[1], WINDOW_SECONDS, mode).astype(base.dtype)[None]
        if kind is EncodingKind.COORDCONV:
            return np.broadcast_to(t, base.shape[:-2] + t.shape)
        return t * base.mean(axis=-2, keepdims=True)
    raise ValueError(f"unsupported base shape {base.shape}; expected 3xHxW image or 2xN signal")


def assemble_input(base: np.ndarray, kind: EncodingKind | str = EncodingKind.COORDCONV,
                   mode: CoordMode | str = CoordMode.INTEGER, batched: bool = False) -> EncodedInput:
    """Stack ``base`` with its coordinate or intensity-weighted channels."""
    base = np.asarray(base)
    extra = extra_channels(base, kind, mode, batched)
    chan_axis = 1 if batched else 0
    out = np.concatenate([base, np.asarray(extra, dtype=base.dtype)], axis=chan_axis)
    return EncodedInput(out, EncodingKind(kind), CoordMode(mode))


@lru_cache(maxsize=8)
def _flat_normalized_planes(h: int, w: int) -> np.ndarray:
    x, y = coord_channels_2d(h, w, CoordMode.NORMALIZED)
    return np.stack([x.ravel(), y.ravel()])


def recover_onehot_coords(onehot: np.ndarray) -> tuple[int, int]:
    """Invert the normalised summed-product identity for a one-hot matrix."""
    onehot = np.asarray(onehot)
    if onehot.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    flat = onehot.ravel()
    # a boolean mask counts far faster than count_nonzero on floats
    if flat.max() != 1 or np.count_nonzero(flat != 0) != 1:
        raise ValueError("input is not one-hot")
    h, w = onehot.shape
    sx, sy = _flat_normalized_planes(h, w) @ flat.astype(np.float64, copy=False)
    return int(round(h * (sx + 1.0) / 2.0)), int(round(w * (sy + 1.0) / 2.0))
