"""Nuclear-contour annotations and image preprocessing.

Point coordinates follow the annotation files: ``x`` is the column, ``y``
the row, and pixel ``(row, col)`` sits at ``(x=col, y=row)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

TARGET_SIZE = 256
NORM_EPS = 1e-8


class ContourParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass
class ContourAnnotation:
    points: np.ndarray  # (n, 2) of x, y
    source_image_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) < 3:
            raise ContourParseError(f"contour needs at least 3 points, got {len(self.points)}")
        if not np.all(np.isfinite(self.points)):
            raise ContourParseError("non-finite contour coordinate")


@dataclass
class ImageSample:
    pixels: np.ndarray  # 3 x 256 x 256, normalised
    center: tuple[float, float]  # (x, y) in padded 256x256 pixel coordinates
    base_id: str
    augment_index: int = 0
    flags: list = field(default_factory=list)

    @property
    def target(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)


def parse_contour_dat(text: bytes | str, source_image_id: str = "") -> ContourAnnotation:
    if isinstance(text, bytes):
        text = text.decode("ascii")
    pts = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ContourParseError(f"expected 'x,y', got {raw!r}", lineno)
        try:
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ContourParseError(f"non-numeric coordinate in {raw!r}", lineno) from None
    return ContourAnnotation(np.array(pts).reshape(-1, 2), source_image_id)


def write_contour_dat(ann: ContourAnnotation) -> bytes:
    return "".join(f"{x!r},{y!r}\n" for x, y in ann.points.tolist()).encode("ascii")


def validate_sample(ann: ContourAnnotation, image_h: int, image_w: int) -> bool:
    """True when every contour point lies in ``[0, w) x [0, h)``."""
    x, y = ann.points[:, 0], ann.points[:, 1]
    return bool(np.all((x >= 0) & (y >= 0) & (x < image_w) & (y < image_h)))


def polygon_centroid(ann: ContourAnnotation) -> tuple[float, float, bool]:
    """Area-weighted centroid of the closed contour.

    Returns ``(cx, cy, degenerate)``; zero-area polygons fall back to the
    vertex mean with ``degenerate=True``.
    """
    p = ann.points
    # shift to the first vertex to limit cancellation in the cross products
    origin = p[0]
    q = p - origin
    x, y = q[:, 0], q[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a2 = cross.sum()
    scale = np.abs(q).max() ** 2 if len(q) else 0.0
    if abs(a2) <= 1e-12 * max(scale, 1.0):
        m = p.mean(axis=0)
        return float(m[0]), float(m[1]), True
    cx = ((x + xn) * cross).sum() / (3.0 * a2)
    cy = ((y + yn) * cross).sum() / (3.0 * a2)
    return float(cx + origin[0]), float(cy + origin[1]), False


def normalize_image(pixels: np.ndarray) -> tuple[np.ndarray, bool]:
    """Subtract the image's scalar mean and divide by its scalar std.

    Returns ``(normalised, constant)``; constant images divide by a tiny eps.
    """
    px = np.asarray(pixels, dtype=np.float64)
    if px.size == 0:
        raise ValueError("empty image")
    centred = px - px.mean()
    sd = centred.std()
    constant = sd < NORM_EPS
    return centred / (NORM_EPS if constant else sd), bool(constant)


def resample_isotropic(pixels: np.ndarray, long_side: int = TARGET_SIZE) -> tuple[np.ndarray, float]:
    """Bilinear rescale so the longer spatial side becomes ``long_side``.

    Output pixel ``o`` samples input position ``o / s``, so any point ``p``
    in pixel coordinates maps to ``p * s``.
    """
    c, h, w = pixels.shape
    s = long_side / max(h, w)
    if s == 1.0:
        return np.array(pixels, dtype=np.float64), 1.0
    oh = long_side if h >= w else max(1, int(round(h * s)))
    ow = long_side if w >= h else max(1, int(round(w * s)))
    rows = np.arange(oh) / s
    cols = np.arange(ow) / s
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = np.stack([
        ndimage.map_coordinates(np.asarray(pixels[k], dtype=np.float64), [rr, cc], order=1, mode="nearest")
        for k in range(c)
    ])
    return out, s


def pad_to_square(pixels: np.ndarray, target: int = TARGET_SIZE) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pad the shorter side; returns the array and ``(row_offset, col_offset)``."""
    c, h, w = pixels.shape
    if h > target or w > target:
        raise ValueError(f"image {h}x{w} larger than target {target}")
    ph, pw = (target - h) // 2, (target - w) // 2
    out = np.zeros((c, target, target), dtype=np.float64)
    out[:, ph:ph + h, pw:pw + w] = pixels
    return out, (ph, pw)


def preprocess_image(pixels: np.ndarray, ann: ContourAnnotation, base_id: str) -> ImageSample:
    """normalise -> resample -> pad, carrying the contour centroid along."""
    cx, cy, degenerate = polygon_centroid(ann)
    norm, constant = normalize_image(pixels)
    res, s = resample_isotropic(norm)
    padded, (ph, pw) = pad_to_square(res)
    flags = [f for f, on in (("degenerate_polygon", degenerate), ("constant_image", constant)) if on]
    center = (min(cx * s + pw, TARGET_SIZE - 1.0), min(cy * s + ph, TARGET_SIZE - 1.0))
    return ImageSample(padded.astype(np.float32), center, base_id, 0, flags)


def load_rgb(path) -> np.ndarray:
    """Read an image file into a ``3 x H x W`` float array."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr.transpose(2, 0, 1)
