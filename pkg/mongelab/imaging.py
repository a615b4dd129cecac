#! /usr/bin/env python
"""Grayscale image ingestion, density preparation and transport based
comparison products (transport distance, divergence map, warp frames).

Image rows run along grid axis 1 and columns along axis 2.
"""

import os
import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from . import grid as gr
from .mongeampere import DensityPair, NewtonConfig, run_newton

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 0.1

# Output formats by file extension (Pillow writes .pgm as binary P5)
WRITE_FORMATS = {'.png': 'PNG', '.pgm': 'PPM'}


class ImageError(IOError):
    """Unreadable, undecodable or unwritable image"""


@dataclass(frozen=True)
class GrayImage:
    """Intensities in [0, 1], shape (height, width)"""
    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise ImageError('gray image needs a non-empty 2D pixel array')
        if np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
            raise ImageError('gray image intensities must lie in [0, 1]')
        arr.setflags(write=False)
        object.__setattr__(self, 'pixels', arr)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def to_uint8(self):
        return np.round(self.pixels * 255.0).astype(np.uint8)


@dataclass
class TransportResult:
    u: gr.ScalarField
    distance: float
    divergence: gr.ScalarField
    report: object
    pair: DensityPair = None


def read_image(path):
    """Decode a PGM or PNG file (colour is reduced to luma) into a GrayImage"""
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ('I', 'I;16', 'I;16B', 'I;16L'):
                # 16 bit grayscale
                pixels = np.asarray(img, dtype=float) / 65535.0
            else:
                # ITU-R 601-2 luma: 0.299 R + 0.587 G + 0.114 B
                pixels = np.asarray(img.convert('L'), dtype=float) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageError('cannot read image ' + str(path) + ': ' + str(exc))
    return GrayImage(np.clip(pixels, 0.0, 1.0))


def write_image(image, path):
    """Write a GrayImage as 8 bit PGM or PNG, chosen by extension"""
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in WRITE_FORMATS:
        raise ImageError('unsupported output format for ' + str(path) + ' (use .pgm or .png)')
    try:
        Image.fromarray(image.to_uint8(), mode='L').save(path, format=WRITE_FORMATS[ext])
    except OSError as exc:
        raise ImageError('cannot write image ' + str(path) + ': ' + str(exc))


def resample(image, n):
    """Bilinear resampling onto n x n pixel centres"""
    rows = (np.arange(n) + 0.5) * image.height / n - 0.5
    cols = (np.arange(n) + 0.5) * image.width / n - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing='ij')
    return ndimage.map_coordinates(image.pixels, [rr, cc], order=1, mode='nearest')


def to_density(image, n, floor=DEFAULT_FLOOR):
    """Resample to n x n and map intensities affinely so that the minimum is
    floor and the grid mean is 1.
    """
    if n < 2 or n & (n - 1):
        raise gr.GridError('density grid size must be a power of two, got n=' + str(n))
    if not 0.0 < floor < 1.0:
        raise ValueError('density floor must lie in (0, 1), got ' + repr(floor))
    grid = gr.PeriodicGrid(n)
    values = resample(image, n)
    low = float(values.min())
    avg = float(values.mean())
    if avg - low <= 1e-12 * max(1.0, abs(avg)):
        if avg <= 0.0:
            logger.warning('degenerate image (constant zero), using a uniform density')
        return grid.constant(1.0)
    return gr.ScalarField(grid, floor + (1.0 - floor) * (values - low) / (avg - low))


def transport_distance(u, f):
    """Simpson quadrature of |grad u|^2 f over the unit square"""
    gr.check_same_grid(u, f)
    return gr.simpson_average(gr.gradient(u, 4).norm_squared() * f)


def divergence_map(u):
    """Divergence of the displacement grad u, i.e. the Laplacian of u"""
    return gr.laplacian(u, 4)


def render(field, low=None, high=None):
    """Map [low, high] affinely onto [0, 1]; a flat range renders black"""
    values = field.values
    low = float(values.min()) if low is None else low
    high = float(values.max()) if high is None else high
    if high - low <= 0.0:
        return GrayImage(np.zeros_like(values))
    return GrayImage(np.clip((values - low) / (high - low), 0.0, 1.0))


def warp_sequence(state, pair=None):
    """Render the retained frames f~_0, f~_1, ... of a Newton run.

    All frames share one intensity range. With a density pair the source f
    and target g are rendered on the same scale and appended as the last two
    images.
    """
    frames = list(state.frames)
    if not frames:
        raise ValueError('no retained frames; run the solver with keep_history enabled')
    fields = frames + ([pair.f, pair.g] if pair is not None else [])
    low = min(float(fld.values.min()) for fld in fields)
    high = max(float(fld.values.max()) for fld in fields)
    return [render(fld, low, high) for fld in fields]


def register(source, target, n, cfg=None, floor=DEFAULT_FLOOR):
    """Transport the source image density onto the target image density"""
    if cfg is None:
        cfg = NewtonConfig()
    f = to_density(source, n, floor)
    g = to_density(target, n, floor)
    # The affine map hits the floor exactly, up to roundoff
    pair = DensityPair(f, g, floor=0.5 * floor)
    u, report = run_newton(pair, cfg)
    return TransportResult(u=u,
                           distance=transport_distance(u, f),
                           divergence=divergence_map(u),
                           report=report,
                           pair=pair)


def localise(divergence):
    """Grid coordinates (x1, x2) of the largest |divergence|"""
    i, j = np.unravel_index(np.argmax(np.abs(divergence.values)), divergence.values.shape)
    return i * divergence.grid.h, j * divergence.grid.h


def phantom(n, lesions=(), seed=None, noise=0.0, smoothing=1.0 / 128):
    """Synthetic head-like scan: a smooth elliptic body with bright disc lesions.

    lesions holds (x1, x2, radius, contrast) tuples in unit-square coordinates;
    smoothing is the Gaussian blur width as a fraction of the side.
    """
    x1, x2 = gr.PeriodicGrid(n).coordinates()
    body = ((x1 - 0.5) / 0.38) ** 2 + ((x2 - 0.5) / 0.3) ** 2 <= 1.0
    img = 0.15 + 0.45 * body
    for c1, c2, radius, contrast in lesions:
        img = img + contrast * (((x1 - c1) ** 2 + (x2 - c2) ** 2) <= radius ** 2)
    img = ndimage.gaussian_filter(img, sigma=smoothing * n, mode='wrap')
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        img = img + noise * rng.standard_normal(img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0))
