"""Depth/difference visualization: fixed colormap LUT and binary PPM output.

The colormap is a self-contained five-anchor table (dark violet through
yellow), expanded once into a 256-entry LUT by linear interpolation; plane
values in [0, 1] pick the nearest LUT entry. Images are written as binary
P6 PPM files, so byte-exact golden tests need no external imaging stack.
"""

import numpy as np

from .errors import ParameterError, ShapeError

COLORMAP_ANCHORS = (
    (0.00, (68, 1, 84)),
    (0.25, (59, 82, 139)),
    (0.50, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.00, (253, 231, 37)),
)


def build_lut() -> np.ndarray:
    """256 x 3 uint8 lookup table interpolated between the anchors."""
    positions = np.array([a[0] for a in COLORMAP_ANCHORS])
    colors = np.array([a[1] for a in COLORMAP_ANCHORS], dtype=np.float64)
    xs = np.arange(256) / 255.0
    lut = np.stack([np.interp(xs, positions, colors[:, c]) for c in range(3)], axis=1)
    return np.rint(lut).astype(np.uint8)


_LUT = build_lut()


def apply_colormap(plane: np.ndarray) -> np.ndarray:
    """Map a [0, 1] plane to (H, W, 3) uint8 via nearest-LUT-entry lookup."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ShapeError(f"colormap input must be a 2-D plane, got shape {plane.shape}")
    idx = np.clip(np.rint(plane * 255.0), 0, 255).astype(np.intp)
    return _LUT[idx]


def rgb_to_pixels(rgb: np.ndarray) -> np.ndarray:
    """(3, H, W) planes in [0, 1] to (H, W, 3) uint8."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) planes, got {rgb.shape}")
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(pixels: np.ndarray, path) -> None:
    """Binary P6 image from (H, W, 3) uint8 pixels."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ParameterError(f"PPM needs (H, W, 3) uint8 pixels, got {pixels.shape} {pixels.dtype}")
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
