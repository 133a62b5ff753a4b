"""Core numeric containers and geometry utilities.

Images are channel-first float32 arrays in the model's normalized input
space. Feature maps are (h, w, d) with the channel axis last, so a spatial
cell's depth vector is a contiguous slice. All containers are frozen after
construction and safe to share across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_float32
from .errors import BoundsError, DimensionError


@dataclass(frozen=True)
class ImageTensor:
    """Preprocessed image, shape (channels, height, width)."""

    pixels: np.ndarray
    source_path: str = ""

    def __post_init__(self):
        arr = as_float32(self.pixels, "pixels")
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise DimensionError(f"image must be (1|3, H, W), got {arr.shape}")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise DimensionError(f"degenerate image shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class FeatureMap3D:
    """Convolutional output, shape (h, w, d)."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_float32(self.values, "feature map")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DimensionError(f"feature map must be (h, w, d), got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def shape(self):
        return self.values.shape

    def cell_vector(self, cell):
        """Depth vector of one spatial cell."""
        h, w, _ = self.values.shape
        if not (0 <= cell.row < h and 0 <= cell.col < w):
            raise BoundsError(f"cell {cell} outside map {h}x{w}")
        return self.values[cell.row, cell.col, :]


@dataclass(frozen=True)
class LatentVector:
    """Penultimate-layer representation, 1-D float32."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_float32(self.values, "latent").ravel()
        if arr.size < 1:
            raise DimensionError("latent vector must be non-empty")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class ActivationMap:
    """Spatial saliency grid, shape (h, w)."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_float32(self.values, "activation map")
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise DimensionError(f"activation map must be (h, w), got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, order=True)
class SpatialCell:
    """One (row, col) position in a feature map."""

    row: int
    col: int


@dataclass(frozen=True)
class PixelBox:
    """Half-open pixel rectangle: rows [top, bottom), cols [left, right)."""

    top: int
    left: int
    bottom: int
    right: int

    def __post_init__(self):
        if not (self.top < self.bottom and self.left < self.right):
            raise BoundsError(f"empty box {self}")
        if self.top < 0 or self.left < 0:
            raise BoundsError(f"negative box origin {self}")

    @property
    def height(self):
        return self.bottom - self.top

    @property
    def width(self):
        return self.right - self.left

    def as_tuple(self):
        return (self.top, self.left, self.bottom, self.right)


def upsample_cell_to_box(cell, map_shape, image_shape):
    """Pixel rectangle covered by a feature-map cell under uniform scaling.

    Uses floor-based tiling: row i of an h-cell map covers pixel rows
    [floor(i*H/h), floor((i+1)*H/h)). The boxes of all cells tile the image
    exactly, overlapping only at shared borders.
    """
    h, w = map_shape
    H, W = image_shape
    if h < 1 or w < 1 or H < h or W < w:
        raise BoundsError(f"image shape {image_shape} must dominate map shape {map_shape}")
    if not (0 <= cell.row < h and 0 <= cell.col < w):
        raise BoundsError(f"cell {cell} outside map {h}x{w}")
    top = (cell.row * H) // h
    bottom = ((cell.row + 1) * H) // h
    left = (cell.col * W) // w
    right = ((cell.col + 1) * W) // w
    return PixelBox(top=top, left=left, bottom=bottom, right=right)


def resize_bilinear(values, out_shape):
    """Bilinear resize of a 2-D float array using pixel-center sampling.

    Output pixel (i, j) samples the input at ((i+0.5)*h/H - 0.5,
    (j+0.5)*w/W - 0.5), clamped to the valid range, so constant inputs stay
    constant and edge values are preserved. Same-size resize is the identity.
    """
    arr = np.asarray(values)
    h_in, w_in = arr.shape
    h_out, w_out = out_shape
    if h_out < 1 or w_out < 1:
        raise BoundsError(f"degenerate target shape {out_shape}")

    ys = np.clip((np.arange(h_out) + 0.5) * (h_in / h_out) - 0.5, 0.0, h_in - 1.0)
    xs = np.clip((np.arange(w_out) + 0.5) * (w_in / w_out) - 0.5, 0.0, w_in - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h_in - 1)
    x1 = np.minimum(x0 + 1, w_in - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    out = (a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx
           + c * wy * (1 - wx) + d * wy * wx)
    return out.astype(arr.dtype, copy=False)


def upsample_map_bilinear(activation_map, image_shape):
    """Upsample an activation map to pixel resolution."""
    h, w = activation_map.shape
    H, W = image_shape
    if H < h or W < w:
        raise BoundsError(f"target {image_shape} smaller than map {activation_map.shape}")
    return ActivationMap(resize_bilinear(activation_map.values, (H, W)))


def l2_distance(a, b):
    """Euclidean distance between two equal-length vectors."""
    from ._validation import check_vector_pair

    av, bv = check_vector_pair(a, b)
    return float(np.linalg.norm(av - bv))
