"""Superpixel segmentation and region surgery.

`slic` is a deterministic SLIC-style k-means in joint (color, position)
space: seeds on a uniform grid, compactness-weighted distance, a fixed
iteration count, then connectivity enforcement that merges stray fragments
into their dominant neighbor. Labels are canonicalized in row-major order
of first occurrence so identical inputs always produce identical arrays.

Region surgery: show-only / hide-only masking against the occlusion fill
(zero in normalized space, i.e. the dataset mean), and tight-crop +
aspect-preserving upsample of one segment onto a fill-valued canvas.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BoundsError, ParameterError
from .types import ImageTensor, PixelBox, resize_bilinear

OCCLUSION_FILL = 0.0
DEFAULT_SEGMENTS = 30
DEFAULT_COMPACTNESS = 10.0
DEFAULT_ITERATIONS = 10
_COLOR_SCALE = 10.0

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class Segmentation:
    labels: np.ndarray
    n_segments: int
    params: dict

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ParameterError(f"label array must be 2-D, got shape {labels.shape}")
        object.__setattr__(self, "labels", labels.astype(np.int32))

    def mask(self, label):
        if not 0 <= label < self.n_segments:
            raise BoundsError(f"label {label} outside [0, {self.n_segments})")
        return self.labels == label

    def segment_sizes(self):
        return np.bincount(self.labels.ravel(), minlength=self.n_segments)

    def bounding_box(self, label):
        rows, cols = np.nonzero(self.mask(label))
        return PixelBox(int(rows.min()), int(cols.min()),
                        int(rows.max()) + 1, int(cols.max()) + 1)


def _grid_seeds(height, width, requested):
    n_cols = max(1, round((requested * width / height) ** 0.5))
    n_rows = max(1, round(requested / n_cols))
    rows = np.clip(((np.arange(n_rows) + 0.5) * height / n_rows).astype(int), 0, height - 1)
    cols = np.clip(((np.arange(n_cols) + 0.5) * width / n_cols).astype(int), 0, width - 1)
    return [(int(r), int(c)) for r in rows for c in cols]


def slic(image, requested_segments=DEFAULT_SEGMENTS,
         compactness=DEFAULT_COMPACTNESS, iterations=DEFAULT_ITERATIONS):
    """Deterministic grid-seeded SLIC; returns canonicalized labels."""
    if not isinstance(image, ImageTensor):
        raise ParameterError(f"slic expects an ImageTensor, got {type(image).__name__}")
    pixels = image.pixels
    _, height, width = pixels.shape
    if requested_segments < 1:
        raise ParameterError(f"requested_segments must be >= 1, got {requested_segments}")
    if requested_segments > height * width:
        raise ParameterError(
            f"requested {requested_segments} segments for {height * width} pixels")

    color = pixels.astype(np.float64).transpose(1, 2, 0) * _COLOR_SCALE
    seeds = _grid_seeds(height, width, requested_segments)
    k = len(seeds)
    interval = (height * width / k) ** 0.5
    ratio = (compactness / interval) ** 2

    centers_color = np.array([color[r, c] for r, c in seeds])
    centers_pos = np.array(seeds, dtype=np.float64)
    grid_r, grid_c = np.mgrid[0:height, 0:width].astype(np.float64)

    labels = np.zeros((height, width), dtype=np.int32)
    for _ in range(iterations):
        best = np.full((height, width), np.inf)
        labels.fill(-1)
        for ci in range(k):
            cr, cc = centers_pos[ci]
            r0, r1 = max(0, int(cr - 2 * interval)), min(height, int(cr + 2 * interval) + 1)
            c0, c1 = max(0, int(cc - 2 * interval)), min(width, int(cc + 2 * interval) + 1)
            if r0 >= r1 or c0 >= c1:
                continue
            d_color = ((color[r0:r1, c0:c1] - centers_color[ci]) ** 2).sum(axis=2)
            d_pos = ((grid_r[r0:r1, c0:c1] - cr) ** 2 + (grid_c[r0:r1, c0:c1] - cc) ** 2)
            dist = d_color + d_pos * ratio
            window = best[r0:r1, c0:c1]
            closer = dist < window
            window[closer] = dist[closer]
            labels[r0:r1, c0:c1][closer] = ci
        unassigned = labels < 0
        if np.any(unassigned):
            rows, cols = np.nonzero(unassigned)
            d_color = ((color[rows, cols, None, :] - centers_color[None, :, :]) ** 2).sum(axis=2)
            d_pos = ((rows[:, None] - centers_pos[:, 0]) ** 2
                     + (cols[:, None] - centers_pos[:, 1]) ** 2)
            labels[rows, cols] = np.argmin(d_color + d_pos * ratio, axis=1)
        for ci in range(k):
            member = labels == ci
            if np.any(member):
                centers_color[ci] = color[member].mean(axis=0)
                centers_pos[ci] = [grid_r[member].mean(), grid_c[member].mean()]

    labels = _enforce_connectivity(labels)
    labels, n_segments = _canonicalize(labels)
    return Segmentation(labels, n_segments, {
        "requested_segments": int(requested_segments),
        "compactness": float(compactness),
        "iterations": int(iterations),
        "seed": 0,
    })


def _enforce_connectivity(labels):
    """Keep each cluster's largest 4-connected component; merge every other
    fragment into the dominant already-final neighboring label."""
    height, width = labels.shape
    final = np.full((height, width), -1, dtype=np.int32)
    orphans = []
    for value in np.unique(labels):
        comp, n_comp = ndimage.label(labels == value, structure=_FOUR_CONN)
        if n_comp == 0:
            continue
        sizes = np.bincount(comp.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1
        final[comp == keep] = value
        for ci in range(1, n_comp + 1):
            if ci != keep:
                orphans.append(comp == ci)
    while orphans:
        remaining = []
        for mask in orphans:
            grown = ndimage.binary_dilation(mask, structure=_FOUR_CONN) & ~mask
            neighbor_labels = final[grown]
            neighbor_labels = neighbor_labels[neighbor_labels >= 0]
            if neighbor_labels.size == 0:
                remaining.append(mask)
                continue
            final[mask] = np.bincount(neighbor_labels).argmax()
        if len(remaining) == len(orphans):
            raise AssertionError("connectivity enforcement failed to converge")
        orphans = remaining
    return final


def _canonicalize(labels):
    """Relabel to 0..n-1 in row-major order of first appearance."""
    flat = labels.ravel()
    _, first_pos, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_pos, kind="stable"), kind="stable")
    canonical = order[inverse].reshape(labels.shape).astype(np.int32)
    return canonical, len(first_pos)


def _check_label_set(segmentation, labels, arg_name):
    labels = set(int(s) for s in labels)
    bad = [s for s in labels if not 0 <= s < segmentation.n_segments]
    if bad:
        raise BoundsError(f"{arg_name} contains unknown segment labels {sorted(bad)}")
    return labels


def occlude_except(image, segmentation, keep):
    """Keep the listed segments, fill everything else."""
    keep = _check_label_set(segmentation, keep, "keep")
    visible = np.isin(segmentation.labels, sorted(keep))
    pixels = np.where(visible[None, :, :], image.pixels,
                      np.float32(OCCLUSION_FILL))
    return ImageTensor(pixels.astype(np.float32), source_path=image.source_path)


def occlude_only(image, segmentation, remove):
    """Fill the listed segments, keep everything else."""
    remove = _check_label_set(segmentation, remove, "remove")
    keep = set(range(segmentation.n_segments)) - remove
    return occlude_except(image, segmentation, keep)


def crop_upsample_region(image, segmentation, label):
    """Tight-crop one segment (fill elsewhere), scale it so the longer side
    meets the input size with one shared scale factor, center on fill."""
    box = segmentation.bounding_box(label)
    mask = segmentation.mask(label)
    channels, height, width = image.pixels.shape

    crop = np.where(mask[None, box.top:box.bottom, box.left:box.right],
                    image.pixels[:, box.top:box.bottom, box.left:box.right],
                    np.float32(OCCLUSION_FILL))
    box_h, box_w = box.height, box.width
    if box_h == 1 and box_w == 1:
        warnings.warn(f"segment {label} is a single pixel; using nearest "
                      "neighbor scaling", stacklevel=2)

    if box_h * width >= box_w * height:
        out_h, out_w = height, max(1, round(box_w * height / box_h))
    else:
        out_h, out_w = max(1, round(box_h * width / box_w)), width
    scaled = np.stack([resize_bilinear(crop[c], (out_h, out_w))
                       for c in range(channels)])

    canvas = np.full((channels, height, width), np.float32(OCCLUSION_FILL),
                     dtype=np.float32)
    top = (height - out_h) // 2
    left = (width - out_w) // 2
    canvas[:, top:top + out_h, left:left + out_w] = scaled
    return ImageTensor(canvas, source_path=image.source_path)
