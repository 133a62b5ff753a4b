"""Faithfulness harness: keep-or-remove a method's salient region and
track the originally predicted class's logit.

Per image, the most salient superpixel (by show-only logit) fixes a
reference pixel area. Segment-scoring methods mask their own top segment;
cell-map methods (CAM / FAM / random) upsample their map to pixels and
take exactly the reference area's worth of highest-saliency pixels, so
the map-based curves are area-matched to the superpixel baseline. The
recorded logit index is frozen to the unmasked prediction even when
masking flips the label.

The harness also writes masked training corpora: each image has its
constraint-passing salient regions filled, with per-image occluded
fractions recorded in a JSON manifest.
"""

import csv
import json
import os
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from PIL import Image

from .errors import DataError, ParameterError
from .matching import feasible_mask
from .saliency import (
    SaliencyKind,
    compute_cell_map,
    lime_saliency,
    superpixel_logit_saliency,
)
from .superpixels import OCCLUSION_FILL, slic
from .types import ImageTensor, SpatialCell, upsample_cell_to_box, upsample_map_bilinear

CELL_METHODS = tuple(k.value for k in SaliencyKind)
SEGMENT_METHODS = ("superpixel_logit", "lime")
ALL_METHODS = CELL_METHODS + SEGMENT_METHODS


class MaskMode(str, Enum):
    INCLUDE = "include"
    OCCLUDE = "occlude"


@dataclass(frozen=True)
class AblationConfig:
    methods: tuple
    segment_counts: tuple
    modes: tuple
    n_images: int
    seed: int = 0
    compactness: float = 10.0
    iterations: int = 10
    lime_samples: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "segment_counts", tuple(self.segment_counts))
        object.__setattr__(self, "modes",
                           tuple(MaskMode(m) for m in self.modes))
        if not self.segment_counts:
            raise ParameterError("segment_counts must be non-empty")
        if self.n_images < 1:
            raise ParameterError(f"n_images must be >= 1, got {self.n_images}")
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ParameterError(
                f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")


@dataclass
class AblationResult:
    records: list = field(default_factory=list)
    failures: int = 0

    def add(self, method, segment_count, mode, image_id, logit):
        self.records.append({
            "method": method,
            "segment_count": int(segment_count),
            "mode": MaskMode(mode).value,
            "image_id": str(image_id),
            "logit": float(logit),
        })

    def logits(self, method, segment_count, mode):
        mode = MaskMode(mode).value
        return np.array([
            r["logit"] for r in self.records
            if r["method"] == method and r["segment_count"] == segment_count
            and r["mode"] == mode
        ])

    def aggregate(self):
        """Mean and standard error per (method, segment_count, mode)."""
        keys = sorted({(r["method"], r["segment_count"], r["mode"])
                       for r in self.records})
        summary = []
        for method, count, mode in keys:
            # Sorted so the reduction is independent of image order.
            values = np.sort(self.logits(method, count, mode))
            stderr = float(values.std(ddof=1) / np.sqrt(len(values))) \
                if len(values) > 1 else 0.0
            summary.append({
                "method": method,
                "segment_count": count,
                "mode": mode,
                "n": len(values),
                "mean_logit": float(values.mean()),
                "stderr": stderr,
            })
        return summary

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "segment_count", "mode", "image_id", "logit"])
            for r in self.records:
                writer.writerow([r["method"], r["segment_count"], r["mode"],
                                 r["image_id"], repr(r["logit"])])


def equal_area_region(pixel_map, target_area):
    """Mask of exactly target_area pixels with the highest map values;
    ties resolve row-major."""
    values = np.asarray(pixel_map.values if hasattr(pixel_map, "values")
                        else pixel_map, dtype=np.float64)
    total = values.size
    if not 0 <= target_area <= total:
        raise ParameterError(
            f"target_area {target_area} outside [0, {total}]")
    order = np.argsort(-values.ravel(), kind="stable")[:target_area]
    mask = np.zeros(total, dtype=bool)
    mask[order] = True
    return mask.reshape(values.shape)


def apply_mask(image, mask, mode):
    """INCLUDE keeps masked pixels (fills the rest); OCCLUDE fills them."""
    mode = MaskMode(mode)
    keep = mask if mode is MaskMode.INCLUDE else ~mask
    pixels = np.where(keep[None, :, :], image.pixels, np.float32(OCCLUSION_FILL))
    return ImageTensor(pixels.astype(np.float32), source_path=image.source_path)


def _top_segment(scores):
    order = np.argsort(-scores, kind="stable")
    return int(order[0])


def method_region(bundle, image, prediction, segmentation, method,
                  map_seed=0, lime_seed=0, lime_samples=1000):
    """Pixel mask each method proposes for this image, all equal-area."""
    target = prediction.predicted_class
    logit_scores = superpixel_logit_saliency(
        bundle, image, segmentation, target).scores
    reference_segment = _top_segment(logit_scores)
    area = int(np.sum(segmentation.labels == reference_segment))

    if method == "superpixel_logit":
        return segmentation.labels == reference_segment
    if method == "lime":
        scores = lime_saliency(bundle, image, segmentation, target,
                               lime_samples, lime_seed).scores
        return segmentation.labels == _top_segment(scores)
    cell_map = compute_cell_map(method, prediction, bundle, target, map_seed)
    pixel_map = upsample_map_bilinear(cell_map, image.pixels.shape[1:])
    return equal_area_region(pixel_map, area)


def run_ablation(bundle, image_paths, config):
    """Mask every (method, segment_count, mode) combination per image and
    record the original predicted-class logit."""
    from .backend import forward, load_image

    result = AblationResult()
    paths = [str(p) for p in image_paths][:config.n_images]
    for image_idx, path in enumerate(paths):
        try:
            image = load_image(bundle, path)
            prediction = forward(bundle, image)
            target = prediction.predicted_class
            for count in config.segment_counts:
                segmentation = slic(image, count, config.compactness,
                                    config.iterations)
                for method in config.methods:
                    mask = method_region(bundle, image, prediction,
                                         segmentation, method,
                                         map_seed=[config.seed, image_idx],
                                         lime_seed=config.seed,
                                         lime_samples=config.lime_samples)
                    for mode in config.modes:
                        masked = apply_mask(image, mask, mode)
                        logit = forward(bundle, masked).logits[target]
                        result.add(method, count, mode, path, logit)
        except (DataError, OSError) as exc:
            result.failures += 1
            warnings.warn(f"skipping {path}: {exc}", stacklevel=2)
    return result


def occlusion_mask_for_image(bundle, image, prediction, method, threshold,
                             segments=30, seed=0, full_occlusion=False):
    """Pixel mask of all constraint-passing salient regions of one image."""
    height, width = image.pixels.shape[1:]
    if full_occlusion:
        return np.ones((height, width), dtype=bool)
    target = prediction.predicted_class
    mask = np.zeros((height, width), dtype=bool)
    if method in SEGMENT_METHODS:
        segmentation = slic(image, segments)
        scores = superpixel_logit_saliency(
            bundle, image, segmentation, target).scores
        for label in np.flatnonzero(feasible_mask(scores, threshold)):
            mask |= segmentation.labels == int(label)
        return mask
    cell_map = compute_cell_map(method, prediction, bundle, target, seed)
    grid = cell_map.values.shape
    for flat in np.flatnonzero(feasible_mask(cell_map.values.ravel(), threshold)):
        i, j = divmod(int(flat), grid[1])
        box = upsample_cell_to_box(SpatialCell(i, j), grid, (height, width))
        mask[box.top:box.bottom, box.left:box.right] = True
    return mask


def generate_masked_dataset(bundle, image_paths, method, threshold, out_dir,
                            segments=30, seed=0, full_occlusion=False,
                            index=None):
    """Write each image with its constraint-passing regions filled; returns
    the manifest (also written to out_dir/manifest.json)."""
    from .backend import forward, load_image

    if method not in ALL_METHODS:
        raise ParameterError(f"unknown method {method!r}")
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.json")
    entries = []
    written = []
    try:
        for image_idx, path in enumerate(str(p) for p in image_paths):
            image = load_image(bundle, path)
            prediction = forward(bundle, image)
            mask = occlusion_mask_for_image(
                bundle, image, prediction, method, threshold, segments,
                [seed, image_idx], full_occlusion)
            masked = apply_mask(image, mask, MaskMode.OCCLUDE)
            out_path = os.path.join(
                out_dir, f"{image_idx:06d}_"
                + os.path.splitext(os.path.basename(path))[0] + ".png")
            _write_image(bundle, masked, out_path)
            written.append(out_path)
            entries.append({
                "image_path": path,
                "masked_path": out_path,
                "occluded_fraction": float(mask.mean()),
                "threshold": "inf" if np.isinf(threshold) else float(threshold),
            })
        with open(manifest_path, "w") as fh:
            json.dump({"method": method, "entries": entries}, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        for partial in written + [manifest_path]:
            if os.path.exists(partial):
                os.remove(partial)
        raise DataError(f"masked-dataset generation aborted: {exc}") from exc
    return entries


def _write_image(bundle, image, path):
    array = denorm_to_uint8(bundle, image)
    if array.shape[0] == 1:
        Image.fromarray(array[0], mode="L").save(path)
    else:
        Image.fromarray(array.transpose(1, 2, 0), mode="RGB").save(path)


def denorm_to_uint8(bundle, image):
    from .backend import denormalize

    return np.round(denormalize(bundle, image) * 255.0).astype(np.uint8)
