"""Saliency scoring for spatial cells and superpixel segments.

Cell-level maps over the conv feature grid: class activation mapping (CAM),
feature activation mapping (FAM, contribution-redistributed CAM) and a
uniform random baseline. Segment-level scores: the predicted-class logit of
the segment shown alone, and ridge-surrogate (LIME-style) coefficients.
"""

import hashlib
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from sklearn.linear_model import Ridge

from .errors import DimensionError, ParameterError
from .types import ActivationMap, SpatialCell

LIME_SAMPLES = 1000
LIME_RIDGE_PENALTY = 1.0
LIME_KERNEL_WIDTH = 0.25
LIME_INCLUSION_P = 0.5


class SaliencyKind(str, Enum):
    CAM = "cam"
    FAM = "fam"
    RANDOM = "random"


class SegmentScoreBasis(str, Enum):
    PREDICTED_LOGIT = "predicted_logit"
    LIME_WEIGHT = "lime_weight"


@dataclass(frozen=True)
class SaliencyMethod:
    """How to score spatial cells: map kind, class to explain, RNG seed."""

    kind: SaliencyKind
    target_class: int
    seed: int = 0

    def __post_init__(self):
        if self.target_class < 0:
            raise ParameterError(f"target_class must be >= 0, got {self.target_class}")


@dataclass(frozen=True)
class SuperpixelSaliency:
    """One score per canonical segment label."""

    scores: np.ndarray
    basis: SegmentScoreBasis
    regularization_fallback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))

    def top_segment(self):
        """Highest-scoring label; ties go to the lower label."""
        return int(np.argmax(self.scores))


def _check_channels(conv_features, weights):
    d = conv_features.values.shape[2]
    if weights.shape[0] != d:
        raise DimensionError(
            f"weight matrix has {weights.shape[0]} rows for {d} feature channels")


def cam(conv_features, weights, class_id):
    """Class activation map: M[i,j] = sum_d W[d,c] * C[i,j,d]."""
    _check_channels(conv_features, weights)
    values = conv_features.values.astype(np.float64) @ weights[:, class_id].astype(np.float64)
    return ActivationMap(values.astype(np.float32))


def fam(conv_features, latent, weights, class_id):
    """Feature activation map: each channel's linear contribution
    x[d] * W[d,c] spread over space in proportion to C[:,:,d]; channels with
    zero spatial sum contribute nothing."""
    _check_channels(conv_features, weights)
    c = conv_features.values.astype(np.float64)
    x = np.asarray(latent.values, dtype=np.float64)
    if x.shape[0] != c.shape[2]:
        raise DimensionError(
            f"latent length {x.shape[0]} does not match {c.shape[2]} channels")
    sums = c.sum(axis=(0, 1))
    contrib = x * weights[:, class_id].astype(np.float64)
    scale = np.divide(contrib, sums, out=np.zeros_like(contrib), where=sums != 0)
    return ActivationMap((c @ scale).astype(np.float32))


def random_map(shape, seed):
    """Uniform [0,1) map, deterministic per seed (int or int sequence)."""
    rng = np.random.default_rng(seed)
    return ActivationMap(rng.random(shape, dtype=np.float64).astype(np.float32))


def compute_cell_map(kind, prediction, bundle, class_id, seed=0):
    """Dispatch a cell-level map for one prediction's conv features."""
    conv = prediction.conv_features
    if conv is None:
        raise DimensionError("model exposes no conv features; cell maps unavailable")
    kind = SaliencyKind(kind)
    if kind is SaliencyKind.CAM:
        return cam(conv, bundle.final_weights, class_id)
    if kind is SaliencyKind.FAM:
        return fam(conv, prediction.latent, bundle.final_weights, class_id)
    return random_map(conv.values.shape[:2], seed)


def superpixel_logit_saliency(bundle, image, segmentation, class_id):
    """Score each segment by the class logit when only it stays visible."""
    from .backend import forward_batch
    from .superpixels import occlude_except

    labels = range(segmentation.n_segments)
    masked = [occlude_except(image, segmentation, {s}) for s in labels]
    preds = forward_batch(bundle, masked)
    scores = np.array([p.logits[class_id] for p in preds], dtype=np.float64)
    return SuperpixelSaliency(scores, SegmentScoreBasis.PREDICTED_LOGIT)


def _segment_keys(segmentation, seed):
    """Content-addressed RNG seed per segment: depends on the pixel set, not
    the label, so relabeling permutes mask columns with their segments."""
    flat = segmentation.labels.ravel()
    keys = []
    for s in range(segmentation.n_segments):
        idx = np.flatnonzero(flat == s).astype(np.int64)
        digest = hashlib.blake2b(idx.tobytes(), digest_size=8).digest()
        keys.append([int(seed), int.from_bytes(digest, "little")])
    return keys


def lime_saliency(bundle, image, segmentation, class_id, n_samples=LIME_SAMPLES,
                  seed=0):
    """Fit a weighted ridge surrogate over random segment on/off masks and
    return its per-segment coefficients for the chosen class."""
    from .backend import forward_batch
    from .superpixels import occlude_except

    n_seg = segmentation.n_segments
    if n_samples < n_seg:
        raise ParameterError(
            f"n_samples ({n_samples}) must be >= segment count ({n_seg})")

    columns = [
        np.random.default_rng(key).random(n_samples) < LIME_INCLUSION_P
        for key in _segment_keys(segmentation, seed)
    ]
    masks = np.column_stack(columns)
    masks[0, :] = True  # anchor sample: the unmasked image

    images = [
        occlude_except(image, segmentation, set(np.flatnonzero(row).tolist()))
        for row in masks
    ]
    target = np.array(
        [p.logits[class_id] for p in forward_batch(bundle, images)], dtype=np.float64)

    ones = np.ones(n_seg)
    norms = np.sqrt(masks.sum(axis=1, dtype=np.float64)) * np.sqrt(float(n_seg))
    cosine = np.divide(masks @ ones, norms, out=np.zeros(n_samples), where=norms > 0)
    distance = 1.0 - cosine
    weights = np.exp(-(distance ** 2) / LIME_KERNEL_WIDTH ** 2)

    fallback = False
    coefs = _fit_ridge(masks, target, weights, LIME_RIDGE_PENALTY)
    if not np.all(np.isfinite(coefs)):
        coefs = _fit_ridge(masks, target, weights, LIME_RIDGE_PENALTY * 100.0)
        fallback = True
    return SuperpixelSaliency(coefs, SegmentScoreBasis.LIME_WEIGHT, fallback)


def _fit_ridge(masks, target, weights, penalty):
    model = Ridge(alpha=penalty, solver="cholesky")
    model.fit(masks.astype(np.float64), target, sample_weight=weights)
    return model.coef_


def top_cells(activation_map, k, non_overlap_radius=1):
    """Greedy selection of up to k cells in descending saliency; each pick
    suppresses its Chebyshev neighborhood. Ties resolve row-major."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    values = activation_map.values.astype(np.float64).copy()
    h, w = values.shape
    cells = []
    for _ in range(k):
        if not np.any(np.isfinite(values)):
            warnings.warn(
                f"only {len(cells)} of {k} requested cells available after "
                "suppression", stacklevel=2)
            break
        flat = int(np.argmax(values))
        i, j = divmod(flat, w)
        cells.append(SpatialCell(i, j))
        r = non_overlap_radius
        values[max(0, i - r):i + r + 1, max(0, j - r):j + r + 1] = -np.inf
    return cells
