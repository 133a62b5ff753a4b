"""Constrained nearest-region matching.

Both routes share the same shape: collect candidate regions from each
pooled neighbor, keep only regions whose saliency clears a fraction of
that neighbor's maximum (threshold = max / alpha, or strictly-positive
when alpha is infinite), then return the candidate closest to the query
vector in L2. Ties break toward the lower pool position, then the earlier
region in canonical order. Distances accumulate in float64.

Cell route: candidates are 1x1 cells of each neighbor's conv feature grid,
scored by a cell map (CAM/FAM/random) for the neighbor's own predicted
class. Segment route: candidates are superpixels, embedded by
crop-upsample + encode and scored by the show-only predicted-class logit.
"""

import hashlib
import os
import time
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from math import isinf

import numpy as np

from .errors import NoMatchError, ParameterError
from .index import LatentIndex, load_index, save_index
from .saliency import SaliencyMethod, compute_cell_map, superpixel_logit_saliency
from .superpixels import crop_upsample_region, slic
from .types import LatentVector, PixelBox, SpatialCell, l2_distance, upsample_cell_to_box

CACHE_ENV_VAR = "XEXPLAIN_CACHE_DIR"
DEFAULT_ALPHA = 5.0
DEFAULT_BETA = float("inf")
DEFAULT_POOL = 50


@dataclass(frozen=True)
class LatentMatchQuery:
    omega_test: np.ndarray
    test_cell: SpatialCell
    alpha: float
    pool: object
    method: SaliencyMethod

    def __post_init__(self):
        _check_threshold_param(self.alpha, "alpha")
        object.__setattr__(
            self, "omega_test", np.asarray(self.omega_test, dtype=np.float32).ravel())


@dataclass(frozen=True)
class SuperpixelMatchQuery:
    omega_test: LatentVector
    beta: float
    pool: object

    def __post_init__(self):
        _check_threshold_param(self.beta, "beta")


@dataclass(frozen=True)
class SuperpixelFeature:
    segment_label: int
    latent: LatentVector
    saliency: float
    pixel_mask: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class RegionMatch:
    neighbor_row: int
    cell: SpatialCell | None
    segment_label: int | None
    distance: float
    neighbor_saliency: float
    test_box: PixelBox | None
    neighbor_box: PixelBox | None
    image_path: str | None


def _check_threshold_param(value, name):
    if not (isinf(value) or value >= 1.0):
        raise ParameterError(f"{name} must be >= 1 or infinite, got {value}")


def feasible_mask(saliency, threshold_param):
    """Boolean mask of regions clearing the saliency constraint.

    Finite threshold_param t: saliency > max(saliency)/t, except exactly
    t = 1 admits the maximum itself (otherwise nothing could ever pass).
    Infinite t: saliency strictly positive.
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    if isinf(threshold_param):
        return saliency > 0.0
    cutoff = saliency.max() / threshold_param
    if threshold_param == 1.0:
        return saliency >= cutoff
    return saliency > cutoff


def match_latent_maps(omega_test, conv_maps, saliency_maps, alpha):
    """Constrained argmin over every (neighbor, cell): smallest L2 distance
    between the query vector and C[n][i,j,:] among cells whose saliency
    clears the per-neighbor threshold. Exact tie-break: lower n, then
    row-major cell."""
    _check_threshold_param(alpha, "alpha")
    if len(conv_maps) != len(saliency_maps):
        raise ParameterError("one saliency map per conv map required")
    omega = np.asarray(omega_test, dtype=np.float64).ravel()
    best = None
    for n, (conv, smap) in enumerate(zip(conv_maps, saliency_maps)):
        values = conv.values
        h, w, d = values.shape
        if d != omega.shape[0]:
            raise ParameterError(
                f"neighbor {n} has depth {d}, query has {omega.shape[0]}")
        sal = smap.values.astype(np.float64)
        ok = feasible_mask(sal, alpha)
        if not np.any(ok):
            continue
        diffs = values.reshape(-1, d).astype(np.float64) - omega
        dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
        dists[~ok.ravel()] = np.inf
        flat = int(np.argmin(dists))
        dist = float(dists[flat])
        if best is None or dist < best[0]:
            i, j = divmod(flat, w)
            best = (dist, n, SpatialCell(i, j), float(sal[i, j]))
    if best is None:
        raise NoMatchError(
            "no neighbor region satisfies the saliency constraint "
            f"(alpha={alpha}): every candidate fell at or below max/alpha")
    dist, n, cell, sal = best
    return n, cell, dist, sal


def match_superpixel_features(omega_test, features_per_neighbor, beta):
    """Constrained argmin over every (neighbor, segment), skipping
    degenerate segments. Tie-break: lower n, then lower segment label."""
    _check_threshold_param(beta, "beta")
    omega = np.asarray(
        omega_test.values if isinstance(omega_test, LatentVector) else omega_test,
        dtype=np.float64).ravel()
    best = None
    for n, features in enumerate(features_per_neighbor):
        usable = [f for f in features if not f.degenerate]
        if not usable:
            continue
        sal = np.array([f.saliency for f in usable], dtype=np.float64)
        ok = feasible_mask(sal, beta)
        if not np.any(ok):
            continue
        for pos in np.flatnonzero(ok):
            feature = usable[pos]
            dist = l2_distance(omega, feature.latent.values)
            if best is None or dist < best[0]:
                best = (dist, n, feature)
    if best is None:
        raise NoMatchError(
            "no neighbor superpixel satisfies the saliency constraint "
            f"(beta={beta}): every segment fell at or below max/beta")
    dist, n, feature = best
    return n, feature, dist


def mask_bounding_box(mask):
    rows, cols = np.nonzero(mask)
    return PixelBox(int(rows.min()), int(cols.min()),
                    int(rows.max()) + 1, int(cols.max()) + 1)


def select_test_region(conv_features, activation_map, k_features):
    """Top cells of the map paired with their depth vectors."""
    from .saliency import top_cells

    values = activation_map.values
    if values.shape != conv_features.values.shape[:2]:
        raise ParameterError(
            f"map shape {values.shape} does not match feature grid "
            f"{conv_features.values.shape[:2]}")
    if np.all(values == values.flat[0]):
        warnings.warn("activation map is constant; cell choice is ambiguous "
                      "and falls back to row-major order", stacklevel=2)
    cells = top_cells(activation_map, k_features)
    return [(cell, conv_features.cell_vector(cell)) for cell in cells]


class ConvMapCache:
    """Small LRU over per-image forward passes keyed by image path."""

    def __init__(self, bundle, capacity=128):
        self.bundle = bundle
        self.capacity = capacity
        self._entries = OrderedDict()

    def prediction_for(self, path):
        from .backend import forward, load_image

        key = str(path)
        if key in self._entries:
            self._entries.move_to_end(key)
            return self._entries[key]
        pred = forward(self.bundle, load_image(self.bundle, key))
        self._entries[key] = pred
        if len(self._entries) > self.capacity:
            self._entries.popitem(last=False)
        return pred


def match_latent(query, bundle, cache=None):
    """Run the cell route over a neighbor pool of image paths."""
    if len(query.pool) == 0:
        raise ParameterError("neighbor pool is empty")
    if query.pool.image_paths is None:
        raise ParameterError("neighbor pool carries no image paths")
    cache = cache or ConvMapCache(bundle)
    conv_maps, sal_maps = [], []
    for position in range(len(query.pool)):
        pred = cache.prediction_for(query.pool.image_paths[position])
        seed = [query.method.seed, int(query.pool.row_ids[position])]
        sal_maps.append(compute_cell_map(
            query.method.kind, pred, bundle, pred.predicted_class, seed))
        conv_maps.append(pred.conv_features)
    n, cell, dist, sal = match_latent_maps(
        query.omega_test, conv_maps, sal_maps, query.alpha)
    grid = conv_maps[n].values.shape[:2]
    image_hw = bundle.input_shape[1:]
    return RegionMatch(
        neighbor_row=n,
        cell=cell,
        segment_label=None,
        distance=dist,
        neighbor_saliency=sal,
        test_box=upsample_cell_to_box(query.test_cell, grid, image_hw),
        neighbor_box=upsample_cell_to_box(cell, grid, image_hw),
        image_path=query.pool.image_paths[n],
    )


def featurize_segments(bundle, image, segmentation):
    """Embed and score every segment: latent from crop-upsample + encode,
    saliency from the show-only predicted-class logit."""
    from .backend import forward, forward_batch

    prediction = forward(bundle, image)
    scores = superpixel_logit_saliency(
        bundle, image, segmentation, prediction.predicted_class)
    crops = [crop_upsample_region(image, segmentation, s)
             for s in range(segmentation.n_segments)]
    latents = [p.latent for p in forward_batch(bundle, crops)]
    features = []
    for s in range(segmentation.n_segments):
        mask = segmentation.mask(s)
        features.append(SuperpixelFeature(
            segment_label=s,
            latent=latents[s],
            saliency=float(scores.scores[s]),
            pixel_mask=mask,
            degenerate=bool(mask.sum() == 1),
        ))
    return features


class SegmentFeatureCache:
    """Disk cache of per-image segment features.

    One record per (image pixels, segmentation params, model) key, stored
    in the same binary row format as the latent index with the saliency
    appended as a final column; labels and degeneracy flags ride in the
    JSON sidecar.
    """

    def __init__(self, bundle, directory=None, segments=30, compactness=10.0,
                 iterations=10):
        self.bundle = bundle
        self.directory = directory if directory is not None \
            else os.environ.get(CACHE_ENV_VAR)
        self.segments = segments
        self.compactness = compactness
        self.iterations = iterations
        key = hashlib.blake2b(digest_size=8)
        key.update(bundle.final_weights.tobytes())
        key.update(bundle.final_bias.tobytes())
        self._model_key = key.hexdigest()

    def _cache_path(self, image):
        if self.directory is None:
            return None
        key = hashlib.blake2b(digest_size=16)
        key.update(self._model_key.encode())
        key.update(np.float64([self.segments, self.compactness,
                               self.iterations]).tobytes())
        key.update(image.pixels.tobytes())
        return os.path.join(self.directory, key.hexdigest() + ".segfeat")

    def segmentation_for(self, image):
        return slic(image, self.segments, self.compactness, self.iterations)

    def features_for(self, image, segmentation=None):
        segmentation = segmentation or self.segmentation_for(image)
        path = self._cache_path(image)
        if path is not None and os.path.exists(path):
            cached = load_index(path)
            if cached.count == segmentation.n_segments:
                return self._decode(cached, segmentation)
        features = featurize_segments(self.bundle, image, segmentation)
        if path is not None:
            self._store(features, path)
        return features

    def _decode(self, cached, segmentation):
        features = []
        degenerate = cached.meta.get("degenerate", [False] * cached.count)
        for s in range(cached.count):
            row = cached.vectors[s]
            features.append(SuperpixelFeature(
                segment_label=s,
                latent=LatentVector(row[:-1].copy()),
                saliency=float(row[-1]),
                pixel_mask=segmentation.mask(s),
                degenerate=bool(degenerate[s]),
            ))
        return features

    def _store(self, features, path):
        os.makedirs(self.directory, exist_ok=True)
        rows = np.stack([
            np.concatenate([f.latent.values, [np.float32(f.saliency)]])
            for f in features
        ]).astype(np.float32)
        index = LatentIndex(rows, meta={
            "degenerate": [bool(f.degenerate) for f in features],
            "model_key": self._model_key,
        })
        save_index(index, path)


def match_superpixel(query, bundle, cache):
    """Run the segment route over the pool using cached featurization."""
    from .backend import load_image

    if len(query.pool) == 0:
        raise ParameterError("neighbor pool is empty")
    if query.pool.image_paths is None:
        raise ParameterError("neighbor pool carries no image paths")
    features_per_neighbor = []
    for position in range(len(query.pool)):
        image = load_image(bundle, query.pool.image_paths[position])
        features_per_neighbor.append(cache.features_for(image))
    n, feature, dist = match_superpixel_features(
        query.omega_test, features_per_neighbor, query.beta)
    return RegionMatch(
        neighbor_row=n,
        cell=None,
        segment_label=feature.segment_label,
        distance=dist,
        neighbor_saliency=feature.saliency,
        test_box=None,
        neighbor_box=mask_bounding_box(feature.pixel_mask),
        image_path=query.pool.image_paths[n],
    )


class StageTimer:
    """Accumulates wall-clock seconds per named pipeline stage."""

    def __init__(self):
        self.timings = {}

    def stage(self, name):
        return _StageContext(self, name)


class _StageContext:
    def __init__(self, timer, name):
        self.timer = timer
        self.name = name

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        elapsed = time.perf_counter() - self._start
        self.timer.timings[self.name] = self.timer.timings.get(self.name, 0.0) + elapsed
        return False
