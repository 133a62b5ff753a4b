"""End-to-end explainers and their machine-readable output record.

`LatentExplainer` needs a convolutional backbone: it picks the most
salient cells of the test image's feature grid and matches each cell
vector against constraint-passing cells of the nearest neighbors.
`SuperpixelExplainer` works with any backbone: it ranks test superpixels
(ridge-surrogate weights by default), embeds each part by crop-upsample +
encode, and matches against constraint-passing neighbor superpixels.

Both follow the scikit-learn estimator idiom: constructor stores
hyperparameters verbatim, ``fit(bundle, index)`` binds the model and
corpus and returns ``self``, and ``explain`` produces an
``ExplanationRecord`` that serializes to versioned JSON.
"""

import json
import math
import os
import time
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator

from .errors import DataError, FormatError, ModelContractError, ParameterError
from .index import query
from .matching import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_POOL,
    ConvMapCache,
    LatentMatchQuery,
    SegmentFeatureCache,
    StageTimer,
    SuperpixelMatchQuery,
    mask_bounding_box,
    match_latent,
    match_superpixel,
    select_test_region,
)
from .saliency import (
    LIME_SAMPLES,
    SaliencyKind,
    SaliencyMethod,
    lime_saliency,
    superpixel_logit_saliency,
)
from .superpixels import DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS, DEFAULT_SEGMENTS
from .types import ImageTensor

SCHEMA_VERSION = 1
DEFAULT_K_FEATURES = 3


@dataclass
class ExplanationRecord:
    test_image_path: str
    predicted_class: int
    predicted_class_name: str
    method: str
    config: dict
    features: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    schema: int = SCHEMA_VERSION

    def to_dict(self):
        config = dict(self.config)
        for key in ("alpha", "beta"):
            if key in config and isinstance(config[key], float) and math.isinf(config[key]):
                config[key] = "inf"
        return {
            "schema": self.schema,
            "test_image_path": self.test_image_path,
            "predicted_class": self.predicted_class,
            "predicted_class_name": self.predicted_class_name,
            "method": self.method,
            "config": config,
            "features": [dict(f) for f in self.features],
            "timings": dict(self.timings),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, payload):
        if payload.get("schema") != SCHEMA_VERSION:
            raise FormatError(
                f"unsupported explanation schema {payload.get('schema')!r}")
        config = dict(payload["config"])
        for key in ("alpha", "beta"):
            if config.get(key) == "inf":
                config[key] = float("inf")
        return cls(
            test_image_path=payload["test_image_path"],
            predicted_class=int(payload["predicted_class"]),
            predicted_class_name=payload["predicted_class_name"],
            method=payload["method"],
            config=config,
            features=[dict(f) for f in payload["features"]],
            timings=dict(payload.get("timings", {})),
            notes=list(payload.get("notes", [])),
        )


def save_record(record, path):
    """Write the record as JSON after checking referenced images exist."""
    missing = [p for p in _referenced_paths(record) if not os.path.exists(p)]
    if missing:
        raise DataError(f"record references missing files: {', '.join(missing)}")
    with open(path, "w") as fh:
        json.dump(record.to_dict(), fh, indent=2, allow_nan=False)
        fh.write("\n")


def load_record(path):
    try:
        with open(path) as fh:
            return ExplanationRecord.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read explanation record {path}: {exc}") from exc


def _referenced_paths(record):
    paths = [record.test_image_path]
    paths.extend(f["neighbor_image_path"] for f in record.features)
    return [p for p in paths if p]


def _box_fields(box):
    return None if box is None else [box.top, box.left, box.bottom, box.right]


def _as_image(bundle, image):
    from .backend import load_image

    if isinstance(image, ImageTensor):
        return image
    return load_image(bundle, image)


class LatentExplainer(BaseEstimator):
    """Cell-level explainer for convolutional backbones.

    Parameters
    ----------
    alpha : float, default 5.0
        Neighbor-saliency selectivity; a cell qualifies when its saliency
        exceeds the neighbor's maximum divided by alpha. ``inf`` admits
        every strictly positive cell.
    pool_size : int, default 50
        Number of nearest training images scanned per explanation.
    k_features : int, default 3
        Number of test-image parts to explain.
    saliency : {"cam", "fam", "random"}, default "cam"
        Cell scoring method, applied to the test image and each neighbor.
    seed : int, default 0
        Base seed for the random scoring method.
    cache_size : int, default 128
        Capacity of the in-memory neighbor forward-pass cache.
    """

    def __init__(self, alpha=DEFAULT_ALPHA, pool_size=DEFAULT_POOL,
                 k_features=DEFAULT_K_FEATURES, saliency="cam", seed=0,
                 cache_size=128):
        self.alpha = alpha
        self.pool_size = pool_size
        self.k_features = k_features
        self.saliency = saliency
        self.seed = seed
        self.cache_size = cache_size

    def fit(self, bundle, index):
        """Bind the model bundle and latent index; returns self."""
        if not bundle.has_conv:
            raise ModelContractError(
                "cell-level explanations need a model exposing conv features; "
                "use SuperpixelExplainer for non-convolutional backbones")
        try:
            SaliencyKind(self.saliency)
        except ValueError:
            raise ParameterError(
                f"saliency must be one of "
                f"{[k.value for k in SaliencyKind]}, got {self.saliency!r}") from None
        if self.k_features < 1:
            raise ParameterError(f"k_features must be >= 1, got {self.k_features}")
        self.bundle_ = bundle
        self.index_ = index
        self.cache_ = ConvMapCache(bundle, self.cache_size)
        return self

    def explain(self, image):
        """Explain one image (path or preprocessed tensor)."""
        from .backend import forward
        from .saliency import compute_cell_map

        self._check_fitted()
        timer = StageTimer()
        started = time.perf_counter()
        image = _as_image(self.bundle_, image)

        with timer.stage("forward"):
            prediction = forward(self.bundle_, image)
        target = prediction.predicted_class
        with timer.stage("saliency"):
            cell_map = compute_cell_map(
                self.saliency, prediction, self.bundle_, target, self.seed)
            parts = select_test_region(
                prediction.conv_features, cell_map, self.k_features)
        with timer.stage("query"):
            pool = query(self.index_, prediction.latent.values, self.pool_size)

        method = SaliencyMethod(SaliencyKind(self.saliency), target, self.seed)
        features = []
        with timer.stage("match"):
            for rank, (cell, omega) in enumerate(parts, start=1):
                match = match_latent(
                    LatentMatchQuery(omega, cell, float(self.alpha), pool, method),
                    self.bundle_, self.cache_)
                features.append({
                    "rank": rank,
                    "test_cell": [cell.row, cell.col],
                    "test_segment": None,
                    "test_box": _box_fields(match.test_box),
                    "neighbor_row": match.neighbor_row,
                    "neighbor_image_path": match.image_path,
                    "neighbor_cell": [match.cell.row, match.cell.col],
                    "neighbor_segment": None,
                    "neighbor_box": _box_fields(match.neighbor_box),
                    "distance": match.distance,
                    "neighbor_saliency": match.neighbor_saliency,
                })
        timer.timings["total"] = time.perf_counter() - started

        return ExplanationRecord(
            test_image_path=image.source_path,
            predicted_class=target,
            predicted_class_name=self.bundle_.class_names[target],
            method="latent",
            config={
                "alpha": float(self.alpha),
                "pool_size": self.pool_size,
                "k_features": self.k_features,
                "saliency": self.saliency,
                "seed": self.seed,
            },
            features=features,
            timings=timer.timings,
        )

    def _check_fitted(self):
        if not hasattr(self, "bundle_"):
            raise ParameterError("explainer is not fitted; call fit(bundle, index)")


class SuperpixelExplainer(BaseEstimator):
    """Segment-level explainer for arbitrary backbones.

    Parameters
    ----------
    beta : float, default inf
        Neighbor-saliency selectivity over segments; ``inf`` admits every
        segment whose show-only logit is strictly positive.
    pool_size : int, default 50
        Number of nearest training images scanned per explanation.
    k_features : int, default 3
        Number of test-image parts to explain.
    segments : int, default 30
        Requested superpixel count for every segmentation.
    test_saliency : {"lime", "logit"}, default "lime"
        How test-image parts are ranked: ridge-surrogate weights or the
        show-only predicted-class logit.
    lime_samples : int, default 1000
        Mask samples for the ridge surrogate.
    seed : int, default 0
        Seed for surrogate mask sampling.
    compactness, iterations
        Segmentation parameters shared by test and neighbor images.
    cache_dir : str, optional
        Directory for the on-disk segment-feature cache; defaults to the
        XEXPLAIN_CACHE_DIR environment variable, else no disk cache.
    """

    def __init__(self, beta=DEFAULT_BETA, pool_size=DEFAULT_POOL,
                 k_features=DEFAULT_K_FEATURES, segments=DEFAULT_SEGMENTS,
                 test_saliency="lime", lime_samples=LIME_SAMPLES, seed=0,
                 compactness=DEFAULT_COMPACTNESS, iterations=DEFAULT_ITERATIONS,
                 cache_dir=None):
        self.beta = beta
        self.pool_size = pool_size
        self.k_features = k_features
        self.segments = segments
        self.test_saliency = test_saliency
        self.lime_samples = lime_samples
        self.seed = seed
        self.compactness = compactness
        self.iterations = iterations
        self.cache_dir = cache_dir

    def fit(self, bundle, index):
        """Bind the model bundle and latent index; returns self."""
        if self.test_saliency not in ("lime", "logit"):
            raise ParameterError(
                f"test_saliency must be 'lime' or 'logit', got {self.test_saliency!r}")
        if self.k_features < 1:
            raise ParameterError(f"k_features must be >= 1, got {self.k_features}")
        self.bundle_ = bundle
        self.index_ = index
        self.cache_ = SegmentFeatureCache(
            bundle, self.cache_dir, self.segments, self.compactness,
            self.iterations)
        return self

    def explain(self, image):
        """Explain one image (path or preprocessed tensor)."""
        from .backend import forward

        self._check_fitted()
        timer = StageTimer()
        started = time.perf_counter()
        image = _as_image(self.bundle_, image)
        notes = []

        with timer.stage("forward"):
            prediction = forward(self.bundle_, image)
        target = prediction.predicted_class
        with timer.stage("segment"):
            segmentation = self.cache_.segmentation_for(image)
            test_features = self.cache_.features_for(image, segmentation)
        with timer.stage("saliency"):
            if self.test_saliency == "lime":
                scores = lime_saliency(
                    self.bundle_, image, segmentation, target,
                    self.lime_samples, self.seed)
                if scores.regularization_fallback:
                    notes.append("surrogate regression used the stronger "
                                 "ridge-penalty fallback")
            else:
                scores = superpixel_logit_saliency(
                    self.bundle_, image, segmentation, target)
        with timer.stage("query"):
            pool = query(self.index_, prediction.latent.values, self.pool_size)

        usable = [f.segment_label for f in test_features if not f.degenerate]
        if len(usable) < segmentation.n_segments:
            notes.append(f"{segmentation.n_segments - len(usable)} degenerate "
                         "test segments skipped")
        order = sorted(usable, key=lambda s: (-scores.scores[s], s))
        chosen = order[:self.k_features]

        features = []
        with timer.stage("match"):
            for rank, label in enumerate(chosen, start=1):
                match = match_superpixel(
                    SuperpixelMatchQuery(
                        test_features[label].latent, float(self.beta), pool),
                    self.bundle_, self.cache_)
                test_box = mask_bounding_box(segmentation.mask(label))
                features.append({
                    "rank": rank,
                    "test_cell": None,
                    "test_segment": label,
                    "test_box": _box_fields(test_box),
                    "neighbor_row": match.neighbor_row,
                    "neighbor_image_path": match.image_path,
                    "neighbor_cell": None,
                    "neighbor_segment": match.segment_label,
                    "neighbor_box": _box_fields(match.neighbor_box),
                    "distance": match.distance,
                    "neighbor_saliency": match.neighbor_saliency,
                })
        timer.timings["total"] = time.perf_counter() - started

        return ExplanationRecord(
            test_image_path=image.source_path,
            predicted_class=target,
            predicted_class_name=self.bundle_.class_names[target],
            method="superpixel",
            config={
                "beta": float(self.beta),
                "pool_size": self.pool_size,
                "k_features": self.k_features,
                "segments": self.segments,
                "test_saliency": self.test_saliency,
                "lime_samples": self.lime_samples,
                "seed": self.seed,
            },
            features=features,
            timings=timer.timings,
            notes=notes,
        )

    def _check_fitted(self):
        if not hasattr(self, "bundle_"):
            raise ParameterError("explainer is not fitted; call fit(bundle, index)")


def explain_latent(bundle, index, image, *, alpha=DEFAULT_ALPHA,
                   pool_size=DEFAULT_POOL, k_features=DEFAULT_K_FEATURES,
                   saliency="cam", seed=0):
    """One-call cell-level explanation."""
    explainer = LatentExplainer(alpha=alpha, pool_size=pool_size,
                                k_features=k_features, saliency=saliency,
                                seed=seed)
    return explainer.fit(bundle, index).explain(image)


def explain_superpixel(bundle, index, image, *, beta=DEFAULT_BETA,
                       pool_size=DEFAULT_POOL, k_features=DEFAULT_K_FEATURES,
                       segments=DEFAULT_SEGMENTS, test_saliency="lime",
                       lime_samples=LIME_SAMPLES, seed=0, cache_dir=None):
    """One-call segment-level explanation."""
    explainer = SuperpixelExplainer(
        beta=beta, pool_size=pool_size, k_features=k_features,
        segments=segments, test_saliency=test_saliency,
        lime_samples=lime_samples, seed=seed, cache_dir=cache_dir)
    return explainer.fit(bundle, index).explain(image)
