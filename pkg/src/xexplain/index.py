"""Flat latent-vector index over a training corpus.

Stores one float32 latent row per training image and answers exact
k-nearest-neighbor queries under Euclidean distance. Distances are
accumulated in float64; ties are broken toward the lower row id so results
are fully deterministic.

On-disk layout (little-endian): magic ``XLIX``, u32 version (1), u64 row
count, u32 dimension, then count*dim float32 values row-major. A JSON
sidecar at ``<path>.meta.json`` carries image paths and optional labels.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, FormatError, ParameterError

MAGIC = b"XLIX"
VERSION = 1
_HEADER = struct.Struct("<4sIQI")


@dataclass(frozen=True)
class NeighborPool:
    """Result of a k-NN query: row ids with distances, nearest first."""

    row_ids: np.ndarray
    distances: np.ndarray
    image_paths: list[str] | None = None

    def __len__(self):
        return len(self.row_ids)

    def path_for(self, position):
        if self.image_paths is None:
            return None
        return self.image_paths[position]


@dataclass
class LatentIndex:
    vectors: np.ndarray
    image_paths: list[str] | None = None
    labels: list[int] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float32)
        if arr.ndim != 2:
            raise DimensionError(f"index vectors must be 2-D, got shape {arr.shape}")
        self.vectors = np.ascontiguousarray(arr)
        if self.image_paths is not None and len(self.image_paths) != len(arr):
            raise DataError(
                f"{len(self.image_paths)} image paths for {len(arr)} index rows")
        if self.labels is not None and len(self.labels) != len(arr):
            raise DataError(f"{len(self.labels)} labels for {len(arr)} index rows")

    @property
    def count(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def build_index(bundle, image_paths, progress=None):
    """Run every image through the model and collect latent vectors."""
    from .backend import forward_batch, load_image

    paths = [str(p) for p in image_paths]
    if not paths:
        raise DataError("cannot build an index from zero images")
    rows = []
    chunk = 64
    for start in range(0, len(paths), chunk):
        batch = [load_image(bundle, p) for p in paths[start:start + chunk]]
        rows.extend(pred.latent.values for pred in forward_batch(bundle, batch))
        if progress is not None:
            progress(min(start + chunk, len(paths)), len(paths))
    return LatentIndex(np.stack(rows), image_paths=paths)


def query(index, vector, k):
    """Exact k nearest rows by L2 distance, ascending, ties to lower row id."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    v = np.asarray(vector, dtype=np.float32).ravel()
    if v.shape[0] != index.dim:
        raise DimensionError(
            f"query dim {v.shape[0]} does not match index dim {index.dim}")
    diffs = index.vectors.astype(np.float64) - v.astype(np.float64)[None, :]
    dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    k = min(k, index.count)
    order = np.argsort(dists, kind="stable")[:k]
    return NeighborPool(
        row_ids=order.astype(np.int64),
        distances=dists[order],
        image_paths=None if index.image_paths is None
        else [index.image_paths[i] for i in order],
    )


def save_index(index, path):
    """Write the binary index plus its JSON metadata sidecar."""
    path = str(path)
    header = _HEADER.pack(MAGIC, VERSION, index.count, index.dim)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())
    sidecar = {
        "version": VERSION,
        "count": index.count,
        "dim": index.dim,
        "image_paths": index.image_paths,
        "labels": index.labels,
    }
    sidecar.update(index.meta)
    with open(path + ".meta.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_index(path):
    """Read a binary index, validating magic, version and payload size."""
    path = str(path)
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read index {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise FormatError(f"index file truncated: {len(blob)} bytes", offset=0)
    magic, version, count, dim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad index magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported index version {version}", offset=4)
    expected = _HEADER.size + count * dim * 4
    if len(blob) != expected:
        raise FormatError(
            f"index payload is {len(blob) - _HEADER.size} bytes, expected "
            f"{count * dim * 4}", offset=_HEADER.size)
    vectors = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    image_paths = labels = None
    meta = {}
    sidecar_path = path + ".meta.json"
    if os.path.exists(sidecar_path):
        try:
            with open(sidecar_path) as fh:
                meta = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read index sidecar {sidecar_path}: {exc}") from exc
        image_paths = meta.pop("image_paths", None)
        labels = meta.pop("labels", None)
        for key in ("version", "count", "dim"):
            meta.pop(key, None)
    return LatentIndex(vectors.copy(), image_paths=image_paths, labels=labels, meta=meta)
