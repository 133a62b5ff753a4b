"""Case-based explanation engine for image classifiers.

Isolates salient feature parts of a test image and links each part to the
matching region of a nearest-neighbor training image, via either a
latent-space matcher (CNN backbones) or a superpixel matcher (any backbone
with a penultimate linear head).
"""

from .backend import ModelBundle, Prediction, forward, forward_batch, load_model
from .errors import (
    BoundsError,
    DataError,
    DecompositionError,
    DimensionError,
    FormatError,
    ModelContractError,
    NoMatchError,
    ParameterError,
    XExplainError,
)
from .explainers import (
    ExplanationRecord,
    LatentExplainer,
    SuperpixelExplainer,
    explain_latent,
    explain_superpixel,
    load_record,
    save_record,
)
from .index import LatentIndex, NeighborPool, build_index, load_index, query, save_index
from .matching import RegionMatch, SuperpixelFeature, match_latent, match_superpixel
from .saliency import SaliencyKind, SaliencyMethod, cam, fam, random_map, top_cells
from .superpixels import Segmentation, crop_upsample_region, occlude_except, occlude_only, slic
from .types import (
    ActivationMap,
    FeatureMap3D,
    ImageTensor,
    LatentVector,
    PixelBox,
    SpatialCell,
    l2_distance,
    upsample_cell_to_box,
    upsample_map_bilinear,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationMap",
    "BoundsError",
    "DataError",
    "DecompositionError",
    "DimensionError",
    "ExplanationRecord",
    "FeatureMap3D",
    "FormatError",
    "ImageTensor",
    "LatentExplainer",
    "LatentIndex",
    "LatentVector",
    "ModelBundle",
    "ModelContractError",
    "NeighborPool",
    "NoMatchError",
    "ParameterError",
    "PixelBox",
    "Prediction",
    "RegionMatch",
    "SaliencyKind",
    "SaliencyMethod",
    "Segmentation",
    "SpatialCell",
    "SuperpixelExplainer",
    "SuperpixelFeature",
    "XExplainError",
    "build_index",
    "cam",
    "crop_upsample_region",
    "explain_latent",
    "explain_superpixel",
    "fam",
    "forward",
    "forward_batch",
    "l2_distance",
    "load_index",
    "load_model",
    "load_record",
    "match_latent",
    "match_superpixel",
    "occlude_except",
    "occlude_only",
    "query",
    "random_map",
    "save_index",
    "save_record",
    "slic",
    "top_cells",
    "upsample_cell_to_box",
    "upsample_map_bilinear",
    "__version__",
]
