"""Locally supervised conv features, Fisher vector pooling, hybrid classification."""

from .errors import ConfigurationError, DataError, NumericError, StageError
from .fisher import (
    BagOfWordsEncoder,
    DirectEncoder,
    FisherVectorEncoder,
    accumulate_statistics,
    encode_direct,
    encode_fisher,
    fisher_gradients,
    power_l2_normalize,
)
from .fusion import block_l2_normalize, fuse, fuse_batches
from .gmm import DiagonalGaussianMixture
from .network import (
    AuxHead,
    Conv,
    Dense,
    LocallySupervisedConvNet,
    Pool,
    desk_heads,
    desk_layers,
    joint_loss,
)
from .pca import PrincipalComponents
from .scenes import (
    GeneratedScenes,
    LabeledDataset,
    MicroSceneSpec,
    default_scene_spec,
    generate_dataset,
    ingest_images,
)
from .svm import LinearHingeSVM
from .tensors import descriptors_to_maps, maps_to_descriptors, max_abs_normalize, occlude

__version__ = "0.1.0"

__all__ = [
    "AuxHead",
    "BagOfWordsEncoder",
    "ConfigurationError",
    "Conv",
    "DataError",
    "Dense",
    "DiagonalGaussianMixture",
    "DirectEncoder",
    "FisherVectorEncoder",
    "GeneratedScenes",
    "LabeledDataset",
    "LinearHingeSVM",
    "LocallySupervisedConvNet",
    "MicroSceneSpec",
    "NumericError",
    "Pool",
    "PrincipalComponents",
    "StageError",
    "accumulate_statistics",
    "block_l2_normalize",
    "default_scene_spec",
    "desk_heads",
    "desk_layers",
    "descriptors_to_maps",
    "encode_direct",
    "encode_fisher",
    "fisher_gradients",
    "fuse",
    "fuse_batches",
    "generate_dataset",
    "ingest_images",
    "joint_loss",
    "maps_to_descriptors",
    "max_abs_normalize",
    "occlude",
    "power_l2_normalize",
]
