"""ROI-aware convolutional classification of leaf disease images.

A pixel-labeling subnetwork marks background, leaf and lesion areas; its
probability map is stacked onto the image and fed to a convolutional
classifier, and the whole network is then fine-tuned end to end.  The
package also carries its own autodiff core, a procedural scene generator,
evaluation metrics, three comparison methods and a command-line tool.
"""

from .data import Dataset, GenConfig, gen_dataset, gen_scene
from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    DimensionError,
    FormatError,
    LeafRoiError,
    NonFiniteError,
    TapeLookupError,
    TrainingError,
)
from .estimators import (
    BilinearPooling,
    CNNClassifier,
    ColorRegionFeatures,
    DeepFeatureExtractor,
    FisherVectorEncoder,
    HingeLinearClassifier,
    ROIAwareClassifier,
    ROISegmenter,
)
from .io import load_checkpoint, save_checkpoint
from .networks import Network, build_classifier, build_roi_subnet, fuse
from .training import MetricsReport, TrainConfig, evaluate, run_pipeline, split_dataset

__version__ = "0.1.0"
