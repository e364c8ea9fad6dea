"""scikit-learn style wrappers around the networks, training stages and baselines.

Images are ``N x 3 x H x W`` float arrays in [0, 1]; masks are ``N x H x W``
label arrays in {0, 1, 2}.  Hyperparameters live in ``__init__`` and are
exposed through ``get_params``/``set_params``; learned state ends in ``_``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .baselines.clustering import cluster_segment, mean_disease_color, region_features
from .baselines.deep import DEFAULT_SCALES, DEFAULT_TAP, bilinear_pool, extract_deep_features
from .baselines.fisher import fisher_encode, gmm_fit
from .baselines.svm import train_linear_classifier
from .data import Dataset
from .errors import ConfigurationError, ContractError
from .metrics import mean_iou
from .networks import N_ROI_CLASSES, Network, build_classifier, build_roi_subnet, fuse
from .training import (
    TrainConfig,
    center,
    predict_labels,
    predict_masks,
    roi_probabilities,
    train_cls_stage,
    train_end_to_end,
    train_plain_classifier,
    train_roi_stage,
)
from .validation import (
    check_descriptor_sets,
    check_fitted,
    check_images,
    check_labels,
    check_masks,
    check_matrix,
)


def _dataset(X, y=None, masks=None) -> Dataset:
    n = len(X)
    labels = np.zeros(n, dtype=np.int64) if y is None else y
    m = np.zeros((n,) + X.shape[2:], dtype=np.uint8) if masks is None else masks
    return Dataset(X, m, labels, np.zeros(n, dtype=np.uint64))


def _softmax_rows(net: Network, X) -> np.ndarray:
    out = [net.forward(center(X[s:s + 16])).data for s in range(0, len(X), 16)]
    return np.concatenate(out)


class ROISegmenter(BaseEstimator):
    """Encoder/decoder network labeling each pixel background, leaf or lesion."""

    def __init__(self, epochs=20, learning_rate=0.005, batch_size=8, momentum=0.9,
                 class_weight_mode="inverse", seed=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.momentum = momentum
        self.class_weight_mode = class_weight_mode
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, batch_size=self.batch_size, epochs_roi=self.epochs,
                           lr_roi=self.learning_rate, momentum=self.momentum,
                           class_weight_mode=self.class_weight_mode)

    def fit(self, X, masks):
        X = check_images(X)
        masks = check_masks(masks, X, N_ROI_CLASSES)
        net = build_roi_subnet(X.shape[-1], seed=self.seed)
        self.network_ = train_roi_stage(net, _dataset(X, masks=masks), self._config())
        self.loss_curve_ = list(net.history)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self, "network_")
        return roi_probabilities(self.network_, check_images(X))

    def predict(self, X) -> np.ndarray:
        check_fitted(self, "network_")
        return predict_masks(self.network_, check_images(X))

    def score(self, X, masks) -> float:
        """Mean IoU over the classes present in either mask set."""
        X = check_images(X)
        return mean_iou(self.predict(X), check_masks(masks, X), N_ROI_CLASSES).mean


class CNNClassifier(ClassifierMixin, BaseEstimator):
    """The plain 3-channel convolutional classifier."""

    def __init__(self, epochs=15, learning_rate=0.005, finetune_epochs=5, finetune_learning_rate=0.002,
                 batch_size=8, momentum=0.9, n_classes=3, seed=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.finetune_epochs = finetune_epochs
        self.finetune_learning_rate = finetune_learning_rate
        self.batch_size = batch_size
        self.momentum = momentum
        self.n_classes = n_classes
        self.seed = seed

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, len(X), self.n_classes)
        cfg = TrainConfig(seed=self.seed, batch_size=self.batch_size, momentum=self.momentum,
                          epochs_cls=self.epochs, lr_cls=self.learning_rate,
                          epochs_e2e=self.finetune_epochs, lr_e2e=self.finetune_learning_rate)
        net = build_classifier(3, self.n_classes, X.shape[-1], seed=self.seed + 1)
        self.network_ = train_plain_classifier(net, _dataset(X, y), cfg)
        self.classes_ = np.arange(self.n_classes)
        self.loss_curve_ = list(net.history)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self, "network_")
        return _softmax_rows(self.network_, check_images(X))

    def predict(self, X) -> np.ndarray:
        check_fitted(self, "network_")
        return predict_labels(self.network_, check_images(X))


class ROIAwareClassifier(ClassifierMixin, BaseEstimator):
    """ROI subnet fused with a 6-channel classifier, trained in three stages.

    ``fit`` needs the pixel masks for the first stage, passed as ``masks``.
    """

    def __init__(self, epochs_roi=20, lr_roi=0.005, epochs_cls=15, lr_cls=0.005, epochs_e2e=5,
                 lr_e2e=0.002, e2e_roi_lr_scale=0.1, batch_size=8, momentum=0.9,
                 class_weight_mode="inverse", stage_b_inputs="predicted", n_classes=3, seed=0):
        self.epochs_roi = epochs_roi
        self.lr_roi = lr_roi
        self.epochs_cls = epochs_cls
        self.lr_cls = lr_cls
        self.epochs_e2e = epochs_e2e
        self.lr_e2e = lr_e2e
        self.e2e_roi_lr_scale = e2e_roi_lr_scale
        self.batch_size = batch_size
        self.momentum = momentum
        self.class_weight_mode = class_weight_mode
        self.stage_b_inputs = stage_b_inputs
        self.n_classes = n_classes
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, batch_size=self.batch_size, epochs_roi=self.epochs_roi,
                           lr_roi=self.lr_roi, epochs_cls=self.epochs_cls, lr_cls=self.lr_cls,
                           epochs_e2e=self.epochs_e2e, lr_e2e=self.lr_e2e,
                           e2e_roi_lr_scale=self.e2e_roi_lr_scale, momentum=self.momentum,
                           class_weight_mode=self.class_weight_mode,
                           stage_b_inputs=self.stage_b_inputs)

    def fit(self, X, y, masks=None):
        X = check_images(X)
        y = check_labels(y, len(X), self.n_classes)
        if masks is None:
            raise ContractError("ROIAwareClassifier.fit needs pixel masks for the ROI stage")
        data = _dataset(X, y, check_masks(masks, X, N_ROI_CLASSES))
        cfg = self._config()
        size = X.shape[-1]
        roi = train_roi_stage(build_roi_subnet(size, seed=self.seed), data, cfg)
        cls = train_cls_stage(build_classifier(6, self.n_classes, size, seed=self.seed + 1), roi, data, cfg)
        self.roi_network_ = roi
        self.staged_network_ = fuse(roi, cls)
        self.network_ = train_end_to_end(fuse(roi, cls), data, cfg)
        self.classes_ = np.arange(self.n_classes)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self, "network_")
        return _softmax_rows(self.network_, check_images(X))

    def predict(self, X) -> np.ndarray:
        check_fitted(self, "network_")
        return predict_labels(self.network_, check_images(X))

    def predict_masks(self, X) -> np.ndarray:
        """ROI maps from the fine-tuned network's ROI branch."""
        check_fitted(self, "network_")
        return predict_masks(self.network_.subnetwork("roi/"), check_images(X))


class HingeLinearClassifier(ClassifierMixin, BaseEstimator):
    """One-vs-rest linear max-margin classifier trained by subgradient descent."""

    def __init__(self, lam=1e-4, epochs=300, learning_rate=1.0):
        self.lam = lam
        self.epochs = epochs
        self.learning_rate = learning_rate

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_labels(y, len(X))
        self.classes_ = np.arange(int(y.max()) + 1)
        self.model_ = train_linear_classifier(X, y, self.lam, self.epochs, self.learning_rate,
                                              n_classes=len(self.classes_))
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_fitted(self, "model_")
        return self.model_.decision_function(check_matrix(X, self.n_features_in_))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)


class ColorRegionFeatures(TransformerMixin, BaseEstimator):
    """RGB + LBP histograms inside and outside the lesion-colored region."""

    def __init__(self, threshold=0.1):
        self.threshold = threshold

    def fit(self, X, y=None, masks=None):
        """Average the lesion color over ``masks``; ``y`` is ignored (pipeline compatibility)."""
        X = check_images(X)
        if masks is None:
            raise ContractError("ColorRegionFeatures.fit needs pixel masks to find the lesion color")
        self.disease_color_ = mean_disease_color(X, check_masks(masks, X, N_ROI_CLASSES))
        return self

    def segment(self, X) -> np.ndarray:
        check_fitted(self, "disease_color_")
        X = check_images(X)
        return np.stack([cluster_segment(im, self.disease_color_, self.threshold) for im in X])

    def transform(self, X) -> np.ndarray:
        X = check_images(X)
        regions = self.segment(X)
        return np.stack([region_features(im, r) for im, r in zip(X, regions)])


class DeepFeatureExtractor(TransformerMixin, BaseEstimator):
    """Multiscale descriptor sets tapped from a trained classifier.

    ``transform`` returns a list with one ``M x C`` array per image.
    """

    def __init__(self, network=None, tap_layer=DEFAULT_TAP, scales=DEFAULT_SCALES, roi_network=None):
        self.network = network
        self.tap_layer = tap_layer
        self.scales = scales
        self.roi_network = roi_network

    def fit(self, X=None, y=None):
        if self.network is None:
            raise ConfigurationError("DeepFeatureExtractor needs a trained classifier network")
        return self

    def transform(self, X) -> list[np.ndarray]:
        X = check_images(X)
        return [extract_deep_features(im, self.network, self.tap_layer, self.scales, self.roi_network)
                for im in X]


class FisherVectorEncoder(TransformerMixin, BaseEstimator):
    """Diagonal GMM fitted on pooled descriptors; images encoded as Fisher vectors."""

    def __init__(self, n_components=16, iterations=30, normalize=True, seed=0):
        self.n_components = n_components
        self.iterations = iterations
        self.normalize = normalize
        self.seed = seed

    def fit(self, X, y=None):
        sets = check_descriptor_sets(X)
        self.gmm_ = gmm_fit(np.concatenate(sets), self.n_components, self.iterations, self.seed)
        return self

    def transform(self, X) -> np.ndarray:
        check_fitted(self, "gmm_")
        sets = check_descriptor_sets(X, self.gmm_.dim)
        return np.stack([fisher_encode(s, self.gmm_, self.normalize) for s in sets])


class BilinearPooling(TransformerMixin, BaseEstimator):
    """Self outer-product sum pooling of ``N x C x H x W`` feature maps."""

    def __init__(self, normalize=True):
        self.normalize = normalize

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            X = X[None]
        return np.stack([bilinear_pool(m, m, self.normalize) for m in X])


__all__ = ["ROISegmenter", "CNNClassifier", "ROIAwareClassifier", "HingeLinearClassifier",
           "ColorRegionFeatures", "DeepFeatureExtractor", "FisherVectorEncoder", "BilinearPooling"]
