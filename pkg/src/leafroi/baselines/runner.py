"""End-to-end baseline runs: features on the training split, linear classifier, test report."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from ..data import Dataset
from ..errors import ConfigurationError
from ..metrics import accuracy, confusion_matrix
from ..networks import Network
from ..training import MetricsReport
from .clustering import cluster_segment, default_thresholds, mean_disease_color, region_features
from .deep import DEFAULT_SCALES, DEFAULT_TAP, bilinear_pool, extract_deep_features, tap_maps
from .fisher import fisher_encode, gmm_fit
from .svm import LinearClassifier, train_linear_classifier

logger = logging.getLogger(__name__)

METHODS = ("clustering", "mdfep", "bilinear")
METHOD_LABELS = {"clustering": "clustering-features", "mdfep": "mdfep-fisher",
                 "bilinear": "bilinear-pooling"}


@dataclass(frozen=True)
class BaselineConfig:
    seed: int = 0
    svm_lambda: float = 1e-4
    svm_epochs: int = 300
    svm_lr: float = 1.0
    n_thresholds: int = 16
    gmm_components: int = 16
    gmm_iterations: int = 30
    gmm_max_descriptors: int = 20000
    tap_layer: str = DEFAULT_TAP
    n_scales: int = 9

    def __post_init__(self):
        if self.svm_lambda < 0 or self.svm_epochs < 1 or self.svm_lr <= 0:
            raise ConfigurationError("linear classifier settings out of range")
        if self.n_thresholds < 1 or self.gmm_components < 1 or self.gmm_iterations < 0:
            raise ConfigurationError("baseline counts must be positive")
        if self.n_scales not in (1, 3, 5, 7, 9):
            raise ConfigurationError("n_scales must be an odd count up to 9, centered on scale 1")

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def scales(self) -> tuple[float, ...]:
        drop = (9 - self.n_scales) // 2
        return DEFAULT_SCALES[drop:len(DEFAULT_SCALES) - drop]


def _classifier(feats, labels, cfg: BaselineConfig, k: int) -> LinearClassifier:
    return train_linear_classifier(feats, labels, lam=cfg.svm_lambda, epochs=cfg.svm_epochs,
                                   lr=cfg.svm_lr, n_classes=k)


def _report(method, cfg, test, pred, k, **extra) -> MetricsReport:
    return MetricsReport(method=METHOD_LABELS[method], seed=cfg.seed, n_test=len(test),
                         accuracy=accuracy(pred, test.labels),
                         confusion=confusion_matrix(pred, test.labels, k), extra=extra)


def _run_clustering(train, test, cfg, k):
    color = mean_disease_color(train.images, train.masks)
    best = None
    for thr in default_thresholds(cfg.n_thresholds):
        feats = np.stack([region_features(im, cluster_segment(im, color, thr)) for im in train.images])
        clf = _classifier(feats, train.labels, cfg, k)
        acc = accuracy(clf.predict(feats), train.labels)
        logger.info("clustering threshold %.4f train accuracy %.4f", thr, acc)
        if best is None or acc > best[0]:
            best = (acc, thr, clf)
    _, thr, clf = best
    feats = np.stack([region_features(im, cluster_segment(im, color, thr)) for im in test.images])
    return _report("clustering", cfg, test, clf.predict(feats), k, threshold=float(thr))


def _run_mdfep(train, test, cfg, k, net, roi):
    scales = cfg.scales()
    train_sets = [extract_deep_features(im, net, cfg.tap_layer, scales, roi) for im in train.images]
    pool = np.concatenate(train_sets)
    rng = np.random.default_rng([cfg.seed, 104729])
    if len(pool) > cfg.gmm_max_descriptors:
        pool = pool[np.sort(rng.choice(len(pool), cfg.gmm_max_descriptors, replace=False))]
    gmm = gmm_fit(pool, cfg.gmm_components, cfg.gmm_iterations, seed=cfg.seed)
    feats = np.stack([fisher_encode(d, gmm) for d in train_sets])
    clf = _classifier(feats, train.labels, cfg, k)
    test_feats = np.stack([fisher_encode(extract_deep_features(im, net, cfg.tap_layer, scales, roi), gmm)
                           for im in test.images])
    return _report("mdfep", cfg, test, clf.predict(test_feats), k)


def _bilinear_features(images, net, roi, tap):
    maps = tap_maps(images, net, tap, roi)
    return np.stack([bilinear_pool(m, m) for m in maps])


def _run_bilinear(train, test, cfg, k, net, roi):
    clf = _classifier(_bilinear_features(train.images, net, roi, cfg.tap_layer), train.labels, cfg, k)
    pred = clf.predict(_bilinear_features(test.images, net, roi, cfg.tap_layer))
    return _report("bilinear", cfg, test, pred, k)


def run_baseline(method: str, train: Dataset, test: Dataset, config: BaselineConfig = BaselineConfig(),
                 cls_net: Network | None = None, roi: Network | None = None,
                 n_classes: int = 3) -> MetricsReport:
    """Run one comparison method and report its test accuracy.

    ``mdfep`` and ``bilinear`` need a trained classifier ``cls_net``; a
    6-channel classifier also needs the ROI subnet that feeds it.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown baseline {method!r}; choose from {', '.join(METHODS)}")
    if method == "clustering":
        return _run_clustering(train, test, config, n_classes)
    if cls_net is None:
        raise ConfigurationError(f"the {method} baseline needs a trained classifier")
    if method == "mdfep":
        return _run_mdfep(train, test, config, n_classes, cls_net, roi)
    return _run_bilinear(train, test, config, n_classes, cls_net, roi)
