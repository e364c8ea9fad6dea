"""Stratified split, the three training stages, and evaluation.

Stage A fits the ROI subnet to ground-truth masks with a class-weighted
pixel loss.  Stage B fits a 6-channel classifier on the image stacked with
the (frozen) ROI subnet's probability map.  Stage C fuses both and trains
the whole network on the classification loss alone.  A plain 3-channel
classifier trained on the same schedule serves as the ablation reference.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import layers as L
from .data import N_CLASSES, Dataset
from .errors import ConfigurationError, ContractError, DataError, NonFiniteError, TrainingError
from .metrics import accuracy, confusion_matrix, mean_iou, per_class_pixel_accuracy
from .networks import N_ROI_CLASSES, Network, build_classifier, build_roi_subnet, fuse
from .tensor import OptimizerState, Tape, backward, sgd_step

logger = logging.getLogger(__name__)

PIXEL_CENTER = 0.5
ROI_PREFIX = "roi/"
STAGE_IDS = {"roi": 1, "cls": 2, "e2e": 3, "plain": 4, "plain-ft": 5}


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 8
    epochs_roi: int = 20
    lr_roi: float = 0.005
    epochs_cls: int = 15
    lr_cls: float = 0.005
    epochs_e2e: int = 5
    lr_e2e: float = 0.002
    e2e_roi_lr_scale: float = 0.1  # Stage C learning-rate multiplier for the pretrained ROI branch
    clip_norm: float = 0.0  # global gradient-norm cap per step; 0 disables
    momentum: float = 0.9
    class_weight_mode: str = "inverse"
    split_ratio: float = 0.5
    stage_b_inputs: str = "predicted"  # or "ground_truth"
    log_path: str | None = None

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ContractError(f"split ratio must lie in (0, 1), got {self.split_ratio}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be positive, got {self.batch_size}")
        if self.stage_b_inputs not in ("predicted", "ground_truth"):
            raise ConfigurationError(f"stage_b_inputs must be 'predicted' or 'ground_truth'")
        if self.class_weight_mode not in ("inverse", "sqrt", "none"):
            raise ConfigurationError(f"unknown class-weight mode {self.class_weight_mode!r}")
        if not self.clip_norm >= 0.0:
            raise ConfigurationError(f"clip_norm must be non-negative, got {self.clip_norm}")
        if not self.e2e_roi_lr_scale >= 0.0:
            raise ConfigurationError(f"e2e_roi_lr_scale must be non-negative, got {self.e2e_roi_lr_scale}")
        for name in ("epochs_roi", "epochs_cls", "epochs_e2e"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class MetricsReport:
    method: str = ""
    seed: int = 0
    n_test: int = 0
    accuracy: float | None = None
    confusion: np.ndarray | None = None
    mean_pixel_acc: float | None = None
    per_class_pixel_acc: np.ndarray | None = None
    mean_iou: float | None = None
    per_class_iou: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"method": self.method, "seed": self.seed, "accuracy": self.accuracy,
                "mean_pixel_acc": self.mean_pixel_acc, "mean_iou": self.mean_iou,
                "n_test": self.n_test}


# ---------------------------------------------------------------------------
# split


def split_dataset(ds: Dataset, ratio: float = 0.5, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split with ``round(ratio * n_c)`` training items per class."""
    train_idx, test_idx = split_indices(ds.labels, ratio, seed)
    return ds.subset(train_idx), ds.subset(test_idx)


def split_indices(labels, ratio: float = 0.5, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"split ratio must lie in (0, 1), got {ratio}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng([int(seed), 7919])
    train, test = [], []
    for c in range(N_CLASSES):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise DataError(f"class {c} has {len(idx)} sample(s); need at least 2 to split")
        n_train = int(math.floor(ratio * len(idx) + 0.5))
        n_train = min(max(n_train, 1), len(idx) - 1)
        perm = idx[rng.permutation(len(idx))]
        train.append(np.sort(perm[:n_train]))
        test.append(np.sort(perm[n_train:]))
    return np.concatenate(train), np.concatenate(test)


# ---------------------------------------------------------------------------
# input preparation


def center(images: np.ndarray) -> np.ndarray:
    return np.asarray(images, dtype=np.float64) - PIXEL_CENTER


def roi_probabilities(roi: Network, images: np.ndarray, chunk: int = 16) -> np.ndarray:
    """Per-pixel softmax of the ROI subnet's scores, computed without recording."""
    out = []
    for s in range(0, len(images), chunk):
        scores = roi.forward(center(images[s:s + chunk]))
        out.append(L._softmax(scores.data, 1))
    return np.concatenate(out) if out else np.zeros((0, N_ROI_CLASSES) + images.shape[2:])


def onehot_masks(masks: np.ndarray) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.int64)
    return (masks[:, None] == np.arange(N_ROI_CLASSES)[None, :, None, None]).astype(np.float64)


# ---------------------------------------------------------------------------
# generic loop


class _EpochLog:
    def __init__(self, path: str | None):
        self.path = path

    def write(self, stage: str, epoch: int, loss: float, extra: str = ""):
        logger.info("%s epoch %d loss %.6f %s", stage, epoch, loss, extra)
        if self.path:
            with open(self.path, "a", encoding="ascii") as fh:
                fh.write(f"stage={stage} epoch={epoch} loss={loss:.8f}{' ' + extra if extra else ''}\n")


def _run_sgd(params, loss_fn, n: int, epochs: int, lr: float, cfg: TrainConfig,
             stage: str, lr_scales: dict | None = None) -> list[float]:
    """Mini-batch momentum SGD; returns the mean loss of every epoch.

    ``lr_scales`` maps a parameter to a learning-rate multiplier.  With the
    momentum form used here, scaling the gradient is the same as scaling the
    step size for that parameter.
    """
    state = OptimizerState(lr, cfg.momentum)
    log = _EpochLog(cfg.log_path)
    history = []
    for epoch in range(1, epochs + 1):
        rng = np.random.default_rng([int(cfg.seed), STAGE_IDS[stage], epoch])
        order = rng.permutation(n)
        total = 0.0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = np.sort(order[start:start + cfg.batch_size])
                with Tape() as tape:
                    loss = loss_fn(idx)
                grads = backward(loss, tape, params)
                for p, scale in (lr_scales or {}).items():
                    grads[p] = grads[p] * scale
                if cfg.clip_norm > 0.0:
                    norm = np.sqrt(sum(float((grads[p] ** 2).sum()) for p in params))
                    if norm > cfg.clip_norm:
                        for p in params:
                            grads[p] = grads[p] * (cfg.clip_norm / norm)
                sgd_step(params, grads, state)
                total += loss.item() * len(idx)
        except NonFiniteError as exc:
            raise TrainingError(f"{stage} training diverged in epoch {epoch}: {exc}") from exc
        history.append(total / n)
        if not np.isfinite(history[-1]):
            raise TrainingError(f"{stage} training diverged in epoch {epoch}: loss {history[-1]}")
        log.write(stage, epoch, history[-1])
    return history


# ---------------------------------------------------------------------------
# stages


def train_roi_stage(net: Network, train: Dataset, cfg: TrainConfig = TrainConfig(),
                    epochs: int | None = None) -> Network:
    """Stage A: fit the ROI subnet to the training masks (in place)."""
    if net.spec.kind != "roi":
        raise ConfigurationError(f"Stage A needs an ROI subnet, got {net.spec.kind}")
    if train.masks is None or len(train.masks) != len(train):
        raise DataError("Stage A needs a mask for every training sample")
    weights = L.class_weights_from_masks(train.masks, N_ROI_CLASSES, cfg.class_weight_mode)
    images = center(train.images)

    def loss_fn(idx):
        return L.pixel_softmax_loss(net.forward(images[idx]), train.masks[idx], weights)

    epochs = cfg.epochs_roi if epochs is None else epochs
    net.history = _run_sgd(net.parameters(), loss_fn, len(train), epochs, cfg.lr_roi, cfg, "roi")
    return net


def stage_b_inputs(roi: Network | None, ds: Dataset, mode: str = "predicted") -> np.ndarray:
    if mode == "ground_truth":
        maps = onehot_masks(ds.masks)
    else:
        if roi is None:
            raise ConfigurationError("predicted Stage-B inputs need an ROI subnet")
        maps = roi_probabilities(roi, ds.images)
    return np.concatenate([center(ds.images), maps], axis=1)


def _fit_classifier(cls: Network, inputs: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                    epochs: int, lr: float, stage: str) -> list[float]:
    def loss_fn(idx):
        return L.cross_entropy(cls.forward(inputs[idx]), labels[idx])

    return _run_sgd(cls.parameters(), loss_fn, len(labels), epochs, lr, cfg, stage)


def train_cls_stage(cls: Network, roi_frozen: Network | None, train: Dataset,
                    cfg: TrainConfig = TrainConfig(), epochs: int | None = None) -> Network:
    """Stage B: fit the 6-channel classifier on image + frozen ROI probabilities.

    The ROI maps are computed once up front as constants, so no gradient
    can reach the ROI subnet.
    """
    if cls.spec.in_channels != 3 + N_ROI_CLASSES:
        raise ConfigurationError("Stage B needs a classifier built for 6 input channels")
    inputs = stage_b_inputs(roi_frozen, train, cfg.stage_b_inputs)
    epochs = cfg.epochs_cls if epochs is None else epochs
    cls.history = _fit_classifier(cls, inputs, train.labels, cfg, epochs, cfg.lr_cls, "cls")
    return cls


def train_end_to_end(fused: Network, train: Dataset, cfg: TrainConfig = TrainConfig(),
                     epochs: int | None = None) -> Network:
    """Stage C: joint fine-tuning through the fusion layer, classification loss only.

    The classification loss sends much larger gradients into the pretrained
    ROI branch than the pixel loss did, so that branch steps at
    ``cfg.e2e_roi_lr_scale`` times the Stage C rate.
    """
    if fused.spec.kind != "fused":
        raise ConfigurationError(f"Stage C needs a fused network, got {fused.spec.kind}")
    images = center(train.images)

    def loss_fn(idx):
        return L.cross_entropy(fused.forward(images[idx]), train.labels[idx])

    epochs = cfg.epochs_e2e if epochs is None else epochs
    scales = {t: cfg.e2e_roi_lr_scale for k, t in fused.params.items() if k.startswith(ROI_PREFIX)}
    fused.history = _run_sgd(fused.parameters(), loss_fn, len(train), epochs, cfg.lr_e2e, cfg, "e2e", scales)
    return fused


def train_plain_classifier(cls: Network, train: Dataset, cfg: TrainConfig = TrainConfig()) -> Network:
    """Reference 3-channel classifier on the Stage B + Stage C schedule."""
    if cls.spec.in_channels != 3:
        raise ConfigurationError("the plain classifier takes 3-channel images")
    images = center(train.images)
    h1 = _fit_classifier(cls, images, train.labels, cfg, cfg.epochs_cls, cfg.lr_cls, "plain")
    h2 = _fit_classifier(cls, images, train.labels, cfg, cfg.epochs_e2e, cfg.lr_e2e, "plain-ft")
    cls.history = h1 + h2
    return cls


# ---------------------------------------------------------------------------
# evaluation


def predict_labels(net: Network, images: np.ndarray, chunk: int = 16) -> np.ndarray:
    if net.spec.kind == "roi":
        raise ConfigurationError("use predict_masks for an ROI subnet")
    if net.spec.in_channels != 3:
        raise ConfigurationError("a 6-channel classifier must be fused with its ROI subnet first")
    out = []
    for s in range(0, len(images), chunk):
        out.append(np.argmax(net.forward(center(images[s:s + chunk])).data, axis=1))
    return np.concatenate(out)


def predict_masks(net: Network, images: np.ndarray, chunk: int = 16) -> np.ndarray:
    if net.spec.kind != "roi":
        raise ConfigurationError("predict_masks needs an ROI subnet")
    out = []
    for s in range(0, len(images), chunk):
        out.append(np.argmax(net.forward(center(images[s:s + chunk])).data, axis=1).astype(np.uint8))
    return np.concatenate(out)


def evaluate(net: Network, test: Dataset, mode: str = "classification",
             method: str = "", seed: int = 0) -> MetricsReport:
    """Classification accuracy/confusion or segmentation pixel accuracy/IoU."""
    if len(test) == 0:
        raise ContractError("cannot evaluate on an empty test set")
    report = MetricsReport(method=method or net.spec.kind, seed=seed, n_test=len(test))
    if mode == "classification":
        pred = predict_labels(net, test.images)
        report.accuracy = accuracy(pred, test.labels)
        report.confusion = confusion_matrix(pred, test.labels, net.spec.n_classes)
        report.extra["predictions"] = pred
    elif mode == "segmentation":
        pred = predict_masks(net, test.images)
        pa = per_class_pixel_accuracy(pred, test.masks, N_ROI_CLASSES)
        iou = mean_iou(pred, test.masks, N_ROI_CLASSES)
        report.mean_pixel_acc, report.per_class_pixel_acc = pa.mean, pa.values
        report.mean_iou, report.per_class_iou = iou.mean, iou.values
    else:
        raise ConfigurationError(f"unknown evaluation mode {mode!r}")
    return report


# ---------------------------------------------------------------------------
# full protocol


METHOD_NAMES = {"roi": "roi-subnet", "cls": "roi-aware-staged", "e2e": "roi-aware-dcnn",
                "plain": "tl-plain-vgg"}


@dataclass
class PipelineResult:
    roi: Network
    cls: Network
    fused: Network
    plain: Network | None
    reports: dict[str, MetricsReport]


def run_pipeline(train: Dataset, test: Dataset, cfg: TrainConfig = TrainConfig(),
                 with_plain: bool = True) -> PipelineResult:
    """Stages A, B, C plus the plain reference, each evaluated on ``test``."""
    roi = build_roi_subnet(train.images.shape[-1], seed=cfg.seed)
    train_roi_stage(roi, train, cfg)
    reports = {"roi": evaluate(roi, test, "segmentation", METHOD_NAMES["roi"], cfg.seed)}

    cls = build_classifier(6, N_CLASSES, train.images.shape[-1], seed=cfg.seed + 1)
    train_cls_stage(cls, roi, train, cfg)
    staged = fuse(roi, cls)
    reports["cls"] = evaluate(staged, test, "classification", METHOD_NAMES["cls"], cfg.seed)

    fused = fuse(roi, cls)
    train_end_to_end(fused, train, cfg)
    reports["e2e"] = evaluate(fused, test, "classification", METHOD_NAMES["e2e"], cfg.seed)

    plain = None
    if with_plain:
        plain = build_classifier(3, N_CLASSES, train.images.shape[-1], seed=cfg.seed + 1)
        train_plain_classifier(plain, train, cfg)
        reports["plain"] = evaluate(plain, test, "classification", METHOD_NAMES["plain"], cfg.seed)
    return PipelineResult(roi, cls, fused, plain, reports)
