"""Training loop, metrics, cross-validation and the loss ablation grid."""

import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from serfocal.dsp import FeatureKind
from serfocal.errors import ConfigError, DivergenceError, EmptyInputError, ShapeError
from serfocal.labels import CLASSES, N_CLASSES
from serfocal.losses import cross_entropy_batch, focal_loss_batch
from serfocal.nn.optim import SGD, Adam
from serfocal.resnet import ResNet18Config, build_resnet18

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class LossKind(str, Enum):
    SOFTMAX_CE = "softmax"
    FOCAL = "focal"


class Optimizer(str, Enum):
    ADAM = "adam"
    SGD_MOMENTUM = "sgd"


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: LossKind = LossKind.FOCAL
    gamma: float = 2.0
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.ADAM
    momentum: float = 0.9
    seed: int = 0
    width_scale: float = 1.0
    feature_kind: FeatureKind = FeatureKind.MFCC
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if not self.width_scale > 0:
            raise ConfigError("width_scale must be positive")
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        object.__setattr__(self, "feature_kind", FeatureKind(self.feature_kind))

    def to_dict(self):
        d = asdict(self)
        d["loss_kind"] = self.loss_kind.value
        d["optimizer"] = self.optimizer.value
        d["feature_kind"] = self.feature_kind.name.lower()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("feature_kind"), str):
            d["feature_kind"] = FeatureKind.parse(d["feature_kind"])
        return cls(**d)

    def model_config(self, input_rows=None, input_cols=259):
        rows = self.feature_kind.rows if input_rows is None else input_rows
        return ResNet18Config(input_rows=rows, input_cols=input_cols, width_scale=self.width_scale)


def loss_and_grad(logits, labels, cfg):
    if cfg.loss_kind is LossKind.FOCAL:
        return focal_loss_batch(logits, labels, cfg.gamma)
    return cross_entropy_batch(logits, labels)


def batch_slices(n, batch_size):
    """Batch boundaries; a trailing singleton batch is folded into its
    predecessor so batch norm never trains on one sample."""
    starts = list(range(0, n, batch_size))
    bounds = [(s, min(s + batch_size, n)) for s in starts]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        bounds[-2] = (bounds[-2][0], n)
        bounds.pop()
    return bounds


@dataclass
class Standardizer:
    """Scalar mean/std fitted on a training split."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, x):
        std = float(x.std())
        return cls(float(x.mean()), std if std > 0 else 1.0)

    def apply(self, x):
        return ((x - self.mean) / self.std).astype(np.float32)


@dataclass
class TrainResult:
    model: object
    history: list
    standardizer: Standardizer


def train(model, x, y, cfg, standardizer=None):
    """Mini-batch training; returns the model (trained in place) and history.

    ``history`` holds the sample-weighted mean training loss of each epoch.
    The shuffle order is drawn from ``cfg.seed`` alone, so every run with the
    same seed and data sees the same batches.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise EmptyInputError("empty training set")
    if x.shape[2] != model.cfg.input_rows:
        raise ShapeError(f"features have {x.shape[2]} rows, model expects {model.cfg.input_rows}")
    if standardizer is None:
        standardizer = Standardizer.fit(x) if cfg.standardize else Standardizer()
    x = standardizer.apply(x)
    params = list(model.parameters().values())
    if cfg.optimizer is Optimizer.ADAM:
        opt = Adam(params, lr=cfg.learning_rate)
    else:
        opt = SGD(params, lr=cfg.learning_rate, momentum=cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for b, (lo, hi) in enumerate(batch_slices(len(y), cfg.batch_size)):
            idx = order[lo:hi]
            model.zero_grad()
            logits = model.forward(x[idx], training=True)
            loss, dlogits = loss_and_grad(logits, y[idx], cfg)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            model.backward(dlogits)
            opt.step()
            total += loss * (hi - lo)
        history.append(total / len(y))
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    return TrainResult(model, history, standardizer)


# -- metrics ----------------------------------------------------------------


@dataclass
class Metrics:
    overall_accuracy: float
    class_accuracy: float
    confusion: np.ndarray
    support: np.ndarray
    counts: np.ndarray
    absent_classes: list = field(default_factory=list)

    @property
    def class_recalls(self):
        return np.diag(self.confusion)

    def to_dict(self):
        def clean(a):
            return [[None if np.isnan(v) else float(v) for v in row] for row in a]

        return {
            "overall_accuracy": float(self.overall_accuracy),
            "class_accuracy": float(self.class_accuracy),
            "classes": list(CLASSES),
            "confusion": clean(self.confusion),
            "counts": self.counts.astype(int).tolist(),
            "support": self.support.astype(int).tolist(),
            "absent_classes": list(self.absent_classes),
        }

    @classmethod
    def from_dict(cls, d):
        confusion = np.array([[np.nan if v is None else v for v in row] for row in d["confusion"]])
        return cls(d["overall_accuracy"], d["class_accuracy"], confusion,
                   np.array(d["support"]), np.array(d["counts"]), list(d.get("absent_classes", [])))


def compute_metrics(y_true, y_pred):
    """Overall accuracy, class accuracy and row-normalized confusion (percent).

    Rows are true classes, columns predictions. A class absent from
    ``y_true`` gets a NaN row and is left out of the class accuracy.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0:
        raise EmptyInputError("empty test set")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    support = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        confusion = 100.0 * counts / support[:, None]
    present = support > 0
    absent = [CLASSES[c] for c in np.flatnonzero(~present)]
    overall = 100.0 * np.trace(counts) / len(y_true)
    class_acc = float(np.mean(np.diag(confusion)[present]))
    return Metrics(overall, class_acc, confusion, support, counts, absent)


def evaluate(model, x, y, standardizer=None, batch_size=64):
    standardizer = standardizer or Standardizer()
    return compute_metrics(y, model.predict(standardizer.apply(np.asarray(x)), batch_size))


# -- estimator wrapper, cross-validation, ablation ----------------------------


class ResNetClassifier:
    """Fit/predict wrapper that builds a fresh ResNet from the config seed."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.model = None
        self.history = []
        self.standardizer = Standardizer()

    def fit(self, x, y):
        mcfg = self.cfg.model_config(input_rows=x.shape[2], input_cols=x.shape[3])
        self.model = build_resnet18(mcfg, seed=self.cfg.seed)
        result = train(self.model, x, y, self.cfg)
        self.history, self.standardizer = result.history, result.standardizer
        return self

    def predict(self, x):
        return self.model.predict(self.standardizer.apply(np.asarray(x)))


@dataclass
class CVResult:
    folds: list
    histories: list
    test_folds: list
    pooled: Metrics
    config: dict

    @property
    def overall(self):
        return np.array([m.overall_accuracy for m in self.folds])

    @property
    def class_acc(self):
        return np.array([m.class_accuracy for m in self.folds])

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "kfold",
            "config": self.config,
            "folds": [{"fold": int(f), **m.to_dict(), "loss_history": [float(v) for v in h]}
                      for f, m, h in zip(self.test_folds, self.folds, self.histories)],
            "mean": {"overall_accuracy": float(self.overall.mean()),
                     "class_accuracy": float(self.class_acc.mean())},
            "std": {"overall_accuracy": float(self.overall.std()),
                    "class_accuracy": float(self.class_acc.std())},
            "pooled": self.pooled.to_dict(),
        }


def cross_validate(features, folds, cfg, test_folds=None, estimator_factory=ResNetClassifier):
    """Train on all folds but one, evaluate on the held-out fold, repeat.

    ``test_folds`` restricts which folds are held out (default: all).
    """
    test_folds = list(range(folds.k)) if test_folds is None else list(test_folds)
    results, histories, truths, preds = [], [], [], []
    for fold in test_folds:
        tr, te = folds.train_indices(fold), folds.test_indices(fold)
        est = estimator_factory(cfg).fit(features.x[tr], features.y[tr])
        pred = est.predict(features.x[te])
        results.append(compute_metrics(features.y[te], pred))
        histories.append(list(getattr(est, "history", [])))
        truths.append(features.y[te])
        preds.append(pred)
        log.info("fold %d: overall %.1f class %.1f", fold, results[-1].overall_accuracy,
                 results[-1].class_accuracy)
    pooled = compute_metrics(np.concatenate(truths), np.concatenate(preds))
    return CVResult(results, histories, test_folds, pooled, cfg.to_dict())


@dataclass
class AblationReport:
    cells: dict
    epochs: int
    seed: int

    def cell(self, kind, loss):
        return self.cells[(FeatureKind(kind), LossKind(loss))]

    def to_dict(self):
        rows = []
        for (kind, loss), cv in self.cells.items():
            rows.append({
                "input_features": kind.name.lower(),
                "loss": loss.value,
                "overall_accuracy": float(cv.overall.mean()),
                "class_accuracy": float(cv.class_acc.mean()),
                "per_fold_overall": cv.overall.tolist(),
                "per_fold_class": cv.class_acc.tolist(),
                "test_folds": cv.test_folds,
                "confusion": cv.pooled.to_dict()["confusion"],
                "config": cv.config,
            })
        return {"schema_version": SCHEMA_VERSION, "type": "ablation", "epochs": self.epochs,
                "seed": self.seed, "classes": list(CLASSES), "cells": rows}


def run_ablation(feature_sets, folds, base_cfg, test_folds=None,
                 estimator_factory=ResNetClassifier):
    """The {spectrogram, MFCC} x {softmax, focal} grid.

    Every cell shares folds, epochs, seed and batch order; only the loss
    (and the input features) change.
    """
    cells = {}
    for kind in (FeatureKind.SPECTROGRAM, FeatureKind.MFCC):
        if kind not in feature_sets:
            raise ConfigError(f"ablation needs {kind.name.lower()} features")
        for loss in (LossKind.SOFTMAX_CE, LossKind.FOCAL):
            cfg = replace(base_cfg, loss_kind=loss, feature_kind=kind)
            cells[(kind, loss)] = cross_validate(feature_sets[kind], folds, cfg, test_folds,
                                                 estimator_factory)
    return AblationReport(cells, base_cfg.epochs, base_cfg.seed)
