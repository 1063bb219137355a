"""Estimator-style wrapper around training, inference and scoring."""

from __future__ import annotations

import dataclasses
from typing import List, Optional, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..balancer import BalancerConfig
from ..data.synth import Sample, SceneConfig
from ..losses import SegLossConfig
from ..model import EncoderConfig, ModelConfig
from . import checkpoint as ckpt_io
from .config import DatasetConfig, OptimizerConfig, TrainConfig
from .evaluate import Prediction, evaluate_model, predict
from .train import train
from .validation import check_samples


class MultiTaskEstimator(BaseEstimator):
    """Fit on labelled :class:`Sample` lists; predict masks, depth and boxes.

    >>> est = MultiTaskEstimator(epochs=1)            # doctest: +SKIP
    >>> est.fit(train_samples, val_samples=val)       # doctest: +SKIP
    >>> est.score(test_samples)                       # (Dice + mAP) / 2
    """

    def __init__(
        self,
        mode: str = "awu",
        eta: float = 0.1,
        epochs: int = 30,
        batch_size: int = 8,
        learning_rate: float = 1e-3,
        weight_decay: float = 0.02,
        drop_path_max: float = 0.1,
        num_classes: int = 4,
        objectness_threshold: float = 0.05,
        seed: int = 0,
    ):
        self.mode = mode
        self.eta = eta
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.drop_path_max = drop_path_max
        self.num_classes = num_classes
        self.objectness_threshold = objectness_threshold
        self.seed = seed

    def _config(self, image_size) -> TrainConfig:
        return TrainConfig(
            dataset=DatasetConfig(scene=SceneConfig(image_size=tuple(image_size), num_classes=self.num_classes)),
            model=ModelConfig(
                encoder=EncoderConfig(drop_path_max=self.drop_path_max), num_classes=self.num_classes, seed=self.seed
            ),
            seg_loss=SegLossConfig(num_classes=self.num_classes),
            balancer=BalancerConfig(mode=self.mode, eta=self.eta),
            optimizer=OptimizerConfig(learning_rate=self.learning_rate, weight_decay=self.weight_decay),
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            objectness_threshold=self.objectness_threshold,
        )

    def fit(self, X: Sequence[Sample], y=None, val_samples: Optional[Sequence[Sample]] = None, out_dir=None):
        """``y`` is unused: labels travel inside the samples."""
        X = check_samples(X)
        val = check_samples(val_samples) if val_samples is not None else X
        self.config_ = self._config(X[0].mask.shape)
        result = train(self.config_, out_dir, splits={"train": X, "val": val})
        self.model_ = result.model
        self.best_epoch_ = result.best_epoch
        self.runlog_ = result.runlog
        self.validation_ = result.validation
        return self

    def predict(self, X) -> List[Prediction]:
        check_is_fitted(self, "model_")
        return predict(self.model_, X, self.config_.objectness_threshold, self.config_.nms_iou)

    def evaluate(self, X: Sequence[Sample]):
        check_is_fitted(self, "model_")
        return evaluate_model(self.model_, X, self.num_classes, self.config_.objectness_threshold, self.config_.nms_iou)

    def score(self, X: Sequence[Sample], y=None) -> float:
        return self.evaluate(X).score

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        ckpt_io.save(path, self.model_, self.config_)

    @classmethod
    def load(cls, path) -> "MultiTaskEstimator":
        ck = ckpt_io.load(path)
        c = ck.config
        est = cls(
            mode=c.balancer.mode,
            eta=c.balancer.eta,
            epochs=c.epochs,
            batch_size=c.batch_size,
            learning_rate=c.optimizer.learning_rate,
            weight_decay=c.optimizer.weight_decay,
            drop_path_max=c.model.encoder.drop_path_max,
            num_classes=c.model.num_classes,
            objectness_threshold=c.objectness_threshold,
            seed=c.seed,
        )
        est.config_ = c
        est.model_ = ck.build_model()
        return est
