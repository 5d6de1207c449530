"""Scikit-learn compatible classifier over raw pen trajectories.

``X`` is a sequence of trajectories, each a list of strokes (lists of [x, y]
points); lengths may differ freely. The estimator owns the whole pipeline:
normalization, resampling, graph construction, and model training.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import SgcnError
from .graphs import batch_graphs
from .ink import Dataset, Sample
from .network import CONFIG_PRESETS, SgcnModel
from .training import TrainConfig, evaluate_graphs, prepare_graph, train
from .validation import check_labels, check_trajectories


class SgcnClassifier(BaseEstimator, ClassifierMixin):
    """Spatial graph convolutional network for online handwriting.

    Parameters mirror the training recipe: ADAM with plateau learning-rate
    decay on a residual spline-convolution stack. See ``fit`` for the data
    layout.
    """

    def __init__(self, config="small", interval=0.02, penup_edges=True,
                 sigma=16.0, margin=0.0, dropout=0.2, width_mult=1.0,
                 feat_mode="full", batch_size=128, lr=0.002, max_epochs=30,
                 patience=3, eval_fraction=0.2, seed=0):
        self.config = config
        self.interval = interval
        self.penup_edges = penup_edges
        self.sigma = sigma
        self.margin = margin
        self.dropout = dropout
        self.width_mult = width_mult
        self.feat_mode = feat_mode
        self.batch_size = batch_size
        self.lr = lr
        self.max_epochs = max_epochs
        self.patience = patience
        self.eval_fraction = eval_fraction
        self.seed = seed

    def _model_config(self, num_classes: int):
        if self.config not in CONFIG_PRESETS:
            raise SgcnError(f"unknown config preset {self.config!r}")
        return CONFIG_PRESETS[self.config](
            num_classes, interval=self.interval, penup_edges=self.penup_edges,
            sigma=self.sigma, margin=self.margin, dropout=self.dropout,
            width_mult=self.width_mult, feat_mode=self.feat_mode)

    def fit(self, X, y):
        """Train on trajectories X with labels y (any hashable class values)."""
        trajectories = check_trajectories(X)
        y = check_labels(y, len(trajectories))
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise SgcnError("need at least two classes")
        samples = [Sample(label=int(k), trajectory=t, id=str(i))
                   for i, (t, k) in enumerate(zip(trajectories, encoded))]
        dataset = Dataset(samples=samples, num_classes=len(self.classes_),
                          class_names=[str(c) for c in self.classes_])
        config = self._model_config(len(self.classes_))
        model = SgcnModel(config, rng=np.random.default_rng(
            np.random.SeedSequence([self.seed, 0x1a2b])))
        tc = TrainConfig(batch_size=self.batch_size, lr=self.lr,
                         patience=self.patience, max_epochs=self.max_epochs,
                         seed=self.seed, eval_fraction=self.eval_fraction)
        result = train(model, dataset, tc)
        self.model_ = result.model
        self.history_ = result.history
        self.best_accuracy_ = result.best_accuracy
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise SgcnError("this SgcnClassifier instance is not fitted yet")

    def _forward(self, X):
        self._check_fitted()
        trajectories = check_trajectories(X)
        graphs = [prepare_graph(t, self.model_.config) for t in trajectories]
        logits = []
        for start in range(0, len(graphs), self.batch_size):
            batch = batch_graphs(graphs[start:start + self.batch_size])
            logits.append(self.model_.forward(batch).logits.data)
        return np.concatenate(logits, axis=0)

    def decision_function(self, X):
        return self._forward(X)

    def predict_proba(self, X):
        logits = self._forward(X).astype(np.float64)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self._forward(X)
        return self.classes_[np.argmax(logits, axis=1)]

    def score(self, X, y):
        y = np.asarray(y)
        return float((self.predict(X) == y).mean())
