"""Scikit-learn style estimators wrapping the retrieval model and localizer.

Both follow the fit/predict/score conventions (init args stored verbatim,
fitted state in trailing-underscore attributes) so they compose with
sklearn tooling such as ``clone`` and parameter search.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .evaluation import build_index, recall_table, retrieve_topk_batch
from .lpvl import (
    LocalizerConfig,
    TwoTowerEmbedder,
    localization_accuracy,
    localize,
    train_localizer,
)
from .model import LGLIModel, ModelConfig
from .scenes import Dataset
from .training import TrainConfig, train
from .validation import as_dataset


class TwoTowerLocalizer(BaseEstimator):
    """Region/text joint embedding trained with in-batch contrastive softmax."""

    def __init__(self, epochs: int = 25, batch_size: int = 32, lr: float = 0.1,
                 scale: float = 10.0, seed: int = 0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.scale = scale
        self.seed = seed

    def fit(self, X: Union[Dataset, str], y=None) -> "TwoTowerLocalizer":
        dataset = as_dataset(X)
        config = LocalizerConfig(epochs=self.epochs, batch_size=self.batch_size,
                                 lr=self.lr, scale=self.scale, seed=self.seed)
        params, history = train_localizer(dataset, config)
        self.params_ = params
        self.history_ = history
        self.embedder_ = TwoTowerEmbedder(params, dataset.vocabulary)
        return self

    def _check_fitted(self):
        if not hasattr(self, "embedder_"):
            raise NotFittedError("TwoTowerLocalizer is not fitted yet")

    def predict(self, regions: list, loc_tokens: list):
        """Argmax region for one localization text (None on empty inputs)."""
        self._check_fitted()
        return localize(regions, loc_tokens, self.embedder_)

    def score(self, X: Union[Dataset, str], y=None, split: str = "test") -> float:
        self._check_fitted()
        return localization_accuracy(as_dataset(X), self.embedder_, split=split)


class LGLIRetriever(BaseEstimator):
    """Trainable composed-image-retrieval estimator.

    ``fit`` expects a dataset (manifest path or Dataset); ``transform``
    maps query triplets to final features; ``predict`` returns top-k
    scene ids; ``score`` is test-split R@1 as a fraction.
    """

    def __init__(self, alpha: float = 1e-4, lr: float = 0.01, epochs: int = 50,
                 batch_size: int = 32, similarity_scale: float = 4.0, seed: int = 0,
                 disable_mask: bool = False, disable_cross_attention: bool = False,
                 concat_fallback: bool = False, unbounded_text_gate: bool = False,
                 normalize: bool = True, proposer_mode: str = "oracle",
                 loss_tol: Optional[float] = 0.01, min_epochs: int = 15,
                 val_every: int = 1, single_thread: bool = False):
        self.alpha = alpha
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.similarity_scale = similarity_scale
        self.seed = seed
        self.disable_mask = disable_mask
        self.disable_cross_attention = disable_cross_attention
        self.concat_fallback = concat_fallback
        self.unbounded_text_gate = unbounded_text_gate
        self.normalize = normalize
        self.proposer_mode = proposer_mode
        self.loss_tol = loss_tol
        self.min_epochs = min_epochs
        self.val_every = val_every
        self.single_thread = single_thread

    # -- configuration ---------------------------------------------------------

    def _model_config(self, vocabulary: list) -> ModelConfig:
        return ModelConfig(
            alpha=self.alpha,
            disable_mask=self.disable_mask,
            disable_cross_attention=self.disable_cross_attention,
            concat_fallback=self.concat_fallback,
            unbounded_text_gate=self.unbounded_text_gate,
            normalize=self.normalize,
            similarity_scale=self.similarity_scale,
            proposer_mode=self.proposer_mode,
            seed=self.seed,
            vocabulary=list(vocabulary),
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
            seed=self.seed, val_every=self.val_every, loss_tol=self.loss_tol,
            min_epochs=self.min_epochs, single_thread=self.single_thread,
        )

    # -- estimator API -----------------------------------------------------------

    def fit(self, X: Union[Dataset, str], y=None,
            localizer: Optional[TwoTowerLocalizer] = None,
            localizer_params: Optional[dict] = None) -> "LGLIRetriever":
        dataset = as_dataset(X)
        self.dataset_ = dataset
        if localizer_params is None and localizer is not None:
            localizer._check_fitted()
            localizer_params = localizer.params_
        needs_masks = not (self.disable_mask or self.concat_fallback)
        if needs_masks and localizer_params is None:
            localizer = TwoTowerLocalizer(seed=self.seed).fit(dataset)
            localizer_params = localizer.params_
        result = train(dataset, self._model_config(dataset.vocabulary),
                       self._train_config(), localizer_params=localizer_params)
        self.model_ = result.best_model()
        self.history_ = result.history
        self.best_val_r1_ = result.best_val_r1
        self.stopped_early_ = result.stopped_early
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("LGLIRetriever is not fitted yet")

    def transform(self, triplets: list, dataset: Optional[Dataset] = None) -> np.ndarray:
        """Processed final query features, one row per triplet."""
        self._check_fitted()
        ds = dataset or self.dataset_
        return self.model_.compose_eval(ds, list(triplets))

    def predict(self, triplets: list, k: int = 1, split: str = "test",
                dataset: Optional[Dataset] = None) -> list:
        """Top-k gallery scene ids for each query triplet."""
        self._check_fitted()
        ds = dataset or self.dataset_
        index = build_index(self.model_, ds, split)
        results = retrieve_topk_batch(self.model_, ds, list(triplets), index, k=k)
        return [[sid for sid, _ in r.ranking] for r in results]

    def score(self, X: Union[Dataset, str, None] = None, y=None,
              split: str = "test") -> float:
        """Test-split R@1 as a fraction in [0, 1]."""
        self._check_fitted()
        ds = as_dataset(X) if X is not None else self.dataset_
        index = build_index(self.model_, ds, split)
        results = retrieve_topk_batch(
            self.model_, ds, ds.split_triplets(split), index, k=1
        )
        return recall_table(results, (1,))["R@1"] / 100.0

    def save(self, path) -> None:
        self._check_fitted()
        self.model_.save(path)

    @staticmethod
    def from_checkpoint(path, dataset: Optional[Dataset] = None) -> "LGLIRetriever":
        model = LGLIModel.load(path)
        est = LGLIRetriever(
            alpha=model.config.alpha,
            similarity_scale=model.config.similarity_scale,
            disable_mask=model.config.disable_mask,
            disable_cross_attention=model.config.disable_cross_attention,
            concat_fallback=model.config.concat_fallback,
            unbounded_text_gate=model.config.unbounded_text_gate,
            normalize=model.config.normalize,
            proposer_mode=model.config.proposer_mode,
            seed=model.config.seed,
        )
        est.model_ = model
        if dataset is not None:
            est.dataset_ = dataset
        return est
