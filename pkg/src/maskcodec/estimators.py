"""scikit-learn style estimator wrappers around the quantizers.

``fit`` trains codebooks on a (frames, dim) latent corpus, ``transform``
yields integer tokens, ``inverse_transform`` reconstructs latents. Both
estimators follow the sklearn contract (get_params/set_params, trailing
underscores on fitted attributes) so they compose with Pipelines and
model-selection tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import quantizer as q

__all__ = ["MaskedChannelRVQ", "ResidualVQ"]


def _check_latents(X):
    return check_array(X, dtype=np.float64, ensure_2d=True, force_all_finite=True)


class MaskedChannelRVQ(TransformerMixin, BaseEstimator):
    """Masked-channel residual vector quantizer.

    The first ``n_parallel`` stages quantize disjoint contiguous channel
    partitions of the input in parallel; the remaining stages quantize the
    cumulative residual serially.
    """

    def __init__(
        self,
        n_total=8,
        n_parallel=3,
        codebook_size=1024,
        kmeans_iters=25,
        ema_epochs=10,
        ema_decay=0.99,
        reseed_threshold=1.0,
        random_state=0,
    ):
        self.n_total = n_total
        self.n_parallel = n_parallel
        self.codebook_size = codebook_size
        self.kmeans_iters = kmeans_iters
        self.ema_epochs = ema_epochs
        self.ema_decay = ema_decay
        self.reseed_threshold = reseed_threshold
        self.random_state = random_state

    def _schedule(self):
        return q.TrainSchedule(
            kmeans_iters=self.kmeans_iters,
            ema_epochs=self.ema_epochs,
            ema_decay=self.ema_decay,
            reseed_threshold=self.reseed_threshold,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        X = _check_latents(X)
        self.config_ = q.McrvqConfig(
            n_total=self.n_total,
            n_parallel=self.n_parallel,
            codebook_size=self.codebook_size,
            dim=X.shape[1],
        )
        self.codebooks_ = q.train_codebooks(X, self.config_, self._schedule())
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "codebooks_")
        X = _check_latents(X)
        return q.mcrvq_encode(X, self.codebooks_, self.config_).tokens

    def inverse_transform(self, tokens, n_stages=None):
        check_is_fitted(self, "codebooks_")
        if n_stages is None:
            n_stages = self.config_.n_total
        return q.mcrvq_decode(tokens, self.codebooks_, self.config_, n_stages)

    def quantize(self, X) -> q.QuantizationResult:
        """Full encode result (tokens, fused latents, residual energies)."""
        check_is_fitted(self, "codebooks_")
        return q.mcrvq_encode(_check_latents(X), self.codebooks_, self.config_)


class ResidualVQ(TransformerMixin, BaseEstimator):
    """Plain serial residual vector quantizer (the ablation baseline)."""

    def __init__(
        self,
        n_total=8,
        codebook_size=1024,
        kmeans_iters=25,
        ema_epochs=10,
        ema_decay=0.99,
        reseed_threshold=1.0,
        random_state=0,
    ):
        self.n_total = n_total
        self.codebook_size = codebook_size
        self.kmeans_iters = kmeans_iters
        self.ema_epochs = ema_epochs
        self.ema_decay = ema_decay
        self.reseed_threshold = reseed_threshold
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _check_latents(X)
        schedule = q.TrainSchedule(
            kmeans_iters=self.kmeans_iters,
            ema_epochs=self.ema_epochs,
            ema_decay=self.ema_decay,
            reseed_threshold=self.reseed_threshold,
            seed=self.random_state,
        )
        self.codebooks_ = q.train_rvq_codebooks(
            X, self.n_total, self.codebook_size, schedule
        )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "codebooks_")
        return q.rvq_encode(_check_latents(X), self.codebooks_, self.n_total).tokens

    def inverse_transform(self, tokens, n_stages=None):
        check_is_fitted(self, "codebooks_")
        if n_stages is None:
            n_stages = self.n_total
        return q.rvq_decode(tokens, self.codebooks_, n_stages)

    def quantize(self, X) -> q.QuantizationResult:
        check_is_fitted(self, "codebooks_")
        return q.rvq_encode(_check_latents(X), self.codebooks_, self.n_total)
