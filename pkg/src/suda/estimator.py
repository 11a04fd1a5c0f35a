"""Scikit-learn style wrapper around network construction and training."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_branch, check_feature_list, check_label_pairs
from .losses import DEFAULT_MARGIN
from .network import SudaConfig, forward, init_params
from .training import embed_many, group_by_length, train


class SudaVerifier(TransformerMixin, BaseEstimator):
    """Dual-branch speaker/utterance embedding extractor.

    ``fit`` takes a list of ``(NF_i, 60)`` feature matrices and ``y`` of
    shape ``(n, 2)`` holding (speaker, phrase) labels. ``transform`` returns
    ``[speaker embedding | utterance embedding]`` per utterance and
    ``predict`` returns the arg-max (speaker, phrase) labels of the two
    classifier heads.

    Set ``masks_enabled=False`` for the mod-SUV ablation.
    """

    def __init__(self, shared_hidden=256, branch_hidden=256, conv_channels=512, masks_enabled=True,
                 optimizer="sgd", learning_rate=1e-3, momentum=0.9, batch_size=128, epochs=30,
                 patience=5, margin=DEFAULT_MARGIN, seed=2020):
        self.shared_hidden = shared_hidden
        self.branch_hidden = branch_hidden
        self.conv_channels = conv_channels
        self.masks_enabled = masks_enabled
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.margin = margin
        self.seed = seed

    def fit(self, X, y, epoch_callback=None):
        """Train from a fresh initialization.

        ``epoch_callback(epoch, self)`` runs after each epoch; a float it
        returns is logged as that epoch's development EER.
        """
        feats = check_feature_list(X)
        labels = check_label_pairs(y, len(feats))
        self.speaker_classes_, spk_idx = np.unique(labels[:, 0], return_inverse=True)
        self.phrase_classes_, phr_idx = np.unique(labels[:, 1], return_inverse=True)
        self.config_ = SudaConfig(
            n_speakers=len(self.speaker_classes_), n_phrases=len(self.phrase_classes_),
            shared_hidden=self.shared_hidden, branch_hidden=self.branch_hidden,
            conv_channels=self.conv_channels, masks_enabled=bool(self.masks_enabled))
        self.params_ = init_params(self.config_, seed=self.seed)
        self.n_features_in_ = self.config_.input_dim
        # the callback sees the estimator itself, already usable for transform()
        hook = None if epoch_callback is None else (lambda epoch, params: epoch_callback(epoch, self))
        self.train_log_ = train(
            feats, spk_idx, phr_idx, self.params_, self.config_, optimizer=self.optimizer,
            learning_rate=self.learning_rate, momentum=self.momentum, batch_size=self.batch_size,
            epochs=self.epochs, margin=self.margin, seed=self.seed, patience=self.patience,
            epoch_callback=hook)
        return self

    @classmethod
    def from_params(cls, params, config: SudaConfig, speaker_classes, phrase_classes, **kwargs):
        """Wrap already-trained parameters (e.g. from a checkpoint)."""
        est = cls(shared_hidden=config.shared_hidden, branch_hidden=config.branch_hidden,
                  conv_channels=config.conv_channels, masks_enabled=config.masks_enabled, **kwargs)
        est.config_ = config
        est.params_ = params
        est.speaker_classes_ = np.asarray(speaker_classes)
        est.phrase_classes_ = np.asarray(phrase_classes)
        est.n_features_in_ = config.input_dim
        return est

    def embed(self, X, branch="speaker") -> np.ndarray:
        """``(n, D)`` embeddings from one branch."""
        check_is_fitted(self, "params_")
        emb_s, emb_u = embed_many(check_feature_list(X, self.n_features_in_), self.params_, self.config_)
        return emb_s if check_branch(branch) == "spk" else emb_u

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        emb_s, emb_u = embed_many(check_feature_list(X, self.n_features_in_), self.params_, self.config_)
        return np.hstack([emb_s, emb_u])

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        feats = check_feature_list(X, self.n_features_in_)
        out = np.empty((len(feats), 2), dtype=object)
        with ad.no_grad():
            for members in group_by_length(feats, range(len(feats))):
                acts = forward(np.stack([feats[i] for i in members]), self.params_, self.config_)
                out[members, 0] = self.speaker_classes_[np.argmax(acts.logits_s.data, axis=-1)]
                out[members, 1] = self.phrase_classes_[np.argmax(acts.logits_u.data, axis=-1)]
        return out
