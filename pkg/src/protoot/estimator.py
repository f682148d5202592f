"""scikit-learn style wrapper around :func:`~protoot.training.run_training`."""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .retrieval import cross_domain_precision, rank_retrieval
from .training import TrainConfig, run_training

_DEFAULTS = TrainConfig()


class ProtoOTRetriever(TransformerMixin, BaseEstimator):
    """Learn a shared embedding for two unlabeled domains.

    ``fit`` takes the two domains as a list ``Xs = [X_a, X_b]``; ``transform``
    embeds rows of either domain. Parameters mirror
    :class:`~protoot.training.TrainConfig`, with ``cross_weight`` standing in
    for ``lambda_``.

    Attributes
    ----------
    encoder_ : MlpEncoder
        Trained online encoder.
    config_ : TrainConfig
        Config the model was trained with.
    history_ : list of dict
        Per-epoch metrics records.
    prototypes_ : dict
        Domain name to final prototype matrix (absent when training ended in warm-up).
    n_features_in_ : int
    """

    def __init__(self, epochs=_DEFAULTS.epochs, warmup_epochs=_DEFAULTS.warmup_epochs,
                 batch_size=_DEFAULTS.batch_size, learning_rate=_DEFAULTS.learning_rate,
                 cross_weight=_DEFAULTS.lambda_, tau=_DEFAULTS.tau, momentum=_DEFAULTS.momentum,
                 epsilon=_DEFAULTS.epsilon, sinkhorn_mode=_DEFAULTS.sinkhorn_mode, k=_DEFAULTS.k,
                 seed=_DEFAULTS.seed, intra_solver=_DEFAULTS.intra_solver,
                 cross_solver=_DEFAULTS.cross_solver, hidden=_DEFAULTS.hidden,
                 d_out=_DEFAULTS.d_out, encoder_init=_DEFAULTS.encoder_init,
                 noise_sigma=_DEFAULTS.noise_sigma, mask_prob=_DEFAULTS.mask_prob,
                 kl_strength=_DEFAULTS.kl_strength, mass_fraction=_DEFAULTS.mass_fraction,
                 beta_align=_DEFAULTS.beta_align, kmeans_max_iter=_DEFAULTS.kmeans_max_iter,
                 kmeans_restarts=_DEFAULTS.kmeans_restarts):
        self.epochs = epochs
        self.warmup_epochs = warmup_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.cross_weight = cross_weight
        self.tau = tau
        self.momentum = momentum
        self.epsilon = epsilon
        self.sinkhorn_mode = sinkhorn_mode
        self.k = k
        self.seed = seed
        self.intra_solver = intra_solver
        self.cross_solver = cross_solver
        self.hidden = hidden
        self.d_out = d_out
        self.encoder_init = encoder_init
        self.noise_sigma = noise_sigma
        self.mask_prob = mask_prob
        self.kl_strength = kl_strength
        self.mass_fraction = mass_fraction
        self.beta_align = beta_align
        self.kmeans_max_iter = kmeans_max_iter
        self.kmeans_restarts = kmeans_restarts

    def to_config(self):
        """The :class:`TrainConfig` described by the current parameters."""
        params = self.get_params()
        params["lambda_"] = params.pop("cross_weight")
        return TrainConfig(**params)

    @classmethod
    def from_config(cls, cfg):
        params = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)
                  if f.name != "record_wallclock"}
        params["cross_weight"] = params.pop("lambda_")
        return cls(**params)

    def _check_views(self, Xs):
        if len(Xs) != 2:
            raise ValueError(f"expected two domains, got {len(Xs)}")
        views = [check_array(x, dtype=np.float64) for x in Xs]
        if views[0].shape[1] != views[1].shape[1]:
            raise ValueError("both domains must have the same number of features")
        return views

    def fit(self, Xs, y=None):
        """Train on two unlabeled domains.

        Parameters
        ----------
        Xs : list of two array-likes
            ``Xs[i]`` has shape ``(n_samples_i, n_features)``.
        y : ignored
        """
        x_a, x_b = self._check_views(Xs)
        cfg = self.to_config()
        model, history = run_training(cfg, x_a, x_b)
        self.encoder_ = model.encoder
        self.config_ = cfg
        self.history_ = history
        self.prototypes_ = {d: a.prototypes.vectors.copy()
                            for d, a in model.assignments.items()}
        self.n_features_in_ = x_a.shape[1]
        return self

    def transform(self, X):
        """Embed rows of ``X`` (or of each array in a list) into the shared unit sphere."""
        check_is_fitted(self, "encoder_")
        if isinstance(X, (list, tuple)):
            return [self.transform(x) for x in X]
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.encoder_.forward(X, keep_cache=False)

    def fit_transform(self, Xs, y=None):
        return self.fit(Xs, y).transform(list(Xs))

    def retrieve(self, queries, gallery, k=10):
        """Indices of the ``k`` most similar gallery rows for each query row."""
        q = self.transform(queries)
        g = self.transform(gallery)
        if k > len(g):
            raise ValueError(f"k={k} exceeds gallery size {len(g)}")
        return np.asarray(rank_retrieval(q, g))[:, :k]

    def score(self, Xs, ys, k=10):
        """Mean cross-domain P@k over both retrieval directions."""
        emb = self.transform(list(self._check_views(Xs)))
        result = cross_domain_precision(emb[0], emb[1], ys[0], ys[1], ks=(k,))
        return result["mean"][k]

