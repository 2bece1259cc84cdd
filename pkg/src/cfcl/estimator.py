"""sklearn-style wrapper: ``fit`` runs a federation, ``transform`` embeds."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import RunConfig
from .federation import Federation, build_topology
from .model import embed


class CFCLEmbedder(TransformerMixin, BaseEstimator):
    """Unsupervised federated encoder.

    ``fit(X, device=...)`` splits the rows of X over devices (by the ``device``
    array, or into equal consecutive chunks when it is omitted), runs the
    configured strategy, and keeps the final global model. Labels are never
    used; ``y`` is accepted for pipeline compatibility only.
    """

    def __init__(self, strategy="cf-cl", devices=10, T=600, T_a=50, T_p=10, budget=20,
                 K_reserve=100, K_approx=100, cluster_count=4, hidden_dims=(32,), embedding_dim=8,
                 learning_rate=0.03, batch_size=32, margin=1.0, target_degree=3.0, random_state=0):
        self.strategy = strategy
        self.devices = devices
        self.T = T
        self.T_a = T_a
        self.T_p = T_p
        self.budget = budget
        self.K_reserve = K_reserve
        self.K_approx = K_approx
        self.cluster_count = cluster_count
        self.hidden_dims = hidden_dims
        self.embedding_dim = embedding_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.margin = margin
        self.target_degree = target_degree
        self.random_state = random_state

    def _config(self, sizes):
        smallest = int(min(sizes))
        return RunConfig(
            seed=int(self.random_state or 0), strategy=self.strategy, devices=self.devices,
            T=self.T, T_a=self.T_a, T_p=self.T_p, budget=min(self.budget, self.K_approx),
            K_reserve=min(self.K_reserve, smallest), K_approx=self.K_approx,
            cluster_count=self.cluster_count, hidden_dims=list(self.hidden_dims),
            embedding_dim=self.embedding_dim, learning_rate=self.learning_rate,
            batch_size=self.batch_size, margin=self.margin,
            target_degree=min(self.target_degree, max(self.devices - 1, 1)),
            per_device_size=smallest, log_candidates=False,
        ).validate()

    def fit(self, X, y=None, device=None):
        X = check_array(X)
        if device is None:
            parts = np.array_split(np.arange(len(X)), self.devices)
        else:
            device = np.asarray(device)
            if len(device) != len(X):
                raise ValueError("device must have one entry per row")
            ids = np.unique(device)
            if len(ids) != self.devices:
                raise ValueError(f"expected {self.devices} devices, found {len(ids)}")
            parts = [np.flatnonzero(device == d) for d in ids]
        if min(len(p) for p in parts) < 2:
            raise ValueError("every device needs at least 2 rows")
        cfg = self._config([len(p) for p in parts])
        fed = Federation([X[p] for p in parts], build_topology(cfg), cfg)
        self.history_ = fed.run()
        self.model_ = fed.global_model
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return embed(self.model_, X)
