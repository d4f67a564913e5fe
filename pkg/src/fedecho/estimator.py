"""Scikit-learn compatible front end.

``FedEchoClassifier`` runs the whole simulated federation, Dirichlet
partitioning, delayed clients, buffered aggregation, and (for the default
algorithm) server-side distillation, behind the usual fit/predict API, so
it composes with pipelines, grid search, and scoring utilities.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .algorithms import AlgoConfig
from .config import RunConfig
from .distill import DistillConfig
from .errors import ConfigError
from .models import Batch, forward_logits, softmax
from .runner import train_federated
from .simulator import LARGE_DELAY, MILD_DELAY, DelayProfile


class FedEchoClassifier(BaseEstimator, ClassifierMixin):
    """Classifier trained by a simulated asynchronous federation.

    Parameters mirror the run configuration: the training data is split
    across ``n_clients`` by a Dirichlet draw, ``concurrency`` clients train
    at a time under the chosen delay profile, and the server aggregates
    ``buffer_size`` updates per global round. With ``algorithm="fedecho"``
    each round ends with entropy-weighted distillation on an unlabeled
    pool (pass one to ``fit`` or the training inputs are reused).

    Attributes set by fit: ``classes_``, ``n_features_in_``, ``history_``
    (per-eval metric records), ``tau_max_`` and ``tau_avg_`` (delay
    statistics of the run).
    """

    def __init__(
        self,
        n_clients: int = 10,
        concurrency: int = 5,
        buffer_size: int = 3,
        rounds: int = 60,
        algorithm: str = "fedecho",
        alpha_dir: float = 0.3,
        delay: str | DelayProfile = "mild",
        gamma: float = 0.5,
        max_long_fraction: float = 0.1,
        runtime_mode: str = "resample",
        hidden_units: int | None = None,
        eta_l: float = 0.05,
        eta: float = 1.0,
        local_epochs: int = 2,
        local_batch: int = 32,
        weight_decay: float = 0.0,
        eta_d: float = 0.05,
        distill_optimizer: str = "adam",
        alpha_min: float = 0.2,
        alpha_max: float = 0.8,
        nu: float = 5.0,
        distill_batch: int = 128,
        distill_steps: int | None = None,
        eval_every: int = 10,
        random_state: int = 0,
    ):
        self.n_clients = n_clients
        self.concurrency = concurrency
        self.buffer_size = buffer_size
        self.rounds = rounds
        self.algorithm = algorithm
        self.alpha_dir = alpha_dir
        self.delay = delay
        self.gamma = gamma
        self.max_long_fraction = max_long_fraction
        self.runtime_mode = runtime_mode
        self.hidden_units = hidden_units
        self.eta_l = eta_l
        self.eta = eta
        self.local_epochs = local_epochs
        self.local_batch = local_batch
        self.weight_decay = weight_decay
        self.eta_d = eta_d
        self.distill_optimizer = distill_optimizer
        self.alpha_min = alpha_min
        self.alpha_max = alpha_max
        self.nu = nu
        self.distill_batch = distill_batch
        self.distill_steps = distill_steps
        self.eval_every = eval_every
        self.random_state = random_state

    def _delay_profile(self) -> DelayProfile:
        if isinstance(self.delay, DelayProfile):
            return self.delay
        base = {"mild": MILD_DELAY, "large": LARGE_DELAY}.get(self.delay)
        if base is None:
            raise ConfigError(f"delay must be 'mild', 'large', or a DelayProfile, got {self.delay!r}")
        return DelayProfile(
            short=base.short,
            medium=base.medium,
            long=base.long,
            gamma=self.gamma,
            max_long_fraction=self.max_long_fraction,
        )

    def _run_config(self) -> RunConfig:
        distill = DistillConfig(
            eta_d=self.eta_d,
            alpha_min=self.alpha_min,
            alpha_max=self.alpha_max,
            nu=self.nu,
            batch_size=self.distill_batch,
            steps=self.distill_steps,
            optimizer=self.distill_optimizer,
        )
        algo = AlgoConfig(
            algorithm=self.algorithm,
            eta_l=self.eta_l,
            eta=self.eta,
            local_epochs=self.local_epochs,
            local_batch=self.local_batch,
            weight_decay=self.weight_decay,
            distill=distill,
        )
        return RunConfig(
            dataset=None,
            dataset_file=None,
            arch="mlp" if self.hidden_units else "linear",
            hidden=self.hidden_units or 32,
            n_clients=self.n_clients,
            concurrency=self.concurrency,
            buffer_size=self.buffer_size,
            rounds=self.rounds,
            alpha_dir=self.alpha_dir,
            algo=algo,
            delay=self._delay_profile(),
            runtime_mode=self.runtime_mode,
            seeds=(int(self.random_state),),
            eval_every=self.eval_every,
            output_dir="",
            save_dataset=False,
        )

    def fit(self, X, y, X_unlabeled=None):
        """Train the global model on (X, y) split across simulated clients.

        X_unlabeled, when given, is the server-side distillation pool;
        otherwise the training inputs are reused with labels discarded.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ConfigError("need at least two classes to fit")
        self.n_features_in_ = X.shape[1]

        if X_unlabeled is None:
            pool = X.copy()
        else:
            pool = check_array(X_unlabeled, dtype=np.float64)
            if pool.shape[1] != X.shape[1]:
                raise ConfigError(
                    f"pool has {pool.shape[1]} features, X has {X.shape[1]}"
                )

        train = Batch(X, encoded)
        cfg = self._run_config()
        result = train_federated(
            train, train, pool, self.classes_.size, cfg, int(self.random_state)
        )
        self.params_ = result.params
        self.history_ = result.records
        self.tau_max_ = result.tau_max
        self.tau_avg_ = result.tau_avg
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return forward_logits(self.params_, X)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
