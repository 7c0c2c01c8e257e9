"""Scikit-learn style wrappers around the solvers and the UDV network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import linops, spectra, udv
from .solvers import SolverConfig, reconstruct, run_solver


class LowRankRecovery(BaseEstimator):
    """Recover a PSD matrix from linear measurements by factored gradient descent.

    Parameters mirror SolverConfig; ``solver`` selects the constrained
    ("udu") or unconstrained baseline ("bm") dynamics. ``fit`` takes a
    MeasurementOp and the measurement vector.
    """

    def __init__(
        self,
        solver="udu",
        rank=None,
        eta=1e-2,
        iters=100_000,
        init_scale=1e-2,
        alpha=1.0,
        seed=0,
        log_every=1000,
        top_k=10,
        normalize=True,
    ):
        self.solver = solver
        self.rank = rank
        self.eta = eta
        self.iters = iters
        self.init_scale = init_scale
        self.alpha = alpha
        self.seed = seed
        self.log_every = log_every
        self.top_k = top_k
        self.normalize = normalize

    def _config(self) -> SolverConfig:
        return SolverConfig(
            eta=self.eta,
            iters=self.iters,
            init_scale=self.init_scale,
            seed=self.seed,
            solver=self.solver,
            log_every=self.log_every,
            rank=self.rank,
            alpha=self.alpha,
            top_k=self.top_k,
            normalize=self.normalize,
        )

    def fit(self, op: linops.MeasurementOp, b):
        b = check_array(b, ensure_2d=False, dtype=np.float64)
        if b.shape != (op.n_measurements,):
            raise ValueError(
                f"b has shape {b.shape}, expected ({op.n_measurements},)"
            )
        self.state_, self.trace_ = run_solver(op, b, self._config())
        self.reconstruction_ = reconstruct(self.state_)
        self.singular_values_ = spectra.singular_values(self.reconstruction_)
        return self

    def score(self, op: linops.MeasurementOp, b) -> float:
        """Negative residual objective on the given measurements."""
        check_is_fitted(self, "reconstruction_")
        return -linops.objective(op, self.reconstruction_, b)

    def numerical_rank(self, rel_tol: float = 1e-6) -> int:
        check_is_fitted(self, "singular_values_")
        return spectra.numerical_rank(self.singular_values_, rel_tol)


class UdvRegressor(RegressorMixin, BaseEstimator):
    """Linear regressor through a constrained three-layer factorized map."""

    def __init__(
        self,
        variant="udv",
        m=None,
        lr=0.05,
        momentum=0.0,
        batch_size=32,
        epochs=100,
        seed=0,
    ):
        self.variant = variant
        self.m = m
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, ensure_2d=False, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have mismatched sample counts")
        n = X.shape[0]
        # train on everything that was passed in; the split lives upstream
        dataset = udv.RegressionDataset(
            X=X,
            Y=y,
            train_idx=np.arange(n),
            test_idx=np.arange(n),
            r_gen=0,
            noise=0.0,
        )
        config = udv.TrainConfig(
            lr=self.lr,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            variant=self.variant,
        )
        self.params_, self.trace_ = udv.train(dataset, config, m=self.m)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        out = udv.batch_forward(self.params_, X)
        return out[:, 0] if out.shape[1] == 1 else out

    def pruned(self, keep_rank=None, keep_energy=None) -> "UdvRegressor":
        """Return a copy of this estimator with SVD-pruned weights."""
        check_is_fitted(self, "params_")
        clone = UdvRegressor(**self.get_params())
        clone.params_ = udv.svd_prune(
            self.params_, keep_rank=keep_rank, keep_energy=keep_energy
        )
        clone.trace_ = self.trace_
        clone.n_features_in_ = self.n_features_in_
        return clone
