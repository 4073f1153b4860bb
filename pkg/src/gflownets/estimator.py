"""Scikit-learn style wrapper around the training loop.

``GFlowNetSampler`` exposes the usual estimator surface — ``get_params`` /
``set_params`` / ``clone`` compatibility, ``fit``, ``sample``, and
``score_samples`` — so the sampler can sit inside sklearn tooling.  It
trains entirely in memory and never writes files.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import (
    DiagnosticsBlock,
    EnvBlock,
    EvalBlock,
    ExperimentConfig,
    ExplorationBlock,
    ObjectiveBlock,
    OptimizerBlock,
    ParamsBlock,
)
from .evaluation import log_marginals_of
from .sampling import STREAM_SAMPLE, batch_rng, sample_batch
from .training import held_out_correlations, train

__all__ = ["GFlowNetSampler"]


class GFlowNetSampler(BaseEstimator):
    """Trainable sampler whose draws land proportionally to a reward.

    Parameters
    ----------
    env : environment instance
        A ``HyperGrid`` or ``BitSequence`` (anything with the environment
        interface).  Environments are immutable, so sharing one between
        clones is safe.
    objective : {"subtb", "tb", "db", "fm"}
        Training loss.  ``fm`` requires ``parameterization="edge"``.
    lam : float
        Sub-trajectory geometric weight (``subtb`` only).
    l_max : int or None
        Optional cap on the sub-trajectory length.
    scope : {"batch", "trajectory"}
        Weight-normalization scope for ``subtb``.
    parameterization : {"tabular", "mlp", "edge"}
        How policies and flows are represented.
    hidden : tuple of int
        MLP hidden widths (``mlp`` only).
    activation : {"leaky_relu", "tanh"}
        MLP activation (``mlp`` only).
    backward_policy : {"learned", "uniform"}
        Whether the parent-selection distribution is trained.
    epsilon, temperature : float
        Exploration mixture weight and logit temperature while training.
    learning_rate, z_lr_multiplier, batch_size, n_trajectories :
        Optimizer schedule; the partition estimate trains at
        ``learning_rate * z_lr_multiplier``.
    window : int
        Sliding-window capacity for the empirical-distribution metric.
    eval_interval : int
        Batches between metric records during ``fit``.
    seed : int
        Seed for parameter init, training draws, and default sampling.

    Attributes
    ----------
    policy_ : fitted parameterization
    records_ : list of MetricRecord from the fit loop
    log_z_ : float or None, learned log-partition estimate
    """

    def __init__(self, env=None, objective="subtb", lam=0.9, l_max=None,
                 scope="batch", parameterization="tabular", hidden=(256, 256),
                 activation="leaky_relu", backward_policy="learned",
                 epsilon=0.0, temperature=1.0, learning_rate=0.001,
                 z_lr_multiplier=10.0, batch_size=16, n_trajectories=100_000,
                 window=200_000, eval_interval=100, seed=0):
        self.env = env
        self.objective = objective
        self.lam = lam
        self.l_max = l_max
        self.scope = scope
        self.parameterization = parameterization
        self.hidden = hidden
        self.activation = activation
        self.backward_policy = backward_policy
        self.epsilon = epsilon
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.z_lr_multiplier = z_lr_multiplier
        self.batch_size = batch_size
        self.n_trajectories = n_trajectories
        self.window = window
        self.eval_interval = eval_interval
        self.seed = seed

    # ------------------------------------------------------------------
    def _make_config(self) -> ExperimentConfig:
        return ExperimentConfig(
            env=EnvBlock(),
            params=ParamsBlock(
                kind=self.parameterization, hidden=tuple(self.hidden),
                activation=self.activation, backward_policy=self.backward_policy,
            ),
            objective=ObjectiveBlock(
                kind=self.objective, lam=self.lam, l_max=self.l_max,
                scope=self.scope,
            ),
            exploration=ExplorationBlock(
                epsilon=self.epsilon, temperature=self.temperature,
            ),
            optimizer=OptimizerBlock(
                learning_rate=self.learning_rate,
                z_lr_multiplier=self.z_lr_multiplier,
                batch_size=self.batch_size,
                total_trajectories=self.n_trajectories,
            ),
            eval=EvalBlock(
                window=self.window,
                # interval 0 means "record only the final step"
                interval=(self.eval_interval if self.eval_interval > 0
                          else max(1, self.n_trajectories // self.batch_size)),
                correlations=self.eval_interval > 0,
            ),
            diagnostics=DiagnosticsBlock(),
            seed=self.seed,
            out_dir="",
        )

    def _check_fitted(self):
        if not hasattr(self, "policy_"):
            raise NotFittedError(
                "this GFlowNetSampler is not fitted yet; call fit() first")

    # ------------------------------------------------------------------
    def fit(self, X=None, y=None):
        """Train the sampler on its environment; X and y are ignored."""
        if self.env is None:
            raise ValueError("GFlowNetSampler requires an environment instance")
        result = train(self._make_config(), env=self.env)
        self.policy_ = result.policy
        self.monitor_ = result.monitor
        self.records_ = result.records
        self.log_z_ = (float(self.policy_.log_z.data)
                       if hasattr(self.policy_, "log_z") else None)
        return self

    def sample(self, n: int, seed: int | None = None) -> list:
        """Draw ``n`` terminal states from the fitted forward policy."""
        self._check_fitted()
        rng = batch_rng(self.seed if seed is None else seed, 0, STREAM_SAMPLE)
        return [t.last_state for t in sample_batch(self.policy_, n, rng)]

    def score_samples(self, states) -> np.ndarray:
        """Log-probability of each terminal state under the fitted sampler."""
        self._check_fitted()
        return log_marginals_of(self.policy_, list(states))

    def score(self, X=None, y=None) -> float:
        """Rank agreement (Spearman) between sampler marginals and rewards."""
        self._check_fitted()
        spearman, _ = held_out_correlations(self.policy_, self._make_config())
        return float(spearman)
