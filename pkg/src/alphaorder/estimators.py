"""Estimator-style interface to the order solvers.

Thin wrappers with the familiar ``fit`` / ``predict`` / ``get_params``
conventions so the solvers drop into pipelines, grid searches, and the
simulator interchangeably. ``predict`` accepts a single Scenario or an
iterable of them; constructor arguments are stored verbatim and learned
state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import inspect

import numpy as np

from .baselines import fifo_order
from .core import PassingOrder, Scenario, repair_order, validate_scenario
from .exceptions import ConfigurationError
from .neural import Params, decode_order, load_checkpoint
from .search import DEFAULT_GAMMA, DEFAULT_GROUP_MAX, DEFAULT_LAMBDA, mcts_search
from .training import Dataset, TrainConfig, train


class BaseOrderEstimator:
    """get_params/set_params over the constructor signature, sklearn-style."""

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ConfigurationError(
                    f"invalid parameter {name!r} for {type(self).__name__}"
                )
            setattr(self, name, value)
        return self

    def fit(self, X, y=None):
        return self

    def predict(self, X):
        if isinstance(X, Scenario):
            return self._predict_one(X)
        return [self._predict_one(s) for s in X]

    def _predict_one(self, s: Scenario) -> PassingOrder:
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class FifoOrder(BaseOrderEstimator):
    """First-in-first-out reservation order (arrival-time sort)."""

    def __init__(self):
        pass

    def _predict_one(self, s: Scenario) -> PassingOrder:
        validate_scenario(s)
        return fifo_order(s)


class TreeSearchOrder(BaseOrderEstimator):
    """Budgeted group tree search refining the FIFO order."""

    def __init__(
        self,
        budget_iters: int | None = 200,
        budget_s: float | None = None,
        lam: float = DEFAULT_LAMBDA,
        gamma: float = DEFAULT_GAMMA,
        group_max: int = DEFAULT_GROUP_MAX,
        seed: int = 0,
    ):
        self.budget_iters = budget_iters
        self.budget_s = budget_s
        self.lam = lam
        self.gamma = gamma
        self.group_max = group_max
        self.seed = seed

    def _predict_one(self, s: Scenario) -> PassingOrder:
        validate_scenario(s)
        return mcts_search(
            s,
            fifo_order(s),
            budget_iters=self.budget_iters,
            budget_s=self.budget_s,
            lam=self.lam,
            gamma=self.gamma,
            group_max=self.group_max,
            rng=np.random.default_rng(self.seed),
        )


class PointerPolicy(BaseOrderEstimator):
    """Trainable pointer-network policy; greedy decode repaired to enforceability.

    ``fit`` runs the REINFORCE + critic loop over a Dataset (or a list of
    same-size scenarios). The learned weights live in ``theta_``/``delta_``.
    """

    def __init__(
        self,
        embed_dim: int = 256,
        hidden_dim: int = 256,
        batch_size: int = 64,
        epochs: int = 20,
        lr0: float = 1e-3,
        penalty: float = 1000.0,
        seed: int = 0,
    ):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr0 = lr0
        self.penalty = penalty
        self.seed = seed

    def fit(self, X, y=None, out_dir: str | None = None):
        if isinstance(X, Dataset):
            dataset = X
        else:
            instances = list(X)
            if not instances:
                raise ConfigurationError("fit requires at least one scenario")
            dataset = Dataset(
                geometry=instances[0].geometry,
                instances=instances,
                n_vehicles=instances[0].n,
            )
        cfg = TrainConfig(
            n_vehicles=dataset.n_vehicles,
            batch_size=self.batch_size,
            lr0=self.lr0,
            penalty=self.penalty,
            epochs=self.epochs,
            seed=self.seed,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
        )
        result = train(dataset, cfg, out_dir=out_dir)
        self.theta_ = result.theta
        self.delta_ = result.delta
        self.curve_ = result.curve
        return self

    @classmethod
    def from_checkpoint(cls, path: str) -> "PointerPolicy":
        theta, delta, _, meta = load_checkpoint(path)
        cfg = meta.get("config", {})
        est = cls(
            embed_dim=int(cfg.get("embed_dim", theta["embed_w"].shape[0])),
            hidden_dim=int(cfg.get("hidden_dim", theta["att_v"].shape[0])),
            batch_size=int(cfg.get("batch_size", 64)),
            epochs=int(cfg.get("epochs", 20)),
            lr0=float(cfg.get("lr0", 1e-3)),
            penalty=float(cfg.get("penalty", 1000.0)),
            seed=int(cfg.get("seed", 0)),
        )
        est.theta_ = theta
        est.delta_ = delta
        return est

    @property
    def theta(self) -> Params:
        self._check_fitted()
        return self.theta_

    def _check_fitted(self) -> None:
        if not hasattr(self, "theta_"):
            raise ConfigurationError(
                "this PointerPolicy is not fitted; call fit() or from_checkpoint()"
            )

    def _predict_one(self, s: Scenario) -> PassingOrder:
        self._check_fitted()
        validate_scenario(s)
        return repair_order(decode_order(self.theta_, s, mode="greedy").order, s)


class AlphaOrder(BaseOrderEstimator):
    """The full pipeline: pointer-network candidate refined by tree search."""

    def __init__(
        self,
        policy: PointerPolicy | None = None,
        budget_iters: int | None = 200,
        budget_s: float | None = None,
        lam: float = DEFAULT_LAMBDA,
        gamma: float = DEFAULT_GAMMA,
        group_max: int = DEFAULT_GROUP_MAX,
        seed: int = 0,
    ):
        self.policy = policy
        self.budget_iters = budget_iters
        self.budget_s = budget_s
        self.lam = lam
        self.gamma = gamma
        self.group_max = group_max
        self.seed = seed

    def fit(self, X, y=None):
        if self.policy is None:
            self.policy = PointerPolicy(seed=self.seed)
        self.policy.fit(X, y)
        return self

    def _predict_one(self, s: Scenario) -> PassingOrder:
        if self.policy is None:
            raise ConfigurationError("AlphaOrder needs a fitted PointerPolicy")
        candidate = self.policy._predict_one(s)
        return mcts_search(
            s,
            candidate,
            budget_iters=self.budget_iters,
            budget_s=self.budget_s,
            lam=self.lam,
            gamma=self.gamma,
            group_max=self.group_max,
            rng=np.random.default_rng(self.seed),
        )
