"""Sklearn-style estimator wrapping the transformer rate predictor."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .autodiff import Adam, backward
from .channel import RouteTrace
from .links import LinkConfig
from .model import (ModelConfig, build_window, featurize, forward, init_params,
                    load_model, mse_loss, save_model)
from .validation import check_masked_route

_EVAL_BATCH = 512


def _route_features(route: RouteTrace, links: list[LinkConfig], rate_unit: float):
    check_masked_route(route)
    feats = featurize(route.obs_snr_db, route.mask, links, rate_unit)
    targets = route.rate_bps / rate_unit
    return feats, targets


class RatePredictor(BaseEstimator):
    """One-step-ahead per-link rate predictor over bandit-masked traces.

    ``fit`` consumes masked :class:`RouteTrace` objects and trains with Adam
    (minibatch MSE on windows starting at t = window); ``predict`` slides the
    trained model over a route and returns rates in bits/s. Hyperparameter
    defaults follow the training recipe: lr 1e-3, dropout 0.2, batch 128.
    """

    def __init__(self, window: int = 20, embed_dim: int = 64, n_heads: int = 4,
                 ffn_dim: int = 128, head_hidden: int = 64, dropout: float = 0.2,
                 learning_rate: float = 1e-3, batch_size: int = 128,
                 epochs: int = 200, stride: int = 1, rate_unit: float = 1e8,
                 seed: int = 0):
        self.window = window
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.ffn_dim = ffn_dim
        self.head_hidden = head_hidden
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.stride = stride
        self.rate_unit = rate_unit
        self.seed = seed

    def _make_config(self, links: list[LinkConfig]) -> ModelConfig:
        return ModelConfig.for_links(
            links, window=self.window, embed_dim=self.embed_dim,
            n_heads=self.n_heads, ffn_dim=self.ffn_dim,
            head_hidden=self.head_hidden, dropout=self.dropout,
            rate_unit=self.rate_unit)

    def fit(self, routes: list[RouteTrace], y=None, *,
            links: list[LinkConfig], val_routes: list[RouteTrace] | None = None):
        if not routes:
            raise ValueError("fit: empty training split")
        config = self._make_config(links)
        init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, 0])))
        shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, 1])))
        drop_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, 2])))

        train_data = [_route_features(r, links, self.rate_unit) for r in routes]
        val_data = [_route_features(r, links, self.rate_unit) for r in (val_routes or [])]
        index = [(ri, t)
                 for ri, (feats, _) in enumerate(train_data)
                 for t in range(self.window, feats.shape[0], self.stride)]
        if not index:
            raise ValueError("fit: routes shorter than the history window")

        params = init_params(config, init_rng)
        opt = Adam(params, lr=self.learning_rate)
        best_val = np.inf
        best_values = params.values_copy()
        self.history_ = []

        for epoch in range(self.epochs):
            order = shuffle_rng.permutation(len(index))
            total, count = 0.0, 0
            for start in range(0, len(order), self.batch_size):
                batch = [index[i] for i in order[start:start + self.batch_size]]
                xb = np.stack([train_data[ri][0][t - self.window:t] for ri, t in batch])
                yb = np.stack([train_data[ri][1][t] for ri, t in batch])
                pred = forward(xb, params, config, train=True, rng=drop_rng)
                loss = mse_loss(pred, yb)
                params.zero_grad()
                backward(loss)
                opt.step()
                total += float(loss.data) * len(batch)
                count += len(batch)
            train_loss = total / count
            val_loss = (self._split_loss(val_data, params, config)
                        if val_data else float("nan"))
            self.history_.append(
                {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
            if val_data and val_loss < best_val:
                best_val = val_loss
                best_values = params.values_copy()

        if val_data:
            params.load_values(best_values)
        self.params_ = params
        self.config_ = config
        self.links_ = list(links)
        return self

    def _split_loss(self, data, params, config) -> float:
        total, count = 0.0, 0
        for feats, targets in data:
            steps = feats.shape[0]
            ts = list(range(self.window, steps))
            for start in range(0, len(ts), _EVAL_BATCH):
                chunk = ts[start:start + _EVAL_BATCH]
                xb = np.stack([feats[t - self.window:t] for t in chunk])
                yb = np.stack([targets[t] for t in chunk])
                pred = forward(xb, params, config, train=False)
                total += float(np.mean((pred.data - yb) ** 2)) * len(chunk)
                count += len(chunk)
        return total / count

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("predictor is not fitted; call fit or load first")

    def predict(self, route: RouteTrace) -> np.ndarray:
        """Per-step predictions in bits/s for t in [window, steps), shape (T-W, M)."""
        self._check_fitted()
        if route.steps < self.window + 1:
            raise ValueError(f"route has {route.steps} steps, needs > {self.window}")
        feats, _ = _route_features(route, self.links_, self.rate_unit)
        ts = list(range(self.window, route.steps))
        out = np.empty((len(ts), self.config_.n_links))
        for start in range(0, len(ts), _EVAL_BATCH):
            chunk = ts[start:start + _EVAL_BATCH]
            xb = np.stack([build_window(feats, t, self.window) for t in chunk])
            out[start:start + len(chunk)] = forward(xb, self.params_, self.config_).data
        return out * self.rate_unit

    def save(self, path: Path) -> None:
        self._check_fitted()
        save_model(path, self.config_, self.params_)

    def load(self, path: Path, links: list[LinkConfig]) -> "RatePredictor":
        config, params = load_model(path)
        caps = tuple(l.cap_bps for l in links)
        if tuple(config.rate_caps_bps) != caps or config.n_links != len(links):
            raise ValueError("model link table does not match the dataset links")
        self.window = config.window
        self.rate_unit = config.rate_unit
        self.config_ = config
        self.params_ = params
        self.links_ = list(links)
        return self
