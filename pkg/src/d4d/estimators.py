"""Scikit-learn style wrappers around the two trainable models.

These adapters let the generative model and the depth estimator sit in
standard tooling (clone, get_params, pipelines operating on arrays) while the
underlying training code stays in :mod:`d4d.diffusion` and :mod:`d4d.mde`.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .diffusion import DiffusionConfig, sample, train_denoiser
from .errors import ShapeError
from .mde import MdeNet, compute_depth_metrics, predict_depth, train_mde
from .rgbd import dataset_from_array
from .schedules import make_schedule
from .validation import check_image_batch, check_plane_batch, check_unit_range


class RgbdDiffusion(BaseEstimator):
    """Generative model over (N, 4, H, W) arrays in [0, 1].

    Parameters
    ----------
    config : {'s1', 's2'}
        Loss/schedule pairing: 's1' trains with the mean-absolute loss on a
        linear rate table, 's2' with the mean-squared loss on a cosine table.
    timesteps : int
        Length of the noising chain.
    epochs, batch_size, learning_rate, weight_decay : training recipe.
    sigma_kind : {'posterior', 'beta'}
        Reverse-step noise scale used by :meth:`sample`.
    seed : int
        Master seed for init, batching, and sampling substreams.
    """

    def __init__(
        self,
        config: str = "s1",
        timesteps: int = 200,
        epochs: int = 30,
        batch_size: int = 32,
        learning_rate: float = 1e-4,
        weight_decay: float = 1e-2,
        sigma_kind: str = "posterior",
        seed: int = 0,
    ):
        self.config = config
        self.timesteps = timesteps
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.sigma_kind = sigma_kind
        self.seed = seed

    def fit(self, X, y=None):
        X = check_unit_range(check_image_batch(X, 4, "X"))
        _, _, h, w = X.shape
        cfg = DiffusionConfig.preset(self.config, T=self.timesteps, width=w, height=h, seed=self.seed)
        net, rows = train_denoiser(
            cfg,
            X,
            epochs=self.epochs,
            batch_size=self.batch_size,
            base_lr=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )
        self.config_ = cfg
        self.net_ = net
        self.schedule_ = make_schedule(cfg.schedule_kind, cfg.T)
        self.loss_log_ = rows
        return self

    def sample(self, count: int, seed: int | None = None) -> np.ndarray:
        """Draw ``count`` new (4, H, W) images, clamped to [0, 1]."""
        check_is_fitted(self, "net_")
        return sample(
            self.config_,
            self.schedule_,
            self.net_,
            count=count,
            seed=self.seed if seed is None else seed,
            sigma_kind=self.sigma_kind,
        )


class DepthEstimator(BaseEstimator):
    """Depth regressor from (N, 3, H, W) color input to (N, H, W) planes.

    Targets are depth planes normalized to [0, 1]; ``max_depth_m`` converts
    to meters for scoring.
    """

    def __init__(
        self,
        epochs: int = 30,
        batch_size: int = 32,
        learning_rate: float = 1e-3,
        weight_decay: float = 1e-2,
        max_depth_m: float = 10.0,
        augment: bool = True,
        seed: int = 0,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_depth_m = max_depth_m
        self.augment = augment
        self.seed = seed

    def _dataset(self, X, y):
        X = check_unit_range(check_image_batch(X, 3, "X"))
        y = check_unit_range(check_plane_batch(y))
        if y.shape[0] != X.shape[0] or y.shape[1:] != X.shape[2:]:
            raise ShapeError(f"targets {y.shape} do not match inputs {X.shape}")
        return dataset_from_array(
            np.concatenate([X, y[:, None]], axis=1), max_depth_m=self.max_depth_m
        )

    def fit(self, X, y):
        net, rows = train_mde(
            None,
            self._dataset(X, y),
            epochs=self.epochs,
            base_lr=self.learning_rate,
            seed=self.seed,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            augment=self.augment,
        )
        self.net_ = net
        self.loss_log_ = rows
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_image_batch(X, 3, "X")
        return predict_depth(self.net_, X)

    def score(self, X, y) -> float:
        """Fraction of pixels within the 1.25 accuracy ratio (delta_1)."""
        y = check_plane_batch(y)
        pred = self.predict(X)
        metrics = compute_depth_metrics(
            y.astype(np.float64) * self.max_depth_m,
            pred.astype(np.float64) * self.max_depth_m,
        )
        return metrics.delta1


__all__ = ["RgbdDiffusion", "DepthEstimator", "MdeNet"]
