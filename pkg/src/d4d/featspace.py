"""Dataset embeddings and distances between dataset configurations.

Each dataset is reduced to one fixed-length vector: a frozen, seeded random
convolutional feature extractor runs over every sample, features are global-
average-pooled, and the per-sample vectors are averaged in order. Distances
between dataset embeddings use the Euclidean norm and the Hellinger distance
(after rectifying and normalizing the vectors into discrete distributions).
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .denoiser import _uniform_fan_in
from .errors import ParameterError, ShapeError
from .rgbd import RgbdDataset
from .rng import substream

DEFAULT_EXTRACTOR_SEED = 77
DEFAULT_EMBED_DIM = 64


@dataclass(frozen=True)
class EmbeddingVector:
    """Mean pooled feature vector of one dataset."""

    values: np.ndarray
    source: str
    n_samples: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ShapeError(f"embedding must be a vector, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ParameterError("embedding contains non-finite values")
        if self.n_samples < 1:
            raise ParameterError(f"n_samples must be >= 1, got {self.n_samples}")


class FeatureExtractor:
    """Frozen random conv net: 3 channels in, ``dim`` pooled features out.

    Weights are drawn once from the given seed and never trained, which keeps
    embedding distances comparable across runs without external weights.
    """

    def __init__(self, seed: int = DEFAULT_EXTRACTOR_SEED, dim: int = DEFAULT_EMBED_DIM):
        rng = substream(seed, "featspace/extractor")
        self.seed = seed
        self.dim = dim
        mid = dim // 2
        self.weights = [
            _uniform_fan_in(rng, (mid, 3, 3, 3), 27, np.float32),
            _uniform_fan_in(rng, (mid, mid, 3, 3), mid * 9, np.float32),
            _uniform_fan_in(rng, (dim, mid, 3, 3), mid * 9, np.float32),
        ]

    def features(self, batch: np.ndarray) -> np.ndarray:
        """Pooled feature vectors (N, dim) for a (N, 3, H, W) batch."""
        batch = np.asarray(batch, dtype=np.float32)
        if batch.ndim != 4 or batch.shape[1] != 3:
            raise ShapeError(f"extractor input must be (N, 3, H, W), got {batch.shape}")
        with no_grad():
            h = ad.relu(ad.conv2d(Tensor(batch), Tensor(self.weights[0]), stride=2, padding=1))
            h = ad.relu(ad.conv2d(h, Tensor(self.weights[1]), stride=2, padding=1))
            h = ad.relu(ad.conv2d(h, Tensor(self.weights[2]), padding=1))
        return h.data.mean(axis=(2, 3)).astype(np.float64)


def embed_dataset(
    data: RgbdDataset,
    extractor: FeatureExtractor,
    channel_selection: str = "rgb",
    source: str = "",
    batch_size: int = 64,
) -> EmbeddingVector:
    """Mean feature vector over all samples of one dataset.

    ``channel_selection`` picks the color planes or the depth plane; depth is
    replicated to three channels the way grayscale is fed to color backbones.
    """
    if len(data) == 0:
        raise ParameterError("cannot embed an empty dataset")
    if channel_selection not in ("rgb", "depth"):
        raise ParameterError(f"channel selection must be 'rgb' or 'depth', got {channel_selection!r}")
    arr = data.stack()
    if channel_selection == "rgb":
        planes = arr[:, :3]
    else:
        planes = np.repeat(arr[:, 3:4], 3, axis=1)
    pooled = []
    for start in range(0, planes.shape[0], batch_size):
        pooled.append(extractor.features(planes[start : start + batch_size]))
    per_sample = np.concatenate(pooled, axis=0)
    mean = per_sample.mean(axis=0)
    return EmbeddingVector(values=mean, source=source, n_samples=len(data))


def euclidean_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"embedding lengths differ: {a.values.shape} vs {b.values.shape}")
    return float(np.linalg.norm(a.values - b.values))


def _to_distribution(values: np.ndarray) -> np.ndarray:
    rectified = np.maximum(values, 0.0)
    total = rectified.sum()
    if total <= 0.0:
        raise ParameterError("vector is all-zero after rectification; no distribution defined")
    return rectified / total


def hellinger_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Hellinger distance in [0, 1] between the rectified, normalized vectors."""
    if a.values.shape != b.values.shape:
        raise ShapeError(f"embedding lengths differ: {a.values.shape} vs {b.values.shape}")
    p = _to_distribution(a.values)
    q = _to_distribution(b.values)
    return float(np.sqrt(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)) / np.sqrt(2.0))


def distance_report(
    a: EmbeddingVector, b: EmbeddingVector, channel: str, extractor_seed: int
) -> dict:
    return {
        "config_pair": [a.source, b.source],
        "channel": channel,
        "ed": euclidean_distance(a, b),
        "hd": hellinger_distance(a, b),
        "n_samples": [a.n_samples, b.n_samples],
        "extractor_seed": extractor_seed,
    }


def write_distance_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
