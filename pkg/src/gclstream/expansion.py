"""Fixed random feature expansion.

Frozen backbone embeddings h in R^d are lifted to phi(h) = act(h @ W) in R^M
through a dense Gaussian projection W that is fixed for the lifetime of a run.
Columns of W are generated independently from a counter-based bit generator
keyed by (seed, column index), so the first M columns are identical for every
expansion built from the same seed — sweeping M compares nested feature sets
rather than resampling everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

ACTIVATIONS = ("relu", "identity", "tanh")


def _gaussian_columns(d: int, M: int, seed: int) -> np.ndarray:
    """Generate the d x M projection, one Philox stream per column."""
    cols = np.empty((M, d), dtype=np.float64)
    for j in range(M):
        bg = np.random.Philox(key=np.array([seed, j], dtype=np.uint64))
        cols[j] = np.random.Generator(bg).standard_normal(d)
    return cols.T


class RandomExpansion:
    """Immutable random projection plus element-wise nonlinearity.

    Parameters
    ----------
    d : int
        Input embedding width.
    M : int
        Expansion width (number of random features).
    seed : int
        Nonnegative 64-bit key for the column generator.
    activation : str
        One of ``"relu"`` (default), ``"identity"``, ``"tanh"``.
    """

    def __init__(self, d: int, M: int, seed: int, activation: str = "relu"):
        if d <= 0 or M <= 0:
            raise ShapeError(f"d and M must be positive, got d={d}, M={M}")
        if activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation {activation!r}; choose from {ACTIVATIONS}"
            )
        if seed < 0:
            raise ValueError(f"seed must be nonnegative, got {seed}")
        self.d = int(d)
        self.M = int(M)
        self.seed = int(seed)
        self.activation = activation
        self._weights = _gaussian_columns(self.d, self.M, self.seed)
        self._weights.setflags(write=False)

    @property
    def weights(self) -> np.ndarray:
        """The frozen d x M projection matrix (read-only view)."""
        return self._weights

    def __call__(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        squeeze = features.ndim == 1
        if squeeze:
            features = features[None, :]
        if features.shape[1] != self.d:
            raise ShapeError(
                f"feature width {features.shape[1]} does not match "
                f"expansion input width {self.d}"
            )
        z = features @ self._weights
        if self.activation == "relu":
            np.maximum(z, 0.0, out=z)
        elif self.activation == "tanh":
            np.tanh(z, out=z)
        return z[0] if squeeze else z


@dataclass
class ExpandedBatch:
    """A batch of expanded rows tagged with the expert active when produced."""

    values: np.ndarray  # B x M
    expert_id: int | None = None


def expand(features: np.ndarray, expansion: RandomExpansion,
           expert_id: int | None = None) -> ExpandedBatch:
    """Expand a feature batch; ``expert_id`` tags who was training."""
    return ExpandedBatch(expansion(np.atleast_2d(features)), expert_id)
