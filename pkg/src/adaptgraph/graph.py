"""KNN neighborhoods and edge features for point clouds.

Point sets are (B, C, N): batch, channels, points. The neighbor structure is
computed once per input from pairwise squared distances in factorized form
and reused by every layer that needs graph features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InvalidInputError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class NeighborIndex:
    """k nearest points per point, distance-ascending.

    indices: (B, N, k) int64, every entry in [0, N). With no exact ties the
    first column is each point's own index (self-distance is zero).
    """
    indices: np.ndarray
    k: int
    n_points: int

    def __post_init__(self):
        idx = self.indices
        if idx.ndim != 3 or idx.shape[2] != self.k or idx.shape[1] != self.n_points:
            raise ShapeError(
                f"indices shape {idx.shape} inconsistent with N={self.n_points}, k={self.k}")


def pairwise_similarity(x: Tensor) -> Tensor:
    """Negated pairwise squared Euclidean distances.

    Args:
        x: point features, (B, C, N)
    Returns:
        (B, N, N) tensor; entry (i, j) is -||x_i - x_j||^2, so larger means
        closer and the diagonal is 0 (clamped against rounding noise).
    """
    if x.ndim != 3:
        raise ShapeError(f"pairwise_similarity expects (B, C, N), got {x.shape}")
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise InvalidInputError(f"need C >= 1 and N >= 1, got {x.shape}")
    xd = x.data
    inner = 2.0 * np.matmul(xd.transpose(0, 2, 1), xd)  # (B, N, N)
    sq = (xd ** 2).sum(axis=1)  # (B, N)
    sim = inner - sq[:, :, None] - sq[:, None, :]
    # the factorized form can leak +1e-7 noise above the exact 0 bound
    np.minimum(sim, 0.0, out=sim)
    parents = (x,)

    def back(g):
        gs = g + g.transpose(0, 2, 1)
        # d sim / d x has a 2(x_j - x_i) structure; fold the row/col sums
        dx = 2.0 * (np.matmul(xd, gs) - xd * gs.sum(axis=2)[:, None, :])
        return (dx,)

    return T._make(sim, parents, back)


def knn(x: Tensor, k: int) -> NeighborIndex:
    """Indices of the k nearest points to each point (self included).

    Ties and the point itself resolve to the lowest index. Raises when
    k is larger than the number of points; nothing is clamped silently.
    """
    if x.ndim != 3:
        raise ShapeError(f"knn expects (B, C, N), got {x.shape}")
    n = x.shape[2]
    if not 1 <= k <= n:
        raise InvalidInputError(f"k must satisfy 1 <= k <= N={n}, got k={k}")
    with T.no_grad():
        sim = pairwise_similarity(x).data
    # stable argsort of the negated similarity = distance-ascending,
    # lowest index first among ties
    order = np.argsort(-sim, axis=2, kind="stable")
    return NeighborIndex(indices=np.ascontiguousarray(order[:, :, :k]), k=k, n_points=n)


def graph_feature(x: Tensor, idx: NeighborIndex) -> Tensor:
    """Concatenated edge features: offsets to neighbors plus the center point.

    Args:
        x: point features, (B, C, N)
        idx: neighborhood structure over the same N points
    Returns:
        (B, 2C, N, k); channels [0, C) hold x_j - x_i for each neighbor j,
        channels [C, 2C) repeat x_i along the neighbor axis.
    """
    if x.ndim != 3:
        raise ShapeError(f"graph_feature expects (B, C, N), got {x.shape}")
    b, c, n = x.shape
    if idx.n_points != n:
        raise InvalidInputError(
            f"neighbor index built for N={idx.n_points}, input has N={n}")
    if idx.indices.shape[0] != b:
        raise ShapeError(
            f"neighbor index batch {idx.indices.shape[0]} != input batch {b}")
    neighbors = T.gather_points(x, idx.indices)  # (B, C, N, k)
    center = T.broadcast_to(T.reshape(x, (b, c, n, 1)), (b, c, n, idx.k))
    return T.concat([T.sub(neighbors, center), center], axis=1)
