"""How a point cloud becomes a graph: knn indices and edge features.

Radar frames arrive as unordered (x, y, z) point sets. The network never sees
a grid; instead each point is connected to its k nearest neighbors and every
edge carries [neighbor - center, center], doubling the channel count.
"""

import numpy as np

from adaptgraph.graph import graph_feature, knn, pairwise_similarity
from adaptgraph.tensor import Tensor

# two clusters on a line, easy to eyeball
pts = np.array([[0.0, 0.1, 0.2, 5.0, 5.1, 5.2],
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]])
x = Tensor(pts[None, :, :])  # (B=1, C=3, N=6)

sim = pairwise_similarity(x)
print("similarity is negative squared distance, so self-similarity is ~0:")
print(np.array_str(sim.data[0], precision=2, suppress_small=True))

idx = knn(x, k=3)
print("\nk=3 neighbor indices (self always first, ties broken by index):")
for p, row in enumerate(idx.indices[0]):
    print(f"  point {p}: {row.tolist()}")

feat = graph_feature(x, idx)
print("\nedge features have shape (B, 2C, N, k):", feat.shape)
print("first half is the offset to each neighbor, second half repeats the center")
print("edges of point 0 (channels x only):")
print("  offsets:", feat.data[0, 0, 0], " centers:", feat.data[0, 3, 0])

# permuting the cloud permutes rows but never invents new neighbors
perm = np.random.default_rng(1).permutation(6)
idx_p = knn(Tensor(pts[None, :, perm]), k=3)
inv = np.empty(6, dtype=int)
inv[perm] = np.arange(6)
same = (inv[idx.indices[0][perm]] == idx_p.indices[0]).all()
print("\nneighborhoods are permutation equivariant:", bool(same))
