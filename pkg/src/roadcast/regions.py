"""Split each sensor's neighbors into orthant regions by relative position.

With 2-D positions (longitude/latitude, or 2-D embedding coordinates) this
gives the four quadrant regions. The index convention over the sign of
``pos[j] - pos[i]`` is (++, +-, -+, --) -> (0, 1, 2, 3); components exactly
equal to zero count as nonnegative. Higher-dimensional positions generalize
to 2^r orthants the same way.
"""

from __future__ import annotations

import numpy as np


def partition_by_quadrant(adjacency, positions):
    """Copy every edge weight of ``adjacency`` into exactly one region slice.

    Returns a (2^r, N, N) tensor whose slices sum back to the input and have
    pairwise disjoint support.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if pos.ndim != 2 or pos.shape[0] != a.shape[0]:
        raise ValueError(f"positions shape {pos.shape} does not match adjacency {a.shape}")
    if np.any(np.diag(a) != 0.0):
        raise ValueError("adjacency diagonal must be zero before region division")
    dims = pos.shape[1]
    deltas = pos[None, :, :] - pos[:, None, :]  # delta[i, j] = pos[j] - pos[i]
    index = np.zeros(a.shape, dtype=np.int64)
    for d in range(dims):
        index += (deltas[:, :, d] < 0.0).astype(np.int64) << (dims - 1 - d)
    tensor = np.zeros((2**dims, *a.shape))
    for r in range(2**dims):
        tensor[r] = np.where(index == r, a, 0.0)
    return tensor


def validate_partition(region_tensor, adjacency):
    """True iff the slices exactly reassemble ``adjacency``, have pairwise
    disjoint support, and keep zero diagonals."""
    r = np.asarray(region_tensor, dtype=np.float64)
    a = np.asarray(adjacency, dtype=np.float64)
    if r.ndim != 3 or r.shape[1:] != a.shape:
        return False
    if not np.array_equal(r.sum(axis=0), a):
        return False
    support_count = (r != 0.0).sum(axis=0)
    if np.any(support_count > 1):
        return False
    if np.any(r[:, np.arange(a.shape[0]), np.arange(a.shape[0])] != 0.0):
        return False
    return True
