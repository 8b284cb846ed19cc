"""Gradient-based region merging applied after training.

The trained label map tends to shatter homogeneous areas.  To repair it,
segments (connected components of the label map) become graph nodes, each
adjacent pair gets a weight from the mean absolute CIELAB gradient along
their shared border, and every edge below a threshold is contracted with
union-find.  Merging only ever unions existing segments, so the output is
always a coarsening of the input.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .colorspace import rgb_to_lab
from .errors import ConfigurationError
from .superpixels import SuperpixelMap, boundary_sets

__all__ = [
    "rgb_to_lab",
    "boundary_gradient_images",
    "boundary_gradients",
    "graph_cut_merge",
    "segment_components",
    "refine",
    "UnionFind",
]


class UnionFind:
    """Plain union-find with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def boundary_gradient_images(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Absolute forward differences of the CIELAB image along x and y.

    Returns (gx, gy), each (H, W, 3); the last column of gx and the last
    row of gy are zero because there is no forward neighbor there.
    """
    lab = rgb_to_lab(image)
    gx = np.zeros_like(lab)
    gy = np.zeros_like(lab)
    gx[:, :-1] = np.abs(lab[:, 1:] - lab[:, :-1])
    gy[:-1, :] = np.abs(lab[1:, :] - lab[:-1, :])
    return gx, gy


def boundary_gradients(
    image: np.ndarray, sp: SuperpixelMap
) -> dict[tuple[int, int], float]:
    """Edge weight per unordered adjacent segment pair.

    For a pair {i, j} the x-gradient vector averages the CIELAB x-gradient
    over every boundary pixel whose right neighbor crosses between i and j
    (both crossing directions pooled), and likewise for y; an empty
    directional set contributes a zero vector.  The weight is the L1 norm
    of the summed pair of vectors.  Non-adjacent pairs are absent, which
    stands in for an infinite weight.
    """
    if image.shape[:2] != sp.shape:
        raise ConfigurationError(
            f"image {image.shape} does not match segments {sp.shape}"
        )
    gx, gy = boundary_gradient_images(image)
    sets = boundary_sets(sp)
    acc: dict[tuple[int, int], list] = {}
    for (i, j), (xs, ys) in sets.items():
        key = (i, j) if i < j else (j, i)
        entry = acc.setdefault(key, [np.zeros(3), 0, np.zeros(3), 0])
        if len(xs):
            entry[0] += gx[xs[:, 0], xs[:, 1]].sum(axis=0)
            entry[1] += len(xs)
        if len(ys):
            entry[2] += gy[ys[:, 0], ys[:, 1]].sum(axis=0)
            entry[3] += len(ys)
    weights: dict[tuple[int, int], float] = {}
    for key, (sx, nx, sy, ny) in acc.items():
        mean_x = sx / nx if nx else np.zeros(3)
        mean_y = sy / ny if ny else np.zeros(3)
        weights[key] = float(np.abs(mean_x + mean_y).sum())
    return weights


def graph_cut_merge(
    labels: np.ndarray,
    weights: dict[tuple[int, int], float],
    threshold: float = 10.0,
) -> np.ndarray:
    """Union every adjacent segment pair whose edge weight is below the
    threshold and relabel the result densely from 0.

    Pairs missing from ``weights`` are treated as infinitely heavy and
    never merge.  The output label of a region is determined by the first
    member segment in scan order, so results are deterministic.
    """
    k = int(labels.max()) + 1
    uf = UnionFind(k)
    for (i, j), w in weights.items():
        if w < threshold:
            uf.union(i, j)
    remap = np.empty(k, dtype=np.int64)
    assigned: dict[int, int] = {}
    for v in range(k):
        root = uf.find(v)
        if root not in assigned:
            assigned[root] = len(assigned)
        remap[v] = assigned[root]
    return remap[labels]


def segment_components(labels: np.ndarray) -> np.ndarray:
    """Split a label map into 4-connected components, densely relabeled."""
    out = np.full(labels.shape, -1, dtype=np.int64)
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    next_id = 0
    for val in np.unique(labels):
        cc, ncc = ndimage.label(labels == val, structure=structure)
        mask = cc > 0
        out[mask] = cc[mask] - 1 + next_id
        next_id += ncc
    return out


def refine(
    image: np.ndarray, labels: np.ndarray, threshold: float = 10.0
) -> np.ndarray:
    """Full post-processing pass: split the trained label map into
    connected segments, weigh their borders by CIELAB contrast and merge
    everything weaker than the threshold."""
    if image.shape[:2] != labels.shape:
        raise ConfigurationError(
            f"image {image.shape} does not match labels {labels.shape}"
        )
    comps = segment_components(labels)
    sp = SuperpixelMap(labels=comps, k=int(comps.max()) + 1)
    weights = boundary_gradients(image, sp)
    return graph_cut_merge(comps, weights, threshold)
