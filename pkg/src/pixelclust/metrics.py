"""Region-based segmentation metrics.

All metrics compare integer label maps of identical shape and are
invariant to relabeling: everything is computed from the contingency table
of the two partitions (O(N + labels^2)), never by enumerating pixel pairs.
Multi-annotator ground truth is handled by averaging the per-annotator
scores arithmetically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError

__all__ = [
    "pri",
    "voi",
    "gce",
    "bde",
    "seg_covering",
    "miou",
    "MetricReport",
    "evaluate",
    "boundary_mask",
]


def _as_maps(pred: np.ndarray, gts: Sequence[np.ndarray]) -> list[np.ndarray]:
    pred = np.asarray(pred)
    gts = [np.asarray(g) for g in gts]
    if not gts:
        raise ConfigurationError("at least one ground-truth map is required")
    for g in gts:
        if g.shape != pred.shape:
            raise ConfigurationError(
                f"ground truth {g.shape} does not match prediction {pred.shape}"
            )
    return gts

def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Joint label counts as a dense (labels_a, labels_b) table."""
    _, ai = np.unique(a.reshape(-1), return_inverse=True)
    _, bi = np.unique(b.reshape(-1), return_inverse=True)
    na, nb = ai.max() + 1, bi.max() + 1
    return np.bincount(ai * nb + bi, minlength=na * nb).reshape(na, nb)


def _rand_index(pred: np.ndarray, gt: np.ndarray) -> float:
    table = _contingency(pred, gt).astype(np.float64)
    n = table.sum()
    pairs = n * (n - 1) / 2.0
    if pairs == 0:
        return 1.0
    same_both = (table * (table - 1) / 2.0).sum()
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    same_pred = (a * (a - 1) / 2.0).sum()
    same_gt = (b * (b - 1) / 2.0).sum()
    diff_both = pairs - same_pred - same_gt + same_both
    return float((same_both + diff_both) / pairs)


def pri(pred: np.ndarray, gts: Sequence[np.ndarray]) -> float:
    """Probabilistic Rand index: the probability that a random pixel pair's
    same/different relation agrees with the annotators, i.e. the mean Rand
    index over the ground-truth set.  1 is perfect."""
    gts = _as_maps(pred, gts)
    return float(np.mean([_rand_index(pred, g) for g in gts]))


def voi(pred: np.ndarray, gts: Sequence[np.ndarray], bits: bool = False) -> float:
    """Variation of information H(pred) + H(gt) - 2 I(pred, gt), averaged
    over annotators.  Reported in nats by default, in bits when asked."""
    gts = _as_maps(pred, gts)

    def one(gt):
        table = _contingency(pred, gt).astype(np.float64)
        n = table.sum()
        p = table / n
        pa = p.sum(axis=1)
        pb = p.sum(axis=0)
        ha = -np.sum(pa * np.log(pa, where=pa > 0, out=np.zeros_like(pa)))
        hb = -np.sum(pb * np.log(pb, where=pb > 0, out=np.zeros_like(pb)))
        outer = pa[:, None] * pb[None, :]
        ratio = np.divide(p, outer, where=p > 0, out=np.ones_like(p))
        mi = np.sum(p * np.log(ratio, where=p > 0, out=np.zeros_like(p)))
        return ha + hb - 2.0 * mi

    value = float(np.mean([one(g) for g in gts]))
    return value / np.log(2.0) if bits else value


def gce(pred: np.ndarray, gts: Sequence[np.ndarray]) -> float:
    """Global consistency error: mean local refinement error in the less
    demanding direction.  Zero whenever one map refines the other."""
    gts = _as_maps(pred, gts)

    def one(gt):
        table = _contingency(pred, gt).astype(np.float64)
        n = table.sum()
        a = table.sum(axis=1)  # prediction segment sizes
        b = table.sum(axis=0)  # ground-truth segment sizes
        e_pred = (table * (a[:, None] - table)).sum(axis=1) / a
        e_gt = (table * (b[None, :] - table)).sum(axis=0) / b
        return min(e_pred.sum(), e_gt.sum()) / n

    return float(np.mean([one(g) for g in gts]))


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels having at least one 4-neighbor with a different label."""
    m = np.zeros(labels.shape, dtype=bool)
    dx = labels[:, :-1] != labels[:, 1:]
    dy = labels[:-1, :] != labels[1:, :]
    m[:, :-1] |= dx
    m[:, 1:] |= dx
    m[:-1, :] |= dy
    m[1:, :] |= dy
    return m


def bde(pred: np.ndarray, gts: Sequence[np.ndarray]) -> float:
    """Boundary displacement error: symmetric average of the mean Euclidean
    distance from each map's boundary pixels to the other's nearest
    boundary pixel.  If exactly one map has no boundary, the remaining
    directional mean is used alone with every displacement pinned at the
    image diagonal (there is no target to displace onto); if neither map
    has a boundary the error is zero."""
    gts = _as_maps(pred, gts)

    def directional(src: np.ndarray, dst: np.ndarray) -> float:
        if not dst.any():
            h, w = dst.shape
            return float(np.hypot(h - 1, w - 1))
        dt = ndimage.distance_transform_edt(~dst)
        return float(dt[src].mean())

    def one(gt):
        bp = boundary_mask(pred)
        bg = boundary_mask(gt)
        has_p, has_g = bool(bp.any()), bool(bg.any())
        if not has_p and not has_g:
            return 0.0
        if not has_p:
            return directional(bg, bp)
        if not has_g:
            return directional(bp, bg)
        return 0.5 * (directional(bp, bg) + directional(bg, bp))

    return float(np.mean([one(g) for g in gts]))


def seg_covering(pred: np.ndarray, gts: Sequence[np.ndarray]) -> float:
    """Segmentation covering of the ground truth by the prediction:
    size-weighted best IoU over ground-truth regions, averaged over
    annotators."""
    gts = _as_maps(pred, gts)

    def one(gt):
        table = _contingency(pred, gt).astype(np.float64)
        n = table.sum()
        a = table.sum(axis=1)
        b = table.sum(axis=0)
        union = a[:, None] + b[None, :] - table
        iou = table / union
        return float((b / n * iou.max(axis=0)).sum())

    return float(np.mean([one(g) for g in gts]))


def miou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean best IoU over the segments of a single ground-truth map."""
    (gt,) = _as_maps(pred, [gt])
    table = _contingency(pred, gt).astype(np.float64)
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    union = a[:, None] + b[None, :] - table
    iou = table / union
    return float(iou.max(axis=0).mean())


@dataclass
class MetricReport:
    """All six region metrics for one prediction, averaged over annotators."""

    pri: float
    voi: float
    gce: float
    bde: float
    sc: float
    miou: float

    def as_dict(self) -> dict[str, float]:
        return {
            "PRI": self.pri,
            "VoI": self.voi,
            "GCE": self.gce,
            "BDE": self.bde,
            "SC": self.sc,
            "mIoU": self.miou,
        }


def evaluate(pred: np.ndarray, gts: Sequence[np.ndarray]) -> MetricReport:
    """Compute every metric for one prediction against the annotator set."""
    gts = _as_maps(pred, gts)
    return MetricReport(
        pri=pri(pred, gts),
        voi=voi(pred, gts),
        gce=gce(pred, gts),
        bde=bde(pred, gts),
        sc=seg_covering(pred, gts),
        miou=float(np.mean([miou(pred, g) for g in gts])),
    )
