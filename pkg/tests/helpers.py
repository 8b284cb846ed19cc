"""Independent oracles the package is validated against.

Everything here is written the slow, obvious way: explicit loops, pair
enumeration, per-pixel set algebra.  Nothing imports the package's
vectorized internals, so agreement between the two is meaningful.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------- gradients

def numeric_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise relative error with a denominator floor, so exact
    zeros on both sides compare as equal instead of 0/0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def conv2d_loop(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Same-padded correlation by quadruple loop: x (C,H,W), w (O,C,k,k)."""
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    pad = k // 2
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    out = np.zeros((o, h, wd))
    for oc in range(o):
        for y in range(h):
            for xx in range(wd):
                acc = 0.0
                for ic in range(c):
                    for ky in range(k):
                        for kx in range(k):
                            acc += w[oc, ic, ky, kx] * xp[ic, y + ky, xx + kx]
                out[oc, y, xx] = acc + (b[oc] if b is not None else 0.0)
    return out


# ------------------------------------------------------------------ losses

def cross_entropy_loop(probs: np.ndarray, targets: np.ndarray) -> float:
    """Summed -log p over pixels, scalar loop, with the 1e-12 clamp."""
    q, h, w = probs.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            p = max(probs[targets[y, x], y, x], 1e-12)
            total -= math.log(p)
    return total


def global_consistency_loop(h: np.ndarray, a: np.ndarray) -> float:
    """tr(H^T A (1-H)) / sum(A) computed with explicit index loops."""
    k, q = h.shape
    denom = float(a.sum())
    if denom == 0.0:
        return 0.0
    total = 0.0
    for i in range(k):
        for j in range(k):
            for c in range(q):
                total += h[i, c] * a[i, j] * (1.0 - h[j, c])
    return total / denom


# ----------------------------------------------------------------- metrics

def rand_index_pairs(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of pixel pairs whose same/different relation agrees,
    by explicit enumeration of all pairs."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    agree = 0
    total = 0
    for i in range(a.size):
        for j in range(i + 1, a.size):
            agree += (a[i] == a[j]) == (b[i] == b[j])
            total += 1
    return agree / total if total else 1.0


def _entropy(labels: np.ndarray, base_e: bool = True) -> float:
    n = labels.size
    h = 0.0
    for v in set(labels.ravel().tolist()):
        p = (labels == v).sum() / n
        h -= p * math.log(p)
    return h if base_e else h / math.log(2.0)


def voi_direct(a: np.ndarray, b: np.ndarray, bits: bool = False) -> float:
    """H(a) + H(b) - 2 I(a;b) from the joint histogram, literal loops."""
    n = a.size
    info = 0.0
    for va in set(a.ravel().tolist()):
        for vb in set(b.ravel().tolist()):
            joint = ((a == va) & (b == vb)).sum() / n
            if joint == 0.0:
                continue
            pa = (a == va).sum() / n
            pb = (b == vb).sum() / n
            info += joint * math.log(joint / (pa * pb))
    value = _entropy(a) + _entropy(b) - 2.0 * info
    return value / math.log(2.0) if bits else value


def gce_direct(a: np.ndarray, b: np.ndarray) -> float:
    """Martin's global consistency error via per-pixel region sets."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    n = a.size

    def one_direction(src, dst):
        total = 0.0
        for i in range(n):
            r_src = set(np.flatnonzero(src == src[i]).tolist())
            r_dst = set(np.flatnonzero(dst == dst[i]).tolist())
            total += len(r_src - r_dst) / len(r_src)
        return total

    return min(one_direction(a, b), one_direction(b, a)) / n


def boundary_pixels_loop(labels: np.ndarray) -> list[tuple[int, int]]:
    """Pixels with at least one 4-neighbor of a different label."""
    h, w = labels.shape
    out = []
    for y in range(h):
        for x in range(w):
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and labels[yy, xx] != labels[y, x]:
                    out.append((y, x))
                    break
    return out


def bde_direct(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-boundary distance by exhaustive search.

    Convention for degenerate maps: exactly one boundary-less map pins
    every displacement at the image diagonal; two boundary-less maps
    give zero.
    """
    h, w = a.shape
    ba = boundary_pixels_loop(a)
    bb = boundary_pixels_loop(b)
    if not ba and not bb:
        return 0.0
    diagonal = math.hypot(h - 1, w - 1)
    if not ba or not bb:
        return diagonal

    def mean_nearest(src, dst):
        total = 0.0
        for (y, x) in src:
            total += min(math.hypot(y - yy, x - xx) for (yy, xx) in dst)
        return total / len(src)

    return 0.5 * (mean_nearest(ba, bb) + mean_nearest(bb, ba))


def covering_direct(pred: np.ndarray, gt: np.ndarray) -> float:
    """Size-weighted best-IoU covering of gt regions by pred regions."""
    n = gt.size
    total = 0.0
    for vg in set(gt.ravel().tolist()):
        region = gt == vg
        best = 0.0
        for vp in set(pred.ravel().tolist()):
            cand = pred == vp
            inter = (region & cand).sum()
            union = (region | cand).sum()
            best = max(best, inter / union)
        total += region.sum() / n * best
    return total


def miou_direct(pred: np.ndarray, gt: np.ndarray) -> float:
    """Unweighted mean best IoU over gt segments."""
    scores = []
    for vg in set(gt.ravel().tolist()):
        region = gt == vg
        best = 0.0
        for vp in set(pred.ravel().tolist()):
            cand = pred == vp
            best = max(best, (region & cand).sum() / (region | cand).sum())
        scores.append(best)
    return float(np.mean(scores))


# -------------------------------------------------------------- partitions

def random_label_map(rng: np.random.Generator, max_pixels: int = 16):
    """Random small label map (1..max_pixels pixels, arbitrary ids)."""
    while True:
        h = int(rng.integers(1, max_pixels + 1))
        w = int(rng.integers(1, max_pixels + 1))
        if h * w <= max_pixels:
            break
    n_labels = int(rng.integers(1, h * w + 1))
    # Sparse, unordered ids exercise relabeling robustness.
    pool = np.arange(0, 7 * max_pixels, 7)
    ids = rng.choice(pool, size=n_labels, replace=False)
    return rng.choice(ids, size=(h, w))


def random_refinement(rng: np.random.Generator, labels: np.ndarray) -> np.ndarray:
    """Split some regions of ``labels`` into random sub-regions; the
    result refines the input by construction."""
    out = labels.astype(np.int64).copy()
    next_id = int(out.max()) + 1
    for v in np.unique(out):
        if rng.random() < 0.5:
            continue
        mask = out == v
        pieces = int(rng.integers(1, 4))
        assignment = rng.integers(0, pieces, size=int(mask.sum()))
        values = np.array([v] + [next_id + i for i in range(pieces - 1)])
        out[mask] = values[assignment]
        next_id += pieces
    return out


def bicubic_half_loop(x: np.ndarray) -> np.ndarray:
    """Factor-2 reduction with the 4-tap half-pixel kernel and edge
    replication, separable, written as explicit loops."""
    taps = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0

    def down_axis(arr):
        n = arr.shape[-1]
        out = np.zeros(arr.shape[:-1] + (n // 2,), dtype=np.float64)
        for o in range(n // 2):
            acc = np.zeros(arr.shape[:-1], dtype=np.float64)
            for t in range(4):
                src = min(max(2 * o - 1 + t, 0), n - 1)
                acc += taps[t] * arr[..., src]
            out[..., o] = acc
        return out

    half_w = down_axis(x)
    return np.moveaxis(down_axis(np.moveaxis(half_w, -2, -1)), -1, -2)
