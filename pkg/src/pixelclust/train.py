"""Per-image training loop and the optimal-image-scale sweep.

``train_one`` fits a fresh network to a single image: superpixels are
extracted once up front, then every iteration runs a forward pass, turns
the argmax labels into a superpixel-modal pseudo ground truth, assembles
the weighted loss and applies one SGD step.  Divergence (any non-finite
value) stops the loop and returns the partial trace flagged as failed.

``train_ois`` repeats this over a list of superpixel counts and keeps the
post-processed result with the best selection metric against the supplied
ground truth, mirroring per-image scale selection.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .losses import (
    LossBreakdown,
    LossConfig,
    loss_global,
    loss_local,
    loss_msssim_l2,
    pseudo_gt,
    total_loss,
)
from .metrics import miou, pri, seg_covering
from .network import ClusterNetwork, ForwardResult
from .optim import OptimizerConfig, sgd_step
from .postprocess import refine
from .regionstats import affinity, region_features, superpixel_probs
from .superpixels import SuperpixelMap, build_adjacency, slic
from .tensor import constant

DEFAULT_OIS_SUPERPIXELS = (50, 100, 150, 200, 250, 300)


@dataclass
class TrainConfig:
    iterations: int = 150
    learning_rate: float = 0.05
    momentum: float = 0.9
    clusters: int = 100  # Q: maximum number of clusters
    superpixels: int = 100  # K: requested superpixel count
    gamma1: float = 1e-5
    gamma2: float = 0.1
    alpha1: float = 200.0
    alpha2: float = 400.0
    eta: float = 0.84
    msssim_window: int = 11
    compactness: float = 10.0
    slic_iters: int = 10
    merge_threshold: float = 10.0
    seed: int = 0
    ois_superpixels: tuple[int, ...] = DEFAULT_OIS_SUPERPIXELS
    use_eca: bool = True
    use_global_loss: bool = True
    use_rec_loss: bool = True
    freeze_pseudo_gt: bool = False  # diagnostic: lock the targets of iteration 1

    def loss_config(self) -> LossConfig:
        return LossConfig(
            gamma1=self.gamma1,
            gamma2=self.gamma2,
            alpha1=self.alpha1,
            alpha2=self.alpha2,
            eta=self.eta,
            window=self.msssim_window,
        )

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            iterations=self.iterations,
        )

    def validate(self) -> None:
        self.optimizer_config()
        self.loss_config()
        if self.clusters < 2:
            raise ConfigurationError(f"cluster count must be >= 2, got {self.clusters}")
        if self.superpixels < 2:
            raise ConfigurationError(
                f"superpixel count must be >= 2, got {self.superpixels}"
            )
        if self.merge_threshold < 0:
            raise ConfigurationError(
                f"merge threshold must be >= 0, got {self.merge_threshold}"
            )


@dataclass
class TrainTrace:
    history: list[LossBreakdown]
    labels: np.ndarray  # final raw label map (H, W)
    superpixels: SuperpixelMap
    network: ClusterNetwork
    final: ForwardResult | None
    failed: bool = False
    message: str = ""
    seconds: float = 0.0


def train_one(image: np.ndarray, config: TrainConfig = TrainConfig()) -> TrainTrace:
    """Fit a fresh clustering network to one (H, W, 3) image in [0, 1]."""
    config.validate()
    image = np.asarray(image, dtype=np.float64)
    start = time.perf_counter()

    sp = slic(
        image,
        config.superpixels,
        compactness=config.compactness,
        iters=config.slic_iters,
        seed=config.seed,
    )
    adjacency = build_adjacency(sp) if config.use_global_loss else None
    net = ClusterNetwork(q=config.clusters, seed=config.seed, use_eca=config.use_eca)
    params = net.parameters()
    opt = config.optimizer_config()
    lcfg = config.loss_config()
    target_image = constant(image.transpose(2, 0, 1))

    history: list[LossBreakdown] = []
    frozen_target: np.ndarray | None = None
    result: ForwardResult | None = None
    labels = np.zeros(sp.shape, dtype=np.int64)
    failed = False
    message = ""

    for _ in range(config.iterations):
        try:
            result = net.forward(image)
            labels = result.labels
            if config.freeze_pseudo_gt and frozen_target is not None:
                target = frozen_target
            else:
                target = pseudo_gt(labels, sp)
                if config.freeze_pseudo_gt:
                    frozen_target = target

            # Averaging over pixels keeps this term on the same O(1) scale
            # as the affinity and reconstruction terms; the raw sum grows
            # with image size and overwhelms the shared learning rate.
            local = loss_local(result.scores, target) * (1.0 / labels.size)
            if config.use_global_loss:
                feats = region_features(result.scores.data, image, sp)
                aff = affinity(feats, adjacency, config.alpha1, config.alpha2)
                glob = loss_global(superpixel_probs(result.scores, sp), aff)
            else:
                glob = 0.0
            if config.use_rec_loss:
                rec_full = loss_msssim_l2(result.recon, target_image, lcfg)
                rec_half = loss_msssim_l2(
                    result.recon_half, constant(result.input_half), lcfg
                )
            else:
                rec_full = rec_half = 0.0

            total, breakdown = total_loss(local, glob, rec_full, rec_half, lcfg)
            total.backward()
            sgd_step(params, opt)
        except DivergenceError as exc:
            failed = True
            message = str(exc)
            break
        history.append(breakdown)

    if not failed:
        try:
            result = net.forward(image)
            labels = result.labels
        except DivergenceError as exc:
            failed = True
            message = str(exc)

    return TrainTrace(
        history=history,
        labels=labels,
        superpixels=sp,
        network=net,
        final=result,
        failed=failed,
        message=message,
        seconds=time.perf_counter() - start,
    )


_SELECTORS = {
    "pri": lambda merged, gts: pri(merged, gts),
    "sc": lambda merged, gts: seg_covering(merged, gts),
    "miou": lambda merged, gts: float(np.mean([miou(merged, g) for g in gts])),
}


@dataclass
class OisEntry:
    superpixels: int
    score: float
    trace: TrainTrace
    merged: np.ndarray | None


@dataclass
class OisResult:
    best: OisEntry
    entries: list[OisEntry] = field(default_factory=list)


def train_ois(
    image: np.ndarray,
    gts: Sequence[np.ndarray],
    config: TrainConfig = TrainConfig(),
    select: str = "pri",
) -> OisResult:
    """Train once per configured superpixel count and keep the
    post-processed result with the best selection metric.

    Each count trains an independent session seeded ``seed + index`` so
    the sweep could be distributed without changing results.
    """
    if select not in _SELECTORS:
        raise ConfigurationError(
            f"unknown selection metric '{select}' (choose from {sorted(_SELECTORS)})"
        )
    if not gts:
        raise ConfigurationError("scale selection needs at least one ground truth")
    scorer = _SELECTORS[select]
    entries: list[OisEntry] = []
    for index, k in enumerate(config.ois_superpixels):
        cfg_k = replace(config, superpixels=k, seed=config.seed + index)
        trace = train_one(image, cfg_k)
        if trace.failed:
            entries.append(OisEntry(k, float("-inf"), trace, None))
            continue
        merged = refine(image, trace.labels, config.merge_threshold)
        entries.append(OisEntry(k, scorer(merged, list(gts)), trace, merged))
    best = max(entries, key=lambda e: e.score)
    if best.merged is None:
        raise DivergenceError("every scale diverged during the sweep")
    return OisResult(best=best, entries=entries)


def write_training_log(history: Sequence[LossBreakdown], path) -> None:
    """Write the per-iteration loss breakdown as a CSV training log."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["iteration", "loss_local", "loss_global", "loss_rec1", "loss_rec2", "total"]
        )
        for i, row in enumerate(history, start=1):
            writer.writerow(
                [
                    i,
                    f"{row.local:.12g}",
                    f"{row.global_:.12g}",
                    f"{row.rec_full:.12g}",
                    f"{row.rec_half:.12g}",
                    f"{row.total:.12g}",
                ]
            )
