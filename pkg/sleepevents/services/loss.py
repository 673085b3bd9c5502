"""Matching loss with hard negative mining, and its gradients."""
import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from sleepevents.config import Config
from sleepevents.models.configs import LossConfig
from sleepevents.models.models import Event
from sleepevents.services.geometry import DefaultGrid, Matching, encode_many, match
from sleepevents.services.network import NetworkOutput
from sleepevents.utils.errors import DegenerateProbability

logger = logging.getLogger(__name__)


class LossBreakdown(NamedTuple):
    """
    Normalized loss terms of one window.

    loc_loss and cls_pos_loss are divided by the number of positives (0 when
    there are none); cls_neg_loss is divided by the number of selected
    negatives.
    """
    loc_loss: float
    cls_pos_loss: float
    cls_neg_loss: float
    total: float
    positives: int
    selected_negatives: int
    matching: Matching
    negatives: np.ndarray

    @property
    def cls_loss(self) -> float:
        return self.cls_pos_loss + self.cls_neg_loss


class BatchLoss(NamedTuple):
    """Mean of the per-window losses and gradients of that mean."""
    loc_loss: float
    cls_loss: float
    total: float
    d_loc: np.ndarray
    d_probs: np.ndarray
    breakdowns: List[LossBreakdown]


def huber(x) -> float:
    """Smooth L1 summed over coordinates: x^2/2 if |x| < 1 else |x| - 1/2."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    return float(np.sum(np.where(x < 1.0, 0.5 * x ** 2, x - 0.5)))


def _check_probs(probs: np.ndarray) -> None:
    if np.isnan(probs).any():
        logger.error("NaN class probabilities passed to the loss")
        raise DegenerateProbability("class probabilities contain NaN")


def _targets(grid: DefaultGrid, truths: Sequence[Event], matching: Matching) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    positives = matching.positives
    assigned = [truths[j] for j in matching.assignment[positives]]
    codes = encode_many(
        grid.center_array[positives],
        grid.duration_array[positives],
        [e.center for e in assigned],
        [e.duration for e in assigned],
    ).reshape(-1, 2)
    labels = np.asarray([e.label for e in assigned], dtype=np.int64)
    return positives, codes, labels


def mine_negatives(background_probs: np.ndarray, matching: Matching, n_positives: int, cfg: LossConfig) -> np.ndarray:
    """
    Unmatched defaults with the largest -log p0, worst first.

    Keeps max(min_negatives, round(positives / neg_pos_ratio)) of them,
    capped at the number of unmatched defaults; ties go to the lower index.
    """
    candidates = matching.negatives
    wanted = max(cfg.min_negatives, int(round(n_positives / cfg.neg_pos_ratio)))
    count = min(wanted, candidates.size)
    errors = -np.log(np.maximum(background_probs[candidates].astype(np.float64), Config.PROB_CLAMP))
    order = np.argsort(-errors, kind="stable")
    return candidates[order[:count]]


def compute_loss(
    output: NetworkOutput,
    grid: DefaultGrid,
    truths: Sequence[Event],
    cfg: Optional[LossConfig] = None,
    negatives: Optional[np.ndarray] = None,
) -> LossBreakdown:
    """
    Loss of one window's outputs (loc (N_d, 2), probs (N_d, L+1)) against its truths.

    ``negatives`` freezes the mined negative set instead of re-ranking.
    """
    cfg = cfg or LossConfig()
    loc = np.asarray(output.loc, dtype=np.float64)
    probs = np.asarray(output.probs, dtype=np.float64)
    _check_probs(probs)

    matching = match(grid, truths, cfg.match)
    positives, codes, labels = _targets(grid, truths, matching)
    n_pos = int(positives.size)
    if negatives is None:
        negatives = mine_negatives(probs[:, 0], matching, n_pos, cfg)
    negatives = np.asarray(negatives, dtype=np.int64)
    n_neg = int(negatives.size)

    if n_pos:
        loc_loss = huber(codes - loc[positives]) / n_pos
        cls_pos = float(-np.sum(np.log(np.maximum(probs[positives, labels], Config.PROB_CLAMP)))) / n_pos
    else:
        loc_loss = cls_pos = 0.0
    cls_neg = float(-np.sum(np.log(np.maximum(probs[negatives, 0], Config.PROB_CLAMP)))) / n_neg if n_neg else 0.0

    return LossBreakdown(
        loc_loss=loc_loss,
        cls_pos_loss=cls_pos,
        cls_neg_loss=cls_neg,
        total=loc_loss + cls_pos + cls_neg,
        positives=n_pos,
        selected_negatives=n_neg,
        matching=matching,
        negatives=negatives,
    )


def loss_gradients(
    output: NetworkOutput,
    grid: DefaultGrid,
    truths: Sequence[Event],
    cfg: Optional[LossConfig] = None,
    breakdown: Optional[LossBreakdown] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Partials of the window loss w.r.t. loc and probs.

    The mined negative set is held constant; probabilities below the clamp
    get no gradient.
    """
    cfg = cfg or LossConfig()
    breakdown = breakdown or compute_loss(output, grid, truths, cfg)
    loc = np.asarray(output.loc, dtype=np.float64)
    probs = np.asarray(output.probs, dtype=np.float64)
    d_loc = np.zeros_like(loc)
    d_probs = np.zeros_like(probs)

    positives, codes, labels = _targets(grid, truths, breakdown.matching)
    if positives.size:
        residual = codes - loc[positives]
        d_loc[positives] = -np.clip(residual, -1.0, 1.0) / positives.size
        p = probs[positives, labels]
        d_probs[positives, labels] = np.where(p > Config.PROB_CLAMP, -1.0 / np.maximum(p, Config.PROB_CLAMP), 0.0) / positives.size

    negatives = breakdown.negatives
    if negatives.size:
        p0 = probs[negatives, 0]
        d_probs[negatives, 0] = np.where(p0 > Config.PROB_CLAMP, -1.0 / np.maximum(p0, Config.PROB_CLAMP), 0.0) / negatives.size
    return d_loc, d_probs


def batch_loss(
    output: NetworkOutput,
    grid: DefaultGrid,
    truths: Sequence[Sequence[Event]],
    cfg: Optional[LossConfig] = None,
) -> BatchLoss:
    """Average window loss over a batch; gradients carry the 1/B factor."""
    cfg = cfg or LossConfig()
    n = len(output)
    d_loc = np.zeros(output.loc.shape, dtype=np.float64)
    d_probs = np.zeros(output.probs.shape, dtype=np.float64)
    breakdowns = []
    for i in range(n):
        window = output.sample(i)
        breakdown = compute_loss(window, grid, truths[i], cfg)
        d_loc[i], d_probs[i] = loss_gradients(window, grid, truths[i], cfg, breakdown)
        breakdowns.append(breakdown)
    loc_loss = float(np.mean([b.loc_loss for b in breakdowns]))
    cls_loss = float(np.mean([b.cls_loss for b in breakdowns]))
    return BatchLoss(
        loc_loss=loc_loss,
        cls_loss=cls_loss,
        total=loc_loss + cls_loss,
        d_loc=d_loc / n,
        d_probs=d_probs / n,
        breakdowns=breakdowns,
    )
