"""Evaluation protocol: instance matching, matting errors, editing quality.

Ground-truth instances are matched to predictions greedily by IoU of their
binarized supports; unmatched ground truths are scored against an all-zero
prediction and unmatched predictions against an all-zero ground truth, so
missed and false-positive instances both count as error mass.

Scaling conventions: SAD is the summed absolute difference divided by 1000,
MSE the per-pixel mean squared difference times 10^2, MAD the per-pixel
mean absolute difference times 10^3. All are configurable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import SceneStack
from .edit import render

SAD_DIVISOR = 1000.0
MSE_SCALE = 100.0
MAD_SCALE = 1000.0
IOU_BINARIZE_THRESHOLD = 0.5
PSNR_CAP_DB = 100.0


class MatchKind(str, Enum):
    TRUE_PAIR = "true_pair"
    MISSED_GT = "missed_gt"
    FALSE_POSITIVE = "false_positive"


@dataclass(frozen=True)
class MattePair:
    """One matched (prediction, ground truth) matte pair.

    Penalty pairs carry an all-zero map on the side that is absent;
    ``gt_index`` / ``pred_index`` are None on that side.
    """

    prediction: np.ndarray
    ground_truth: np.ndarray
    kind: MatchKind
    iou: float = 0.0
    gt_index: int | None = None
    pred_index: int | None = None


def _support_iou(a: np.ndarray, b: np.ndarray, threshold: float) -> float:
    sa, sb = a > threshold, b > threshold
    union = np.count_nonzero(sa | sb)
    if union == 0:
        return 0.0
    return np.count_nonzero(sa & sb) / union


def match_instances(
    preds: list[np.ndarray],
    gts: list[np.ndarray],
    binarize_threshold: float = IOU_BINARIZE_THRESHOLD,
) -> list[MattePair]:
    """Greedy IoU matching of ground-truth mattes to predictions.

    Pairs are taken in descending IoU (ties broken by lower gt index, then
    lower pred index); each side matches at most once and IoU 0 never
    matches. The result lists every gt (matched or missed, in gt order)
    followed by every unmatched prediction as a false positive.
    """
    preds = [np.asarray(p, dtype=np.float64) for p in preds]
    gts = [np.asarray(g, dtype=np.float64) for g in gts]
    for arr in (*preds, *gts):
        if preds or gts:
            reference = (preds + gts)[0].shape
            if arr.shape != reference:
                raise ValueError("all mattes must share one resolution")

    candidates = []
    for gi, gt in enumerate(gts):
        for pi, pred in enumerate(preds):
            iou = _support_iou(gt, pred, binarize_threshold)
            if iou > 0.0:
                candidates.append((-iou, gi, pi))
    candidates.sort()

    gt_match: dict[int, tuple[int, float]] = {}
    used_preds: set[int] = set()
    for neg_iou, gi, pi in candidates:
        if gi in gt_match or pi in used_preds:
            continue
        gt_match[gi] = (pi, -neg_iou)
        used_preds.add(pi)

    pairs: list[MattePair] = []
    for gi, gt in enumerate(gts):
        if gi in gt_match:
            pi, iou = gt_match[gi]
            pairs.append(MattePair(preds[pi], gt, MatchKind.TRUE_PAIR, iou=iou, gt_index=gi, pred_index=pi))
        else:
            pairs.append(MattePair(np.zeros_like(gt), gt, MatchKind.MISSED_GT, gt_index=gi))
    for pi, pred in enumerate(preds):
        if pi not in used_preds:
            pairs.append(MattePair(pred, np.zeros_like(pred), MatchKind.FALSE_POSITIVE, pred_index=pi))
    return pairs


def sad(pair: MattePair, divisor: float = SAD_DIVISOR) -> float:
    """Summed absolute difference, divided by ``divisor``."""
    return float(np.abs(pair.prediction - pair.ground_truth).sum() / divisor)


def mse(pair: MattePair, scale: float = MSE_SCALE) -> float:
    """Mean squared difference, scaled (10^2 by default)."""
    diff = pair.prediction - pair.ground_truth
    return float(scale * np.mean(diff * diff))


def mad(pair: MattePair, scale: float = MAD_SCALE) -> float:
    """Mean absolute difference, scaled (10^3 by default)."""
    return float(scale * np.mean(np.abs(pair.prediction - pair.ground_truth)))


def occlusion_mask(gts: list[np.ndarray]) -> np.ndarray:
    """Pixels where at least two ground-truth instances have alpha > 0."""
    if not gts:
        raise ValueError("need the ground-truth instance set")
    positive = np.zeros(np.asarray(gts[0]).shape, dtype=np.int64)
    for gt in gts:
        positive += np.asarray(gt) > 0
    return positive >= 2


def occlusion_split(
    pairs: list[MattePair],
    gts: list[np.ndarray],
    divisor: float = SAD_DIVISOR,
) -> tuple[float, float]:
    """SAD restricted to occluded / non-occluded pixels, summed over pairs.

    The split is a partition of the total: SAD-O + SAD-NO equals the summed
    SAD exactly (SAD-NO is computed as the complement).
    """
    occluded = occlusion_mask(gts)
    raw_total = 0.0
    raw_occluded = 0.0
    for pair in pairs:
        diff = np.abs(pair.prediction - pair.ground_truth)
        raw_total += float(diff.sum())
        raw_occluded += float(diff[occluded].sum())
    sad_o = raw_occluded / divisor
    sad_no = (raw_total - raw_occluded) / divisor
    return sad_o, sad_no


@dataclass(frozen=True)
class EditingMetrics:
    mean_l1_pct: float
    mean_l2_pct: float
    psnr_db: float


def editing_metrics(pred: np.ndarray, gt: np.ndarray) -> EditingMetrics:
    """Mean L1 (%), mean L2 (%), and PSNR (dB, peak 1.0, capped at 100)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"image resolutions differ: {pred.shape} vs {gt.shape}")
    diff = pred - gt
    mean_sq = float(np.mean(diff * diff))
    mean_abs = float(np.mean(np.abs(diff)))
    if mean_sq == 0.0:
        psnr = PSNR_CAP_DB
    else:
        psnr = min(10.0 * np.log10(1.0 / mean_sq), PSNR_CAP_DB)
    return EditingMetrics(
        mean_l1_pct=100.0 * mean_abs,
        mean_l2_pct=100.0 * mean_sq,
        psnr_db=float(psnr),
    )


def composition_residual(stack: SceneStack, image: np.ndarray) -> float:
    """Mean absolute difference between an image and the stack's render."""
    image = np.asarray(image, dtype=np.float64)
    rendered = render(stack)
    if image.shape != rendered.shape:
        raise ValueError(f"image shape {image.shape} does not match stack render {rendered.shape}")
    return float(np.mean(np.abs(image - rendered)))


@dataclass(frozen=True)
class PairMetrics:
    kind: MatchKind
    gt_index: int | None
    pred_index: int | None
    iou: float
    sad: float
    mse: float
    mad: float


@dataclass(frozen=True)
class EvalReport:
    """Per-image evaluation: matched pairs plus aggregate figures.

    ``sad`` sums over pairs (and equals sad_o + sad_no exactly); ``mse``
    and ``mad`` are per-pixel rates averaged over pairs.
    """

    pairs: tuple[PairMetrics, ...]
    sad: float
    mse: float
    mad: float
    sad_o: float
    sad_no: float
    missed_count: int
    false_positive_count: int
    editing: EditingMetrics | None = None

    def to_dict(self) -> dict:
        doc = {
            "pairs": [
                {
                    "kind": p.kind.value,
                    "gt_index": p.gt_index,
                    "pred_index": p.pred_index,
                    "iou": p.iou,
                    "sad": p.sad,
                    "mse": p.mse,
                    "mad": p.mad,
                }
                for p in self.pairs
            ],
            "sad": self.sad,
            "mse": self.mse,
            "mad": self.mad,
            "sad_o": self.sad_o,
            "sad_no": self.sad_no,
            "missed_count": self.missed_count,
            "false_positive_count": self.false_positive_count,
        }
        if self.editing is not None:
            doc["editing"] = {
                "mean_l1_pct": self.editing.mean_l1_pct,
                "mean_l2_pct": self.editing.mean_l2_pct,
                "psnr_db": self.editing.psnr_db,
            }
        return doc


def evaluate_image(
    preds: list[np.ndarray],
    gts: list[np.ndarray],
    pred_image: np.ndarray | None = None,
    gt_image: np.ndarray | None = None,
    binarize_threshold: float = IOU_BINARIZE_THRESHOLD,
) -> EvalReport:
    """Match the instance sets and aggregate every metric for one image."""
    pairs = match_instances(preds, gts, binarize_threshold=binarize_threshold)
    per_pair = tuple(
        PairMetrics(
            kind=p.kind,
            gt_index=p.gt_index,
            pred_index=p.pred_index,
            iou=p.iou,
            sad=sad(p),
            mse=mse(p),
            mad=mad(p),
        )
        for p in pairs
    )
    if gts:
        sad_o, sad_no = occlusion_split(pairs, gts)
    else:
        sad_o = 0.0
        sad_no = sum(sad(p) for p in pairs)
    editing = None
    if pred_image is not None and gt_image is not None:
        editing = editing_metrics(pred_image, gt_image)
    return EvalReport(
        pairs=per_pair,
        sad=sad_o + sad_no,
        mse=float(np.mean([p.mse for p in per_pair])) if per_pair else 0.0,
        mad=float(np.mean([p.mad for p in per_pair])) if per_pair else 0.0,
        sad_o=sad_o,
        sad_no=sad_no,
        missed_count=sum(1 for p in pairs if p.kind is MatchKind.MISSED_GT),
        false_positive_count=sum(1 for p in pairs if p.kind is MatchKind.FALSE_POSITIVE),
        editing=editing,
    )
