"""Set matching between predicted and ground-truth lanes, and the training objective.

All L1 terms are means over the ground-truth lane's valid points (visible and
inside its y-extent), so their scale does not depend on the number of anchor
points. Boundary terms are measured in units of the y-range span.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .kernels import linear_sum_assignment
from .model import LayerPrediction, ModelOutput

PROB_CLAMP = 1e-7


@dataclass
class LossCoefficients:
    cls_weight: float = 2.0
    point_weight: float = 5.0
    bound_weight: float = 2.0
    query_weight: float = 2.0
    seg_weight: float = 1.0

    def __post_init__(self):
        for name in ("cls_weight", "point_weight", "bound_weight", "query_weight", "seg_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class LaneTarget:
    """A ground-truth lane sampled at the model's fixed y-positions."""

    points: np.ndarray   # (N, 3)
    valid: np.ndarray    # (N,) bool
    y_start: float
    y_end: float

    @classmethod
    def from_gt(cls, lane) -> "LaneTarget":
        return cls(lane.anchors.points, lane.valid, lane.curve.y_start, lane.curve.y_end)


@dataclass
class MatchResult:
    """``pred_of_gt[l]`` is the prediction assigned to padded ground-truth slot ``l``.

    Slots ``l < num_lanes`` are real lanes; the rest are non-lane padding.
    """

    pred_of_gt: np.ndarray
    costs: np.ndarray
    num_lanes: int

    @property
    def lane_pairs(self) -> list[tuple[int, int]]:
        return [(l, int(self.pred_of_gt[l])) for l in range(self.num_lanes)]

    @property
    def positive_preds(self) -> np.ndarray:
        return self.pred_of_gt[:self.num_lanes]

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum())


def point_l1(gt_points, gt_valid, pred_points):
    """Mean over valid points of |dx| + |dz|; 0 when nothing is valid. Works on numpy or torch."""
    diff = (gt_points[..., [0, 2]] - pred_points[..., [0, 2]]).abs() if torch.is_tensor(pred_points) \
        else np.abs(gt_points[..., [0, 2]] - pred_points[..., [0, 2]])
    per_point = diff.sum(-1)
    if torch.is_tensor(per_point):
        w = gt_valid.to(per_point.dtype)
        return (per_point * w).sum(-1) / w.sum(-1).clamp(min=1.0)
    w = gt_valid.astype(np.float64)
    return (per_point * w).sum(-1) / np.maximum(w.sum(-1), 1.0)


def pair_cost(gt: LaneTarget | None, pred: dict, coeffs: LossCoefficients, y_span: float = 100.0) -> float:
    """Matching cost of one (ground truth, prediction) pair; ``gt=None`` is a padded non-lane."""
    conf = float(pred["confidence"])
    if gt is None:
        return -coeffs.cls_weight * (1.0 - conf)
    pts = np.asarray(pred["points"], dtype=np.float64)
    if pts.shape != gt.points.shape:
        raise ValueError(f"point count mismatch: gt {gt.points.shape} vs pred {pts.shape}")
    l1 = float(point_l1(gt.points, gt.valid, pts))
    bounds = (abs(gt.y_start - pred["y_start"]) + abs(gt.y_end - pred["y_end"])) / y_span
    return -coeffs.cls_weight * conf + coeffs.point_weight * l1 + coeffs.bound_weight * bounds


def cost_matrix(gts: list[LaneTarget], conf: np.ndarray, points: np.ndarray, y_start: np.ndarray,
                y_end: np.ndarray, coeffs: LossCoefficients, y_span: float = 100.0) -> np.ndarray:
    """(Q, Q) costs: rows are ground-truth slots padded with non-lanes, columns are predictions."""
    q = len(conf)
    if len(gts) > q:
        raise ValueError(f"{len(gts)} ground-truth lanes exceed {q} predictions")
    cost = np.tile(-coeffs.cls_weight * (1.0 - conf), (q, 1))
    for l, gt in enumerate(gts):
        if points.shape[1:] != gt.points.shape:
            raise ValueError(f"point count mismatch: gt {gt.points.shape} vs pred {points.shape[1:]}")
        l1 = point_l1(gt.points[None], gt.valid[None], points)
        bounds = (np.abs(gt.y_start - y_start) + np.abs(gt.y_end - y_end)) / y_span
        cost[l] = -coeffs.cls_weight * conf + coeffs.point_weight * l1 + coeffs.bound_weight * bounds
    return cost


def match_costs(cost: np.ndarray, num_lanes: int) -> MatchResult:
    rows, cols = linear_sum_assignment(cost)
    pred_of_gt = np.full(cost.shape[0], -1, dtype=np.int64)
    pred_of_gt[rows] = cols
    return MatchResult(pred_of_gt, cost[rows, cols], num_lanes)


def hungarian_match(gts: list[LaneTarget], preds: dict, coeffs: LossCoefficients,
                    y_span: float = 100.0) -> MatchResult:
    """Cost-minimal injective assignment of padded ground truth to predictions.

    ``preds`` holds numpy arrays ``confidence`` (Q,), ``points`` (Q, N, 3),
    ``y_start`` and ``y_end`` (Q,).
    """
    cost = cost_matrix(gts, np.asarray(preds["confidence"], dtype=np.float64),
                       np.asarray(preds["points"], dtype=np.float64),
                       np.asarray(preds["y_start"], dtype=np.float64),
                       np.asarray(preds["y_end"], dtype=np.float64), coeffs, y_span)
    return match_costs(cost, len(gts))


def detached_preds(layer: LayerPrediction, i: int) -> dict:
    return {"confidence": layer.confidence[i].detach().double().numpy(),
            "points": layer.points[i].detach().double().numpy(),
            "y_start": layer.y_start[i].detach().double().numpy(),
            "y_end": layer.y_end[i].detach().double().numpy()}


# ---------------------------------------------------------------------------
# losses for a single image; batch reduction is the mean over images

def _targets_tensor(gts: list[LaneTarget], dtype):
    pts = torch.tensor(np.stack([g.points for g in gts]), dtype=dtype)
    valid = torch.tensor(np.stack([g.valid for g in gts]))
    bounds = torch.tensor([[g.y_start, g.y_end] for g in gts], dtype=dtype)
    return pts, valid, bounds


def curve_loss(logits: torch.Tensor, points: torch.Tensor, y_start: torch.Tensor, y_end: torch.Tensor,
               gts: list[LaneTarget], match: MatchResult, coeffs: LossCoefficients,
               y_span: float = 100.0) -> torch.Tensor:
    """Classification over every query slot plus point and boundary L1 over matched lanes,
    normalized by the number of real lanes (at least 1)."""
    prob = torch.sigmoid(logits).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    target = torch.zeros_like(prob)
    pos = torch.as_tensor(match.positive_preds, dtype=torch.long)
    target[pos] = 1.0
    cls = -(target * prob.log() + (1.0 - target) * (1.0 - prob).log()).sum()
    loss = coeffs.cls_weight * cls
    if gts:
        gt_pts, gt_valid, gt_bounds = _targets_tensor(gts, points.dtype)
        gt_idx = torch.arange(len(gts))
        l1 = point_l1(gt_pts[gt_idx], gt_valid[gt_idx], points[pos]).sum()
        bounds = ((gt_bounds[:, 0] - y_start[pos]).abs() + (gt_bounds[:, 1] - y_end[pos]).abs()).sum() / y_span
        loss = loss + coeffs.point_weight * l1 + coeffs.bound_weight * bounds
    return loss / max(len(gts), 1)


def query_loss(layer_anchors: list[torch.Tensor], gts: list[LaneTarget], match: MatchResult,
               coeffs: LossCoefficients) -> torch.Tensor:
    """Anchor L1 to the matched ground truth, summed over decoder layers; background slots add 0."""
    if not gts:
        return layer_anchors[0].sum() * 0.0
    gt_pts, gt_valid, _ = _targets_tensor(gts, layer_anchors[0].dtype)
    pos = torch.as_tensor(match.positive_preds, dtype=torch.long)
    total = sum(point_l1(gt_pts, gt_valid, anchors[pos]).sum() for anchors in layer_anchors)
    return coeffs.query_weight * total / len(gts)


def downsample_mask(mask: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Instance mask (B, H, W) -> binary lane target (B, 1, h, w) by block max-pooling."""
    binary = (mask > 0).to(torch.float32)[:, None]
    return F.adaptive_max_pool2d(binary, size)


def seg_loss(seg_logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Pixelwise binary cross-entropy, lane vs background, mask pooled to the logit grid."""
    if seg_logits.dim() != 4 or mask.dim() != 3 or seg_logits.shape[0] != mask.shape[0]:
        raise ValueError(f"shape mismatch: logits {tuple(seg_logits.shape)} vs mask {tuple(mask.shape)}")
    target = downsample_mask(mask, tuple(seg_logits.shape[-2:])).to(seg_logits.dtype)
    return F.binary_cross_entropy_with_logits(seg_logits, target)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    curve: torch.Tensor
    query: torch.Tensor
    seg: torch.Tensor
    matched: int

    def as_floats(self) -> dict:
        return {"loss": float(self.total.detach()), "L_curve": float(self.curve.detach()),
                "L_query": float(self.query.detach()),
                "L_seg": float(self.seg.detach()), "matched": self.matched}


def total_loss(output: ModelOutput, targets: list[list[LaneTarget]], coeffs: LossCoefficients,
               seg_masks: torch.Tensor | None = None, y_span: float = 100.0,
               use_seg: bool = True) -> LossBreakdown:
    """L_curve + L_query + L_seg for a batch. Matching uses the final layer and no gradients."""
    final = output.final
    b = final.logits.shape[0]
    curve = final.logits.new_zeros(())
    query = final.logits.new_zeros(())
    matched = 0
    for i in range(b):
        gts = targets[i]
        with torch.no_grad():
            match = hungarian_match(gts, detached_preds(final, i), coeffs, y_span)
        matched += match.num_lanes
        curve = curve + curve_loss(final.logits[i], final.points[i], final.y_start[i], final.y_end[i],
                                   gts, match, coeffs, y_span)
        query = query + query_loss([layer.anchors[i] for layer in output.layers], gts, match, coeffs)
    curve, query = curve / b, query / b
    if use_seg and output.seg_logits is not None and seg_masks is not None:
        seg = coeffs.seg_weight * seg_loss(output.seg_logits, seg_masks)
    else:
        seg = curve.new_zeros(())
    return LossBreakdown(curve + query + seg, curve, query, seg, matched)
