"""Lane-level evaluation: point-wise matching rule, F-score, AP and near/far x/z errors."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import FIXED_Y_POSITIONS


@dataclass
class EvalConfig:
    max_distance: float = 1.5
    coverage: float = 0.75
    near_range: tuple[float, float] = (0.0, 40.0)
    far_range: tuple[float, float] = (40.0, 100.0)
    conf_threshold: float = 0.5
    ys: tuple[float, ...] = FIXED_Y_POSITIONS

    def __post_init__(self):
        self.near_range = tuple(self.near_range)
        self.far_range = tuple(self.far_range)
        self.ys = tuple(self.ys)
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError(f"coverage must be in (0, 1], got {self.coverage}")
        if not (self.near_range[0] < self.near_range[1] <= self.far_range[0] < self.far_range[1]):
            raise ValueError("near and far ranges must be ordered and disjoint")

    def near_mask(self, ys: np.ndarray) -> np.ndarray:
        # the shared 40 m boundary belongs to the near window
        return (ys >= self.near_range[0]) & (ys <= self.near_range[1])

    def far_mask(self, ys: np.ndarray) -> np.ndarray:
        return (ys > self.far_range[0]) & (ys <= self.far_range[1])


@dataclass
class EvalLane:
    """A lane sampled at the evaluation y-positions.

    ``valid`` marks positions the lane covers (inside its extent and, for
    ground truth, visible).
    """

    xs: np.ndarray
    zs: np.ndarray
    valid: np.ndarray
    confidence: float = 1.0


@dataclass
class EvalReport:
    f_score: float
    ap: float
    x_err_near: float
    x_err_far: float
    z_err_near: float
    z_err_far: float
    precision: float = 0.0
    recall: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    num_scenes: int = 0
    per_scene: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def table_row(self, name: str = "curvelab") -> str:
        return (f"| {name} | {100 * self.f_score:.1f} | {100 * self.ap:.1f} | {self.x_err_near:.3f} | "
                f"{self.x_err_far:.3f} | {self.z_err_near:.3f} | {self.z_err_far:.3f} |")

    @staticmethod
    def table_header() -> str:
        return ("| Method | F-Score | AP | X error near | X error far | Z error near | Z error far |\n"
                "|---|---|---|---|---|---|---|")


def lane_match(pred: EvalLane, gt: EvalLane, cfg: EvalConfig) -> tuple[bool, np.ndarray, np.ndarray]:
    """Apply the distance/coverage rule to one pair.

    Returns (matched, distances at covered positions, covered mask).
    """
    covered = pred.valid & gt.valid
    dist = np.hypot(pred.xs[covered] - gt.xs[covered], pred.zs[covered] - gt.zs[covered])
    if dist.size == 0:
        return False, dist, covered
    ok = np.count_nonzero(dist < cfg.max_distance)
    return bool(ok >= cfg.coverage * dist.size), dist, covered


def assign_scene(preds: list[EvalLane], gts: list[EvalLane], cfg: EvalConfig) -> list[tuple[int, int]]:
    """Greedy one-to-one pairing of matchable (pred, gt) pairs by ascending mean distance."""
    cands = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            ok, dist, _ = lane_match(p, g, cfg)
            if ok:
                cands.append((float(dist.mean()), i, j))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, i, j in cands:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
            pairs.append((i, j))
    return pairs


def f_score(tp: int, fp: int, fn: int) -> float:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def pr_area(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolated area under a PR curve given points in decreasing-threshold order."""
    if len(recall) == 0:
        return 0.0
    r = np.concatenate([[0.0], recall, [recall[-1]]])
    p = np.concatenate([[precision[0]], precision, [0.0]])
    p = np.maximum.accumulate(p[::-1])[::-1]
    return float(np.sum((r[1:] - r[:-1]) * p[1:]))


def average_precision(confidences, is_tp, total_gt: int) -> float:
    """AP from per-prediction TP/FP labels sorted by descending confidence."""
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.size == 0 or total_gt == 0:
        return 0.0
    order = np.argsort(-conf, kind="stable")
    hits = np.asarray(is_tp, dtype=bool)[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    keep = np.r_[conf[order][1:] != conf[order][:-1], True]
    return pr_area(tp[keep] / total_gt, tp[keep] / (tp[keep] + fp[keep]))


def xz_errors(pairs_per_scene, preds_per_scene, gts_per_scene, cfg: EvalConfig) -> tuple[float, float, float, float]:
    """Mean |dx|, |dz| over matched lanes' covered points in the near and far windows."""
    ys = np.asarray(cfg.ys)
    near_mask, far_mask = cfg.near_mask(ys), cfg.far_mask(ys)
    acc = {"xn": [], "xf": [], "zn": [], "zf": []}
    for pairs, preds, gts in zip(pairs_per_scene, preds_per_scene, gts_per_scene):
        for i, j in pairs:
            p, g = preds[i], gts[j]
            cov = p.valid & g.valid
            dx = np.abs(p.xs - g.xs)
            dz = np.abs(p.zs - g.zs)
            acc["xn"].append(dx[cov & near_mask])
            acc["xf"].append(dx[cov & far_mask])
            acc["zn"].append(dz[cov & near_mask])
            acc["zf"].append(dz[cov & far_mask])

    def mean(parts):
        arr = np.concatenate(parts) if parts else np.zeros(0)
        return float(arr.mean()) if arr.size else 0.0

    return mean(acc["xn"]), mean(acc["xf"]), mean(acc["zn"]), mean(acc["zf"])


def _counts(preds_per_scene, gts_per_scene, cfg, threshold):
    tp = fp = fn = 0
    all_pairs, kept = [], []
    for preds, gts in zip(preds_per_scene, gts_per_scene):
        idx = [i for i, p in enumerate(preds) if p.confidence >= threshold]
        sub = [preds[i] for i in idx]
        pairs = assign_scene(sub, gts, cfg)
        all_pairs.append([(idx[i], j) for i, j in pairs])
        kept.append(idx)
        tp += len(pairs)
        fp += len(sub) - len(pairs)
        fn += len(gts) - len(pairs)
    return tp, fp, fn, all_pairs, kept


def sweep_ap(preds_per_scene, gts_per_scene, cfg: EvalConfig) -> float:
    """AP with matching recomputed at every confidence threshold present in the predictions."""
    total_gt = sum(len(g) for g in gts_per_scene)
    confs = sorted({p.confidence for preds in preds_per_scene for p in preds}, reverse=True)
    if not confs or total_gt == 0:
        return 0.0
    recall, precision = [], []
    for t in confs:
        tp, fp, _, _, _ = _counts(preds_per_scene, gts_per_scene, cfg, t)
        recall.append(tp / total_gt)
        precision.append(tp / (tp + fp) if tp + fp else 0.0)
    return pr_area(np.array(recall), np.array(precision))


def evaluate(preds_per_scene: list[list[EvalLane]], gts_per_scene: list[list[EvalLane]],
             cfg: EvalConfig = EvalConfig()) -> EvalReport:
    if len(preds_per_scene) != len(gts_per_scene):
        raise ValueError("prediction and ground-truth scene counts differ")
    tp, fp, fn, pairs, _ = _counts(preds_per_scene, gts_per_scene, cfg, cfg.conf_threshold)
    errs = xz_errors(pairs, preds_per_scene, gts_per_scene, cfg)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    per_scene = [{"pairs": [list(x) for x in sp], "num_pred": len(pp), "num_gt": len(gg)}
                 for sp, pp, gg in zip(pairs, preds_per_scene, gts_per_scene)]
    return EvalReport(f_score(tp, fp, fn), sweep_ap(preds_per_scene, gts_per_scene, cfg), *errs,
                      precision=p, recall=r, tp=tp, fp=fp, fn=fn, num_scenes=len(gts_per_scene),
                      per_scene=per_scene)


# ---------------------------------------------------------------------------
# adapters

def gt_eval_lane(lane, ys=FIXED_Y_POSITIONS) -> EvalLane:
    """Ground-truth lane at ``ys``; requires ``ys`` to equal the lane's stored anchor positions."""
    ys = np.asarray(ys, dtype=np.float64)
    if lane.anchors.points.shape[0] != ys.size or not np.array_equal(lane.anchors.ys, ys):
        raise ValueError("evaluation y-positions must equal the ground-truth anchor y-positions")
    return EvalLane(lane.anchors.xs.copy(), lane.anchors.zs.copy(), lane.valid.copy(), 1.0)


def pred_eval_lane(points: np.ndarray, y_start: float, y_end: float, confidence: float,
                   ys=FIXED_Y_POSITIONS) -> EvalLane:
    """Prediction sampled at ``ys`` by linear interpolation of its (N, 3) points."""
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.interp(ys, points[:, 1], points[:, 0])
    zs = np.interp(ys, points[:, 1], points[:, 2])
    valid = (ys >= y_start) & (ys <= y_end)
    return EvalLane(xs, zs, valid, float(confidence))
