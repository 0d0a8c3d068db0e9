"""Training loop, evaluation and ablation runs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_model, restore_optimizer, save_checkpoint
from .config import RunConfig, variant
from .geometry import CurveParams, polyval
from .metrics import EvalConfig, EvalLane, EvalReport, evaluate, gt_eval_lane, pred_eval_lane
from .model import CameraBatch, CurveFormer, ModelOutput
from .scenegen import Scene
from .training import LaneTarget, detached_preds, hungarian_match, point_l1, total_loss

log = logging.getLogger(__name__)

ABLATION_AXES = {
    "decoder-layers": [("layers=2", {"num_layers": 2}), ("layers=4", {"num_layers": 4}),
                       ("layers=6", {"num_layers": 6}), ("layers=8", {"num_layers": 8}),
                       ("layers=10", {"num_layers": 10})],
    "sampling": [("baseline (no offsets)", {"offset_mode": "none"}), ("SO", {"offset_mode": "so"}),
                 ("CSO", {"offset_mode": "cso"})],
    "head": [("C (curve parameters)", {"head_type": "curve"}), ("P (anchor point set)", {"head_type": "points"})],
    "seg": [("aux seg on", {"aux_seg": True}), ("aux seg off", {"aux_seg": False})],
}


@dataclass
class Dataset:
    scenes: list[Scene]
    images: torch.Tensor
    masks: torch.Tensor
    targets: list[list[LaneTarget]]

    def __len__(self):
        return len(self.scenes)

    def cameras(self, idx) -> CameraBatch:
        return CameraBatch.from_cameras([self.scenes[i].camera for i in idx])


def make_dataset(scenes: list[Scene], ys) -> Dataset:
    if not scenes:
        raise ValueError("dataset is empty")
    for s in scenes:
        if not np.array_equal(s.ys, np.asarray(ys)):
            raise ValueError("scene y-positions differ from the model's fixed y-positions")
    images = torch.from_numpy(np.stack([s.image for s in scenes])).permute(0, 3, 1, 2).contiguous()
    masks = torch.from_numpy(np.stack([s.seg_mask for s in scenes]).astype(np.int64))
    targets = [[LaneTarget.from_gt(l) for l in s.lanes] for s in scenes]
    return Dataset(scenes, images, masks, targets)


def batch_indices(seed: int, step: int, size: int, batch: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=[seed, step]))
    return np.sort(rng.choice(size, size=min(batch, size), replace=False))


@dataclass
class TrainResult:
    model: CurveFormer
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def train(cfg: RunConfig, scenes: list[Scene], out_dir=None, resume=None, stop_at: int | None = None) -> TrainResult:
    """Run the optimizer loop. Writes ``train_log.jsonl`` and checkpoints under ``out_dir``."""
    data = make_dataset(scenes, cfg.model.ys)
    tc = cfg.train
    torch.manual_seed(tc.seed)
    model = CurveFormer(cfg.model)
    start = 0
    if resume is not None:
        model, header, arrays = load_model(resume)
        start = int(header["step"])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.optim.lr, betas=cfg.optim.betas,
                           weight_decay=cfg.optim.weight_decay)
    if resume is not None:
        restore_optimizer(opt, model, arrays)
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "train_log.jsonl", "a" if resume else "w")
    y_span = cfg.model.range3d.y_span
    end = tc.steps if stop_at is None else min(stop_at, tc.steps)
    result = TrainResult(model)
    model.train()
    try:
        for step in range(start, end):
            idx = batch_indices(tc.seed, step, len(data), tc.batch_size)
            out = model(data.images[idx], data.cameras(idx))
            losses = total_loss(out, [data.targets[i] for i in idx], cfg.loss, data.masks[idx],
                                y_span, use_seg=cfg.model.aux_seg)
            rec = {"step": step + 1, **losses.as_floats()}
            if not all(math.isfinite(rec[k]) for k in ("L_curve", "L_query", "L_seg")):
                raise FloatingPointError(f"non-finite loss at step {step + 1}: {rec} (batch {idx.tolist()})")
            opt.zero_grad(set_to_none=True)
            losses.total.backward()
            opt.step()
            result.history.append(rec)
            if log_file is not None and (step + 1) % tc.log_every == 0:
                log_file.write(json.dumps(rec) + "\n")
            if out_dir is not None and ((step + 1) % tc.checkpoint_every == 0 or step + 1 == end):
                result.checkpoint = save_checkpoint(out_dir / "checkpoint.ckpt", model, opt, step + 1)
                save_checkpoint(out_dir / f"checkpoint_step{step + 1:06d}.ckpt", model, opt, step + 1)
            if (step + 1) % 100 == 0:
                log.info("step %d loss %.4f curve %.4f query %.4f seg %.4f", step + 1, rec["loss"],
                         rec["L_curve"], rec["L_query"], rec["L_seg"])
    finally:
        if log_file is not None:
            log_file.close()
    model.eval()
    return result


# ---------------------------------------------------------------------------
# inference and evaluation

@torch.no_grad()
def run_model(model: CurveFormer, scenes: list[Scene], batch: int = 8) -> list[ModelOutput]:
    model.eval()
    data = make_dataset(scenes, model.cfg.ys)
    outs = []
    for lo in range(0, len(scenes), batch):
        idx = np.arange(lo, min(lo + batch, len(scenes)))
        outs.append(model(data.images[idx], data.cameras(idx)))
    return outs


def _iter_images(outputs: list[ModelOutput]):
    for out in outputs:
        for i in range(out.final.logits.shape[0]):
            yield out, i


def prediction_lanes(model: CurveFormer, outputs: list[ModelOutput], ys) -> list[list[EvalLane]]:
    """Every query of every scene as an EvalLane (thresholding happens in the metrics)."""
    ys = np.asarray(ys, dtype=np.float64)
    scenes = []
    for out, i in _iter_images(outputs):
        fin = out.final
        conf = fin.confidence[i].double().numpy()
        y0, y1 = fin.y_start[i].double().numpy(), fin.y_end[i].double().numpy()
        lanes = []
        for q in range(conf.shape[0]):
            if model.cfg.head_type == "curve":
                xs = polyval(fin.coef_a[i, q].double().numpy(), ys)
                zs = polyval(fin.coef_b[i, q].double().numpy(), ys)
                lanes.append(EvalLane(xs, zs, (ys >= y0[q]) & (ys <= y1[q]), float(conf[q])))
            else:
                lanes.append(pred_eval_lane(fin.points[i, q].double().numpy(), y0[q], y1[q], conf[q], ys))
        scenes.append(lanes)
    return scenes


def predicted_curves(model: CurveFormer, output: ModelOutput, i: int, threshold: float = 0.5) -> list[CurveParams]:
    fin = output.final
    out = []
    for q in range(fin.logits.shape[1]):
        c = float(fin.confidence[i, q])
        if c >= threshold:
            out.append(CurveParams(c, float(fin.y_start[i, q]), float(fin.y_end[i, q]),
                                   fin.coef_a[i, q].double().numpy(), fin.coef_b[i, q].double().numpy()))
    return out


def gt_lanes(scenes: list[Scene], ys) -> list[list[EvalLane]]:
    return [[gt_eval_lane(l, ys) for l in s.lanes] for s in scenes]


def evaluate_model(model: CurveFormer, scenes: list[Scene], cfg: EvalConfig = EvalConfig()) -> EvalReport:
    outputs = run_model(model, scenes)
    return evaluate(prediction_lanes(model, outputs, cfg.ys), gt_lanes(scenes, cfg.ys), cfg)


def evaluate_gt_replay(scenes: list[Scene], cfg: EvalConfig = EvalConfig()) -> EvalReport:
    gts = gt_lanes(scenes, cfg.ys)
    return evaluate([list(g) for g in gts], gts, cfg)


def anchor_error_by_layer(model: CurveFormer, scenes: list[Scene], loss_cfg) -> np.ndarray:
    """Mean anchor-to-GT L1 per decoder layer over matched lanes (matching from the final layer)."""
    outputs = run_model(model, scenes)
    data = make_dataset(scenes, model.cfg.ys)
    errs = np.zeros(model.cfg.num_layers)
    count = 0
    for k, (out, i) in enumerate(_iter_images(outputs)):
        gts = data.targets[k]
        if not gts:
            continue
        match = hungarian_match(gts, detached_preds(out.final, i), loss_cfg, model.cfg.range3d.y_span)
        pos = match.positive_preds
        gt_pts = np.stack([g.points for g in gts])
        gt_valid = np.stack([g.valid for g in gts])
        for li, layer in enumerate(out.layers):
            errs[li] += point_l1(gt_pts, gt_valid, layer.anchors[i, pos].double().numpy()).sum()
        count += len(gts)
    return errs / max(count, 1)


# ---------------------------------------------------------------------------
# ablation

def ablation_variants(cfg: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; valid axes: {', '.join(ABLATION_AXES)}")
    return [(label, variant(cfg, **changes)) for label, changes in ABLATION_AXES[axis]]


def run_ablation(cfg: RunConfig, axis: str, train_scenes: list[Scene], eval_scenes: list[Scene] | None = None,
                 out_dir=None) -> tuple[list[dict], str]:
    rows = []
    for label, vcfg in ablation_variants(cfg, axis):
        sub = None if out_dir is None else Path(out_dir) / label.split(" ")[0].replace("=", "")
        res = train(vcfg, train_scenes, sub)
        rep = evaluate_model(res.model, eval_scenes or train_scenes, vcfg.eval)
        rows.append({"variant": label, "f_score": rep.f_score, "ap": rep.ap, "report": rep.to_dict()})
        log.info("ablation %s: F %.4f AP %.4f", label, rep.f_score, rep.ap)
    return rows, ablation_table(axis, rows)


def ablation_table(axis: str, rows: list[dict]) -> str:
    lines = [f"| {axis} | F-Score | AP |", "|---|---|---|"]
    lines += [f"| {r['variant']} | {100 * r['f_score']:.1f} | {100 * r['ap']:.1f} |" for r in rows]
    return "\n".join(lines)
