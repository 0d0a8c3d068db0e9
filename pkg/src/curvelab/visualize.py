"""PNG overlays of predicted and ground-truth lanes (image view and bird's-eye view)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .geometry import CurveParams, project_points, sample_curve
from .harness import predicted_curves, run_model
from .model import CurveFormer
from .scenegen import Scene

_GT = "#2ca02c"
_PRED = "#d62728"


def _dense(curve: CurveParams, n: int = 200) -> np.ndarray:
    return sample_curve(curve, np.linspace(curve.y_start, curve.y_end, n)).points


def _draw_image(ax, scene: Scene, curves, color, label):
    for k, c in enumerate(curves):
        uv, ok = project_points(_dense(c), scene.camera)
        uv = np.where(ok[:, None], uv, np.nan)
        ax.plot(uv[:, 0], uv[:, 1], color=color, lw=1.2, label=label if k == 0 else None)


def _draw_bev(ax, curves, color, label):
    for k, c in enumerate(curves):
        pts = _dense(c)
        ax.plot(pts[:, 0], pts[:, 1], color=color, lw=1.5, label=label if k == 0 else None)


def visualize_scene(model: CurveFormer, scene: Scene, out_dir, threshold: float = 0.5,
                    per_layer: bool = False, stem: str = "scene") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    output = run_model(model, [scene])[0]
    preds = predicted_curves(model, output, 0, threshold)
    gts = [l.curve for l in scene.lanes]
    written = []

    fig, ax = plt.subplots(figsize=(6, 4.8))
    ax.imshow(scene.image)
    _draw_image(ax, scene, gts, _GT, "ground truth")
    _draw_image(ax, scene, preds, _PRED, "prediction")
    h, w = scene.camera.image_size
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.legend(loc="upper right", fontsize=7)
    ax.set_title("image view")
    written.append(out_dir / f"{stem}_image.png")
    fig.savefig(written[-1], dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(4, 6))
    _draw_bev(ax, gts, _GT, "ground truth")
    _draw_bev(ax, preds, _PRED, "prediction")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_xlim(model.cfg.x_range[0] / 2, model.cfg.x_range[1] / 2)
    ax.set_ylim(0, model.cfg.y_range[1])
    ax.legend(loc="upper right", fontsize=7)
    ax.set_title("bird's-eye view")
    written.append(out_dir / f"{stem}_bev.png")
    fig.savefig(written[-1], dpi=100)
    plt.close(fig)

    if per_layer:
        keep = (output.final.confidence[0] >= threshold).numpy()
        for li, layer in enumerate(output.layers):
            fig, ax = plt.subplots(figsize=(6, 4.8))
            ax.imshow(scene.image)
            _draw_image(ax, scene, gts, _GT, "ground truth")
            for q in np.nonzero(keep)[0]:
                uv, ok = project_points(layer.anchors[0, q].double().numpy(), scene.camera)
                ax.plot(uv[ok, 0], uv[ok, 1], "o-", color=_PRED, ms=2.5, lw=0.8)
            ax.set_xlim(0, w)
            ax.set_ylim(h, 0)
            ax.set_title(f"decoder layer {li + 1}: refined anchors")
            written.append(out_dir / f"{stem}_layer{li + 1}.png")
            fig.savefig(written[-1], dpi=100)
            plt.close(fig)
    return written
