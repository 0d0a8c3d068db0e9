"""``curvelab generate|train|eval|visualize|ablate --config <path> [--set section.key=value ...]``"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod


def _common(p):
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvelab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic scene set")
    _common(p)
    p.add_argument("--count", type=int, help="number of scenes (default: train.num_train_scenes)")
    p.add_argument("--start", type=int, default=0, help="first scene index")
    p.add_argument("--out", help="output directory (default: <output_dir>/scenes)")

    p = sub.add_parser("train", help="train a model on a scene set")
    _common(p)
    p.add_argument("--scenes", help="scene directory (default: <output_dir>/scenes)")
    p.add_argument("--out", help="run directory (default: <output_dir>/train)")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", help="default: <output_dir>/train/checkpoint.ckpt")
    p.add_argument("--scenes", help="scene directory (default: <output_dir>/scenes)")
    p.add_argument("--out", help="report JSON path (default: <output_dir>/eval_report.json)")
    p.add_argument("--gt-replay", action="store_true", help="score ground truth against itself")

    p = sub.add_parser("visualize", help="write image-view and BEV overlays")
    _common(p)
    p.add_argument("--checkpoint", help="default: <output_dir>/train/checkpoint.ckpt")
    p.add_argument("--scenes", help="scene directory (default: <output_dir>/scenes)")
    p.add_argument("--index", type=int, default=0, help="scene index")
    p.add_argument("--out", help="output directory (default: <output_dir>/vis)")
    p.add_argument("--per-layer", action="store_true", help="one overlay per decoder layer")

    p = sub.add_parser("ablate", help="train and score the variants along one ablation axis")
    _common(p)
    p.add_argument("--axis", required=True, help="decoder-layers | sampling | head | seg")
    p.add_argument("--scenes", help="training scene directory (default: <output_dir>/scenes)")
    p.add_argument("--eval-scenes", help="scenes to score on (default: the training scenes)")
    p.add_argument("--out", help="output directory (default: <output_dir>/ablate_<axis>)")
    return parser


def _path(arg, cfg, default):
    return Path(arg) if arg else cfg.out / default


def cmd_generate(args, cfg):
    from .scenegen import generate_scenes, write_scenes
    count = cfg.train.num_train_scenes if args.count is None else args.count
    if count < 0:
        raise ValueError("--count must be >= 0")
    out = _path(args.out, cfg, "scenes")
    write_scenes(generate_scenes(cfg.scene, count, args.start), out)
    cfg.save(out / "config.toml")
    print(f"wrote {count} scenes to {out}")


def cmd_train(args, cfg):
    from .harness import train
    from .scenegen import read_scenes
    scenes = read_scenes(_path(args.scenes, cfg, "scenes"))
    out = _path(args.out, cfg, "train")
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.toml")
    res = train(cfg, scenes, out, resume=args.resume)
    last = res.history[-1] if res.history else {}
    print(f"trained to step {last.get('step', 'n/a')}; checkpoint {res.checkpoint}")


def cmd_eval(args, cfg):
    from .checkpoint import load_model
    from .harness import evaluate_gt_replay, evaluate_model
    from .metrics import EvalReport
    from .scenegen import read_scenes
    scenes = read_scenes(_path(args.scenes, cfg, "scenes"))
    if args.gt_replay:
        report, name = evaluate_gt_replay(scenes, cfg.eval), "gt-replay"
    else:
        model, _, _ = load_model(_path(args.checkpoint, cfg, "train/checkpoint.ckpt"))
        report, name = evaluate_model(model, scenes, cfg.eval), "curvelab"
    out = _path(args.out, cfg, "eval_report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=1))
    print(EvalReport.table_header())
    print(report.table_row(name))


def cmd_visualize(args, cfg):
    from .checkpoint import load_model
    from .scenegen import read_scenes
    from .visualize import visualize_scene
    model, _, _ = load_model(_path(args.checkpoint, cfg, "train/checkpoint.ckpt"))
    scenes = read_scenes(_path(args.scenes, cfg, "scenes"))
    if not 0 <= args.index < len(scenes):
        raise IndexError(f"scene index {args.index} out of range [0, {len(scenes)})")
    files = visualize_scene(model, scenes[args.index], _path(args.out, cfg, "vis"),
                            cfg.eval.conf_threshold, args.per_layer, stem=f"scene{args.index:04d}")
    for f in files:
        print(f)


def cmd_ablate(args, cfg):
    from .harness import ablation_variants, run_ablation
    from .scenegen import read_scenes
    ablation_variants(cfg, args.axis)
    train_scenes = read_scenes(_path(args.scenes, cfg, "scenes"))
    eval_scenes = read_scenes(args.eval_scenes) if args.eval_scenes else None
    out = _path(args.out, cfg, f"ablate_{args.axis}")
    rows, table = run_ablation(cfg, args.axis, train_scenes, eval_scenes, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.md").write_text(table + "\n")
    (out / "ablation.json").write_text(json.dumps([{k: v for k, v in r.items() if k != "report"} for r in rows],
                                                  indent=1))
    print(table)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "visualize": cmd_visualize, "ablate": cmd_ablate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_mod.build(args.config, args.overrides)
        COMMANDS[args.command](args, cfg)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"curvelab {args.command}: error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
