"""Command-line harness: train / predict / eval / ablate.

Every command writes a ``manifest.json`` into its output directory before
any other output, recording the command, config path, seed, output
directory, and a version string. Exit codes: 0 success, 1 usage or
configuration problem, 2 numerical failure (diverged training).

``RMMDF_NUM_THREADS`` bounds internal torch parallelism.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys
import warnings

import numpy as np
import torch

from . import __version__
from .config import NetworkConfig, load_config, preset, split_seed
from .data import (
    LoadedDataset,
    load_dataset,
    load_saliency_png,
    preprocess,
    save_saliency_png,
)
from .engine import (
    Trainer,
    build_model,
    load_checkpoint,
    predict_maps,
)
from .errors import ConfigError, DivergenceError, ShapeError
from .metrics import (
    f_measure,
    pr_curve,
    summarize,
    write_curve_csv,
    write_report_csv,
    write_report_json,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

# Ablation ladder: two single-stream baselines, then progressively
# enabled exchange modules, ending at the full architecture.
ABLATION_LADDER = (
    ("vgg_only", dict(with_vgg=True, with_resnet=False, with_drm=False,
                      with_dam=False, with_sdf=False)),
    ("resnet_only", dict(with_vgg=False, with_resnet=True, with_drm=False,
                         with_dam=False, with_sdf=False)),
    ("parallel_drm", dict(with_vgg=True, with_resnet=True, with_drm=True,
                          with_dam=False, with_sdf=False)),
    ("parallel_drm_dam", dict(with_vgg=True, with_resnet=True, with_drm=True,
                              with_dam=True, with_sdf=False)),
    ("full", dict(with_vgg=True, with_resnet=True, with_drm=True,
                  with_dam=True, with_sdf=True)),
)


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad usage; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except Exception:
        pass
    return f"v{__version__}"


def write_manifest(args: argparse.Namespace, config: NetworkConfig | None) -> str:
    os.makedirs(args.out, exist_ok=True)
    manifest = {
        "command": args.command,
        "config_path": getattr(args, "config", None),
        "seed": args.seed,
        "out_dir": os.path.abspath(args.out),
        "version": version_string(),
    }
    if config is not None:
        manifest["resolved_config"] = config.to_dict()
    path = os.path.join(args.out, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def resolve_config(args: argparse.Namespace) -> NetworkConfig:
    """Preset defaults, overridden by the config file, then by flags."""
    cfg = preset(args.preset) if args.preset else NetworkConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    for flag, attr in (
        ("stages", "stages"),
        ("resolution", "resolution"),
        ("width_mult", "width_multiplier"),
        ("iterations", "iterations"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    cfg.validate()
    return cfg


def _dataset_tensors(dataset: LoadedDataset, config: NetworkConfig
                     ) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    images, masks, ids = [], [], []
    for sample in dataset.samples:
        img, mask = preprocess(sample, config.resolution, config.channel_means)
        images.append(torch.from_numpy(img))
        masks.append(torch.from_numpy(mask))
        ids.append(sample.id)
    if not images:
        raise ConfigError("dataset contains no usable image/mask pairs")
    return torch.stack(images), torch.stack(masks), ids


def _load_dataset_checked(root: str) -> LoadedDataset:
    dataset = load_dataset(root)
    for entry in dataset.rejects:
        print(f"rejected: {entry}", file=sys.stderr)
    return dataset


# -- commands -------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    write_manifest(args, config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dataset = _load_dataset_checked(args.dataset_root)
    images, masks, _ = _dataset_tensors(dataset, config)
    model = build_model(config, args.seed)
    trainer = Trainer(model, images, masks, args.out, seed=args.seed)
    result = trainer.run()
    print(
        f"trained {result.iterations} iterations: "
        f"loss {result.initial_loss:.4f} -> {result.final_loss:.4f}"
    )
    print(f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    config = None
    if args.preset or args.config:
        config = resolve_config(args)
    write_manifest(args, config)
    model = load_checkpoint(args.checkpoint, config)
    if config is None:
        config = model.config
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dataset = _load_dataset_checked(args.dataset_root)
    images, _, ids = _dataset_tensors(dataset, config)
    stages = args.stages if args.stages is not None else config.stages
    for i, sample_id in enumerate(ids):
        maps, final = predict_maps(model, images[i:i + 1], stages)
        save_saliency_png(
            final[0, 0].numpy(), os.path.join(args.out, f"{sample_id}.png")
        )
        if args.dump_stages:
            for t, m in enumerate(maps, start=1):
                save_saliency_png(
                    m[0, 0].numpy(),
                    os.path.join(args.out, f"{sample_id}_stage{t}.png"),
                )
    print(f"wrote {len(ids)} prediction(s) to {args.out}")
    return EXIT_OK


def _matched_eval_pairs(pred_dir: str, gt_dir: str
                        ) -> tuple[list[np.ndarray], list[np.ndarray], list[str]]:
    from PIL import Image

    preds, gts, ids = [], [], []
    pred_files = {
        os.path.splitext(n)[0]: os.path.join(pred_dir, n)
        for n in sorted(os.listdir(pred_dir))
        if n.lower().endswith(".png")
    }
    gt_files = {
        os.path.splitext(n)[0]: os.path.join(gt_dir, n)
        for n in sorted(os.listdir(gt_dir))
        if n.lower().endswith(".png")
    }
    for stem in sorted(set(pred_files) & set(gt_files)):
        pred = load_saliency_png(pred_files[stem])
        gt_img = Image.open(gt_files[stem]).convert("L")
        gt = (np.asarray(gt_img) >= 128).astype(np.uint8)
        if pred.shape != gt.shape:
            resized = Image.fromarray(np.round(pred * 255).astype(np.uint8)).resize(
                (gt.shape[1], gt.shape[0]), Image.BILINEAR
            )
            pred = np.asarray(resized, dtype=np.float64) / 255.0
        preds.append(pred)
        gts.append(gt)
        ids.append(stem)
    return preds, gts, ids


def _render_curves(curve, out_dir: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(curve.recall, curve.precision)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title("precision-recall")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "pr_curve.png"), dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(curve.thresholds, f_measure(curve.precision, curve.recall))
    ax.set_xlabel("threshold")
    ax.set_ylabel("F-measure")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title("F-measure vs threshold")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "f_measure_curve.png"), dpi=120)
    plt.close(fig)


def cmd_eval(args: argparse.Namespace) -> int:
    write_manifest(args, None)
    preds, gts, ids = _matched_eval_pairs(args.pred_dir, args.gt_dir)
    if not preds:
        print("no matched prediction/ground-truth pairs", file=sys.stderr)
        return EXIT_USAGE
    report = summarize(preds, gts, ids)
    curve = pr_curve(preds, gts)
    write_report_csv(report, os.path.join(args.out, "report.csv"))
    write_report_json(report, os.path.join(args.out, "report.json"))
    write_curve_csv(curve, os.path.join(args.out, "pr_curve.csv"))
    _render_curves(curve, args.out)
    print(
        f"evaluated {len(ids)} pair(s): max_f={report.max_f:.4f} "
        f"avg_f={report.avg_f:.4f} mae={report.mae:.4f}"
    )
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    write_manifest(args, config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dataset = _load_dataset_checked(args.dataset_root)
    rows = []
    for name, toggles in ABLATION_LADDER:
        variant = dataclasses.replace(config, **toggles)
        variant.optimizer = dataclasses.replace(config.optimizer)
        variant.loss_weights = dataclasses.replace(config.loss_weights)
        variant.validate()
        variant_dir = os.path.join(args.out, name)
        images, masks, ids = _dataset_tensors(dataset, variant)
        model = build_model(variant, args.seed)
        trainer = Trainer(model, images, masks, variant_dir, seed=args.seed)
        trainer.run()
        preds, gts = [], []
        for i in range(images.shape[0]):
            _, final = predict_maps(model, images[i:i + 1])
            preds.append(final[0, 0].numpy().astype(np.float64))
            gts.append(masks[i].numpy().astype(np.uint8))
        report = summarize(preds, gts, ids)
        scored = [im for im in report.per_image if not im.excluded]
        ave_p = float(np.mean([im.precision for im in scored])) if scored else 0.0
        ave_r = float(np.mean([im.recall for im in scored])) if scored else 0.0
        rows.append((name, ave_p, ave_r, report.avg_f, report.mae))
        print(f"{name}: aveP={ave_p:.4f} aveR={ave_r:.4f} "
              f"avgF={report.avg_f:.4f} MAE={report.mae:.4f}")

    table_path = os.path.join(args.out, "ablation.csv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("variant,ave_precision,ave_recall,avg_f,mae\n")
        for name, p, r, f, m in rows:
            fh.write(f"{name},{p:.9f},{r:.9f},{f:.9f},{m:.9f}\n")
    by_name = {r[0]: r for r in rows}
    if by_name["full"][4] > by_name["vgg_only"][4]:
        print(
            "warning: full variant did not beat the vgg-only baseline on "
            "training-set MAE; inspect the run",
            file=sys.stderr,
        )
    print(f"ablation table: {table_path}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, with_train_flags: bool = True) -> None:
    parser.add_argument("--config", metavar="PATH", help="YAML config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", metavar="DIR", required=True,
                        help="output directory (all writes go here)")
    parser.add_argument("--preset", choices=("micro", "paper"))
    parser.add_argument("--stages", type=int, default=None)
    if with_train_flags:
        parser.add_argument("--resolution", type=int, default=None)
        parser.add_argument("--width-mult", dest="width_mult", type=float, default=None)
        parser.add_argument("--iterations", type=int, default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rmmdf",
                     description="parallel-encoder saliency detection harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on an image/mask dataset")
    p.add_argument("dataset_root")
    _add_common(p)

    p = sub.add_parser("predict", help="write saliency PNGs for a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset_root")
    p.add_argument("--dump-stages", action="store_true",
                   help="also write the per-stage fine-scale maps")
    _add_common(p, with_train_flags=True)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    _add_common(p, with_train_flags=False)

    p = sub.add_parser("ablate", help="run the component-ablation ladder")
    p.add_argument("dataset_root")
    _add_common(p)
    return parser


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    threads = os.environ.get("RMMDF_NUM_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"ignoring invalid RMMDF_NUM_THREADS={threads!r}", file=sys.stderr)
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    torch.manual_seed(split_seed(args.seed, "torch"))
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ShapeError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
