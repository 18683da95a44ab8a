"""Command-line entry point: ``lapstyle {decompose,train,stylize,evaluate}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import torch

from .detail_net import full_stylize
from .evaluation import evaluate_batch, load_perceptual_weights
from .features import VGGEncoder, load_encoder_weights
from .imageio import load_image, save_image, save_residual
from .pyramid import DimensionError, decompose, reconstruct
from .training import (
    ABLATION_FLAGS,
    ConfigError,
    load_checkpoint,
    plot_loss_log,
    read_config,
    train_stage1,
    train_stage2,
)

log = logging.getLogger("lapstyle")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        sys.exit(2)


def cmd_decompose(args) -> int:
    img = load_image(args.input)
    pyr = decompose(img, args.levels)
    out = Path(args.outdir)
    save_image(pyr.low, out / "low.png")
    for k, h in enumerate(pyr.residuals):
        save_residual(h, out / f"h{k}.png")
    save_image(reconstruct(pyr.low, pyr.residuals), out / "recon.png")
    print(f"wrote {pyr.levels + 2} images to {out}")
    return 0


def _train_overrides(args) -> dict[str, str]:
    overrides = {}
    for key in ("stage", "resolution", "seed", "levels", "iterations", "content_dir", "style_image",
                "output_dir", "stage1_checkpoint", "encoder_weights"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = str(value)
    if args.alpha is not None:
        overrides["alpha"] = str(args.alpha)
    for flag in ABLATION_FLAGS:
        if getattr(args, flag):
            overrides[flag] = "true"
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    return overrides


def cmd_train(args) -> int:
    config = read_config(args.config, _train_overrides(args))
    if config.stage == "base":
        ckpt = train_stage1(config)
        log_path = Path(config.output_dir) / "stage1_loss.log"
    else:
        stage1 = None
        if not config.no_base_net:
            if not config.stage1_checkpoint:
                raise ConfigError("stage1_checkpoint: missing stage-1 checkpoint (set it or pass --no-base-net)")
            if not Path(config.stage1_checkpoint).exists():
                raise ConfigError(f"stage1_checkpoint: missing stage-1 checkpoint {config.stage1_checkpoint}")
            stage1 = load_checkpoint(config.stage1_checkpoint)
        ckpt = train_stage2(config, stage1)
        log_path = Path(config.output_dir) / "stage2_loss.log"
    plot = plot_loss_log(log_path, log_path.with_suffix(".png"))
    print(f"trained {config.stage} stage to iteration {ckpt.iteration}; log {log_path}" + (f"; plot {plot}" if plot else ""))
    return 0


def _load_style(path, size) -> torch.Tensor:
    h, w = size
    style = load_image(path, max(h, w))
    if (h, w) != tuple(style.shape[-2:]):
        style = torch.nn.functional.interpolate(style.unsqueeze(0), size=(h, w), mode="bilinear", align_corners=False)[0]
    return style


def cmd_stylize(args) -> int:
    encoder = VGGEncoder(load_encoder_weights(args.weights))
    detail_ckpt = load_checkpoint(args.detail_checkpoint)
    detail = _build(detail_ckpt, "detail")
    no_base = detail_ckpt.config.get("no_base_net", False)
    base = None
    if not no_base:
        if not args.base_checkpoint:
            raise ConfigError("--base-checkpoint is required for a detail network trained with the base network")
        base = _build(load_checkpoint(args.base_checkpoint), "base")
    content = load_image(args.content, args.resolution)
    style = _load_style(args.style, content.shape[-2:])

    start = time.perf_counter()
    with torch.no_grad():
        result = full_stylize(content, style, encoder, base, detail, use_eis=not detail_ckpt.config.get("no_eis", False))
    elapsed = time.perf_counter() - start

    out = Path(args.out)
    save_image(result.image, out)
    if args.dump_intermediates:
        for stage in result.stages:
            size = stage.shape[-1]
            save_image(stage.clamp(0, 1), out.with_name(f"{out.stem}_{size}{out.suffix}"))
        for k, h in enumerate(result.residuals_hat):
            save_residual(h, out.with_name(f"{out.stem}_h{k}_hat{out.suffix}"))
    print(f"stylize_seconds={elapsed:.6f}")
    return 0


def _build(ckpt, kind: str):
    if ckpt.kind != kind:
        raise ConfigError(f"expected a {kind} checkpoint, got {ckpt.kind}")
    try:
        return ckpt.build().eval()
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint does not match the {kind} architecture: {exc}") from None


def cmd_evaluate(args) -> int:
    encoder = load_encoder_weights(args.weights)
    weights = load_perceptual_weights(args.perceptual_weights) if args.perceptual_weights else None
    report = evaluate_batch(args.manifest, encoder, weights)
    report.to_csv(args.out_csv)
    print(
        f"pairs={len(report.rows)} mean_psnr={report.mean_psnr:.4f} "
        f"mean_ssim={report.mean_ssim:.4f} mean_perceptual={report.mean_perceptual:.4f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lapstyle", description="Laplacian-pyramid style transfer for Chinese painting styles.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decompose", help="write pyramid components and a round-trip image")
    p.add_argument("input")
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--outdir", default="pyramid")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("train", help="train the base (stage 1) or detail (stage 2) network")
    p.add_argument("--config")
    p.add_argument("--stage", choices=["base", "detail"])
    p.add_argument("--resolution", type=int)
    p.add_argument("--alpha", type=float, help="content weight of the detail stage")
    p.add_argument("--seed", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--content-dir", dest="content_dir")
    p.add_argument("--style-image", dest="style_image")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--stage1-checkpoint", dest="stage1_checkpoint")
    p.add_argument("--weights", dest="encoder_weights", help="VGG-19 archive (default: $LAPSTYLE_WEIGHTS)")
    for flag in ABLATION_FLAGS:
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stylize", help="run the full two-stage model on one image")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--base-checkpoint", dest="base_checkpoint")
    p.add_argument("--detail-checkpoint", dest="detail_checkpoint", required=True)
    p.add_argument("--weights", help="VGG-19 archive (default: $LAPSTYLE_WEIGHTS)")
    p.add_argument("--resolution", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-intermediates", action="store_true")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("evaluate", help="PSNR / SSIM / perceptual distance over a manifest of pairs")
    p.add_argument("manifest")
    p.add_argument("--out-csv", dest="out_csv", default="metrics.csv")
    p.add_argument("--weights", help="VGG-19 archive (default: $LAPSTYLE_WEIGHTS)")
    p.add_argument("--perceptual-weights", dest="perceptual_weights")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FileNotFoundError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
