"""Two-stage training: the base network first, then the detail network with
the base network and encoder frozen.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .base_net import BaseNet, base_forward
from .detail_net import DetailNet, full_stylize
from .features import ParameterSet, VGGEncoder, load_encoder_weights
from .imageio import load_image
from .losses import LossWeights, stage1_objective, stage2_objective
from .pyramid import downsample

__all__ = [
    "Checkpoint",
    "ConfigError",
    "ContentSampler",
    "TrainConfig",
    "TrainingError",
    "ingest_dataset",
    "load_checkpoint",
    "plot_loss_log",
    "read_config",
    "save_checkpoint",
    "train_stage1",
    "train_stage2",
]

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}
ABLATION_FLAGS = ("no_lp", "no_lss", "no_lmv", "no_lr", "no_eis", "no_base_net")
# config-file names for the loss weights
WEIGHT_KEYS = {
    "lambda_c": "content",
    "lambda_s": "style",
    "lambda_i1": "identity_pixel",
    "lambda_i2": "identity_feature",
    "alpha": "alpha",
    "lambda_1": "perceptual",
    "lambda_2": "self_similarity",
    "lambda_3": "mean_variance",
    "lambda_4": "remd",
}
STAGE_DEFAULTS = {"base": {"learning_rate": 1e-4, "batch_size": 5}, "detail": {"learning_rate": 5e-3, "batch_size": 1}}


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    content_dir: str = ""
    style_image: str = ""
    resolution: int = 512
    stage: str = "base"
    iterations: int = 1000
    learning_rate: float | None = None
    batch_size: int | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    levels: int = 2
    max_samples: int = 1024
    checkpoint_every: int = 0
    output_dir: str = "runs"
    encoder_weights: str = ""
    stage1_checkpoint: str = ""
    identity_pixel_mode: str = "pair"
    no_lp: bool = False
    no_lss: bool = False
    no_lmv: bool = False
    no_lr: bool = False
    no_eis: bool = False
    no_base_net: bool = False

    def __post_init__(self):
        if self.stage not in STAGE_DEFAULTS:
            raise ConfigError(f"stage: expected one of {sorted(STAGE_DEFAULTS)}, got {self.stage!r}")
        defaults = STAGE_DEFAULTS[self.stage]
        if self.learning_rate is None:
            self.learning_rate = defaults["learning_rate"]
        if self.batch_size is None:
            self.batch_size = defaults["batch_size"]
        if self.resolution % (2**self.levels * 16):
            raise ConfigError(f"resolution: {self.resolution} must be divisible by {2**self.levels * 16}")

    @property
    def flags(self) -> list[str]:
        return [f for f in ABLATION_FLAGS if getattr(self, f)]

    def effective_weights(self) -> LossWeights:
        w = dataclasses.replace(self.weights)
        if self.no_lp:
            w.perceptual = 0.0
        if self.no_lss:
            w.self_similarity = 0.0
        if self.no_lmv:
            w.mean_variance = 0.0
        if self.no_lr:
            w.remd = 0.0
        return w

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if isinstance(data.get("weights"), dict):
            data["weights"] = LossWeights(**data["weights"])
        return cls(**data)


def _coerce(key: str, raw: str, kind):
    text = raw.strip()
    try:
        if kind is bool:
            if text.lower() in {"1", "true", "yes", "on"}:
                return True
            if text.lower() in {"0", "false", "no", "off"}:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    return text


_FIELD_TYPES = {
    "content_dir": str, "style_image": str, "resolution": int, "stage": str, "iterations": int,
    "learning_rate": float, "batch_size": int, "seed": int, "levels": int, "max_samples": int,
    "checkpoint_every": int, "output_dir": str, "encoder_weights": str, "stage1_checkpoint": str,
    "identity_pixel_mode": str, **{f: bool for f in ABLATION_FLAGS},
}


def parse_overrides(pairs: dict[str, str]) -> dict:
    """Turn ``key -> text`` pairs into typed TrainConfig keyword arguments."""
    kwargs: dict = {}
    weights = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key in WEIGHT_KEYS:
            weights[WEIGHT_KEYS[key]] = _coerce(key, raw, float)
        elif key in _FIELD_TYPES:
            kwargs[key] = _coerce(key, raw, _FIELD_TYPES[key])
        else:
            raise ConfigError(f"{key}: unknown configuration key")
    if weights:
        kwargs["weights"] = weights
    return kwargs


def read_config(path, overrides: dict[str, str] | None = None) -> TrainConfig:
    """Read ``key = value`` lines (``#`` starts a comment); ``overrides`` win."""
    pairs: dict[str, str] = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value.strip()
    pairs.update(overrides or {})
    kwargs = parse_overrides(pairs)
    weights = kwargs.pop("weights", {})
    kwargs["weights"] = LossWeights(**weights)
    return TrainConfig(**kwargs)


class ContentSampler:
    """In-memory content images with a per-step deterministic batch order."""

    def __init__(self, images: list[torch.Tensor], paths: list[Path], skipped: int, seed: int = 0):
        self.images = images
        self.paths = paths
        self.skipped = skipped
        self.seed = seed

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> torch.Tensor:
        return self.images[i]

    def indices(self, step: int, batch_size: int) -> list[int]:
        rng = np.random.default_rng([self.seed, step])
        n = len(self.images)
        if batch_size <= n:
            return rng.permutation(n)[:batch_size].tolist()
        return rng.integers(0, n, batch_size).tolist()

    def batch(self, step: int, batch_size: int) -> torch.Tensor:
        return torch.stack([self.images[i] for i in self.indices(step, batch_size)])


def ingest_dataset(content_dir, resolution: int, seed: int = 0) -> ContentSampler:
    """Load every decodable image, resized and center-cropped to ``resolution`` squared."""
    content_dir = Path(content_dir)
    if content_dir.is_file():
        files = [content_dir]
    else:
        files = sorted(p for p in content_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    images, paths, skipped = [], [], 0
    for p in files:
        try:
            images.append(load_image(p, resolution))
            paths.append(p)
        except (OSError, UnidentifiedImageError, Image.DecompressionBombError) as exc:
            skipped += 1
            log.warning("skipping unreadable image %s: %s", p, exc)
    if not images:
        raise FileNotFoundError(f"no decodable images in {content_dir}")
    if skipped:
        log.warning("%d unreadable file(s) skipped in %s", skipped, content_dir)
    return ContentSampler(images, paths, skipped, seed)


@dataclass
class Checkpoint:
    kind: str  # "base" or "detail"
    state: dict
    optimizer: dict | None
    iteration: int
    config: dict
    history: list[dict] = field(default_factory=list)

    def build(self) -> torch.nn.Module:
        if self.kind == "base":
            net = BaseNet()
        else:
            net = DetailNet(levels=self.config.get("levels", 2))
        net.load_state_dict(self.state)
        return net


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(dataclasses.asdict(ckpt), tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint(**torch.load(path, map_location="cpu", weights_only=False))


def _state_copy(module: torch.nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _encoder(config: TrainConfig, encoder) -> VGGEncoder:
    if encoder is None:
        encoder = load_encoder_weights(config.encoder_weights or None)
    if isinstance(encoder, ParameterSet):
        encoder = VGGEncoder(encoder)
    encoder.eval()
    for p in encoder.parameters():
        p.requires_grad_(False)
    return encoder


def _down(x: torch.Tensor, times: int) -> torch.Tensor:
    for _ in range(times):
        x = downsample(x)
    return x


class _LossLog:
    def __init__(self, path: Path | None, header: str, append: bool):
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            if not append or not path.exists():
                path.write_text(header + "\n")

    def write(self, line: str) -> None:
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(line + "\n")


def _header(config: TrainConfig) -> str:
    flags = ",".join(config.flags) or "none"
    return f"# stage={config.stage} seed={config.seed} resolution={config.resolution} flags={flags}"


def _check_finite(step: int, report) -> None:
    if not math.isfinite(float(report.total.detach())):
        raise TrainingError(f"non-finite loss at step {step}: {report.values()}")


def train_stage1(config: TrainConfig, encoder=None, resume: Checkpoint | None = None, on_step=None) -> Checkpoint:
    """Optimize the base network (attention, fusion, decoder) on low-resolution inputs."""
    encoder = _encoder(config, encoder)
    sampler = ingest_dataset(config.content_dir, config.resolution, config.seed)
    style_low = _down(load_image(config.style_image, config.resolution), config.levels).unsqueeze(0)

    torch.manual_seed(config.seed)
    net = BaseNet()
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    start, history = 0, []
    if resume is not None:
        net.load_state_dict(resume.state)
        opt.load_state_dict(resume.optimizer)
        start, history = resume.iteration, list(resume.history)

    out = Path(config.output_dir)
    loss_log = _LossLog(out / "stage1_loss.log" if config.output_dir else None, _header(config), append=resume is not None)
    weights = config.weights

    def snapshot(step):
        return Checkpoint("base", _state_copy(net), opt.state_dict(), step, config.to_dict(), history[-200:])

    for step in range(start, config.iterations):
        x_c = _down(sampler.batch(step, config.batch_size), config.levels)
        x_s = style_low.expand(x_c.shape[0], -1, -1, -1)
        x_cs = base_forward(x_c, x_s, encoder, net)
        x_cc = base_forward(x_c, x_c, encoder, net)
        x_ss = base_forward(style_low, style_low, encoder, net)
        report = stage1_objective(x_c, style_low, x_cs, x_cc, x_ss, encoder, weights, config.identity_pixel_mode)
        _check_finite(step, report)
        opt.zero_grad()
        report.total.backward()
        opt.step()
        history.append({"step": step, **report.values(), "total": float(report.total.detach())})
        loss_log.write(report.log_line(step))
        if on_step is not None:
            on_step(step, report)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0 and config.output_dir:
            save_checkpoint(snapshot(step + 1), out / "stage1.ckpt")

    ckpt = snapshot(max(start, config.iterations))
    if config.output_dir:
        save_checkpoint(ckpt, out / "stage1.ckpt")
    return ckpt


def train_stage2(config: TrainConfig, stage1: Checkpoint | None, encoder=None, resume: Checkpoint | None = None,
                 on_step=None) -> Checkpoint:
    """Optimize the detail network; the base network and encoder stay fixed.

    ``on_step(step, report, stylization)`` sees each step's intermediates,
    including which low-frequency image fed the reconstruction.
    """
    if stage1 is None and not config.no_base_net:
        raise ConfigError("stage1_checkpoint: the detail stage needs a stage-1 checkpoint unless no_base_net is set")
    encoder = _encoder(config, encoder)
    base = None
    if not config.no_base_net:
        base = stage1.build().eval()
        for p in base.parameters():
            p.requires_grad_(False)
    sampler = ingest_dataset(config.content_dir, config.resolution, config.seed)
    style = load_image(config.style_image, config.resolution).unsqueeze(0)
    style_low = _down(style, config.levels)
    with torch.no_grad():
        style_feats = encoder(style, upto="4_1")

    torch.manual_seed(config.seed)
    detail = DetailNet(levels=config.levels)
    opt = torch.optim.Adam(detail.parameters(), lr=config.learning_rate)
    start, history = 0, []
    if resume is not None:
        detail.load_state_dict(resume.state)
        opt.load_state_dict(resume.optimizer)
        start, history = resume.iteration, list(resume.history)

    out = Path(config.output_dir)
    loss_log = _LossLog(out / "stage2_loss.log" if config.output_dir else None, _header(config), append=resume is not None)
    weights = config.effective_weights()
    low_cache: dict[int, torch.Tensor] = {}

    def snapshot(step):
        return Checkpoint("detail", _state_copy(detail), opt.state_dict(), step, config.to_dict(), history[-200:])

    for step in range(start, config.iterations):
        idx = sampler.indices(step, config.batch_size)
        x_c = torch.stack([sampler[i] for i in idx])
        if base is not None:
            for i in idx:
                if i not in low_cache:
                    with torch.no_grad():
                        low_cache[i] = base_forward(_down(sampler[i], config.levels).unsqueeze(0), style_low, encoder, base)[0]
            x_cs_low = torch.stack([low_cache[i] for i in idx])
        else:
            x_cs_low = None
        result = full_stylize(x_c, style.expand_as(x_c), encoder, None, detail, use_eis=not config.no_eis, x_cs_low=x_cs_low)
        with torch.no_grad():
            content_feats = encoder(x_c, upto="4_1")
        report = stage2_objective(
            x_c, style, result.raw, encoder, weights, config.max_samples, config.seed, step,
            target_features={"c": content_feats, "s": style_feats},
        )
        _check_finite(step, report)
        if report.total.requires_grad:
            opt.zero_grad()
            report.total.backward()
            opt.step()
        history.append({"step": step, **report.values(), "total": float(report.total.detach())})
        loss_log.write(report.log_line(step))
        if on_step is not None:
            on_step(step, report, result)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0 and config.output_dir:
            save_checkpoint(snapshot(step + 1), out / "stage2.ckpt")

    ckpt = snapshot(max(start, config.iterations))
    if config.output_dir:
        save_checkpoint(ckpt, out / "stage2.ckpt")
    return ckpt


def read_loss_log(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        step, *fields = line.split(",")
        row = {"step": int(step)}
        row.update({k: float(v) for k, v in (f.split(":", 1) for f in fields)})
        rows.append(row)
    return rows


def plot_loss_log(log_path, png_path) -> Path | None:
    """Line chart of every logged term; returns None when matplotlib is unavailable."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib unavailable; skipping loss plot (the CSV log is authoritative)")
        return None
    rows = read_loss_log(log_path)
    if not rows:
        return None
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in rows[0]:
        if key != "step":
            ax.plot(steps, [r[key] for r in rows], label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog")
    ax.legend()
    fig.tight_layout()
    png_path = Path(png_path)
    fig.savefig(png_path)
    plt.close(fig)
    return png_path
