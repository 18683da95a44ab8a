"""Frozen VGG-19 encoder truncated at ReLU_5_1.

Weights come from a ``.npz`` archive keyed by canonical layer names
(``conv1_1.weight``, ``conv1_1.bias``, ...). Kernels are stored
out-channels x in-channels x kH x kW. A JSON ``__manifest__`` entry records
the layout and the input normalization the weights were trained with.

No pretrained weights ship with the package. Use
:func:`encoder_weights_from_torchvision` to convert an ImageNet VGG-19
state dict, or :func:`random_encoder_weights` for a deterministic
synthetic encoder (tests and desk-scale demos).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .pyramid import DimensionError

__all__ = [
    "FEATURE_TAGS",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "VGG19_CONVS",
    "ParameterSet",
    "VGGEncoder",
    "WeightArchiveError",
    "calc_mean_std",
    "encode",
    "encoder_weights_from_torchvision",
    "load_encoder_weights",
    "normalize_mv",
    "random_encoder_weights",
    "save_encoder_weights",
]

log = logging.getLogger(__name__)

EPS = 1e-5
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# (name, in_channels, out_channels); a max-pool precedes each conv*_1 after the first block
VGG19_CONVS = (
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv3_4", 256, 256),
    ("conv4_1", 256, 512),
    ("conv4_2", 512, 512),
    ("conv4_3", 512, 512),
    ("conv4_4", 512, 512),
    ("conv5_1", 512, 512),
)
FEATURE_TAGS = ("1_1", "2_1", "3_1", "4_1", "5_1")
# torchvision ``vgg19().features`` indices of the convolutions above
_TORCHVISION_INDEX = (0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28)
_MANIFEST_KEY = "__manifest__"


class WeightArchiveError(ValueError):
    """Raised for missing layers or mis-shaped tensors in a weight archive."""


def expected_shapes() -> dict[str, tuple[int, ...]]:
    shapes = {}
    for name, cin, cout in VGG19_CONVS:
        shapes[f"{name}.weight"] = (cout, cin, 3, 3)
        shapes[f"{name}.bias"] = (cout,)
    return shapes


@dataclass
class ParameterSet:
    """Named tensors with a frozen flag and the manifest they were loaded with."""

    tensors: dict[str, torch.Tensor]
    frozen: bool = True
    manifest: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def layer_names(self) -> list[str]:
        return sorted({k.rsplit(".", 1)[0] for k in self.tensors})

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(self.tensors[name].detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    @property
    def mean(self) -> tuple[float, ...]:
        return tuple(self.manifest.get("preprocess", {}).get("mean", IMAGENET_MEAN))

    @property
    def std(self) -> tuple[float, ...]:
        return tuple(self.manifest.get("preprocess", {}).get("std", IMAGENET_STD))


def _default_manifest(source: str) -> dict:
    return {
        "layout": "OIHW",
        "preprocess": {"space": "RGB in [0,1]", "mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD)},
        "source": source,
    }


def _validate(tensors: dict[str, torch.Tensor]) -> None:
    for name, _, _ in VGG19_CONVS:
        for part in ("weight", "bias"):
            if f"{name}.{part}" not in tensors:
                raise WeightArchiveError(f"missing layer {name} ({name}.{part} not in archive)")
    for key, shape in expected_shapes().items():
        found = tuple(tensors[key].shape)
        if found != shape:
            raise WeightArchiveError(f"shape mismatch for {key}: expected {shape}, found {found}")


def load_encoder_weights(path=None) -> ParameterSet:
    """Load and validate a VGG-19 weight archive.

    ``path`` defaults to the ``LAPSTYLE_WEIGHTS`` environment variable.
    """
    if path is None:
        path = os.environ.get("LAPSTYLE_WEIGHTS")
        if not path:
            raise FileNotFoundError("no encoder weight archive given and LAPSTYLE_WEIGHTS is unset")
    path = Path(path)
    raw = path.read_bytes()
    sha = hashlib.sha256(raw).hexdigest()
    with np.load(path, allow_pickle=False) as archive:
        manifest = json.loads(str(archive[_MANIFEST_KEY])) if _MANIFEST_KEY in archive.files else {}
        tensors = {k: torch.from_numpy(archive[k].astype(np.float32)) for k in archive.files if k != _MANIFEST_KEY}
    _validate(tensors)
    manifest = {**_default_manifest(str(path)), **manifest, "sha256": sha}
    log.info("loaded encoder weights %s sha256=%s", path, sha)
    return ParameterSet({k: v.requires_grad_(False) for k, v in tensors.items()}, frozen=True, manifest=manifest)


def save_encoder_weights(params: ParameterSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in params.tensors.items()}
    manifest = {k: v for k, v in params.manifest.items() if k != "sha256"}
    arrays[_MANIFEST_KEY] = np.array(json.dumps(manifest or _default_manifest("unknown")))
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)
    return path


def random_encoder_weights(seed: int = 0) -> ParameterSet:
    """Deterministic He-initialized VGG-19 weights (a synthetic, untrained encoder)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, cin, cout in VGG19_CONVS:
        std = np.sqrt(2.0 / (cin * 9))
        tensors[f"{name}.weight"] = torch.from_numpy(rng.normal(0.0, std, (cout, cin, 3, 3)).astype(np.float32))
        tensors[f"{name}.bias"] = torch.zeros(cout)
    return ParameterSet(tensors, frozen=True, manifest=_default_manifest(f"random(seed={seed})"))


def encoder_weights_from_torchvision(state_dict: dict) -> ParameterSet:
    """Convert a torchvision ``vgg19`` state dict (``features.N.weight`` keys)."""
    tensors = {}
    for (name, _, _), idx in zip(VGG19_CONVS, _TORCHVISION_INDEX):
        tensors[f"{name}.weight"] = state_dict[f"features.{idx}.weight"].detach().float().clone()
        tensors[f"{name}.bias"] = state_dict[f"features.{idx}.bias"].detach().float().clone()
    _validate(tensors)
    return ParameterSet(tensors, frozen=True, manifest=_default_manifest("torchvision vgg19 IMAGENET1K_V1"))


def calc_mean_std(feat: torch.Tensor, eps: float = EPS) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel spatial mean and standard deviation, std floored at ``eps``.

    Flooring (rather than adding eps under the root) keeps exact values for
    non-degenerate channels and a finite zero gradient for constant ones.
    """
    mean = feat.mean(dim=(-2, -1), keepdim=True)
    var = feat.var(dim=(-2, -1), keepdim=True, unbiased=False)
    return mean, var.clamp_min(eps * eps).sqrt()


def normalize_mv(feat: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    mean, std = calc_mean_std(feat, eps)
    return (feat - mean) / std


class VGGEncoder(nn.Module):
    """VGG-19 feature extractor returning activations after each ReLU_t_1.

    Convolutions use reflection padding of 1, so a spatially constant
    input yields spatially constant features.
    """

    def __init__(self, params: ParameterSet):
        super().__init__()
        for name, _, _ in VGG19_CONVS:
            self.register_buffer(f"{name}_weight", params[f"{name}.weight"].detach().clone())
            self.register_buffer(f"{name}_bias", params[f"{name}.bias"].detach().clone())
        self.register_buffer("mean", torch.tensor(params.mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(params.std).view(1, 3, 1, 1))

    def _conv(self, x: torch.Tensor, name: str) -> torch.Tensor:
        # reflection is undefined on a 1-pixel axis; replicate coincides with it otherwise
        mode = "reflect" if min(x.shape[-2:]) > 1 else "replicate"
        x = F.pad(x, (1, 1, 1, 1), mode=mode)
        return F.relu(F.conv2d(x, getattr(self, f"{name}_weight"), getattr(self, f"{name}_bias")))

    def forward(self, img: torch.Tensor, upto: str = "5_1") -> dict[str, torch.Tensor]:
        if upto not in FEATURE_TAGS:
            raise ValueError(f"unknown feature tag {upto!r}")
        squeeze = img.dim() == 3
        x = img.unsqueeze(0) if squeeze else img
        divisor = 2 ** FEATURE_TAGS.index(upto)
        h, w = x.shape[-2:]
        if h % divisor or w % divisor:
            raise DimensionError(f"encoder input {h}x{w} must be divisible by {divisor} to reach ReLU_{upto}")
        x = (x - self.mean) / self.std
        feats = {}
        for name, _, _ in VGG19_CONVS:
            block, idx = name[4:].split("_")
            if idx == "1" and block != "1":
                x = F.max_pool2d(x, 2)
            x = self._conv(x, name)
            tag = f"{block}_{idx}"
            if tag in FEATURE_TAGS:
                feats[tag] = x.squeeze(0) if squeeze else x
                if tag == upto:
                    break
        return feats


def encode(img: torch.Tensor, params: ParameterSet, upto: str = "5_1") -> dict[str, torch.Tensor]:
    """One-shot feature extraction; build a :class:`VGGEncoder` once for repeated use."""
    encoder = VGGEncoder(params).to(dtype=img.dtype, device=img.device)
    return encoder(img, upto=upto)
