"""Loss terms and the two training objectives.

Feature arguments are bundles ``{tag: tensor}`` with tensors shaped
``(C, H, W)`` or ``(N, C, H, W)``. Every ``||.||`` is the Euclidean norm of
the flattened difference (not squared), taken per sample and averaged over
the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .features import FEATURE_TAGS, VGGEncoder, calc_mean_std, normalize_mv

__all__ = [
    "CONTENT_TAGS_STAGE1",
    "LossReport",
    "LossWeights",
    "STAGE2_TAGS",
    "cosine_distance",
    "identity_loss",
    "mean_variance_loss",
    "perceptual_content_loss",
    "remd_from_cost",
    "remd_loss",
    "self_similarity_loss",
    "stage1_objective",
    "stage2_objective",
    "subsample_generator",
]

COS_EPS = 1e-8
CONTENT_TAGS_STAGE1 = ("4_1", "5_1")
STAGE2_TAGS = ("1_1", "2_1", "3_1", "4_1")
MATCHING_TAGS = ("3_1", "4_1")


@dataclass
class LossWeights:
    # stage 1
    content: float = 1.0
    style: float = 3.0
    identity_pixel: float = 1.0
    identity_feature: float = 50.0
    # stage 2
    alpha: float = 1.0
    perceptual: float = 1.0
    self_similarity: float = 15.0
    mean_variance: float = 50.0
    remd: float = 80.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")


@dataclass
class LossReport:
    """Per-term values and the weighted total for one step."""

    terms: dict[str, torch.Tensor]
    total: torch.Tensor
    coefficients: dict[str, float] = field(default_factory=dict)
    seed: int | None = None

    def values(self) -> dict[str, float]:
        return {k: float(v.detach()) for k, v in self.terms.items()}

    def recombine(self) -> float:
        """Weighted sum of the reported terms, recomputed from the coefficients."""
        return sum(self.coefficients[k] * v for k, v in self.values().items())

    def log_line(self, step: int) -> str:
        parts = [str(step)] + [f"{k}:{v:.9g}" for k, v in self.values().items()]
        return ",".join(parts + [f"total:{float(self.total.detach()):.9g}"])


def _batch(t: torch.Tensor) -> torch.Tensor:
    return t.unsqueeze(0) if t.dim() == 3 else t


def _per_sample_norm(diff: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(diff.flatten(1), dim=1).mean()


def _require(bundle: dict, tags) -> None:
    for t in tags:
        if t not in bundle:
            raise KeyError(f"feature bundle is missing layer {t}")


def mean_variance_loss(F_cs: dict, F_s: dict, layers=FEATURE_TAGS) -> torch.Tensor:
    """Distance between per-channel means plus distance between per-channel stds."""
    _require(F_cs, layers)
    _require(F_s, layers)
    total = 0.0
    for t in layers:
        a, b = _batch(F_cs[t]), _batch(F_s[t])
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"layer {t}: channel counts differ ({a.shape[1]} vs {b.shape[1]})")
        mu_a, sd_a = calc_mean_std(a)
        mu_b, sd_b = calc_mean_std(b)
        mu_b, sd_b = mu_b.expand_as(mu_a), sd_b.expand_as(sd_a)
        total = total + _per_sample_norm(mu_a - mu_b) + _per_sample_norm(sd_a - sd_b)
    return torch.as_tensor(total)


def perceptual_content_loss(F_cs: dict, F_c: dict, layers=FEATURE_TAGS) -> torch.Tensor:
    _require(F_cs, layers)
    _require(F_c, layers)
    total = 0.0
    for t in layers:
        a, b = _batch(F_cs[t]), _batch(F_c[t])
        if a.shape != b.shape:
            raise ValueError(f"layer {t}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
        total = total + _per_sample_norm(normalize_mv(a) - normalize_mv(b))
    return torch.as_tensor(total)


def cosine_distance(x: torch.Tensor, y: torch.Tensor, eps: float = COS_EPS) -> torch.Tensor:
    """Pairwise ``1 - cos`` between rows of ``x`` (..., M, C) and ``y`` (..., K, C)."""
    xn = x / torch.linalg.vector_norm(x, dim=-1, keepdim=True).clamp_min(eps)
    yn = y / torch.linalg.vector_norm(y, dim=-1, keepdim=True).clamp_min(eps)
    return 1.0 - xn @ yn.transpose(-1, -2)


def remd_from_cost(cost: torch.Tensor) -> torch.Tensor:
    """Relaxed EMD: the larger of the two one-sided mean nearest-neighbour costs."""
    rows = cost.min(dim=-1).values.mean(dim=-1)
    cols = cost.min(dim=-2).values.mean(dim=-1)
    return torch.maximum(rows, cols)


def subsample_generator(seed: int, step: int, layer: str) -> torch.Generator:
    """Independent, reproducible stream per (seed, step, layer)."""
    layer_key = sum(ord(ch) * 31**i for i, ch in enumerate(layer))
    state = np.random.SeedSequence([seed, step, layer_key]).generate_state(1, dtype=np.uint64)[0]
    return torch.Generator().manual_seed(int(state) & ((1 << 63) - 1))


def _positions(feat: torch.Tensor) -> torch.Tensor:
    # N x C x H x W -> N x HW x C
    return feat.flatten(2).transpose(1, 2)


def _sample_index(count: int, max_samples: int | None, gen: torch.Generator | None, device) -> torch.Tensor | None:
    if max_samples is None or count <= max_samples:
        return None
    return torch.randperm(count, generator=gen)[:max_samples].to(device)


def remd_loss(F_cs: dict, F_s: dict, layers=MATCHING_TAGS, max_samples: int | None = 1024, seed: int = 0, step: int = 0) -> torch.Tensor:
    _require(F_cs, layers)
    _require(F_s, layers)
    total = 0.0
    for t in layers:
        cs, s = _positions(_batch(F_cs[t])), _positions(_batch(F_s[t]))
        if s.shape[0] != cs.shape[0]:
            s = s.expand(cs.shape[0], -1, -1)
        gen = subsample_generator(seed, step, t)
        idx_s = _sample_index(s.shape[1], max_samples, gen, s.device)
        idx_cs = _sample_index(cs.shape[1], max_samples, gen, cs.device)
        if idx_s is not None:
            s = s[:, idx_s]
        if idx_cs is not None:
            cs = cs[:, idx_cs]
        total = total + remd_from_cost(cosine_distance(s, cs)).mean()
    return torch.as_tensor(total)


def _row_normalize(d: torch.Tensor, eps: float = COS_EPS) -> torch.Tensor:
    return d / d.sum(dim=-1, keepdim=True).clamp_min(eps)


def self_similarity_loss(F_cs: dict, F_c: dict, layers=MATCHING_TAGS, max_samples: int | None = 1024, seed: int = 0, step: int = 0) -> torch.Tensor:
    """Mean absolute difference of row-normalized self cosine-distance matrices."""
    _require(F_cs, layers)
    _require(F_c, layers)
    total = 0.0
    for t in layers:
        cs, c = _positions(_batch(F_cs[t])), _positions(_batch(F_c[t]))
        if cs.shape[1:] != c.shape[1:]:
            raise ValueError(f"layer {t}: shape mismatch between stylized and content features")
        idx = _sample_index(c.shape[1], max_samples, subsample_generator(seed, step, t), c.device)
        if idx is not None:
            cs, c = cs[:, idx], c[:, idx]
        d_c = _row_normalize(cosine_distance(c, c))
        d_cs = _row_normalize(cosine_distance(cs, cs))
        total = total + (d_c - d_cs).abs().mean(dim=(-2, -1)).mean()
    return torch.as_tensor(total)


def identity_loss(x_cc, x_c, x_ss, x_s, encoder: VGGEncoder, lambda_pixel: float = 1.0, lambda_feature: float = 50.0,
                  pixel_weight_mode: str = "pair", features: dict | None = None) -> torch.Tensor:
    """Penalty for failing to reproduce an image given it as both content and style.

    ``pixel_weight_mode="pair"`` scales both pixel terms by ``lambda_pixel``;
    ``"first"`` scales only the content term. ``features`` may carry
    precomputed bundles under keys ``cc``, ``c``, ``ss``, ``s``.
    """
    for name, a, b in (("x_cc", x_cc, x_c), ("x_ss", x_ss, x_s)):
        if a.shape != b.shape:
            raise ValueError(f"{name} shape {tuple(a.shape)} does not match its target {tuple(b.shape)}")
    x_cc, x_c, x_ss, x_s = map(_batch, (x_cc, x_c, x_ss, x_s))
    pix_c = _per_sample_norm(x_cc - x_c)
    pix_s = _per_sample_norm(x_ss - x_s)
    if pixel_weight_mode == "pair":
        pixel = lambda_pixel * (pix_c + pix_s)
    elif pixel_weight_mode == "first":
        pixel = lambda_pixel * pix_c + pix_s
    else:
        raise ValueError(f"unknown pixel_weight_mode {pixel_weight_mode!r}")
    if lambda_feature == 0:
        return pixel
    feats = features or {}
    f_cc = feats.get("cc") or encoder(x_cc)
    f_c = feats.get("c") or encoder(x_c)
    f_ss = feats.get("ss") or encoder(x_ss)
    f_s = feats.get("s") or encoder(x_s)
    feature = 0.0
    for t in FEATURE_TAGS:
        feature = feature + _per_sample_norm(f_cc[t] - f_c[t]) + _per_sample_norm(f_ss[t] - f_s[t])
    return pixel + lambda_feature * feature


def stage1_objective(x_c, x_s, x_cs, x_cc, x_ss, encoder: VGGEncoder, weights: LossWeights | None = None,
                     pixel_weight_mode: str = "pair") -> LossReport:
    """Content (4_1, 5_1) + style (1_1..5_1) + identity losses for the base network."""
    w = weights or LossWeights()
    x_c, x_s, x_cs = map(_batch, (x_c, x_s, x_cs))
    f_c, f_s, f_cs = encoder(x_c), encoder(x_s), encoder(x_cs)
    l_c = perceptual_content_loss(f_cs, f_c, CONTENT_TAGS_STAGE1)
    l_s = mean_variance_loss(f_cs, f_s, FEATURE_TAGS)
    l_i = identity_loss(x_cc, x_c, x_ss, x_s, encoder, w.identity_pixel, w.identity_feature, pixel_weight_mode,
                        features={"c": f_c, "s": f_s})
    terms = {"L_c": l_c, "L_s": l_s, "L_i": l_i}
    coefficients = {"L_c": w.content, "L_s": w.style, "L_i": 1.0}
    total = w.content * l_c + w.style * l_s + l_i
    return LossReport(terms, total, coefficients)


def stage2_objective(x_c, x_s, x_cs, encoder: VGGEncoder, weights: LossWeights | None = None, max_samples: int | None = 1024,
                     seed: int = 0, step: int = 0, target_features: dict | None = None) -> LossReport:
    """Perceptual, self-similarity, mean-variance and rEMD losses for the detail network.

    Terms with a zero weight are not evaluated and report 0. Pass
    ``target_features={"c": ..., "s": ...}`` to reuse fixed content/style features.
    """
    w = weights or LossWeights()
    coefficients = {
        "l_p": w.alpha * w.perceptual,
        "l_ss": w.alpha * w.self_similarity,
        "l_mv": w.mean_variance,
        "l_r": w.remd,
    }
    targets = target_features or {}
    f_cs = encoder(_batch(x_cs), upto="4_1")
    f_c = targets.get("c") or encoder(_batch(x_c), upto="4_1")
    f_s = targets.get("s") or encoder(_batch(x_s), upto="4_1")
    zero = f_cs["1_1"].new_zeros(())
    terms = {
        "l_p": perceptual_content_loss(f_cs, f_c, STAGE2_TAGS) if coefficients["l_p"] else zero,
        "l_ss": self_similarity_loss(f_cs, f_c, MATCHING_TAGS, max_samples, seed, step) if coefficients["l_ss"] else zero,
        "l_mv": mean_variance_loss(f_cs, f_s, STAGE2_TAGS) if coefficients["l_mv"] else zero,
        "l_r": remd_loss(f_cs, f_s, MATCHING_TAGS, max_samples, seed, step) if coefficients["l_r"] else zero,
    }
    total = zero
    for k, v in terms.items():
        if coefficients[k]:
            total = total + coefficients[k] * v
    return LossReport(terms, total, coefficients, seed=seed)
