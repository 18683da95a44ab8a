"""Detail enhancement: refine Laplacian residuals into stylized residuals.

Step 1 works at half resolution and receives edge features from the EIS
module (channel self-attention over an edge map). Step 2, and any extra
step stacked for deeper pyramids, refines the next finer residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .base_net import BaseNet, base_forward
from .features import VGGEncoder
from .pyramid import DimensionError, downsample, upsample

__all__ = [
    "EIS",
    "DetailNet",
    "DetailStep",
    "Stylization",
    "channel_attention",
    "detail_step1",
    "detail_step2",
    "edge_map",
    "full_stylize",
]

def edge_map(img: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Per-channel Sobel gradient magnitude scaled by the image's maximum into [0, 1]."""
    squeeze = img.dim() == 3
    x = img.unsqueeze(0) if squeeze else img
    p = F.pad(x, (1, 1, 1, 1), mode="replicate")
    # separable Sobel: central difference first so flat regions give exact zeros
    dx = p[..., :, 2:] - p[..., :, :-2]
    dy = p[..., 2:, :] - p[..., :-2, :]
    gx = dx[..., :-2, :] + 2 * dx[..., 1:-1, :] + dx[..., 2:, :]
    gy = dy[..., :, :-2] + 2 * dy[..., :, 1:-1] + dy[..., :, 2:]
    mag = torch.sqrt(gx * gx + gy * gy)
    peak = mag.amax(dim=(1, 2, 3), keepdim=True).clamp_min(eps)
    out = mag / peak
    return out.squeeze(0) if squeeze else out


def channel_attention(E: torch.Tensor, beta, return_map: bool = False):
    """Channel self-attention: ``R_j = beta * sum_i M[j, i] E_i + E_j``.

    ``M`` is the row-wise softmax of the channel Gram matrix ``<E_i, E_j>``.
    """
    squeeze = E.dim() == 3
    x = E.unsqueeze(0) if squeeze else E
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    gram = torch.bmm(flat, flat.transpose(1, 2))
    m = torch.softmax(gram, dim=-1)
    r = beta * torch.bmm(m, flat).view(n, c, h, w) + x
    if squeeze:
        r, m = r.squeeze(0), m.squeeze(0)
    return (r, m) if return_map else r


def _conv3(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.ReflectionPad2d(1), nn.Conv2d(cin, cout, 3))


class EIS(nn.Module):
    """Edge information selection: conv, channel attention gated by ``beta``, conv."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.conv_in = _conv3(3, channels)
        self.beta = nn.Parameter(torch.zeros(1))
        self.conv_out = _conv3(channels, channels)

    def forward(self, x_e: torch.Tensor) -> torch.Tensor:
        return self.conv_out(channel_attention(self.conv_in(x_e), self.beta))


class ResBlock(nn.Module):
    def __init__(self, channels: int, slope: float):
        super().__init__()
        self.body = nn.Sequential(_conv3(channels, channels), nn.LeakyReLU(slope), _conv3(channels, channels))

    def forward(self, x):
        return x + self.body(x)


class DetailStep(nn.Module):
    """Shallow residual trunk mapping 9 stacked channels to a 3-channel residual."""

    def __init__(self, width: int = 64, n_res: int = 3, slope: float = 0.2, use_edge: bool = False):
        super().__init__()
        self.width = width
        self.use_edge = use_edge
        self.head = nn.Sequential(_conv3(9, width), nn.LeakyReLU(slope), _conv3(width, width), nn.LeakyReLU(slope))
        self.merge = _conv3(2 * width, width) if use_edge else None
        self.body = nn.Sequential(*[ResBlock(width, slope) for _ in range(n_res)])
        self.out = _conv3(width, 3)
        # zero residuals at init: training starts from plain pyramid reconstruction
        nn.init.zeros_(self.out[1].weight)
        nn.init.zeros_(self.out[1].bias)

    def forward(self, x: torch.Tensor, f_e: torch.Tensor | None = None) -> torch.Tensor:
        y = self.head(x)
        if self.use_edge:
            if f_e is None:
                f_e = torch.zeros_like(y)
            y = self.merge(torch.cat([y, f_e], dim=1))
        return self.out(self.body(y))


class DetailNet(nn.Module):
    def __init__(self, levels: int = 2, width: int = 64, n_res: int = 3, slope: float = 0.2):
        super().__init__()
        if levels < 2:
            raise ValueError("the detail network needs at least a 2-level pyramid")
        self.levels = levels
        self.eis = EIS(width)
        self.step1 = DetailStep(width, n_res, slope, use_edge=True)
        self.step2 = DetailStep(width, n_res, slope)
        # one more step-2 style refiner per extra pyramid level
        self.extra = nn.ModuleList(DetailStep(width, n_res, slope) for _ in range(levels - 2))

    def refiners(self) -> list[DetailStep]:
        return [self.step2, *self.extra]


def _batched(*tensors):
    squeeze = tensors[0].dim() == 3
    return squeeze, [t.unsqueeze(0) if t.dim() == 3 else t for t in tensors]


def _check_size(name: str, t: torch.Tensor, size) -> None:
    if tuple(t.shape[-2:]) != tuple(size):
        raise DimensionError(f"{name} has size {tuple(t.shape[-2:])}, expected {tuple(size)}")


def detail_step1(h_1, x_c_low, x_cs_low, x_e, step: DetailStep, eis: EIS | None) -> torch.Tensor:
    """First refinement; pass ``eis=None`` to drop the edge branch (ablation)."""
    squeeze, (h_1, x_c_low, x_cs_low, x_e) = _batched(h_1, x_c_low, x_cs_low, x_e)
    half = (h_1.shape[-2] // 2, h_1.shape[-1] // 2)
    _check_size("x_c_low", x_c_low, half)
    _check_size("x_cs_low", x_cs_low, half)
    _check_size("x_e", x_e, h_1.shape[-2:])
    inp = torch.cat([h_1, upsample(x_c_low), upsample(x_cs_low.expand_as(x_c_low))], dim=1)
    f_e = eis(x_e) if eis is not None else None
    out = step(inp, f_e)
    return out.squeeze(0) if squeeze else out


def detail_step2(h_0, x_c_mid, h1_hat, step: DetailStep) -> torch.Tensor:
    squeeze, (h_0, x_c_mid, h1_hat) = _batched(h_0, x_c_mid, h1_hat)
    half = (h_0.shape[-2] // 2, h_0.shape[-1] // 2)
    _check_size("x_c_mid", x_c_mid, half)
    _check_size("h1_hat", h1_hat, half)
    out = step(torch.cat([upsample(x_c_mid), h_0, upsample(h1_hat)], dim=1))
    return out.squeeze(0) if squeeze else out


@dataclass
class Stylization:
    """Result of a full pass, with the pieces needed for inspection and training.

    ``raw`` is the unclamped reconstruction (differentiable); ``image`` is
    clamped to [0, 1]. ``stages`` runs coarse to fine: the low-resolution
    stylized base, then each partial reconstruction. ``low_source`` records
    whether the base came from the base network or the content pyramid.
    """

    raw: torch.Tensor
    x_cs_low: torch.Tensor
    residuals_hat: list[torch.Tensor]
    stages: list[torch.Tensor] = field(default_factory=list)
    low_source: str = "base_net"
    content_low: torch.Tensor | None = None

    @property
    def image(self) -> torch.Tensor:
        return self.raw.clamp(0.0, 1.0)


def full_stylize(
    x_c: torch.Tensor,
    x_s: torch.Tensor,
    encoder: VGGEncoder,
    base: BaseNet | None,
    detail: DetailNet,
    use_eis: bool = True,
    x_cs_low: torch.Tensor | None = None,
) -> Stylization:
    """Decompose, stylize the base, refine residuals and reconstruct.

    With ``base=None`` the content's own low-frequency image stands in for
    the stylized base. A precomputed ``x_cs_low`` skips the base pass.
    """
    squeeze, (x_c, x_s) = _batched(x_c, x_s)
    levels = detail.levels
    divisor = 2**levels
    h, w = x_c.shape[-2:]
    if h % divisor or w % divisor:
        raise DimensionError(f"content {h}x{w} must be divisible by {divisor} for a {levels}-level pyramid")
    chain = [x_c]  # chain[k] = content downsampled k times
    for _ in range(levels):
        chain.append(downsample(chain[-1]))
    residuals = [chain[k] - upsample(chain[k + 1]) for k in range(levels)]
    low = chain[levels]

    low_source = "base_net"
    if x_cs_low is None:
        if base is None:
            x_cs_low, low_source = low, "content"
        else:
            s_low = x_s
            for _ in range(levels):
                s_low = downsample(s_low)
            x_cs_low = base_forward(low, s_low, encoder, base)
    elif x_cs_low.dim() == 3:
        x_cs_low = x_cs_low.unsqueeze(0)

    x_e = edge_map(chain[levels - 1])
    hats = [None] * levels
    hats[levels - 1] = detail_step1(
        residuals[levels - 1], low, x_cs_low, x_e, detail.step1, detail.eis if use_eis else None
    )
    refiners = detail.refiners()
    for k in range(levels - 2, -1, -1):
        hats[k] = detail_step2(residuals[k], chain[k + 1], hats[k + 1], refiners[levels - 2 - k])

    stages = [x_cs_low]
    x = x_cs_low
    for k in range(levels - 1, -1, -1):
        x = upsample(x) + hats[k]
        stages.append(x)

    if squeeze:
        x = x.squeeze(0)
        x_cs_low = x_cs_low.squeeze(0)
        hats = [t.squeeze(0) for t in hats]
        stages = [t.squeeze(0) for t in stages]
        low = low.squeeze(0)
    return Stylization(raw=x, x_cs_low=x_cs_low, residuals_hat=hats, stages=stages, low_source=low_source, content_low=low)
