"""Frozen reference outputs.

Inputs and parameters are built from numpy generators so the fixtures do not
depend on torch's RNG. Regenerate with ``python tests/golden.py`` only when a
deliberate behaviour change is made.
"""

from pathlib import Path

import numpy as np
import torch

FIXTURE = Path(__file__).parent / "fixtures" / "golden.npz"


def fill_params(module: torch.nn.Module, seed: int, scale: float = 0.1) -> torch.nn.Module:
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for _, p in sorted(module.named_parameters()):
            p.copy_(torch.from_numpy(rng.normal(0.0, scale, tuple(p.shape))))
    return module


def image(seed: int, size: int, signed: bool = False) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    arr = rng.normal(0, 0.1, (3, size, size)) if signed else rng.uniform(size=(3, size, size))
    return torch.from_numpy(arr.astype(np.float32))


def encode_case():
    from lapstyle.features import encode, random_encoder_weights

    return encode(image(11, 32), random_encoder_weights(0))


def detail_cases():
    from lapstyle.detail_net import EIS, DetailStep, detail_step1, detail_step2, edge_map

    step1 = fill_params(DetailStep(width=8, n_res=2, use_edge=True), 21)
    eis = fill_params(EIS(8), 22)
    step2 = fill_params(DetailStep(width=8, n_res=2), 23)
    h_1, h_0 = image(31, 16, signed=True), image(32, 32, signed=True)
    x_c_low, x_cs_low, x_c_mid = image(33, 8), image(34, 8), image(35, 16)
    with torch.no_grad():
        h1_hat = detail_step1(h_1, x_c_low, x_cs_low, edge_map(x_c_mid), step1, eis)
        h0_hat = detail_step2(h_0, x_c_mid, h1_hat, step2)
    return h1_hat, h0_hat


def perceptual_case():
    from lapstyle.evaluation import perceptual_distance
    from lapstyle.features import random_encoder_weights

    return perceptual_distance(image(41, 32), image(42, 32), random_encoder_weights(0))


def generate() -> None:
    feats = encode_case()
    h1_hat, h0_hat = detail_cases()
    arrays = {f"encode_{t}": v.detach().numpy() for t, v in feats.items()}
    arrays["h1_hat"] = h1_hat.numpy()
    arrays["h0_hat"] = h0_hat.numpy()
    arrays["perceptual"] = np.array(perceptual_case())
    FIXTURE.parent.mkdir(exist_ok=True)
    np.savez_compressed(FIXTURE, **arrays)


def load() -> dict:
    with np.load(FIXTURE) as data:
        return {k: data[k] for k in data.files}


if __name__ == "__main__":
    generate()
