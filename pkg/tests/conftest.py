from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from lapstyle.features import VGGEncoder, random_encoder_weights, save_encoder_weights

torch.set_num_threads(max(1, torch.get_num_threads()))

FIXTURES = Path(__file__).parent / "fixtures"


def make_toy_dataset(root: Path, n: int = 5, size: int = 160, seed: int = 0) -> Path:
    """Smooth gradients with a coloured disc as content; dark vertical strokes on paper as style."""
    rng = np.random.default_rng(seed)
    content = root / "content"
    content.mkdir(parents=True, exist_ok=True)
    yy, xx = np.mgrid[0:size, 0:size] / size
    for i in range(n):
        img = np.stack([yy * rng.uniform(), xx * rng.uniform(), (1 - yy) * rng.uniform()], -1)
        cy, cx = rng.uniform(0.3, 0.7, 2)
        r = rng.uniform(0.1, 0.3)
        img[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] = rng.uniform(size=3)
        Image.fromarray((img * 255).astype(np.uint8)).save(content / f"c{i}.png")
    style = np.full((size, size, 3), [0.93, 0.9, 0.82])
    for _ in range(12):
        x0, w = rng.integers(0, size), rng.integers(3, 12)
        style[:, x0 : x0 + w] *= rng.uniform(0.2, 0.7)
    style += 0.05 * np.sin(yy * 40)[..., None]
    Image.fromarray((np.clip(style, 0, 1) * 255).astype(np.uint8)).save(root / "style.png")
    return root


@pytest.fixture(scope="session")
def encoder_params():
    return random_encoder_weights(seed=0)


@pytest.fixture(scope="session")
def encoder(encoder_params):
    return VGGEncoder(encoder_params).eval()


@pytest.fixture(scope="session")
def weights_archive(tmp_path_factory, encoder_params):
    return save_encoder_weights(encoder_params, tmp_path_factory.mktemp("weights") / "vgg19_random.npz")


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    return make_toy_dataset(tmp_path_factory.mktemp("toy"))


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


_VERDICTS = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
