import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest
import torch

from maskattack.data import generate_dataset, make_benchmark
from maskattack.model import ToyModelSpec, ToySegmenter, default_classifier, default_segmenter

TINY_SIZE = 24
BENCH_SEED = 7
N_SCENES = 32


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """Untrained 24x24 segmenter with a positive head bias so clean masks are non-empty."""
    torch.manual_seed(3)
    model = ToySegmenter(ToyModelSpec(widths=(4, 8), image_size=TINY_SIZE))
    model.net.head.bias.fill_(0.5)
    path = tmp_path_factory.mktemp("ckpt") / "tiny.pt"
    model.save(path)
    return path


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    from maskattack.cli import main

    out = tmp_path_factory.mktemp("data") / "d"
    assert main(["gen-data", "--scenes", "4", "--seed", "1", "--size", str(TINY_SIZE),
                 "--max-objects", "1", "--out", str(out)]) == 0
    return out


# bundled pretrained models and the 32-scene benchmark they are measured on

@pytest.fixture(scope="session")
def segmenter():
    return default_segmenter()


@pytest.fixture(scope="session")
def classifier():
    return default_classifier()


@pytest.fixture(scope="session")
def bench_scenes():
    return generate_dataset(N_SCENES, BENCH_SEED, prefix="bench")


@pytest.fixture(scope="session")
def bench(bench_scenes):
    return make_benchmark(bench_scenes.scenes, 1, seed=BENCH_SEED)
