import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from abxi.corpus import preprocess, split_leave_one_out  # noqa: E402
from abxi.model import ABXI, ModelConfig  # noqa: E402
from abxi.synthetic import SyntheticSpec, generate_synthetic  # noqa: E402


def tiny_config(**kw):
    base = dict(n_items=20, d=8, max_len=6, n_heads=2, r_d=2, r_i=2, dropout=0.0, n_neg=4, ffn_dim=16)
    base.update(kw)
    return ModelConfig(**base)


def randomize(model, seed=0, scale=0.3):
    """Fill every parameter (including zero-initialised LoRA ups) with noise."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return model


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    return ABXI(tiny_cfg, seed=0).double()


@pytest.fixture(scope="session")
def small_split():
    spec = SyntheticSpec(n_items=60, cluster_size=6, n_interests=5, min_len=6, max_len=12)
    log = generate_synthetic("shared-interest", 120, seed=1, spec=spec)
    return split_leave_one_out(preprocess(log))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
