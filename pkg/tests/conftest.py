import numpy as np
import pytest

from grcnn.layers import GRCL, GRCLConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_block():
    """Factory for small float64 blocks; keyword arguments go to GRCLConfig."""
    def factory(variant="grcl_improved", iterations=3, seed=0, dtype=np.float64, **kw):
        opts = dict(in_channels=4, out_channels=8, groups_feedforward=1, groups_gate=1)
        opts.update(kw)
        cfg = GRCLConfig(variant=variant, iterations=iterations, **opts)
        return GRCL(cfg, rng=np.random.default_rng(seed), dtype=dtype)
    return factory
