import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY = dict(width=8, heads=2, heat_resolution=8, base_tile_size=8, feature_grid=2, tile_resolution=4,
            max_tiles=4, scorer_hidden=4, batch_size=4, steps=3)


def tiny_cfg(**kw):
    from impeval.config import TrainConfig
    return TrainConfig(**{**TINY, **kw})


def tiny_corpus(n, seed=1):
    from impeval.corpus import GenConfig, generate_corpus
    return generate_corpus(n, seed, GenConfig(size_range=(12, 24), heat_resolution=8,
                                              global_area=(0.12, 0.3), local_side=(1, 2)))


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
