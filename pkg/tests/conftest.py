import numpy as np
import pytest

from dcenet import data
from dcenet.dynmap import MapConfig
from dcenet.encoder import EncoderConfig
from dcenet.cvae import DcenetModel, ModelConfig


def central_diff(f, x, h=1e-6):
    """Numerical gradient of scalar ``f`` at array ``x`` (independent of autodiff)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_map():
    return MapConfig(width=8, height=8)


def tiny_model_config(use_maps=True, map_config=MapConfig(width=8, height=8), seed=0, **kw):
    enc = EncoderConfig(
        d_embed=8,
        d_k=8,
        heads=2,
        attention_layers=2,
        lstm_hidden=6,
        fusion_dim=6,
        use_dynamic_maps=use_maps,
        map_config=map_config,
    )
    return ModelConfig(encoder=enc, z_dim=3, recog_hidden=6, decoder_hidden=6, seed=seed, **kw)


@pytest.fixture
def crossing_windows():
    ws = []
    for s in range(4):
        ws += data.extract_windows(data.synth_scene("crossing", 2, s), scene=f"c{s}")
    return ws


@pytest.fixture
def tiny_model():
    return DcenetModel(tiny_model_config())


def pytest_terminal_summary(terminalreporter):
    import sys

    results = []
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            results = getattr(mod, "ACCEPTANCE_RESULTS", [])
    if results:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in results:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
