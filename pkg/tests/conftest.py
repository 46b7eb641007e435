import json
from pathlib import Path

import pytest

from latnav import config as cfgmod
from latnav import vae, worldgen

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def demo_config(name="demo.json"):
    return cfgmod.parse_config(json.loads((CONFIGS / name).read_text()))


def model_config(run, ds):
    h, w, c = ds.shape
    m = run.model
    return vae.ModelConfig(m.latent_dim, h, w, c, m.encoder_hidden, m.decoder_hidden, m.likelihood)


def train_demo(name):
    run = demo_config(name)
    ds = worldgen.generate_tour(run.world)
    params = vae.init_model(model_config(run, ds), run.train.seed)
    params, report = vae.train(params, ds.flat(), run.train)
    return ds, params, report


@pytest.fixture(scope="session")
def demo_dataset():
    return worldgen.generate_tour(demo_config().world)


@pytest.fixture(scope="session")
def trained_demo():
    """(dataset, params, report) for the demo world; trained once per session."""
    return train_demo("demo.json")


@pytest.fixture(scope="session")
def trained_aliased():
    return train_demo("demo_aliased.json")


ACCEPTANCE = []  # (criterion number, title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
