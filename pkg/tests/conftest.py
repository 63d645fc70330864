import pytest

from mtst.model import LayerConfig, ModelConfig
from mtst.tokenizer import BranchConfig


def toy_config(pe="rpe", n_layers=2, **kw):
    layer = LayerConfig((BranchConfig(4, 2, heads=2), BranchConfig(8, 4, heads=2)))
    return ModelConfig(32, 8, tuple(layer for _ in range(n_layers)), ffn_hidden=16, pe=pe, **kw)


@pytest.fixture
def toy():
    return toy_config()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
