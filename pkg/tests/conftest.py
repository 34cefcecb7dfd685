import numpy as np
import pytest

from vdr.synthetic import SyntheticConfig, gen_synthetic, synthetic_vocab


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_world():
    """Small synthetic corpus for fast model-level tests."""
    cfg = SyntheticConfig(n_dialogs=3, n_rounds=4, n_cand=5, vocab_size=30, d_img=6,
                          k_range=(2, 4), n_clusters=4, embed_dim=6, seed=3)
    dialogs, store, oracle = gen_synthetic(cfg)
    return cfg, dialogs, store, oracle, synthetic_vocab(cfg)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        request.config.stash.setdefault(ACCEPTANCE, []).append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.line(line)
