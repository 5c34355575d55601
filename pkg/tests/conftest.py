import pytest

from dcvd.config import TrainConfig
from dcvd.synthetic import make_synthetic

# acceptance criterion id -> (passed, description); filled from @pytest.mark.acceptance tests
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def small_config(**kw) -> TrainConfig:
    base = dict(d_model=32, d_k=32, node_dim=32, embed_dim=32, ctx_hidden=32, lr=1e-3,
                warmup_steps=5, batch_size=10, epochs=3, dropout=0.0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def tiny_cfg():
    return small_config()


@pytest.fixture(scope="session")
def synthetic20():
    return make_synthetic(20, seed=0)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, description): gate test for acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n, desc = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        prev = ACCEPTANCE.get(n, (True, desc))[0]
        ACCEPTANCE[n] = (prev and rep.passed, desc)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, desc = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d}: {desc}")
