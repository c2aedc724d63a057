import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from emofuse import config

settings.register_profile("emofuse", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("emofuse")


def tiny_config(**sections) -> config.RunConfig:
    """Default architecture with a short LM warm start and a tiny step budget."""
    data = {"lm": {"pretrain_steps": 3, "pretrain_batch": 2},
            "curriculum": {"scale": 100000}}
    for sec, vals in sections.items():
        data.setdefault(sec, {}).update(vals)
    return config.from_dict(data)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])
