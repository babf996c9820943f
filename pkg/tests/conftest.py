import numpy as np
import pytest

from opinionxf.dataset import GeneratorConfig, TopicSpec, default_generator_config, generate_synthetic


def small_generator(n=60, seed=0, **kw):
    cfg = default_generator_config(n, seed)
    for k, v in kw.items():
        setattr(cfg, k, v)
    cfg.validate()
    return cfg


def flat_topic(name, p, c=0.0, consensus=0, keywords=None):
    return TopicSpec(name, p, c, consensus, keywords or [name])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_records():
    return generate_synthetic(small_generator(60, seed=5))


@pytest.fixture
def two_topic_config():
    return GeneratorConfig(
        topics=[flat_topic("alpha", 0.3), flat_topic("beta", 0.1, 0.2, 1)],
        n_participants=40, n_questions=3, answers_per_question=[3, 4, 3], noise_prob=0.0, seed=9,
    )


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
