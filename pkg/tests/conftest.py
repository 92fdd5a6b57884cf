import numpy as np
import pytest

from catelab import LearnerSpec, make_dataset, single_learner_stack

ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ridge_spec():
    return LearnerSpec(kind="ridge", penalty=1e-3, seed=1)


@pytest.fixture
def tree_spec():
    return LearnerSpec(kind="regression_tree", max_depth=3, min_node_size=2, seed=1)


@pytest.fixture
def boost_spec():
    return LearnerSpec(kind="gradient_boosting", n_rounds=30, max_depth=2, seed=1)


@pytest.fixture
def forest_spec():
    return LearnerSpec(kind="random_forest", n_trees=10, min_node_size=3, seed=1)


@pytest.fixture
def ridge_stack(ridge_spec):
    return single_learner_stack(ridge_spec)


@pytest.fixture
def small_rct(rng):
    """n=120 RCT with a linear effect and linear baseline."""
    n = 120
    x = rng.standard_normal((n, 3))
    d = (rng.random(n) < 0.5).astype(int)
    tau = 1.5 * x[:, 0]
    y = tau * d + x[:, 1] + rng.normal(0, 0.3, n)
    return make_dataset(y, d, x), tau
