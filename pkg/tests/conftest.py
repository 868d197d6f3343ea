import os

import hypothesis
import numpy as np
import pytest

from sfids import model as M

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def tiny_config(**kw) -> M.ModelConfig:
    base = dict(input_dim=6, num_classes=3, expand_dim=8, channels=2, length=4,
                conv_channels=(3, 2, 3, 2, 4), repr_dim=4, proj_dim=3,
                dropout_rate=0.3, dtype="float64", seed=1)
    base.update(kw)
    return M.ModelConfig(**base)


def jitter(params, seed=0, scale=0.1):
    """Random nonzero biases/weights keep ReLU pre-activations off their kink."""
    rng = np.random.default_rng(seed)
    return {k: a + scale * rng.standard_normal(a.shape) for k, a in params.items()}


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if den == 0 else np.linalg.norm(a - b) / den


def central_diff(f, x, h=1e-5):
    """Numerical gradient of scalar f at array x (x is modified in place and restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


@pytest.fixture
def tiny_cfg():
    return tiny_config()


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
