import numpy as np
import pytest
import torch

from tgrounding.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """A model small enough for per-test training runs."""
    return RunConfig().override(
        model__d_v=8, model__d_l=8, model__d_m=8, model__d_w=8, model__T_m=8, model__heads=2,
        model__blocks=1, data__n_samples=24, data__T=16, data__d_v=8, data__n_events=3,
        train__epochs=2, train__batch_size=8, sampler__K_infer=10,
    )


@pytest.fixture(autouse=True)
def _restore_torch_state():
    state = torch.get_rng_state()
    dtype = torch.get_default_dtype()
    yield
    torch.set_rng_state(state)
    torch.set_default_dtype(dtype)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
