import contextlib

import pytest

from wavefm.trainer import TrainConfig, train

# desk-scale reference run shared by the trainer and acceptance tests
REFERENCE = dict(flow="rfm", steps_total=2000, n_phantoms=200, size=16, seed=0)

ACCEPTANCE = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record PASS/FAIL for one acceptance criterion; failures still raise."""
    details = []
    try:
        yield details
    except BaseException:
        ACCEPTANCE[number] = ("FAIL", title, details)
        raise
    ACCEPTANCE[number] = ("PASS", title, details)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, details = ACCEPTANCE[number]
        extra = f"  [{'; '.join(details)}]" if details else ""
        terminalreporter.write_line(f"{status} criterion {number:>2}: {title}{extra}")


@pytest.fixture(scope="session")
def trained_full():
    """``(model, rows)`` for the fully conditioned reference run."""
    return train(TrainConfig(**REFERENCE, conditioning="full"))


@pytest.fixture(scope="session")
def trained_uncond():
    return train(TrainConfig(**REFERENCE, conditioning="unconditional"))
