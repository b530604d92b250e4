import numpy as np
import pytest

from featinject.backbone import BackboneCheckpoint, ToyBackbone, init_checkpoint
from featinject.toymodel import load_toy_backbone


def jittered_checkpoint(seed: int = 3) -> BackboneCheckpoint:
    """Untrained weights with the zero-initialised output layers filled in,
    so every site actually influences the prediction."""
    ckpt = init_checkpoint(seed=seed)
    rng = np.random.default_rng(seed)
    params = {}
    for name, value in ckpt.params.items():
        if name.endswith("weight") and not value.any():
            value = (0.05 * rng.standard_normal(value.shape)).astype(np.float32)
        params[name] = value
    return BackboneCheckpoint(ckpt.arch, params, ckpt.schedule_kind, ckpt.num_train_steps, ckpt.meta)


@pytest.fixture(scope="session")
def random_backbone():
    return ToyBackbone(jittered_checkpoint())


@pytest.fixture(scope="session")
def toy_backbone():
    """The shared trained checkpoint (trained once, ~15 min, if absent)."""
    return load_toy_backbone()


@pytest.fixture(scope="session")
def toy_image():
    from featinject.data import data_path
    from featinject.imageio import load_image

    return load_image(data_path("toy_bench/real_05.png"))


# --- acceptance reporting ----------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


class AcceptanceReport:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.details = number, title, []

    def note(self, text: str) -> None:
        self.details.append(text)

    def finish(self, ok: bool) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {self.number}: {self.title}"
        if self.details:
            line += " (" + "; ".join(self.details) + ")"
        ACCEPTANCE_LINES.append(line)
        print(line)


@pytest.fixture
def criterion():
    """``criterion(n, title)`` opens a report; the pass/fail line is printed when
    the test body finishes or fails."""
    opened = []

    def open_report(number, title):
        opened.append(AcceptanceReport(number, title))
        return opened[-1]

    yield open_report
    for rep in opened:
        if not any(line.startswith(f"PASS criterion {rep.number}:") or line.startswith(f"FAIL criterion {rep.number}:")
                   for line in ACCEPTANCE_LINES):
            rep.finish(False)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
