import numpy as np
import pytest

from tagcomplete.tasks import mask_generate, synth_dataset

# reference instance used by the convergence and descent criteria
REF = dict(n_images=50, m_tags=10, d=16, patches_per_image=8, clusters=3, noise_sigma=0.1, seed=42)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def reference_data():
    patches, T_full, labels = synth_dataset(**REF)
    T_hat, Phi = mask_generate(T_full, 0.3, REF["seed"])
    return patches, T_full, T_hat, Phi


_ACCEPTANCE = []


@pytest.fixture
def record():
    """Record one pass/fail line for the acceptance summary."""

    def _record(criterion, passed, detail):
        _ACCEPTANCE.append((criterion, bool(passed), detail))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
