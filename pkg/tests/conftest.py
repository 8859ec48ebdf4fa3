import numpy as np
import pytest

from amps_lab import corpus as C
from amps_lab import model as M


@pytest.fixture(scope="session")
def vocab():
    return C.build_vocab()


@pytest.fixture(scope="session")
def tiny_cfg(vocab):
    return M.ModelConfig(d_model=8, adapter_dim=4, n_heads=2, ffn_dim=12, n_speech_layers=1,
                         n_text_enc_layers=1, n_dec_layers=1, vocab_size=len(vocab), frame_dim=16)


@pytest.fixture(scope="session")
def small_corpus(vocab):
    spec = C.CorpusSpec(n_train=24, n_valid=8, n_test=10)
    utts, summary = C.generate_corpus(spec, 3, vocab)
    return utts, summary


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """Register one acceptance line: record(criterion, ok, detail)."""

    def _record(criterion: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE.append((criterion, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {crit}: {detail}")
