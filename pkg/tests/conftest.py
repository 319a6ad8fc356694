import numpy as np
import pytest

from rest_zsar import encoder as E


@pytest.fixture
def tiny():
    """A small encoder (<2k parameters) with a 3-label vocabulary."""
    labels = ["jump high", "run", "swim fast now"]
    vocab = E.build_vocabulary(labels)
    config = E.EncoderConfig(input_feature_dim=4, vocab_size=len(vocab), max_visual_len=5,
                             max_word_len=4, num_seen_classes=3, num_layers=1,
                             hidden_dim=8, num_heads=2, mlp_dim=16, init_std=0.5, seed=3)
    return labels, vocab, config


def random_params(config, seed=0, scale=0.5):
    """Parameters with every entry random, so no gradient path is trivially zero."""
    rng = np.random.default_rng(seed)
    params = E.init_params(config)
    for p in params.values():
        p.data[...] = rng.uniform(-scale, scale, size=p.shape)
    return params


CRITERIA = []


def record(number, name, ok, detail=""):
    """Log one acceptance criterion outcome, then fail the test if it didn't hold."""
    CRITERIA.append((number, name, ok, detail))
    assert ok, f"criterion {number} ({name}) failed: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(CRITERIA):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}")
