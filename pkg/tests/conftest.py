import numpy as np
import pytest
import torch

from maskdiff.model import ModelConfig, init_params
from maskdiff.synthetic import CorruptionConfig, bundled_lexicon_path, gen_dataset, load_lexicon
from maskdiff.training import TrainConfig, train_loop
from maskdiff.vocab import build_vocab, encode_batch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def vocab():
    return build_vocab()


@pytest.fixture(scope="session")
def small_vocab():
    return build_vocab("abcd")


@pytest.fixture(scope="session")
def lexicon(vocab):
    return load_lexicon(bundled_lexicon_path(), vocab, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(vocab, lexicon):
    return gen_dataset([w for w in lexicon if len(w) <= 8][:100], 4000, CorruptionConfig(0.2, 0.05, 0.0), 7, vocab, 8, 32, n_eval=200)


@pytest.fixture(scope="session")
def trained_small(vocab, small_dataset):
    """A briefly trained L=8, D=32 decoder (not converged; good enough to be non-trivial)."""
    texts, X, _, _ = small_dataset.arrays("train")
    cfg = ModelConfig(L=8, vocab_size=vocab.size, D=32, N=2, heads=4, d_ff=64, S=8)
    model = init_params(cfg, 3)
    train_loop(model, TrainConfig(total_steps=300, warmup_steps=30, batch_size=32, lr=2e-3),
               encode_batch(texts, 8, vocab), X, 3, vocab)
    return model


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
