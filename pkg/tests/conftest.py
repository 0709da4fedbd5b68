import numpy as np
import pytest

from transformer_tts.audio import mel_spectrogram, read_wav
from transformer_tts.corpus import TOY_SENTENCES, toy_corpus_dir
from transformer_tts.frontend import Phonemizer
from transformer_tts.model import ModelConfig


@pytest.fixture(scope="session")
def phonemizer():
    return Phonemizer()


@pytest.fixture(scope="session")
def toy_utterances(phonemizer):
    root = toy_corpus_dir()
    return {utt: (np.asarray(phonemizer(text).ids), mel_spectrogram(read_wav(root / f"{utt}.wav")).frames)
            for utt, text in TOY_SENTENCES}


@pytest.fixture
def tiny_config():
    """A few-thousand-parameter model for fast structural tests."""
    return ModelConfig.toy(vocab_size=20, n_mels=6, d_model=16, n_heads=2, ffn_hidden=32,
                           prenet_hidden=8, enc_conv_channels=8, postnet_channels=8)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Call ``report(n, passed, detail)``; lines are echoed now and in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def report(criterion, passed, detail, informational=False):
        tag = "INFO" if informational else ("PASS" if passed else "FAIL")
        line = f"criterion {criterion:>2} {tag}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
