import struct

import numpy as np
import pytest

WAV_DTYPES = {(1, 16): "<i2", (3, 32): "<f4", (1, 8): "u1"}


def wav_bytes(frames, rate: int, fmt_tag: int = 1, bits: int = 16) -> bytes:
    """Minimal RIFF/WAVE encoder for 1-D or (n_frames, channels) sample arrays."""
    frames = np.asarray(frames)
    if frames.ndim == 1:
        frames = frames[:, None]
    channels = frames.shape[1]
    data = frames.astype(WAV_DTYPES[(fmt_tag, bits)]).tobytes()
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = (b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(data)) + data)
    return b"RIFF" + struct.pack("<I", len(body)) + body


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """The 12 train / 6 test class synthetic corpus, 20 files per class, seed 0."""
    from birdssl.dataset import synth_dataset

    root = tmp_path_factory.mktemp("desk_corpus")
    return root, synth_dataset(root, 12, 6, 20, seed=0)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
