import io

import numpy as np
import pytest

from serfocal.audio import SAMPLE_RATE, write_wav


def sine(freq, seconds, rate=SAMPLE_RATE, amp=1.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def wav_bytes(samples, rate=SAMPLE_RATE, sampwidth=2, channels=1):
    """Encode float samples (frames,) or (frames, channels) as PCM WAV bytes."""
    import wave

    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = np.repeat(x[:, None], channels, axis=1)
    if sampwidth == 1:
        raw = np.clip(np.round(x * 127 + 128), 0, 255).astype(np.uint8).tobytes()
    elif sampwidth == 2:
        raw = np.round(np.clip(x, -1, 1) * 32767).astype("<i2").tobytes()
    elif sampwidth == 3:
        v = np.round(np.clip(x, -1, 1) * 8388607).astype(np.int64).reshape(-1) & 0xFFFFFF
        raw = np.stack([v & 0xFF, (v >> 8) & 0xFF, v >> 16], axis=1).astype(np.uint8).tobytes()
    else:
        raise ValueError(sampwidth)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(x.shape[1])
        wf.setsampwidth(sampwidth)
        wf.setframerate(rate)
        wf.writeframes(raw)
    return buf.getvalue()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tmp_wav(tmp_path):
    def make(samples, name="clip.wav", rate=SAMPLE_RATE):
        path = tmp_path / name
        write_wav(path, samples, rate)
        return path

    return make


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
