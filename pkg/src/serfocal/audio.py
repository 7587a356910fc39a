"""PCM WAV decoding and clip standardization."""

import io
import wave
from dataclasses import dataclass

import numpy as np

from serfocal.errors import DecodeError, EmptyInputError

SAMPLE_RATE = 22050
MAX_SECONDS = 6
CLIP_LENGTH = SAMPLE_RATE * MAX_SECONDS  # 132300


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE
    source_id: str = ""


def decode_pcm(raw, sampwidth, nchannels):
    """Convert interleaved little-endian PCM bytes to floats in [-1, 1].

    Returns an array of shape (n_frames, nchannels).
    """
    if sampwidth == 1:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif sampwidth == 2:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif sampwidth == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    elif sampwidth == 4:
        x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    else:
        raise DecodeError(f"unsupported sample width: {sampwidth} bytes")
    usable = len(x) - len(x) % nchannels
    return x[:usable].reshape(-1, nchannels)


def read_wav(source):
    """Read a PCM WAV file (path, bytes or file object).

    Returns ``(samples, sample_rate)`` with samples shaped (frames, channels).
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    try:
        with wave.open(source, "rb") as wf:
            nchannels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DecodeError(f"malformed WAV: {exc}") from exc
    if nchannels < 1 or rate <= 0:
        raise DecodeError(f"bad WAV header: channels={nchannels}, rate={rate}")
    return decode_pcm(raw, sampwidth, nchannels), rate


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    """Write mono float samples as 16-bit PCM."""
    pcm = np.round(np.clip(samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def resample_linear(x, rate_in, rate_out=SAMPLE_RATE):
    """Linear-interpolation resampler."""
    if rate_in == rate_out:
        return np.asarray(x, dtype=np.float64)
    n_out = int(round(len(x) * rate_out / rate_in))
    positions = np.arange(n_out) * (rate_in / rate_out)
    return np.interp(positions, np.arange(len(x)), x)


def fix_length(x, length=CLIP_LENGTH):
    """Truncate to the first ``length`` samples or zero-pad at the tail."""
    if len(x) >= length:
        return x[:length].copy()
    out = np.zeros(length, dtype=np.float64)
    out[: len(x)] = x
    return out


def standardize(samples, rate, source_id=""):
    """Mono-mix, resample to 22050 Hz and fix the clip to 6 s."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise EmptyInputError(f"zero-length audio{': ' + source_id if source_id else ''}")
    mono = resample_linear(samples, rate)
    return AudioClip(fix_length(mono), SAMPLE_RATE, source_id)


def load_and_standardize(wav, source_id=""):
    """Decode WAV content and return a standardized ``AudioClip``.

    ``wav`` may be raw bytes, a path, or a binary file object.
    """
    samples, rate = read_wav(wav)
    return standardize(samples, rate, source_id)
