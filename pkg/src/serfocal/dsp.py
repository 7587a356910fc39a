"""Mel spectrogram and MFCC extraction.

Framing: 2048-sample periodic Hann window, hop 512, reflect padding of
1024 samples on each side so a 132300-sample clip gives 259 frames.
"""

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from serfocal.audio import SAMPLE_RATE
from serfocal.errors import DomainError, ShapeError

N_FFT = 2048
HOP = 512
N_BINS = N_FFT // 2 + 1
N_MELS = 128
N_MFCC = 40
TOP_DB = 80.0
AMIN = 1e-10


class FeatureKind(IntEnum):
    SPECTROGRAM = 0
    MFCC = 1

    @property
    def rows(self):
        return N_MELS if self is FeatureKind.SPECTROGRAM else N_MFCC

    @classmethod
    def parse(cls, name):
        key = name.strip().lower()
        if key in ("spectrogram", "spec", "mel"):
            return cls.SPECTROGRAM
        if key == "mfcc":
            return cls.MFCC
        raise ValueError(f"unknown feature kind: {name!r}")


@dataclass(frozen=True)
class FeatureMap:
    values: np.ndarray
    kind: FeatureKind

    @property
    def shape(self):
        return self.values.shape


def mel_scale(f_hz):
    """Hz to mel, ``2595 * log10(1 + f/700)``."""
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise DomainError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(mel):
    m = np.asarray(mel, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def hann_periodic(n=N_FFT):
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def fft_frequencies(sr=SAMPLE_RATE, n_fft=N_FFT):
    return np.arange(n_fft // 2 + 1) * (sr / n_fft)


def mel_band_edges(n_mels=N_MELS, f_min=0.0, f_max=SAMPLE_RATE / 2):
    """The n_mels + 2 mel-uniform edge frequencies in Hz; band m spans
    edges[m]..edges[m+2] and peaks at edges[m+1]."""
    mels = np.linspace(mel_scale(f_min), mel_scale(f_max), n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=4)
def _filterbank(n_mels, sr, n_fft, f_min, f_max):
    edges = mel_band_edges(n_mels, f_min, f_max)
    freqs = fft_frequencies(sr, n_fft)
    weights = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
    weights.setflags(write=False)
    return weights


def mel_filterbank(n_mels=N_MELS, sr=SAMPLE_RATE, n_fft=N_FFT, f_min=0.0, f_max=None):
    """Triangular filters with apex 1, linear in Hz between mel-spaced edges.

    Returns a read-only (n_mels, n_fft//2 + 1) matrix.
    """
    if f_max is None:
        f_max = sr / 2
    return _filterbank(n_mels, sr, n_fft, float(f_min), float(f_max))


def frame_count(n_samples, hop=HOP):
    return 1 + n_samples // hop


def stft_power(samples, n_fft=N_FFT, hop=HOP):
    """Squared-magnitude STFT, shape (n_fft//2 + 1, frames).

    Accepts an ``AudioClip`` or a bare sample array.
    """
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    padded = np.pad(x, n_fft // 2, mode="reflect")
    n_frames = frame_count(len(x), hop)
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    spectrum = np.fft.rfft(frames * hann_periodic(n_fft), axis=1)
    return (spectrum.real**2 + spectrum.imag**2).T


def power_to_db(power, top_db=TOP_DB, amin=AMIN):
    db = 10.0 * np.log10(np.maximum(power, amin))
    return np.maximum(db, db.max() - top_db)


def mel_spectrogram(power, fb=None):
    """Power spectrogram to a 128-band dB mel spectrogram."""
    if fb is None:
        fb = mel_filterbank()
    power = np.asarray(power, dtype=np.float64)
    if power.ndim != 2 or fb.shape[1] != power.shape[0]:
        raise ShapeError(f"filterbank {fb.shape} does not conform to power {power.shape}")
    return FeatureMap(power_to_db(fb @ power), FeatureKind.SPECTROGRAM)


@lru_cache(maxsize=4)
def dct_matrix(n):
    """Orthonormal DCT-II basis, rows are output coefficients."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    basis[0] /= np.sqrt(2.0)
    basis.setflags(write=False)
    return basis


def mfcc(mel_db, n_mfcc=N_MFCC, normalize=False):
    """Per-frame orthonormal DCT-II of a dB mel spectrogram, first 40 kept.

    With ``normalize`` each coefficient row is shifted to zero mean and
    scaled to unit variance over time.
    """
    if isinstance(mel_db, FeatureMap):
        if mel_db.kind is not FeatureKind.SPECTROGRAM:
            raise ShapeError("mfcc expects a spectrogram feature map")
        values = mel_db.values
    else:
        values = np.asarray(mel_db, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != N_MELS:
        raise ShapeError(f"expected {N_MELS} x T mel spectrogram, got {values.shape}")
    coeffs = dct_matrix(N_MELS)[:n_mfcc] @ values
    if normalize:
        std = coeffs.std(axis=1, keepdims=True)
        coeffs = (coeffs - coeffs.mean(axis=1, keepdims=True)) / np.where(std > 0, std, 1.0)
    return FeatureMap(coeffs, FeatureKind.MFCC)


def extract(clip, kind, normalize_mfcc=False):
    """Clip to the requested feature map."""
    samples = clip.samples if hasattr(clip, "samples") else clip
    spec = mel_spectrogram(stft_power(samples))
    if kind is FeatureKind.SPECTROGRAM:
        return spec
    return mfcc(spec, normalize=normalize_mfcc)
