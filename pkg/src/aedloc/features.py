"""Frame-level spectral features for the event classifiers.

Each 30 ms Hamming-windowed frame (20 ms shift) yields 16 log mel-band
energies; a first-order difference along the band axis (zeros assumed
beyond the ends, end-points kept) gives the 16 frequency-derivative
coefficients, and a +/-2-frame regression delta gives 16 more along time.
The 32 columns are laid out [0..16) frequency-derivative, [16..32) time
delta.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

FRAME_LENGTH_S = 0.030
FRAME_SHIFT_S = 0.020
N_BANDS = 16
ENERGY_FLOOR = 1e-10
_DELTA_WINDOW = 2

FEATURE_DIM = 2 * N_BANDS


@dataclass
class FeatureSequence:
    """T x 32 feature matrix for one beamformer output channel."""

    data: np.ndarray
    frame_length: int
    frame_shift: int
    channel: tuple[int, int] | None = None  # (array_id, cell_id)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    def segment(self, start: int, end: int) -> np.ndarray:
        return self.data[start:end]


def frame_count(n_samples: int, frame_length: int, frame_shift: int) -> int:
    if n_samples < frame_length:
        return 0
    return (n_samples - frame_length) // frame_shift + 1


def frame_signal(x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Slice a signal into overlapping frames, shape (T, frame_length)."""
    frame_length = int(round(FRAME_LENGTH_S * sample_rate))
    frame_shift = int(round(FRAME_SHIFT_S * sample_rate))
    t = frame_count(len(x), frame_length, frame_shift)
    if t <= 0:
        raise ValueError("signal shorter than one frame")
    idx = np.arange(frame_length)[None, :] + frame_shift * np.arange(t)[:, None]
    return x[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_bands: int = N_BANDS) -> np.ndarray:
    """Triangular mel-spaced filters over [0, sample_rate/2], (n_bands, bins)."""
    n_bins = n_fft // 2 + 1
    edges_mel = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_bands + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_freqs = np.arange(n_bins) * sample_rate / n_fft
    bank = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        lo, mid, hi = edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]
        rising = (bin_freqs >= lo) & (bin_freqs < mid)
        falling = (bin_freqs >= mid) & (bin_freqs <= hi)
        bank[b, rising] = (bin_freqs[rising] - lo) / (mid - lo)
        bank[b, falling] = (hi - bin_freqs[falling]) / (hi - mid)
    return bank


def band_edges_hz(sample_rate: int, n_bands: int = N_BANDS) -> np.ndarray:
    """The (n_bands + 2) mel-spaced edge frequencies of the filterbank."""
    return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_bands + 2))


def log_filterbank(frame: np.ndarray, sample_rate: int) -> np.ndarray:
    """16 floored log mel-band energies of one 30 ms frame."""
    frame = np.asarray(frame, dtype=float)
    expected = int(round(FRAME_LENGTH_S * sample_rate))
    if frame.ndim == 1:
        frames = frame[None, :]
        squeeze = True
    else:
        frames = frame
        squeeze = False
    if frames.shape[1] != expected:
        raise ValueError(f"frame must hold {expected} samples, got {frames.shape[1]}")
    window = np.hamming(expected)
    spec = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    bank = mel_filterbank(sample_rate, expected)
    energies = np.log(np.maximum(spec @ bank.T, ENERGY_FLOOR))
    return energies[0] if squeeze else energies


def frequency_filter(log_energies: np.ndarray) -> np.ndarray:
    """First difference across bands, o[m] = e[m+1] - e[m-1], ends kept."""
    e = np.asarray(log_energies, dtype=float)
    padded = np.concatenate(
        [np.zeros(e.shape[:-1] + (1,)), e, np.zeros(e.shape[:-1] + (1,))], axis=-1
    )
    return padded[..., 2:] - padded[..., :-2]


def temporal_derivative(frames: np.ndarray) -> np.ndarray:
    """Regression delta over +/-2 frames; edge frames replicate outward."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError("need a (T>=1, D) frame sequence")
    w = _DELTA_WINDOW
    padded = np.concatenate([frames[:1].repeat(w, axis=0), frames, frames[-1:].repeat(w, axis=0)])
    norm = 2 * sum(n * n for n in range(1, w + 1))
    delta = np.zeros_like(frames)
    t0 = w
    for n in range(1, w + 1):
        delta += n * (padded[t0 + n : t0 + n + len(frames)] - padded[t0 - n : t0 - n + len(frames)])
    return delta / norm


def extract_features(
    signal: np.ndarray,
    sample_rate: int,
    channel: tuple[int, int] | None = None,
) -> FeatureSequence:
    """Full pipeline: framing -> log filterbank -> band filter + time delta."""
    frames = frame_signal(np.asarray(signal, dtype=float), sample_rate)
    log_e = log_filterbank(frames, sample_rate)
    ff = frequency_filter(log_e)
    delta = temporal_derivative(ff)
    return FeatureSequence(
        data=np.hstack([ff, delta]),
        frame_length=int(round(FRAME_LENGTH_S * sample_rate)),
        frame_shift=int(round(FRAME_SHIFT_S * sample_rate)),
        channel=channel,
    )


def frame_of_time(t: float, sample_rate: int) -> float:
    """Continuous frame coordinate of a time instant (by frame start)."""
    shift = int(round(FRAME_SHIFT_S * sample_rate))
    return t * sample_rate / shift


def interval_to_frames(start_s: float, end_s: float, sample_rate: int, n_frames: int) -> tuple[int, int]:
    """Frames fully inside [start_s, end_s], clipped to the sequence."""
    frame_length = int(round(FRAME_LENGTH_S * sample_rate))
    shift = int(round(FRAME_SHIFT_S * sample_rate))
    first = int(np.ceil(start_s * sample_rate / shift - 1e-9))
    last = int(np.floor((end_s * sample_rate - frame_length) / shift + 1e-9)) + 1
    return max(first, 0), min(max(last, 0), n_frames)


def frames_to_interval(start_frame: int, end_frame: int, sample_rate: int) -> tuple[float, float]:
    """Time extent (seconds) spanned by frames [start_frame, end_frame)."""
    frame_length = int(round(FRAME_LENGTH_S * sample_rate))
    shift = int(round(FRAME_SHIFT_S * sample_rate))
    start = start_frame * shift / sample_rate
    end = ((end_frame - 1) * shift + frame_length) / sample_rate
    return start, end


# -- debug dump ---------------------------------------------------------------

_MAGIC = b"AEFM"


def write_feature_matrix(path, data: np.ndarray) -> None:
    """Binary dump: magic, little-endian int32 (T, dim), float32 data."""
    data = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<ii", data.shape[0], data.shape[1]))
        f.write(data.tobytes())


def read_feature_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a feature matrix file")
        t, dim = struct.unpack("<ii", f.read(8))
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != t * dim:
        raise ValueError(f"{path}: truncated feature matrix")
    return data.reshape(t, dim).astype(np.float64)
