"""Per-cell steering beamformers: one delay-and-sum beamformer per (array, cell).

Steering is near-field: delays are computed from exact point distances
between the cell centroid and each microphone, so that all channels are
time-aligned on the wavefront from that cell. Fractional delays use a
16-tap Hann-windowed sinc interpolator shared with the synthesis module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import SceneConfig

SPEED_OF_SOUND = 343.0  # m/s

_SINC_TAPS = 16
_SINC_CENTER = _SINC_TAPS // 2 - 1  # group delay of the integer part, samples


def fractional_delay_kernel(frac: float, n_taps: int = _SINC_TAPS) -> np.ndarray:
    """Hann-windowed sinc kernel delaying by (n_taps/2 - 1 + frac) samples.

    The window is centered on the fractional sample position, and the
    kernel is normalized to unit DC gain so broadband amplitude is
    preserved.
    """
    center = n_taps // 2 - 1
    t = np.arange(n_taps) - (center + frac)
    half = n_taps // 2
    kernel = np.sinc(t) * (0.5 + 0.5 * np.cos(np.pi * t / half))
    return kernel / kernel.sum()


def fractional_delay(x: np.ndarray, delay: float, n_taps: int = _SINC_TAPS) -> np.ndarray:
    """Delay a signal by a (possibly fractional) number of samples.

    Output has the same length as the input, with zero-padded edges.
    `delay` must be >= 0. Exact for integer delays; fractional parts go
    through the windowed-sinc interpolator.
    """
    if delay < 0:
        raise ValueError("delay must be nonnegative")
    x = np.asarray(x, dtype=float)
    n = len(x)
    shift = int(np.floor(delay))
    frac = delay - shift
    if frac == 0.0:
        out = np.zeros(n)
        if shift < n:
            out[shift:] = x[: n - shift]
        return out
    kernel = fractional_delay_kernel(frac, n_taps)
    # kernel group delay is (n_taps/2 - 1 + frac); shift the rest in integers
    center = n_taps // 2 - 1
    y = np.convolve(x, kernel)
    start = center - shift  # samples to drop from the front (may be negative)
    out = np.zeros(n)
    if start >= 0:
        seg = y[start : start + n]
        out[: len(seg)] = seg
    else:
        seg = y[: n + start]
        out[-start : -start + len(seg)] = seg
    return out


@dataclass(frozen=True)
class SteeringBeamformer:
    """Delay-and-sum beamformer of one array aimed at one grid cell."""

    array_id: int
    cell_id: int
    delays: np.ndarray  # per-mic delays in samples, all >= 0
    gains: np.ndarray   # per-mic gains, sum to 1

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=float)
        g = np.asarray(self.gains, dtype=float)
        if d.shape != g.shape or d.ndim != 1:
            raise ValueError("delays and gains must be matching 1-D vectors")
        if np.any(d < 0):
            raise ValueError("steering delays must be causal (>= 0)")
        if abs(g.sum() - 1.0) > 1e-9:
            raise ValueError("gains must sum to 1")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "gains", g)

    @property
    def n_mics(self) -> int:
        return len(self.delays)


def steering_delays(mic_positions: np.ndarray, target: np.ndarray, sample_rate: int) -> np.ndarray:
    """Causal alignment delays (samples) for a point target.

    The microphone farthest from the target gets zero delay; every other
    channel is delayed by its relative path advantage.
    """
    dists = np.linalg.norm(np.asarray(mic_positions, dtype=float) - np.asarray(target, dtype=float), axis=1)
    return (dists.max() - dists) / SPEED_OF_SOUND * sample_rate


def design_beamformers(scene: SceneConfig) -> dict[tuple[int, int], SteeringBeamformer]:
    """Build the full K x P beamformer bank, keyed by (array_id, cell_id)."""
    bank: dict[tuple[int, int], SteeringBeamformer] = {}
    centroids = scene.grid.centroids()
    for arr in scene.arrays:
        m = arr.n_mics
        gains = np.full(m, 1.0 / m)
        for j in range(scene.n_cells):
            delays = steering_delays(arr.mic_positions, centroids[j], scene.sample_rate)
            bank[(arr.array_id, j)] = SteeringBeamformer(
                array_id=arr.array_id, cell_id=j, delays=delays, gains=gains
            )
    return bank


def apply_beamformer(bf: SteeringBeamformer, channels: np.ndarray) -> np.ndarray:
    """Sum the array channels after per-microphone steering delays.

    `channels` is (M, N) with M matching the beamformer geometry; output
    length equals the input length (edges zero-padded by the delays).
    """
    channels = np.asarray(channels, dtype=float)
    if channels.ndim != 2 or channels.shape[0] != bf.n_mics:
        raise ValueError(
            f"expected {bf.n_mics} channels, got array of shape {channels.shape}"
        )
    out = np.zeros(channels.shape[1])
    for gain, delay, ch in zip(bf.gains, bf.delays, channels):
        out += gain * fractional_delay(ch, float(delay))
    return out


def dump_beamformer_table(bank: dict[tuple[int, int], SteeringBeamformer], path) -> None:
    """Write delay/gain tables as plain text for inspection."""
    with open(path, "w") as f:
        f.write("# array cell mic delay_samples gain\n")
        for (k, j) in sorted(bank):
            bf = bank[(k, j)]
            for m in range(bf.n_mics):
                f.write(f"{k} {j} {m} {bf.delays[m]:.9f} {bf.gains[m]:.9f}\n")
