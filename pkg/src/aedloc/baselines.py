"""Reference systems: steered-response-power localization with PHAT
weighting, and combination-model recognition on a single channel.

The SRP localizer sums PHAT-weighted pairwise cross-correlations, sampled
at each candidate position's geometric lag, over all microphone pairs of
all arrays. The search runs either exhaustively over the grid centroids
or with a stochastic region contraction over the continuous room plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beamform import SPEED_OF_SOUND
from .features import FRAME_LENGTH_S, FRAME_SHIFT_S
from .hmm import EventModel, TrainConfig, forward_loglik, train_baum_welch, viterbi_decode
from .scene import SILENCE_LABEL, SPEECH_LABEL, SceneConfig, cell_of


@dataclass
class SrpConfig:
    """Search settings for the steered-response-power localizer."""

    fft_size: int = 1024
    search_mode: str = "exhaustive"  # or "src"
    src_samples: int = 200
    src_contraction: float = 0.7
    src_iterations: int = 8
    src_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.src_contraction < 1.0:
            raise ValueError("contraction factor must lie in (0, 1)")
        if self.search_mode not in ("exhaustive", "src"):
            raise ValueError(f"unknown search mode {self.search_mode!r}")


def gcc_phat(a: np.ndarray, b: np.ndarray, fft_size: int) -> tuple[np.ndarray, np.ndarray]:
    """PHAT-weighted cross-correlation of two equal-length signals.

    Returns (correlation, lags); the peak sits at the lag of `b` relative
    to `a` (b delayed by d puts the peak at +d). The PHAT weight divides
    the cross-spectrum by its magnitude, so amplitude scaling of either
    input cancels out.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("signals must be equal-length 1-D arrays")
    if not np.any(a) or not np.any(b):
        raise ValueError("PHAT weighting is undefined for zero-energy input")
    n = int(fft_size)
    if n < 2 * len(a):
        n = 1 << int(np.ceil(np.log2(2 * len(a))))
    spec = np.conj(np.fft.rfft(a, n)) * np.fft.rfft(b, n)
    mag = np.abs(spec)
    spec = spec / np.maximum(mag, 1e-12 * mag.max())
    cc = np.fft.irfft(spec, n)
    half = n // 2
    cc = np.concatenate([cc[-half:], cc[: half + 1]])
    lags = np.arange(-half, half + 1)
    return cc, lags


def _interp_at(cc: np.ndarray, lags: np.ndarray, lag: float) -> float:
    """Linear interpolation of the correlation at a fractional lag."""
    pos = lag - lags[0]
    i = int(np.floor(pos))
    if i < 0 or i >= len(cc) - 1:
        return 0.0
    frac = pos - i
    return float((1 - frac) * cc[i] + frac * cc[i + 1])


def _mic_pairs(n_mics: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n_mics) for j in range(i + 1, n_mics)]


def _pair_correlations(frame_channels: np.ndarray, fft_size: int):
    pairs = _mic_pairs(frame_channels.shape[0])
    ccs = {}
    lags = None
    for (i, j) in pairs:
        cc, lags = gcc_phat(frame_channels[i], frame_channels[j], fft_size)
        ccs[(i, j)] = cc
    return ccs, lags, pairs


def srp_power_at(
    point,
    ccs: dict,
    lags: np.ndarray,
    pairs: list[tuple[int, int]],
    mic_positions: np.ndarray,
    sample_rate: int,
) -> float:
    """Summed pairwise correlation at one candidate position."""
    dists = np.linalg.norm(mic_positions - np.asarray(point, dtype=float), axis=1)
    total = 0.0
    for (i, j) in pairs:
        lag = (dists[j] - dists[i]) / SPEED_OF_SOUND * sample_rate
        total += _interp_at(ccs[(i, j)], lags, lag)
    return total


def srp_map(
    frame_channels: np.ndarray, scene: SceneConfig, config: SrpConfig | None = None
) -> np.ndarray:
    """Steered response power at every cell centroid for one frame."""
    config = config or SrpConfig()
    ccs, lags, pairs = _pair_correlations(frame_channels, config.fft_size)
    mics = scene.all_mic_positions()
    powers = np.empty(scene.n_cells)
    for j in range(scene.n_cells):
        powers[j] = srp_power_at(
            scene.grid.centroid(j), ccs, lags, pairs, mics, scene.sample_rate
        )
    return powers


def stochastic_region_contraction(
    score_fn,
    bounds: tuple[float, float, float, float],
    n_samples: int = 200,
    contraction: float = 0.7,
    iterations: int = 8,
    seed: int = 0,
) -> tuple[float, float]:
    """Randomized maximum search shrinking the region around the incumbent.

    Each round draws `n_samples` points uniformly from the current
    rectangle, keeps the best point seen so far, then contracts the
    rectangle around it by the given factor (clipped to the bounds).
    """
    x0, y0, x1, y1 = bounds
    rng = np.random.default_rng(seed)
    rect = [x0, y0, x1, y1]
    best = None
    best_score = -np.inf
    for _ in range(iterations):
        xs = rng.uniform(rect[0], rect[2], n_samples)
        ys = rng.uniform(rect[1], rect[3], n_samples)
        for x, y in zip(xs, ys):
            s = score_fn((x, y))
            if s > best_score:
                best_score = s
                best = (float(x), float(y))
        w = (rect[2] - rect[0]) * contraction
        h = (rect[3] - rect[1]) * contraction
        cx = min(max(best[0], x0 + w / 2), x1 - w / 2)
        cy = min(max(best[1], y0 + h / 2), y1 - h / 2)
        rect = [cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2]
    return best


def _best_point(frame_channels, scene, config) -> tuple[float, float]:
    ccs, lags, pairs = _pair_correlations(frame_channels, config.fft_size)
    mics = scene.all_mic_positions()

    def score(pt):
        return srp_power_at(pt, ccs, lags, pairs, mics, scene.sample_rate)

    if config.search_mode == "src":
        w, h = scene.room_size
        return stochastic_region_contraction(
            score,
            (0.0, 0.0, w, h),
            n_samples=config.src_samples,
            contraction=config.src_contraction,
            iterations=config.src_iterations,
            seed=config.src_seed,
        )
    powers = [score(scene.grid.centroid(j)) for j in range(scene.n_cells)]
    return scene.grid.centroid(int(np.argmax(powers)))


def _event_frames(channels: np.ndarray, sample_rate: int, start_s: float, end_s: float):
    frame_len = int(round(FRAME_LENGTH_S * sample_rate))
    shift = int(round(FRAME_SHIFT_S * sample_rate))
    a = max(int(round(start_s * sample_rate)), 0)
    b = min(int(round(end_s * sample_rate)), channels.shape[1])
    frames = []
    pos = a
    while pos + frame_len <= b:
        frames.append(channels[:, pos : pos + frame_len])
        pos += shift
    if not frames and b - a >= 2:
        frames.append(channels[:, a:b])
    return frames


def srp_event_localize(
    channels: np.ndarray,
    scene: SceneConfig,
    start_s: float,
    end_s: float,
    config: SrpConfig | None = None,
    n_sources: int = 1,
) -> list[int]:
    """Event-level cell estimate(s) from frame-wise steered response power.

    One source: per-frame best coordinates are averaged over the whole
    interval and mapped to a cell. Two sources: per-frame power maps are
    averaged and the two highest distinct cells are returned.
    """
    config = config or SrpConfig()
    if end_s <= start_s:
        raise ValueError("empty event interval")
    frames = _event_frames(channels, scene.sample_rate, start_s, end_s)
    if not frames:
        raise ValueError("interval shorter than one frame")
    if n_sources == 1:
        points = np.array([_best_point(f, scene, config) for f in frames])
        mean_pt = points.mean(axis=0)
        w, h = scene.room_size
        mean_pt = np.clip(mean_pt, [0, 0], [w, h])
        return [cell_of(mean_pt, scene.grid)]
    acc = np.zeros(scene.n_cells)
    for f in frames:
        acc += srp_map(f, scene, config)
    order = np.argsort(acc)[::-1]
    return [int(order[0]), int(order[1])]


# -- all-combinations recognition ----------------------------------------------

COMBO_SUFFIX = "+speech"


@dataclass
class ComboInventory:
    """Single-channel models: one per isolated class, one per class+speech
    mixture, plus silence (and optionally speech alone)."""

    models: dict[str, EventModel] = field(default_factory=dict)
    channel: int = 0

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.models))

    def base_class(self, label: str) -> str:
        return label[: -len(COMBO_SUFFIX)] if label.endswith(COMBO_SUFFIX) else label


def train_all_combinations(
    isolated_segments: dict[str, list[np.ndarray]],
    mixed_segments: dict[str, list[np.ndarray]],
    silence_segments: list[np.ndarray],
    cfg: TrainConfig | None = None,
    channel: int = 0,
    speech_alone: bool = False,
) -> ComboInventory:
    """Train the combination-model bank on one designated channel.

    `isolated_segments` maps each class label (including "speech") to its
    clean segments; `mixed_segments` maps each event class to segments of
    that class overlapped with speech. Every event class must have mixture
    data. The returned bank holds 2C models (plus silence, plus optionally
    a speech-alone model).
    """
    cfg = cfg or TrainConfig()
    inv = ComboInventory(channel=channel)
    for label, segs in sorted(isolated_segments.items()):
        if label == SPEECH_LABEL and not speech_alone:
            continue
        model, _ = train_baum_welch(segs, label, -1, cfg)
        inv.models[label] = model
    event_classes = [lab for lab in isolated_segments if lab not in (SPEECH_LABEL, SILENCE_LABEL)]
    for label in sorted(event_classes):
        if label not in mixed_segments or not mixed_segments[label]:
            raise ValueError(f"missing mixture training data for class {label!r}")
        model, _ = train_baum_welch(mixed_segments[label], label + COMBO_SUFFIX, -1, cfg)
        inv.models[label + COMBO_SUFFIX] = model
    silence, _ = train_baum_welch(silence_segments, SILENCE_LABEL, -1, cfg)
    inv.models[SILENCE_LABEL] = silence
    return inv


def classify_segment(inv: ComboInventory, frames: np.ndarray) -> str:
    """Best base class for a known-endpoint segment (silence not eligible)."""
    best_label, best_score = None, -np.inf
    for label in inv.labels:
        if label == SILENCE_LABEL:
            continue
        score = forward_loglik(inv.models[label], frames)
        if score > best_score:
            best_label, best_score = label, score
    return inv.base_class(best_label)


def decode_stream(inv: ComboInventory, frames: np.ndarray, insertion_penalty: float = 0.0):
    """Continuous recognition over the combination bank (incl. silence)."""
    models = [inv.models[label] for label in inv.labels]
    return viterbi_decode(models, frames, insertion_penalty)
