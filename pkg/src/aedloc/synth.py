"""Synthetic multi-microphone scene rendering with exact ground truth.

Source waveforms come from a small palette of spectro-temporally distinct
templates (band-limited noise, tone complexes, AM patterns) so classes are
separable by spectral envelope. Propagation is free-field: per-microphone
fractional delay at c = 343 m/s and 1/r amplitude decay. Everything is a
pure function of (scene, events, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .beamform import SPEED_OF_SOUND, _SINC_TAPS
from .scene import SceneConfig

MIN_DISTANCE = 0.1       # m; 1/r gain is clamped below this range
TEMPLATE_RMS = 0.1       # dry waveform RMS after normalization
_FADE_S = 0.010          # raised-cosine edge fade applied to every template

TEMPLATE_LABELS = ("knock", "chime", "buzz", "hiss", "clack", "warble", "speech")


@dataclass(frozen=True)
class RoomAcoustics:
    """Propagation model knobs; the default is free-field (anechoic)."""

    reflection_order: int = 0  # wall-mirror image order; 0 disables reflections
    reflection_gain: float = 0.7  # amplitude kept per bounce
    tail_rt60: float = 0.0  # diffuse exponential tail decay time; 0 disables
    tail_drr_db: float = 3.0  # direct-to-tail energy ratio

    @property
    def is_anechoic(self) -> bool:
        return self.reflection_order == 0 and self.tail_rt60 == 0.0


ANECHOIC = RoomAcoustics()


@dataclass
class SourceEvent:
    """One sound instance: class, grid cell, timing and its dry waveform.

    `position` is the exact source point in meters; when omitted the cell
    centroid is used. Ground truth stays cell-level either way.
    """

    class_id: int
    cell_id: int
    start_time: float
    duration: float
    waveform: np.ndarray | None = None
    position: tuple[float, float] | None = None

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration


@dataclass
class MultichannelRecording:
    """All microphone signals of one scene take plus its ground truth."""

    channels: np.ndarray  # (n_mics_total, n_samples)
    sample_rate: int
    events: list[SourceEvent] = field(default_factory=list)
    snr_db: float = math.inf

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def _band_noise(rng, n, sample_rate, f_lo, f_hi, tilt=0.0, transition=100.0):
    """Gaussian noise band-limited to [f_lo, f_hi] via spectral masking.

    `tilt` applies a 1/f**tilt magnitude slope inside the band. Edges use
    raised-cosine transitions of `transition` Hz.
    """
    nyq = sample_rate / 2.0
    f_hi = min(f_hi, 0.78 * nyq)  # keep content where the delay interpolator is accurate
    x = rng.standard_normal(n)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    mask = np.zeros_like(freqs)
    inside = (freqs >= f_lo) & (freqs <= f_hi)
    mask[inside] = 1.0
    lo_ramp = (freqs >= f_lo - transition) & (freqs < f_lo)
    mask[lo_ramp] = 0.5 - 0.5 * np.cos(np.pi * (freqs[lo_ramp] - (f_lo - transition)) / transition)
    hi_ramp = (freqs > f_hi) & (freqs <= f_hi + transition)
    mask[hi_ramp] = 0.5 + 0.5 * np.cos(np.pi * (freqs[hi_ramp] - f_hi) / transition)
    mask[freqs > 0.8 * nyq] = 0.0
    if tilt:
        with np.errstate(divide="ignore"):
            slope = np.where(freqs > 0, freqs, 1.0) ** (-tilt)
        mask = mask * slope
    return np.fft.irfft(spec * mask, n)


def _am(t, rate_hz, depth, phase=0.0):
    return 1.0 - depth * 0.5 * (1.0 + np.cos(2 * np.pi * rate_hz * t + phase))


def _thump_train(rng, n, sample_rate):
    """Impact envelopes: exponential-decay thumps plus short attack clicks."""
    body = np.zeros(n)
    click = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.04) * sample_rate)
    while pos < n:
        tau = rng.uniform(0.030, 0.050) * sample_rate
        span = min(int(4 * tau), n - pos)
        idx = np.arange(span)
        body[pos : pos + span] = np.maximum(body[pos : pos + span], np.exp(-idx / tau))
        c_span = min(int(0.02 * sample_rate), n - pos)
        cidx = np.arange(c_span)
        click[pos : pos + c_span] = np.maximum(
            click[pos : pos + c_span], np.exp(-cidx / (0.008 * sample_rate))
        )
        pos += int(rng.uniform(0.15, 0.25) * sample_rate)
    return body, click


def _syllable_gate(rng, n, sample_rate, floor=0.06):
    """Speech-like on/off envelope: voiced bursts separated by short gaps."""
    gate = np.full(n, floor)
    edge = int(0.02 * sample_rate)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    pos = int(rng.uniform(0.0, 0.05) * sample_rate)
    while pos < n:
        burst = int(rng.uniform(0.09, 0.22) * sample_rate)
        gap = int(rng.uniform(0.10, 0.24) * sample_rate)
        level = rng.uniform(0.7, 1.0)
        a, b = pos, min(pos + burst, n)
        gate[a:b] = level
        if b - a > 2 * edge:
            gate[a : a + edge] = floor + (level - floor) * ramp
            gate[b - edge : b] = floor + (level - floor) * ramp[::-1]
        pos = b + gap
    return gate


def _tone_strikes(rng, t, sample_rate, f0, n_harm, period, decay):
    """Repeatedly struck, exponentially decaying harmonic stack."""
    n = len(t)
    out = np.zeros(n)
    strike_times = np.arange(0.0, t[-1] + 1e-9, period)
    for st in strike_times:
        idx = int(round(st * sample_rate))
        if idx >= n:
            break
        seg_t = t[idx:] - t[idx]
        env = np.exp(-seg_t / decay)
        tone = np.zeros(len(seg_t))
        for h in range(1, n_harm + 1):
            detune = 1.0 + 0.002 * rng.standard_normal()
            tone += np.sin(2 * np.pi * f0 * h * detune * seg_t + rng.uniform(0, 2 * np.pi)) / h
        out[idx:] += env * tone
    return out


def _template(class_id, t, rng, sample_rate):
    """Class templates with natural within-class variability: band edges,
    fundamentals and modulation rates jitter event to event, but the class
    ranges stay disjoint enough for spectral-envelope separation."""
    n = len(t)
    if class_id == 0:  # knock: discrete impacts, low resonance + broadband attack
        u = rng.uniform(0.85, 1.15)
        body, click = _thump_train(rng, n, sample_rate)
        sig = _band_noise(rng, n, sample_rate, 120 * u, 550 * u) * (0.35 + 0.65 * body)
        sig = sig + 0.25 * _band_noise(rng, n, sample_rate, 800, 2800) * click
        sig = sig + rng.uniform(0.10, 0.22) * _band_noise(rng, n, sample_rate, 120, 1300)
        return sig
    if class_id == 1:  # chime: decaying harmonic strikes
        f0 = rng.uniform(670.0, 800.0)
        sig = _tone_strikes(
            rng, t, sample_rate, f0, 4, rng.uniform(0.22, 0.34), rng.uniform(0.09, 0.16)
        )
        return sig + rng.uniform(0.03, 0.09) * _band_noise(rng, n, sample_rate, 500, 3200)
    if class_id == 2:  # buzz: mid band with fast ripple and a faint motor rumble
        sig = _band_noise(rng, n, sample_rate, rng.uniform(1400, 1650), rng.uniform(2400, 2800))
        sig = sig + rng.uniform(0.12, 0.25) * _band_noise(rng, n, sample_rate, 100, 1100)
        return sig * _am(t, rng.uniform(40.0, 80.0), 0.5) * _am(t, 3.0, 0.3, phase=1.0)
    if class_id == 3:  # hiss: high band, slow swell over a soft airflow bed
        u = rng.uniform(0.92, 1.08)
        sig = _band_noise(rng, n, sample_rate, 3200 * u, 5200 * u)
        sig = sig + rng.uniform(0.12, 0.25) * _band_noise(rng, n, sample_rate, 150, 2800)
        return sig * _am(t, 2.0, 0.4)
    if class_id == 4:  # clack: upper-mid rattling
        sig = _band_noise(rng, n, sample_rate, rng.uniform(650, 780), rng.uniform(1100, 1350))
        return sig * _am(t, rng.uniform(8.0, 12.0), 0.8)
    if class_id == 5:  # warble: frequency-modulated tone
        f0 = rng.uniform(950.0, 1100.0)
        inst = f0 + 300.0 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
        phase = 2 * np.pi * np.cumsum(inst) / sample_rate
        return np.sin(phase) + 2e-3 * rng.standard_normal(n)
    if class_id == 6:  # speech-like: wideband tilted noise gated into syllables
        sig = _band_noise(
            rng, n, sample_rate, rng.uniform(160, 220), rng.uniform(3400, 4000),
            tilt=rng.uniform(0.3, 0.5),
        )
        return sig * _syllable_gate(rng, n, sample_rate) * _am(t, 4.0, 0.3)
    raise ValueError(f"unknown waveform class id {class_id}")


def synth_class_waveform(class_id: int, duration: float, sample_rate: int, seed: int) -> np.ndarray:
    """Deterministic dry waveform for one template class.

    Same (class_id, duration, sample_rate, seed) always yields bit-identical
    output. Length is round(duration * sample_rate) samples, RMS-normalized.
    """
    if not 0 <= class_id < len(TEMPLATE_LABELS):
        raise ValueError(f"unknown waveform class id {class_id}")
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, class_id])
    t = np.arange(n) / sample_rate
    sig = _template(class_id, t, rng, sample_rate)
    fade = min(int(_FADE_S * sample_rate), n // 4)
    if fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        sig[:fade] *= ramp
        sig[-fade:] *= ramp[::-1]
    rms = np.sqrt(np.mean(sig**2))
    return sig * (TEMPLATE_RMS / rms)


def waveform_for_label(label: str, duration: float, sample_rate: int, seed: int) -> np.ndarray:
    try:
        class_id = TEMPLATE_LABELS.index(label)
    except ValueError:
        raise ValueError(f"no waveform template for class {label!r}") from None
    return synth_class_waveform(class_id, duration, sample_rate, seed)


def propagation_pad(scene: SceneConfig, acoustics: RoomAcoustics = ANECHOIC) -> int:
    """Buffer padding covering the worst-case path delay plus filter tail."""
    diag = math.hypot(*scene.room_size)
    reach = diag + 2.0 * acoustics.reflection_order * max(scene.room_size)
    samples = int(math.ceil(reach / SPEED_OF_SOUND * scene.sample_rate)) + _SINC_TAPS
    return samples + int(1.2 * acoustics.tail_rt60 * scene.sample_rate)


def _image_sources(src, room_size, order: int) -> list[tuple[np.ndarray, int]]:
    """Wall-mirror images up to the given reflection order, with bounce counts."""
    w, h = room_size
    images = {(round(src[0], 9), round(src[1], 9)): 0}
    frontier = [np.asarray(src, dtype=float)]
    for bounce in range(1, order + 1):
        nxt = []
        for p in frontier:
            for cand in (
                (-p[0], p[1]),
                (2 * w - p[0], p[1]),
                (p[0], -p[1]),
                (p[0], 2 * h - p[1]),
            ):
                key = (round(cand[0], 9), round(cand[1], 9))
                if key not in images:
                    images[key] = bounce
                    nxt.append(np.array(cand))
        frontier = nxt
    return [(np.array(k), b) for k, b in images.items()]


def propagate(
    event: SourceEvent,
    scene: SceneConfig,
    acoustics: RoomAcoustics = ANECHOIC,
) -> np.ndarray:
    """Point-source propagation of one event to every microphone.

    Returns (n_mics_total, L) signals measured from the event's emission
    instant: each path delays the dry waveform by dist/c samples (exact
    fractional delay synthesized in the frequency domain) and scales it
    by 1/max(dist, 0.1 m). By default only the direct path is rendered.
    A nonzero reflection order adds wall-mirror images attenuated per
    bounce; a nonzero tail RT60 appends an exponentially decaying diffuse
    tail, deterministic per (cell, microphone) pair like a fixed room
    response, with energy tail_drr_db below the direct path.
    """
    if event.waveform is None:
        raise ValueError("event carries no waveform")
    if event.position is not None:
        src = np.asarray(event.position, dtype=float)
    else:
        src = np.array(scene.grid.centroid(event.cell_id))
    w, h = scene.room_size
    if not (0 <= src[0] <= w and 0 <= src[1] <= h):
        raise ValueError("event source position outside the room")
    fs = scene.sample_rate
    mics = scene.all_mic_positions()
    pad = propagation_pad(scene, acoustics)
    n = len(event.waveform) + pad
    images = _image_sources(src, scene.room_size, acoustics.reflection_order)

    n_fft = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(event.waveform, n_fft)
    freqs = np.fft.rfftfreq(n_fft)
    out = np.empty((len(mics), n))
    for m, mic in enumerate(mics):
        transfer = np.zeros(len(freqs), dtype=complex)
        direct_gain = None
        direct_delay = None
        for pos, bounces in images:
            dist = float(np.linalg.norm(mic - pos))
            delay = dist / SPEED_OF_SOUND * fs
            gain = acoustics.reflection_gain**bounces / max(dist, MIN_DISTANCE)
            if bounces == 0:
                direct_gain, direct_delay = gain, delay
            transfer += gain * np.exp(-2j * np.pi * freqs * delay)
        if acoustics.tail_rt60 > 0:
            tail_rng = np.random.default_rng([event.cell_id, m, 60017])
            length = int(acoustics.tail_rt60 * fs)
            decay = np.exp(-np.arange(length) / (acoustics.tail_rt60 * fs / 6.91))
            tail = tail_rng.standard_normal(length) * decay
            tail *= (
                direct_gain
                * 10.0 ** (-acoustics.tail_drr_db / 20.0)
                / math.sqrt(np.sum(tail**2))
            )
            onset = int(direct_delay) + int(0.002 * fs)
            padded = np.zeros(min(onset + length, n_fft))
            padded[onset : onset + length] = tail[: len(padded) - onset]
            transfer += np.fft.rfft(padded, n_fft)
        out[m] = np.fft.irfft(spec * transfer, n_fft)[:n]
    return out


def _validate_overlap(events: list[SourceEvent], limit: int) -> None:
    marks = []
    for ev in events:
        marks.append((ev.start_time, 1))
        marks.append((ev.end_time, -1))
    active = 0
    for _, step in sorted(marks, key=lambda m: (m[0], m[1])):
        active += step
        if active > limit:
            raise ValueError(f"more than {limit} events active simultaneously")


def active_sample_mask(events: list[SourceEvent], n_samples: int, sample_rate: int) -> np.ndarray:
    mask = np.zeros(n_samples, dtype=bool)
    for ev in events:
        a = int(round(ev.start_time * sample_rate))
        b = min(int(round(ev.end_time * sample_rate)), n_samples)
        mask[a:b] = True
    return mask


def render_recording(
    events: list[SourceEvent],
    scene: SceneConfig,
    snr_db: float,
    seed: int,
    duration: float | None = None,
    acoustics: RoomAcoustics = ANECHOIC,
) -> MultichannelRecording:
    """Render events into one multichannel recording with additive noise.

    Per-channel white-noise variance is set from the channel's clean power
    over the active (any-event-live) samples so the realized SNR matches
    the target; snr_db = inf renders noise-free.
    """
    _validate_overlap(events, scene.max_simultaneous)
    fs = scene.sample_rate
    pad = propagation_pad(scene, acoustics)
    if duration is None:
        duration = max((ev.end_time for ev in events), default=0.0) + 0.2
    n = int(round(duration * fs)) + pad
    clean = np.zeros((scene.n_mics_total, n))
    for ev in events:
        if ev.waveform is not None and len(ev.waveform) != int(round(ev.duration * fs)):
            raise ValueError("event waveform length disagrees with its duration")
        block = propagate(ev, scene, acoustics)
        off = int(round(ev.start_time * fs))
        end = min(off + block.shape[1], n)
        clean[:, off:end] += block[:, : end - off]
    channels = clean
    if np.isfinite(snr_db):
        rng = np.random.default_rng(seed)
        mask = active_sample_mask(events, n, fs)
        noise = rng.standard_normal(clean.shape)
        if mask.any():
            power = np.mean(clean[:, mask] ** 2, axis=1)
        else:
            power = np.zeros(scene.n_mics_total)
        sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
        channels = clean + sigma[:, None] * noise
    return MultichannelRecording(
        channels=channels, sample_rate=fs, events=list(events), snr_db=snr_db
    )


def matched_power_copy(reference: np.ndarray, waveform: np.ndarray) -> np.ndarray:
    """Rescale `waveform` so its mean power equals the reference's."""
    p_ref = np.mean(reference**2)
    p_sig = np.mean(waveform**2)
    if p_sig == 0:
        raise ValueError("cannot power-match an all-zero waveform")
    return waveform * math.sqrt(p_ref / p_sig)


def mix_two_source(
    ae_event: SourceEvent,
    speech_like: SourceEvent,
    scene: SceneConfig,
    snr_db: float,
    seed: int = 0,
    acoustics: RoomAcoustics = ANECHOIC,
) -> MultichannelRecording:
    """Overlap one acoustic event with a speech-like interferer.

    The interferer is forced onto the event's interval (same start, same
    length; its waveform may be longer and is cut) and rescaled to the
    event's mean power before propagation.
    """
    if ae_event.waveform is None or speech_like.waveform is None:
        raise ValueError("both events need waveforms")
    fs = scene.sample_rate
    n_ae = len(ae_event.waveform)
    if len(speech_like.waveform) < n_ae:
        raise ValueError("interferer waveform shorter than the event")
    cut = matched_power_copy(ae_event.waveform, speech_like.waveform[:n_ae])
    interferer = SourceEvent(
        class_id=speech_like.class_id,
        cell_id=speech_like.cell_id,
        start_time=ae_event.start_time,
        duration=ae_event.duration,
        waveform=cut,
        position=speech_like.position,
    )
    return render_recording([ae_event, interferer], scene, snr_db, seed, acoustics=acoustics)


# -- file I/O -----------------------------------------------------------------

def save_wav(path, recording: MultichannelRecording, dtype: str = "float32") -> None:
    """Write channels as a multichannel WAV (float32 or int16)."""
    data = recording.channels.T
    if dtype == "float32":
        wavfile.write(path, recording.sample_rate, data.astype(np.float32))
    elif dtype == "int16":
        peak = np.max(np.abs(data))
        scale = 32767.0 / peak if peak > 0 else 1.0
        wavfile.write(path, recording.sample_rate, (data * scale).astype(np.int16))
    else:
        raise ValueError("dtype must be 'float32' or 'int16'")


def load_wav(path) -> tuple[int, np.ndarray]:
    """Read a WAV written by save_wav; returns (sample_rate, (n_ch, n) float)."""
    fs, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32767.0
    return fs, np.ascontiguousarray(data.T.astype(np.float64))


def save_raw(path, channels: np.ndarray) -> None:
    """Planar little-endian float32 dump; exact round trip via load_raw."""
    np.ascontiguousarray(channels, dtype="<f4").tofile(path)


def load_raw(path, n_channels: int) -> np.ndarray:
    flat = np.fromfile(path, dtype="<f4")
    if len(flat) % n_channels:
        raise ValueError("raw file length not divisible by channel count")
    return flat.reshape(n_channels, -1)


def write_ground_truth(path, events: list[SourceEvent], scene: SceneConfig) -> None:
    """Sidecar with one event per line: class label, cell, start s, end s."""
    with open(path, "w") as f:
        for ev in events:
            label = scene.classes[ev.class_id]
            f.write(f"{label} {ev.cell_id} {ev.start_time:.6f} {ev.end_time:.6f}\n")


def read_ground_truth(path, scene: SceneConfig) -> list[SourceEvent]:
    events = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            label, cell, start, end = line.split()
            events.append(
                SourceEvent(
                    class_id=scene.classes.index(label),
                    cell_id=int(cell),
                    start_time=float(start),
                    duration=float(end) - float(start),
                )
            )
    return events
