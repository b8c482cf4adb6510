import math

import numpy as np
import pytest

from aedloc.beamform import SPEED_OF_SOUND
from aedloc.scene import ArrayGeometry, CellGrid, SceneConfig
from aedloc.synth import (
    MultichannelRecording,
    SourceEvent,
    active_sample_mask,
    load_raw,
    load_wav,
    mix_two_source,
    propagate,
    read_ground_truth,
    render_recording,
    save_raw,
    save_wav,
    synth_class_waveform,
    write_ground_truth,
)
from conftest import make_scene

FS = 16000


def spectral_centroid(x, fs):
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1 / fs)
    return (freqs * spec).sum() / spec.sum()


class TestClassWaveforms:
    def test_deterministic(self):
        a = synth_class_waveform(0, 0.5, FS, 7)
        b = synth_class_waveform(0, 0.5, FS, 7)
        np.testing.assert_array_equal(a, b)

    def test_class_templates_spectrally_distinct(self):
        c0 = spectral_centroid(synth_class_waveform(0, 1.0, FS, 7), FS)
        c1 = spectral_centroid(synth_class_waveform(1, 1.0, FS, 7), FS)
        assert abs(c1 - c0) > 500.0

    def test_length_arithmetic(self):
        assert len(synth_class_waveform(0, 1.0, FS, 0)) == 16000
        assert len(synth_class_waveform(2, 0.333, FS, 0)) == int(round(0.333 * FS))

    def test_unknown_class_rejected(self):
        with pytest.raises(ValueError):
            synth_class_waveform(99, 0.5, FS, 0)
        with pytest.raises(ValueError):
            synth_class_waveform(-1, 0.5, FS, 0)


def one_cell_scene(mics):
    grid = CellGrid(nx=1, ny=1, cell_size=(3.0, 3.0))
    return SceneConfig(
        room_size=grid.extent,
        arrays=(ArrayGeometry(0, np.asarray(mics, dtype=float)),),
        grid=grid,
        classes=("knock", "speech", "silence"),
        sample_rate=FS,
    )


class TestPropagate:
    def test_equidistant_mics_identical_channels(self):
        # centroid (1.5, 1.5); both mics at range 1.0
        scene = one_cell_scene([[0.5, 1.5], [2.5, 1.5]])
        wav = synth_class_waveform(0, 0.3, FS, 3)
        sig = propagate(SourceEvent(0, 0, 0.0, 0.3, wav), scene)
        rms = np.sqrt(np.mean((sig[0] - sig[1]) ** 2))
        assert rms < 1e-6

    def test_inverse_distance_amplitude(self):
        # ranges chosen so both path delays are integer samples: the 1/r law
        # is then exact up to float rounding
        r1 = 32 * SPEED_OF_SOUND / FS   # 0.686 m
        r2 = 64 * SPEED_OF_SOUND / FS   # 1.372 m
        scene = one_cell_scene([[1.5 + r1, 1.5], [1.5 - r2, 1.5]])
        wav = synth_class_waveform(0, 0.25, FS, 3)
        sig = propagate(SourceEvent(0, 0, 0.0, 0.25, wav), scene)
        ratio = np.sqrt(np.mean(sig[0] ** 2) / np.mean(sig[1] ** 2))
        assert ratio == pytest.approx(2.0, abs=1e-6)

    def test_inter_mic_delay_matches_geometry(self):
        scene = one_cell_scene([[0.4, 1.5], [2.9, 1.7]])
        wav = synth_class_waveform(0, 0.3, FS, 9)
        sig = propagate(SourceEvent(0, 0, 0.0, 0.3, wav), scene)
        centroid = np.array([1.5, 1.5])
        d0 = np.linalg.norm(scene.arrays[0].mic_positions[0] - centroid)
        d1 = np.linalg.norm(scene.arrays[0].mic_positions[1] - centroid)
        true_lag = (d1 - d0) / SPEED_OF_SOUND * FS
        corr = np.correlate(sig[1], sig[0], mode="full")
        lag = np.argmax(corr) - (len(sig[0]) - 1)
        assert abs(lag - true_lag) <= 0.5

    def test_energy_conservation_inverse_square(self):
        r = 1.234
        scene = one_cell_scene([[1.5 + r, 1.5], [1.5, 0.2]])
        wav = synth_class_waveform(2, 0.25, FS, 4)
        sig = propagate(SourceEvent(0, 0, 0.0, 0.25, wav), scene)
        dry_energy = np.sum(wav**2)
        assert np.sum(sig[0] ** 2) == pytest.approx(dry_energy / r**2, rel=2e-3)

    def test_missing_waveform_rejected(self, tiny_scene):
        with pytest.raises(ValueError):
            propagate(SourceEvent(0, 0, 0.0, 0.3, None), tiny_scene)


class TestRendering:
    def test_deterministic(self, tiny_scene):
        wav = synth_class_waveform(0, 0.3, FS, 1)
        events = [SourceEvent(0, 1, 0.2, 0.3, wav)]
        a = render_recording(events, tiny_scene, 18.7, seed=5)
        b = render_recording(events, tiny_scene, 18.7, seed=5)
        np.testing.assert_array_equal(a.channels, b.channels)

    def test_no_sources_infinite_snr_is_silence(self, tiny_scene):
        rec = render_recording([], tiny_scene, math.inf, seed=0, duration=0.5)
        np.testing.assert_array_equal(rec.channels, 0.0)

    def test_realized_snr_close_to_target(self, tiny_scene):
        wav = synth_class_waveform(0, 0.8, FS, 1)
        events = [SourceEvent(0, 1, 0.3, 0.8, wav)]
        target = 17.5
        noisy = render_recording(events, tiny_scene, target, seed=5)
        clean = render_recording(events, tiny_scene, math.inf, seed=5)
        noise = noisy.channels - clean.channels
        mask = active_sample_mask(events, noisy.n_samples, FS)
        p_sig = np.mean(clean.channels[0, mask] ** 2)
        p_noise = np.mean(noise[0] ** 2)
        realized = 10 * np.log10(p_sig / p_noise)
        assert realized == pytest.approx(target, abs=0.2)

    def test_overlap_limit_enforced(self, tiny_scene):
        wav = synth_class_waveform(0, 0.3, FS, 1)
        events = [SourceEvent(0, j, 0.1, 0.3, wav) for j in range(3)]
        with pytest.raises(ValueError):
            render_recording(events, tiny_scene, math.inf, seed=0)

    def test_two_source_mean_power_matched(self, tiny_scene):
        ae_wav = synth_class_waveform(0, 0.5, FS, 1)
        sp_wav = synth_class_waveform(6, 2.0, FS, 2)
        ae = SourceEvent(0, 0, 0.4, 0.5, ae_wav)
        sp = SourceEvent(2, 3, 0.0, 2.0, sp_wav)
        rec = mix_two_source(ae, sp, tiny_scene, math.inf)
        dry = {ev.class_id: ev.waveform for ev in rec.events}
        ratio = np.mean(dry[0] ** 2) / np.mean(dry[2] ** 2)
        assert abs(10 * np.log10(ratio)) < 0.1
        # interferer forced onto the event's interval
        interferer = [ev for ev in rec.events if ev.class_id == 2][0]
        assert interferer.start_time == ae.start_time
        assert len(interferer.waveform) == len(ae_wav)

    def test_two_source_realized_snr(self, tiny_scene):
        ae_wav = synth_class_waveform(1, 0.6, FS, 3)
        sp_wav = synth_class_waveform(6, 1.0, FS, 4)
        ae = SourceEvent(0, 0, 0.3, 0.6, ae_wav)
        sp = SourceEvent(2, 3, 0.0, 1.0, sp_wav)
        noisy = mix_two_source(ae, sp, tiny_scene, 17.5, seed=8)
        clean = mix_two_source(ae, sp, tiny_scene, math.inf, seed=8)
        noise = noisy.channels - clean.channels
        mask = active_sample_mask(clean.events, clean.n_samples, FS)
        realized = 10 * np.log10(np.mean(clean.channels[0, mask] ** 2) / np.mean(noise[0] ** 2))
        assert realized == pytest.approx(17.5, abs=0.2)

    def test_interferer_shorter_than_event_rejected(self, tiny_scene):
        ae = SourceEvent(0, 0, 0.0, 0.5, synth_class_waveform(0, 0.5, FS, 1))
        sp = SourceEvent(2, 3, 0.0, 0.2, synth_class_waveform(6, 0.2, FS, 2))
        with pytest.raises(ValueError):
            mix_two_source(ae, sp, tiny_scene, 17.5)


class TestFileIO:
    def _recording(self, scene):
        wav = synth_class_waveform(0, 0.3, FS, 1)
        return render_recording([SourceEvent(0, 1, 0.1, 0.3, wav)], scene, 18.7, seed=2)

    def test_raw_float32_roundtrip_bit_exact(self, tiny_scene, tmp_path):
        rec = self._recording(tiny_scene)
        path = tmp_path / "rec.f32"
        stored = rec.channels.astype("<f4")
        save_raw(path, rec.channels)
        back = load_raw(path, tiny_scene.n_mics_total)
        np.testing.assert_array_equal(back, stored)

    def test_wav_float32_roundtrip(self, tiny_scene, tmp_path):
        rec = self._recording(tiny_scene)
        path = tmp_path / "rec.wav"
        save_wav(path, rec, dtype="float32")
        fs, back = load_wav(path)
        assert fs == FS
        np.testing.assert_array_equal(back.astype(np.float32), rec.channels.astype(np.float32))

    def test_ground_truth_sidecar_roundtrip(self, tiny_scene, tmp_path):
        events = [
            SourceEvent(0, 1, 0.1, 0.3),
            SourceEvent(2, 3, 0.5, 0.25),
        ]
        path = tmp_path / "truth.txt"
        write_ground_truth(path, events, tiny_scene)
        back = read_ground_truth(path, tiny_scene)
        assert len(back) == 2
        for orig, loaded in zip(events, back):
            assert loaded.class_id == orig.class_id
            assert loaded.cell_id == orig.cell_id
            assert loaded.start_time == pytest.approx(orig.start_time, abs=1e-6)
            assert loaded.duration == pytest.approx(orig.duration, abs=1e-6)
