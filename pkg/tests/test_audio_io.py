import numpy as np
import pytest
from scipy.io import wavfile

from aad import audio_io
from aad.audio_io import (
    AudioClip,
    SynthConfig,
    read_wav,
    resample,
    scan_dataset,
    split_index,
    synth_generate,
    write_wav,
)
from aad.errors import (
    ContractError,
    DatasetEmptyError,
    FormatError,
    UnsupportedFormatError,
)
from conftest import dominant_freq_hz


class TestReadWav:
    def test_pcm16_fixed_point_scaling(self, tmp_path):
        path = tmp_path / "a.wav"
        wavfile.write(str(path), 22050, np.array([0, 16384, -16384], dtype=np.int16))
        clip = read_wav(path)
        assert clip.sample_rate == 22050
        np.testing.assert_array_equal(clip.samples, [0.0, 0.5, -0.5])

    def test_one_second_sample_count(self, tmp_path):
        path = tmp_path / "a.wav"
        wavfile.write(str(path), 22050, np.zeros(22050, dtype=np.int16))
        assert len(read_wav(path).samples) == 22050

    def test_ten_seconds_at_22050(self, tmp_path):
        path = tmp_path / "a.wav"
        wavfile.write(str(path), 22050, np.zeros(220500, dtype=np.float32))
        clip = read_wav(path)
        assert len(clip.samples) == 220500
        assert clip.duration_s == pytest.approx(10.0)

    def test_multichannel_averages_to_mono(self, tmp_path):
        path = tmp_path / "a.wav"
        data = np.stack([np.full(100, 0.2, np.float32),
                         np.full(100, 0.6, np.float32)], axis=1)
        wavfile.write(str(path), 16000, data)
        clip = read_wav(path)
        assert clip.samples.ndim == 1
        np.testing.assert_allclose(clip.samples, 0.4, rtol=1e-6)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"this is not a wav file at all")
        with pytest.raises(FormatError):
            read_wav(path)

    def test_unsupported_encoding(self, tmp_path):
        path = tmp_path / "f64.wav"
        wavfile.write(str(path), 16000, np.zeros(10, dtype=np.float64))
        with pytest.raises(UnsupportedFormatError):
            read_wav(path)

    def test_float32_roundtrip_lossless(self, tmp_path):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, 1000).astype(np.float32)
        path = tmp_path / "f32.wav"
        write_wav(path, x, 16000, encoding="float32")
        np.testing.assert_array_equal(read_wav(path).samples, x)

    def test_pcm16_roundtrip_within_one_lsb(self, tmp_path):
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, 1000).astype(np.float32)
        x[0], x[1] = 1.0, -1.0
        path = tmp_path / "p16.wav"
        write_wav(path, x, 16000, encoding="pcm16")
        back = read_wav(path).samples
        assert np.max(np.abs(back - x)) <= 1.0 / 32768 + 1e-9


class TestResample:
    def test_identity_rate(self, sine_clip):
        out = resample(sine_clip, sine_clip.sample_rate)
        np.testing.assert_array_equal(out.samples, sine_clip.samples)

    def test_downsample_keeps_sine_peak(self):
        # 1 kHz sine at 44.1k resampled to 22.05k: dominant bin stays 1 kHz
        src = AudioClip(
            samples=(0.5 * np.sin(2 * np.pi * 1000.0 * np.arange(44100) / 44100)
                     ).astype(np.float32),
            sample_rate=44100,
        )
        out = resample(src, 22050)
        assert dominant_freq_hz(out.samples, out.sample_rate) == pytest.approx(1000.0, abs=2.0)

    def test_constant_signal_stays_constant(self):
        clip = AudioClip(np.full(8000, 0.25, np.float32), 8000)
        out = resample(clip, 16000)
        np.testing.assert_allclose(out.samples, 0.25, rtol=1e-6)

    def test_duration_within_one_sample_period(self, sine_clip):
        out = resample(sine_clip, 16000)
        assert abs(out.duration_s - sine_clip.duration_s) <= 1.0 / 16000

    def test_bad_target_rate(self, sine_clip):
        with pytest.raises(ContractError):
            resample(sine_clip, 0)


def _make_tree(root, spec):
    """spec: list of (machine_type, id, label_dir, filename)."""
    for mtype, mid, label_dir, name in spec:
        d = root / mtype / f"id_{mid:02d}" / label_dir
        d.mkdir(parents=True, exist_ok=True)
        wavfile.write(str(d / name), 16000, np.zeros(16, dtype=np.int16))


class TestScanDataset:
    def test_single_entry(self, tmp_path):
        _make_tree(tmp_path, [("fan", 0, "normal", "a.wav")])
        idx = scan_dataset(tmp_path)
        assert len(idx) == 1
        e = idx.entries[0]
        assert (e.machine_type, e.machine_id, e.label) == ("fan", 0, "normal")

    def test_counts_over_two_ids(self, tmp_path):
        spec = []
        for mid in (0, 2):
            spec += [("fan", mid, "normal", f"n{i}.wav") for i in range(3)]
            spec += [("fan", mid, "abnormal", "x0.wav")]
        _make_tree(tmp_path, spec)
        idx = scan_dataset(tmp_path)
        assert len(idx) == 8
        assert len(idx.with_label(audio_io.ANOMALY)) == 2

    def test_abnormal_maps_to_anomaly(self, tmp_path):
        _make_tree(tmp_path, [("pump", 4, "abnormal", "a.wav")])
        idx = scan_dataset(tmp_path)
        assert idx.entries[0].label == audio_io.ANOMALY

    def test_empty_tree_raises(self, tmp_path):
        with pytest.raises(DatasetEmptyError):
            scan_dataset(tmp_path)

    def test_scan_is_pure(self, tmp_path):
        _make_tree(tmp_path, [("fan", 0, "normal", "b.wav"),
                              ("fan", 0, "normal", "a.wav"),
                              ("valve", 6, "abnormal", "z.wav")])
        a = scan_dataset(tmp_path)
        b = scan_dataset(tmp_path)
        assert a.entries == b.entries


class TestSynthGenerate:
    def test_deterministic_byte_identical(self, tmp_path):
        cfg = SynthConfig(n_normal=3, n_anomaly=2, duration_s=0.5, seed=7)
        idx1 = synth_generate(tmp_path / "a", cfg)
        idx2 = synth_generate(tmp_path / "b", cfg)
        for e1, e2 in zip(idx1.entries, idx2.entries):
            b1 = open(idx1.full_path(e1), "rb").read()
            b2 = open(idx2.full_path(e2), "rb").read()
            assert b1 == b2

    def test_label_counts_exact(self, tmp_path):
        cfg = SynthConfig(n_normal=5, n_anomaly=3, duration_s=0.2, seed=1)
        idx = synth_generate(tmp_path, cfg)
        assert len(idx.with_label(audio_io.NORMAL)) == 5
        assert len(idx.with_label(audio_io.ANOMALY)) == 3

    def test_no_anomalies_requested(self, tmp_path):
        cfg = SynthConfig(n_normal=2, n_anomaly=0, duration_s=0.2, seed=1)
        idx = synth_generate(tmp_path, cfg)
        assert len(idx.with_label(audio_io.ANOMALY)) == 0

    def test_normal_clip_harmonic_peaks(self, tmp_path):
        cfg = SynthConfig(n_normal=1, n_anomaly=0, duration_s=2.0, seed=5)
        idx = synth_generate(tmp_path, cfg)
        clip = idx.read(idx.entries[0])
        spec = np.abs(np.fft.rfft(clip.samples.astype(np.float64)))
        freqs = np.fft.rfftfreq(len(clip.samples), 1 / clip.sample_rate)
        # the three largest spectral peaks sit at the harmonic stack
        top = freqs[np.argsort(spec)[-3:]]
        assert sorted(np.round(top).astype(int)) == [120, 240, 360]

    def test_roundtrip_lossless(self, tmp_path):
        cfg = SynthConfig(n_normal=1, n_anomaly=1, duration_s=0.3, seed=9)
        idx = synth_generate(tmp_path, cfg)
        for e in idx.entries:
            clip = idx.read(e)
            assert clip.samples.dtype == np.float32
            assert np.all(np.isfinite(clip.samples))
            assert np.max(np.abs(clip.samples)) <= 1.0


class TestSplitIndex:
    def test_partition_disjoint_and_complete(self, tmp_path):
        cfg = SynthConfig(n_normal=20, n_anomaly=5, duration_s=0.2, seed=2)
        idx = synth_generate(tmp_path, cfg)
        train, test = split_index(idx, test_normal_fraction=0.2, seed=3)
        train_paths = {e.path for e in train.entries}
        test_paths = {e.path for e in test.entries}
        assert not train_paths & test_paths
        assert train_paths | test_paths == {e.path for e in idx.entries}
        assert all(e.label == audio_io.NORMAL for e in train.entries)
        assert len(test.with_label(audio_io.ANOMALY)) == 5
        assert len(test.with_label(audio_io.NORMAL)) == 4

    def test_deterministic(self, tmp_path):
        cfg = SynthConfig(n_normal=10, n_anomaly=2, duration_s=0.2, seed=2)
        idx = synth_generate(tmp_path, cfg)
        a = split_index(idx, 0.1, seed=5)
        b = split_index(idx, 0.1, seed=5)
        assert a[0].entries == b[0].entries
        assert a[1].entries == b[1].entries
