"""Read, write, resample and synthesize audio clips; scan MIMII-layout datasets.

A dataset root is expected to look like::

    <root>/<machine_type>/id_<NN>/<normal|abnormal>/*.wav

with ``abnormal`` directories holding the anomaly-labeled recordings.
"""

from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import (
    ContractError,
    DatasetEmptyError,
    FormatError,
    UnsupportedFormatError,
)

NORMAL = "normal"
ANOMALY = "anomaly"
UNLABELED = "unlabeled"

MACHINE_TYPES = ("fan", "pump", "slider", "valve", "synthetic")

# Harmonic stack used by the synthetic generator (fundamental + 2 overtones).
_SYNTH_HARMONICS = ((120.0, 0.45), (240.0, 0.27), (360.0, 0.18))
_SYNTH_NOISE = 0.01
_ANOMALY_KINDS = ("burst", "detune", "dropout")


@dataclass
class AudioClip:
    """Mono waveform with metadata. Samples are float32 in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    source_path: str | None = None
    machine_type: str | None = None
    machine_id: int | None = None
    label: str = UNLABELED

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class DatasetEntry:
    machine_type: str
    machine_id: int
    label: str
    path: str  # relative to the index root


@dataclass
class DatasetIndex:
    root: str
    entries: list[DatasetEntry] = field(default_factory=list)

    def full_path(self, entry: DatasetEntry) -> str:
        return str(Path(self.root) / entry.path)

    def read(self, entry: DatasetEntry) -> AudioClip:
        clip = read_wav(self.full_path(entry))
        clip.machine_type = entry.machine_type
        clip.machine_id = entry.machine_id
        clip.label = entry.label
        return clip

    def with_label(self, label: str) -> list[DatasetEntry]:
        return [e for e in self.entries if e.label == label]

    def machines(self) -> list[tuple[str, int]]:
        """Distinct (machine_type, machine_id) pairs, sorted."""
        return sorted({(e.machine_type, e.machine_id) for e in self.entries})

    def __len__(self) -> int:
        return len(self.entries)


def read_wav(path: str | Path) -> AudioClip:
    """Read a RIFF/WAVE file (PCM16 or float32) as a mono clip in [-1, 1].

    Multi-channel audio is averaged down to mono. PCM16 samples are scaled
    by 2**15.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # scipy chunk warnings
            rate, data = wavfile.read(str(path))
    except ValueError as exc:
        msg = str(exc).lower()
        if "unknown" in msg or "unsupported" in msg or "format" in msg:
            raise UnsupportedFormatError(f"{path}: {exc}") from exc
        raise FormatError(f"{path}: {exc}") from exc
    except Exception as exc:  # truncated chunks surface as struct errors
        raise FormatError(f"{path}: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported sample encoding {data.dtype}; "
            "expected PCM 16-bit or IEEE float 32-bit"
        )
    if samples.ndim > 1:
        samples = samples.mean(axis=1, dtype=np.float64).astype(np.float32)
    return AudioClip(samples=samples, sample_rate=int(rate), source_path=str(path))


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int,
              encoding: str = "float32") -> None:
    """Write mono samples as a WAV file, float32 (default) or pcm16."""
    samples = np.asarray(samples)
    if encoding == "float32":
        wavfile.write(str(path), sample_rate, samples.astype("<f4"))
    elif encoding == "pcm16":
        q = np.clip(np.round(samples.astype(np.float64) * 32768.0), -32768, 32767)
        wavfile.write(str(path), sample_rate, q.astype("<i2"))
    else:
        raise ContractError(f"unknown encoding {encoding!r}")


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample a clip by linear interpolation onto the target-rate grid.

    Output duration matches the input duration within one sample period.
    """
    if target_rate <= 0:
        raise ContractError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        out = clip.samples
    else:
        n_in = len(clip.samples)
        n_out = int(round(n_in * target_rate / clip.sample_rate))
        t_out = np.arange(n_out, dtype=np.float64) / target_rate
        t_in = np.arange(n_in, dtype=np.float64) / clip.sample_rate
        out = np.interp(t_out, t_in, clip.samples.astype(np.float64))
        out = out.astype(np.float32)
    return AudioClip(
        samples=out,
        sample_rate=int(target_rate),
        source_path=clip.source_path,
        machine_type=clip.machine_type,
        machine_id=clip.machine_id,
        label=clip.label,
    )


def scan_dataset(root: str | Path) -> DatasetIndex:
    """Scan a MIMII-layout tree into a deterministic, lexicographic index."""
    root = Path(root)
    entries = []
    for wav in sorted(root.glob("*/id_*/*/*.wav")):
        label_dir = wav.parent.name
        if label_dir == "normal":
            label = NORMAL
        elif label_dir == "abnormal":
            label = ANOMALY
        else:
            continue
        id_dir = wav.parent.parent.name
        try:
            machine_id = int(id_dir.split("_", 1)[1])
        except (IndexError, ValueError):
            continue
        machine_type = wav.parent.parent.parent.name
        entries.append(DatasetEntry(
            machine_type=machine_type,
            machine_id=machine_id,
            label=label,
            path=str(wav.relative_to(root)),
        ))
    if not entries:
        raise DatasetEmptyError(f"no dataset entries under {root}")
    return DatasetIndex(root=str(root), entries=entries)


def split_index(index: DatasetIndex, test_normal_fraction: float = 0.1,
                seed: int = 0) -> tuple[DatasetIndex, DatasetIndex]:
    """Split an index into (train, test) partitions, per machine ID.

    Train receives a deterministic random subset of the normals; test
    receives the held-out normals plus every anomaly.
    """
    if not 0.0 < test_normal_fraction < 1.0:
        raise ContractError("test_normal_fraction must be in (0, 1)")
    train_entries: list[DatasetEntry] = []
    test_entries: list[DatasetEntry] = []
    for mtype, mid in index.machines():
        group = [e for e in index.entries
                 if e.machine_type == mtype and e.machine_id == mid]
        normals = [e for e in group if e.label == NORMAL]
        rng = np.random.default_rng([seed, zlib.crc32(f"{mtype}/{mid}".encode())])
        order = rng.permutation(len(normals))
        n_test = max(1, int(round(test_normal_fraction * len(normals))))
        held = {int(i) for i in order[:n_test]}
        train_entries.extend(e for i, e in enumerate(normals) if i not in held)
        test_entries.extend(e for i, e in enumerate(normals) if i in held)
        test_entries.extend(e for e in group if e.label == ANOMALY)
    key = lambda e: (e.machine_type, e.machine_id, e.path)
    return (
        DatasetIndex(root=index.root, entries=sorted(train_entries, key=key)),
        DatasetIndex(root=index.root, entries=sorted(test_entries, key=key)),
    )


@dataclass
class SynthConfig:
    """Configuration for the synthetic stand-in dataset."""

    n_normal: int
    n_anomaly: int
    duration_s: float = 2.0
    sample_rate: int = 16000
    seed: int = 0


def _normal_waveform(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    t = np.arange(n, dtype=np.float64) / sr
    level = 0.8 + 0.2 * rng.uniform()
    x = np.zeros(n, dtype=np.float64)
    for freq, amp in _SYNTH_HARMONICS:
        x += level * amp * np.sin(2.0 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    x += rng.normal(0.0, _SYNTH_NOISE, n)
    return x


def _anomaly_waveform(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    kind = _ANOMALY_KINDS[rng.integers(len(_ANOMALY_KINDS))]
    t = np.arange(n, dtype=np.float64) / sr
    level = 0.8 + 0.2 * rng.uniform()
    harmonics = list(_SYNTH_HARMONICS)
    detuned = rng.integers(len(harmonics))
    x = np.zeros(n, dtype=np.float64)
    for h, (freq, amp) in enumerate(harmonics):
        if kind == "detune" and h == detuned:
            freq *= rng.uniform(1.25, 1.5)
        x += level * amp * np.sin(2.0 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    x += rng.normal(0.0, _SYNTH_NOISE, n)
    if kind == "burst":
        span = max(1, int(0.15 * n))
        start = int(rng.integers(0, n - span))
        x[start:start + span] += rng.normal(0.0, 0.5, span)
    elif kind == "dropout":
        span = max(1, int(0.25 * n))
        start = int(rng.integers(0, n - span))
        x[start:start + span] *= 0.05
    return x


def synth_generate(root: str | Path, config: SynthConfig) -> DatasetIndex:
    """Write a deterministic synthetic dataset under ``root`` and index it.

    Normal clips are a fixed harmonic stack (120/240/360 Hz) over a low
    noise floor; anomalies add one of a broadband burst, a detuned
    harmonic, or an amplitude dropout, chosen per clip from the seed.
    """
    if config.n_normal < 0 or config.n_anomaly < 0:
        raise ContractError("clip counts must be non-negative")
    if config.duration_s <= 0:
        raise ContractError("duration_s must be positive")
    root = Path(root)
    n = int(round(config.duration_s * config.sample_rate))
    normal_dir = root / "synthetic" / "id_00" / "normal"
    abnormal_dir = root / "synthetic" / "id_00" / "abnormal"
    normal_dir.mkdir(parents=True, exist_ok=True)
    if config.n_anomaly > 0:
        abnormal_dir.mkdir(parents=True, exist_ok=True)
    for i in range(config.n_normal):
        rng = np.random.default_rng([config.seed, i])
        x = np.clip(_normal_waveform(rng, n, config.sample_rate), -1.0, 1.0)
        write_wav(normal_dir / f"{i:04d}.wav", x.astype(np.float32),
                  config.sample_rate)
    for i in range(config.n_anomaly):
        rng = np.random.default_rng([config.seed, 10_000 + i])
        x = np.clip(_anomaly_waveform(rng, n, config.sample_rate), -1.0, 1.0)
        write_wav(abnormal_dir / f"{i:04d}.wav", x.astype(np.float32),
                  config.sample_rate)
    return scan_dataset(root)
