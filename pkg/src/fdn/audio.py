"""Waveform ingestion and preprocessing.

Hand-rolled RIFF/WAVE parsing (PCM 16-bit and IEEE float 32-bit, mono or
stereo-averaged), first-order pre-emphasis, crop/pad to fixed lengths,
linear-interpolation speed perturbation, and a deterministic synthetic
corpus of harmonic "speakers" for desk-scale experiments.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 16000
PRE_EMPHASIS_COEFF = 0.97


class WavFormatError(ValueError):
    """Malformed or unsupported WAV content; the message names the bad chunk."""


@dataclass
class Waveform:
    """Mono PCM samples (float64, nominally in [-1, 1]) plus sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D sample array")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate < 1:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


# ---------------------------------------------------------------------------
# WAV file I/O
# ---------------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Parse a RIFF/WAVE file: PCM16 or float32, mono (stereo is averaged).

    16-bit samples map to [-1, 1) by division by 32768.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF":
        raise WavFormatError("missing RIFF chunk")
    if raw[8:12] != b"WAVE":
        raise WavFormatError("RIFF form type is not WAVE")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"truncated {cid.decode('ascii', 'replace')!r} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunk bodies are word-aligned

    if fmt is None:
        raise WavFormatError("missing fmt chunk")
    if data is None:
        raise WavFormatError("missing data chunk")
    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if channels < 1:
        raise WavFormatError("fmt chunk declares zero channels")

    if audio_format == 1 and bits == 16:
        ints = np.frombuffer(data, dtype="<i2")
        samples = ints.astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
        samples = np.clip(samples, -1.0, 1.0)
    else:
        raise WavFormatError(
            f"unsupported codec in fmt chunk (format {audio_format}, {bits}-bit); "
            "only PCM16 and IEEE float32 are handled"
        )
    if channels > 1:
        usable = samples.size - samples.size % channels
        samples = samples[:usable].reshape(-1, channels).mean(axis=1)
    if samples.size == 0:
        raise WavFormatError("data chunk holds no samples")
    return Waveform(samples, sample_rate)


def write_wav(path, wave: Waveform):
    """Write mono PCM16 with saturation; inverts read_wav's 16-bit scaling."""
    ints = np.clip(np.rint(wave.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, wave.sample_rate,
                                    wave.sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def pre_emphasis(wave: Waveform, coeff: float = PRE_EMPHASIS_COEFF) -> Waveform:
    """First-order high-pass: y[0] = x[0], y[t] = x[t] - coeff * x[t-1]."""
    if not 0.0 <= coeff < 1.0:
        raise ValueError("pre-emphasis coefficient must lie in [0, 1)")
    x = wave.samples
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - coeff * x[:-1]
    return Waveform(y, wave.sample_rate)


def crop_or_pad(wave: Waveform, n: int, policy: str = "center", rng=None) -> Waveform:
    """Return exactly n samples: contiguous crop if longer (random offset under
    the ``random`` policy, centered otherwise), cyclic repetition if shorter."""
    if n < 1:
        raise ValueError("target length must be >= 1")
    if policy not in ("random", "center"):
        raise ValueError(f"unknown crop policy {policy!r}")
    x = wave.samples
    if x.size == n:
        return Waveform(x.copy(), wave.sample_rate)
    if x.size > n:
        if policy == "random":
            if rng is None:
                raise ValueError("random crop policy needs an rng or seed")
            offset = int(np.random.default_rng(rng).integers(0, x.size - n + 1))
        else:
            offset = (x.size - n) // 2
        return Waveform(x[offset:offset + n].copy(), wave.sample_rate)
    reps = -(-n // x.size)
    return Waveform(np.tile(x, reps)[:n], wave.sample_rate)


def speed_perturb(wave: Waveform, factor: float) -> Waveform:
    """Resample the time axis by ``factor`` with linear interpolation.

    factor > 1 plays faster (shorter output, length round(len/factor));
    factor 1.0 is the identity. Output positions map to input position
    ``i * factor``, clamped at the last sample.
    """
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"speed factor {factor} outside [0.5, 2.0]")
    x = wave.samples
    if factor == 1.0:
        return Waveform(x.copy(), wave.sample_rate)
    new_len = int(round(x.size / factor))
    positions = np.minimum(np.arange(new_len) * factor, x.size - 1)
    return Waveform(np.interp(positions, np.arange(x.size), x), wave.sample_rate)


# ---------------------------------------------------------------------------
# corpus manifest
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    utterance_id: str
    speaker_id: str
    path: Path


@dataclass
class CorpusManifest:
    """Utterance inventory for one split; paths are resolved absolute."""

    entries: list
    split: str = "train"

    def __post_init__(self):
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate utterance ids in manifest")

    def __len__(self):
        return len(self.entries)

    @property
    def speakers(self) -> list:
        return sorted({e.speaker_id for e in self.entries})

    def by_id(self) -> dict:
        return {e.utterance_id: e for e in self.entries}


def write_manifest(path, manifest: CorpusManifest):
    """One ``utterance_id<TAB>speaker_id<TAB>path`` line per entry; paths are
    stored relative to the manifest's directory when possible."""
    path = Path(path)
    lines = []
    for e in manifest.entries:
        p = Path(e.path)
        try:
            p = p.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(f"{e.utterance_id}\t{e.speaker_id}\t{p.as_posix()}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path, split: str = "train") -> CorpusManifest:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        utt, spk, rel = parts
        p = Path(rel)
        if not p.is_absolute():
            p = path.parent / p
        entries.append(ManifestEntry(utt, spk, p))
    return CorpusManifest(entries, split=split)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


def _speaker_voice(rng: np.random.Generator, index: int):
    """Fixed per-speaker timbre: three partials confined to a private spectral
    band (bands of different speakers never overlap, and they sit high enough
    that pre-emphasis keeps the speaker energy above the noise floor), plus a
    characteristic slow amplitude envelope."""
    band_lo = 400.0 + 120.0 * index
    freqs = np.sort(band_lo + rng.uniform(0.0, 90.0, size=3))
    amps = rng.uniform(0.3, 1.0, size=3)
    amps /= amps.sum()
    env_rate = float(rng.uniform(1.5, 6.0))
    env_depth = float(rng.uniform(0.05, 0.25))
    return freqs, amps, env_rate, env_depth


def _render_utterance(rng: np.random.Generator, voice, length: int, sample_rate: int) -> np.ndarray:
    freqs, amps, env_rate, env_depth = voice
    t = np.arange(length) / sample_rate
    jitter = 1.0 + float(rng.uniform(-0.003, 0.003))
    sig = np.zeros(length)
    for freq, amp in zip(freqs, amps):
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        sig += amp * np.sin(2.0 * np.pi * freq * jitter * t + phase)
    env_phase = float(rng.uniform(0.0, 2.0 * np.pi))
    sig *= 1.0 + env_depth * np.sin(2.0 * np.pi * env_rate * t + env_phase)
    sig += rng.normal(0.0, 0.002, size=length)
    peak = np.abs(sig).max()
    return 0.9 * sig / peak


def generate_synthetic_corpus(out_dir, num_speakers: int, train_utts: int, test_utts: int,
                              utt_samples: int = 8748, seed: int = 0,
                              sample_rate: int = DEFAULT_SAMPLE_RATE):
    """Write a deterministic WAV corpus plus train/test manifests.

    Each synthetic speaker is a fixed harmonic stack (three partials of a
    speaker-specific fundamental) with a characteristic amplitude envelope;
    utterances of one speaker differ only in seeded phases, pitch jitter and
    noise. The corpus is separable by construction (distinct fundamentals).

    Returns (train_manifest, test_manifest); test_utts may be 0, in which
    case the test manifest is empty and not written.
    """
    if num_speakers < 2:
        raise ValueError("need at least 2 speakers")
    if train_utts < 1:
        raise ValueError("need at least 1 training utterance per speaker")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    train_entries, test_entries = [], []
    for s in range(num_speakers):
        speaker_id = f"spk{s:03d}"
        voice = _speaker_voice(rng, s)
        for u in range(train_utts + test_utts):
            split = "train" if u < train_utts else "test"
            utt_id = f"{speaker_id}-{split}{u:03d}"
            wav_path = wav_dir / f"{utt_id}.wav"
            samples = _render_utterance(rng, voice, utt_samples, sample_rate)
            write_wav(wav_path, Waveform(samples, sample_rate))
            entry = ManifestEntry(utt_id, speaker_id, wav_path)
            (train_entries if split == "train" else test_entries).append(entry)

    train_manifest = CorpusManifest(train_entries, split="train")
    test_manifest = CorpusManifest(test_entries, split="test")
    write_manifest(out_dir / "train.tsv", train_manifest)
    if test_utts > 0:
        write_manifest(out_dir / "test.tsv", test_manifest)
    return train_manifest, test_manifest


def corpus_checksum(manifest: CorpusManifest) -> str:
    """SHA-256 over every audio file, in manifest order."""
    digest = hashlib.sha256()
    for e in manifest.entries:
        digest.update(Path(e.path).read_bytes())
    return digest.hexdigest()
