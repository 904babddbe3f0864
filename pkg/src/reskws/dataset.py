"""Speech Commands ingestion: labels, hash-based splits, silence, augmentation, feature cache."""

import hashlib
import json
import math
import re
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frontend import CLIP_SAMPLES, SAMPLE_RATE, pad_or_clip, read_wav

KEYWORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
UNKNOWN_INDEX = 10
SILENCE_INDEX = 11
CLASS_NAMES = KEYWORDS + ("unknown", "silence")
BACKGROUND_DIR = "_background_noise_"
MAX_NUM_WAVS_PER_CLASS = 2**27 - 1
SPLITS = ("train", "validation", "test")


class DatasetError(RuntimeError):
    pass


def label_index(word: str) -> int:
    """Class index of a dataset word: keywords 0-9 in list order, everything else unknown."""
    if word == "silence":
        return SILENCE_INDEX
    try:
        return KEYWORDS.index(word)
    except ValueError:
        return UNKNOWN_INDEX


@dataclass(frozen=True)
class LabeledSample:
    path: str | None  # None for synthesized silence
    word: str
    label: int
    split: str


@dataclass(frozen=True)
class AugmentationConfig:
    noise_prob: float = 0.8
    shift_ms: float = 100.0  # Y ~ Uniform[-shift_ms, shift_ms]
    noise_max_amplitude: float = 0.1
    cache_eviction_frac: float = 0.3
    silence_frac: float = 0.1
    unknown_frac: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError("noise_prob must lie in [0, 1]")
        if self.shift_ms < 0:
            raise ValueError("shift_ms must be non-negative")
        if not 0.0 <= self.cache_eviction_frac <= 1.0:
            raise ValueError("cache_eviction_frac must lie in [0, 1]")
        if self.silence_frac < 0 or self.unknown_frac < 0:
            raise ValueError("silence/unknown fractions must be non-negative")


def hash_stem(filename: str) -> str:
    """Basename with any ``_nohash_...`` suffix removed; all clips of one speaker share it."""
    return re.sub(r"_nohash_.*$", "", Path(filename).name)


def assign_split(filename: str, val_pct: float = 10, test_pct: float = 10) -> str:
    stem = hash_stem(filename)
    digest = int(hashlib.sha1(stem.encode("utf-8")).hexdigest(), 16)
    pct = (digest % (MAX_NUM_WAVS_PER_CLASS + 1)) * (100.0 / MAX_NUM_WAVS_PER_CLASS)
    if pct < val_pct:
        return "validation"
    if pct < val_pct + test_pct:
        return "test"
    return "train"


class NoiseBank:
    def __init__(self, clips=()):
        self.clips = [np.asarray(c, dtype=np.float64) for c in clips]

    def __len__(self):
        return len(self.clips)

    def segment(self, rng) -> np.ndarray:
        """A random one-second stretch of a random clip (short clips are zero-padded)."""
        if not self.clips:
            raise DatasetError("noise bank is empty; background noise clips are required")
        clip = self.clips[rng.integers(len(self.clips))]
        if clip.size <= CLIP_SAMPLES:
            return pad_or_clip(clip)
        start = rng.integers(clip.size - CLIP_SAMPLES + 1)
        return clip[start : start + CLIP_SAMPLES].copy()


def make_silence(noise: NoiseBank, rng, scale=None) -> np.ndarray:
    seg = noise.segment(rng)
    scale = rng.uniform(0.0, 1.0) if scale is None else scale
    return seg * scale


def time_shift(buf: np.ndarray, shift_samples: int) -> np.ndarray:
    """Delay (positive) or advance (negative) with zero fill; length is preserved."""
    out = np.zeros_like(buf)
    if shift_samples > 0:
        out[shift_samples:] = buf[: buf.size - shift_samples]
    elif shift_samples < 0:
        out[: buf.size + shift_samples] = buf[-shift_samples:]
    else:
        out[:] = buf
    return out


def augment(sample: np.ndarray, noise: NoiseBank, cfg: AugmentationConfig, rng, shift_samples=None) -> np.ndarray:
    """Random time shift, then (with probability ``noise_prob``) additive background noise.

    The shift is drawn from Uniform[-shift_ms, shift_ms] and rounded to whole
    samples unless ``shift_samples`` is given. Output is clipped to [-1, 1].
    """
    if shift_samples is None:
        max_shift = cfg.shift_ms * SAMPLE_RATE / 1000.0
        shift_samples = int(round(rng.uniform(-max_shift, max_shift)))
    out = time_shift(np.asarray(sample, dtype=np.float64), shift_samples)
    if cfg.noise_prob > 0 and rng.uniform() < cfg.noise_prob:
        out = out + noise.segment(rng) * rng.uniform(0.0, cfg.noise_max_amplitude)
    return np.clip(out, -1.0, 1.0)


class EpochCache:
    """Feature cache reused across epochs, with random partial eviction between them.

    Reads and inserts take a lock, so concurrent readers are safe; ``evict`` is
    meant to be called by the single training loop between epochs.
    """

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._store)

    def __contains__(self, key):
        return key in self._store

    def keys(self):
        return list(self._store)

    def get(self, key, compute):
        with self._lock:
            if key in self._store:
                return self._store[key]
        value = compute()
        with self._lock:
            return self._store.setdefault(key, value)

    def put(self, key, value):
        with self._lock:
            self._store[key] = value

    def evict(self, frac, rng):
        """Drop ``round(frac * len)`` uniformly chosen entries; returns the evicted keys."""
        with self._lock:
            keys = sorted(self._store)
            n = int(round(frac * len(keys)))
            victims = [keys[i] for i in rng.choice(len(keys), size=n, replace=False)] if n else []
            for k in victims:
                del self._store[k]
        return victims


def epoch_cache(store: EpochCache, key, compute):
    return store.get(key, compute)


def scan_dataset(root, val_pct=10, test_pct=10) -> tuple[list[LabeledSample], NoiseBank]:
    """Walk ``<root>/<word>/*.wav``; background noise goes to the NoiseBank."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(
            f"dataset root {root} does not exist; expected <root>/<word>/<clip>.wav "
            f"and <root>/{BACKGROUND_DIR}/*.wav"
        )
    samples, missing = [], []
    for kw in KEYWORDS:
        if not any((root / kw).glob("*.wav")):
            missing.append(kw)
    if missing:
        raise DatasetError(f"{root}: no WAV files for keyword(s) {', '.join(missing)}; expected one directory per keyword: {', '.join(KEYWORDS)}")
    for word_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        if word_dir.name == BACKGROUND_DIR or word_dir.name.startswith("."):
            continue
        word = word_dir.name
        for wav in sorted(word_dir.glob("*.wav")):
            rel = f"{word}/{wav.name}"
            samples.append(LabeledSample(rel, word, label_index(word), assign_split(wav.name, val_pct, test_pct)))
    noise_dir = root / BACKGROUND_DIR
    clips = [read_wav(p) for p in sorted(noise_dir.glob("*.wav"))] if noise_dir.is_dir() else []
    return samples, NoiseBank(clips)


def split_items(samples, split, cfg: AugmentationConfig, rng) -> list[LabeledSample]:
    """The examples one split contributes: all keyword clips, plus silence and unknown
    entries sized as fractions of the keyword count. Unknown clips are sampled
    without replacement; silence entries have ``path=None``.
    """
    pool = [s for s in samples if s.split == split]
    known = [s for s in pool if s.label < UNKNOWN_INDEX]
    unknown = [s for s in pool if s.label == UNKNOWN_INDEX]
    n_unknown = min(len(unknown), int(math.ceil(len(known) * cfg.unknown_frac)))
    n_silence = int(math.ceil(len(known) * cfg.silence_frac))
    picked = [unknown[i] for i in sorted(rng.choice(len(unknown), size=n_unknown, replace=False))] if n_unknown else []
    silence = [LabeledSample(None, "silence", SILENCE_INDEX, split)] * n_silence
    return known + picked + silence


def load_audio(root, sample: LabeledSample) -> np.ndarray:
    return pad_or_clip(read_wav(Path(root) / sample.path))


def export_manifest(samples, path) -> None:
    """One JSON object per line: path, label, split."""
    with open(path, "w") as f:
        for s in samples:
            f.write(json.dumps({"path": s.path, "label": s.label, "split": s.split}) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
