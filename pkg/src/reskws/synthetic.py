"""Write a small stand-in for the Speech Commands tree.

Each word is a fixed pair of frequency sweeps with a word-specific envelope;
"speakers" perturb pitch, onset, loudness and length. Background noise clips
(white, pink, brown) go in ``_background_noise_``. Useful for exercising the
whole pipeline without the real corpus.
"""

from pathlib import Path

import numpy as np

from .dataset import BACKGROUND_DIR, KEYWORDS
from .frontend import SAMPLE_RATE, write_wav

UNKNOWN_WORDS = ("bed", "bird", "cat", "dog")


def _word_recipe(word):
    seed = int.from_bytes(word.encode(), "little") % (2**32)
    r = np.random.default_rng(seed)
    return {
        "f0": r.uniform(200, 900),
        "f1": r.uniform(900, 3200),
        "sweep0": r.uniform(-0.5, 0.5),
        "sweep1": r.uniform(-0.4, 0.4),
        "dur": r.uniform(0.35, 0.7),
        "am": r.uniform(2, 12),
    }


def synth_word(word, rng, length=SAMPLE_RATE):
    rec = _word_recipe(word)
    pitch = rng.uniform(0.92, 1.08)
    dur = rec["dur"] * rng.uniform(0.9, 1.1)
    onset = rng.uniform(0.1, 0.9 - dur) if dur < 0.8 else 0.05
    t = np.arange(int(dur * SAMPLE_RATE)) / SAMPLE_RATE
    frac = t / dur
    f0 = rec["f0"] * pitch * (1 + rec["sweep0"] * frac)
    f1 = rec["f1"] * pitch * (1 + rec["sweep1"] * frac)
    phase0 = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    phase1 = 2 * np.pi * np.cumsum(f1) / SAMPLE_RATE
    env = np.sin(np.pi * frac) ** 2 * (0.6 + 0.4 * np.sin(2 * np.pi * rec["am"] * t))
    voice = env * (np.sin(phase0) + 0.6 * np.sin(phase1))
    out = np.zeros(length)
    start = int(onset * SAMPLE_RATE)
    seg = voice[: max(0, length - start)]
    out[start : start + seg.size] = seg
    out *= rng.uniform(0.2, 0.6) / max(np.abs(out).max(), 1e-9)
    out += rng.normal(0, 0.003, size=length)
    return np.clip(out, -1, 1)


def colored_noise(kind, n, rng):
    white = rng.normal(size=n)
    if kind == "white":
        x = white
    else:
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n)
        f[0] = f[1]
        spec /= np.sqrt(f) if kind == "pink" else f
        x = np.fft.irfft(spec, n)
    return 0.5 * x / np.abs(x).max()


def write_synthetic_dataset(root, n_speakers=30, utterances=1, unknown_words=UNKNOWN_WORDS, noise_seconds=5, seed=0):
    """Create the directory tree under ``root`` and return its path.

    Every word gets ``n_speakers * utterances`` clips named
    ``<speaker>_nohash_<k>.wav``; about one clip in eight is shortened to
    exercise padding.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    speakers = [f"{rng.integers(16**8):08x}" for _ in range(n_speakers)]
    for word in KEYWORDS + tuple(unknown_words):
        d = root / word
        d.mkdir(parents=True, exist_ok=True)
        for spk in speakers:
            for k in range(utterances):
                length = SAMPLE_RATE if rng.uniform() > 0.125 else int(rng.uniform(0.8, 1.0) * SAMPLE_RATE)
                write_wav(d / f"{spk}_nohash_{k}.wav", synth_word(word, rng, length))
    bg = root / BACKGROUND_DIR
    bg.mkdir(parents=True, exist_ok=True)
    for kind in ("white", "pink", "brown"):
        write_wav(bg / f"{kind}_noise.wav", colored_noise(kind, noise_seconds * SAMPLE_RATE, rng))
    return root
