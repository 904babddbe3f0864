"""MFCC frontend: one second of 16 kHz mono audio in, a 98 x 40 feature matrix out.

Audio buffers are plain 1-D float arrays with samples in [-1, 1]. The sample
rate is fixed at 16 kHz; nothing here resamples.
"""

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft, signal

SAMPLE_RATE = 16000
CLIP_SAMPLES = SAMPLE_RATE
PRE_EMPHASIS = 0.97
N_FFT = 512


class WavFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FrontendConfig:
    band_low_hz: float = 20.0
    band_high_hz: float = 4000.0
    window_ms: float = 30.0
    shift_ms: float = 10.0
    n_mfcc: int = 40
    log_floor: float = 1e-10

    def __post_init__(self):
        if not 0 < self.band_low_hz < self.band_high_hz <= SAMPLE_RATE / 2:
            raise ValueError(
                f"band edges must satisfy 0 < low < high <= {SAMPLE_RATE // 2}, "
                f"got {self.band_low_hz}, {self.band_high_hz}"
            )
        if not self.window_ms > self.shift_ms > 0:
            raise ValueError("need window_ms > shift_ms > 0")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * SAMPLE_RATE / 1000))

    @property
    def shift_samples(self) -> int:
        return int(round(self.shift_ms * SAMPLE_RATE / 1000))


DEFAULT_CONFIG = FrontendConfig()


def n_frames(n_samples: int, cfg: FrontendConfig = DEFAULT_CONFIG) -> int:
    """Number of whole analysis windows that fit in ``n_samples`` (no padding)."""
    if n_samples < cfg.window_samples:
        return 0
    return (n_samples - cfg.window_samples) // cfg.shift_samples + 1


def pad_or_clip(buf: np.ndarray) -> np.ndarray:
    """Zero-pad or truncate at the end to exactly one second."""
    buf = np.asarray(buf)
    if buf.ndim != 1 or buf.size == 0:
        raise ValueError("expected a non-empty 1-D audio buffer")
    if buf.size >= CLIP_SAMPLES:
        return buf[:CLIP_SAMPLES].copy()
    out = np.zeros(CLIP_SAMPLES, dtype=buf.dtype)
    out[: buf.size] = buf
    return out


def band_pass(buf: np.ndarray, cfg: FrontendConfig = DEFAULT_CONFIG, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass over [band_low_hz, band_high_hz].

    Applied forward and backward, so the effective magnitude response is the
    squared Butterworth response and the output has the input's length. Even
    edge padding keeps the 20 Hz section's start-up transient out of the output.
    """
    buf = np.asarray(buf, dtype=np.float64)
    return signal.sosfiltfilt(band_pass_sos(cfg, order), buf, padtype="even")


def band_pass_sos(cfg: FrontendConfig = DEFAULT_CONFIG, order: int = 4) -> np.ndarray:
    return signal.butter(
        order, [cfg.band_low_hz, cfg.band_high_hz], btype="bandpass", fs=SAMPLE_RATE, output="sos"
    )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontendConfig = DEFAULT_CONFIG, n_fft: int = N_FFT) -> tuple[np.ndarray, np.ndarray]:
    """Triangular mel filters evaluated at the rFFT bin frequencies.

    Returns ``(weights, centers_hz)`` with weights of shape (n_mfcc, n_fft//2 + 1).
    Filter edges are equally spaced on the HTK mel scale between the band edges,
    which is how the band limits reach the features.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.band_low_hz), hz_to_mel(cfg.band_high_hz), cfg.n_mfcc + 2))
    bins = np.fft.rfftfreq(n_fft, d=1.0 / SAMPLE_RATE)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return weights, edges[1:-1]


def frame_signal(buf: np.ndarray, cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Pre-emphasize and cut into overlapping windows, shape (T, window_samples).

    Pre-emphasis treats the sample before the first as equal to the first, so a
    constant signal stays constant and every frame of it is identical.
    """
    x = np.asarray(buf, dtype=np.float64)
    emph = np.empty_like(x)
    emph[0] = (1.0 - PRE_EMPHASIS) * x[0]
    emph[1:] = x[1:] - PRE_EMPHASIS * x[:-1]
    windows = np.lib.stride_tricks.sliding_window_view(emph, cfg.window_samples)
    return windows[:: cfg.shift_samples]


def log_mel_energies(buf: np.ndarray, cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Natural log of mel filterbank power, floored at ``cfg.log_floor``; shape (T, n_mfcc).

    Power convention: scaling the input amplitude by ``a`` shifts every
    above-floor entry by exactly ``2 ln a``.
    """
    frames = frame_signal(buf, cfg) * signal.get_window("hann", cfg.window_samples, fftbins=True)
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    weights, _ = mel_filterbank(cfg)
    return np.log(np.maximum(power @ weights.T, cfg.log_floor))


def extract_mfcc(buf: np.ndarray, cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Return the (98, 40) float32 MFCC matrix of a one-second buffer."""
    buf = np.asarray(buf)
    if buf.ndim != 1 or buf.size != CLIP_SAMPLES:
        raise ValueError(
            f"extract_mfcc needs exactly {CLIP_SAMPLES} samples, got shape {buf.shape}; "
            "apply pad_or_clip first"
        )
    feats = fft.dct(log_mel_energies(buf, cfg), type=2, norm="ortho", axis=1)
    return feats.astype(np.float32)


def read_wav(path) -> np.ndarray:
    """Read a 16-bit PCM mono 16 kHz WAV into float64 samples in [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: not a readable RIFF/PCM WAV ({exc})") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz (no resampling)")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray, channels: int = 1, rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())
