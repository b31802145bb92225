"""Short-time Fourier analysis/synthesis, the magnitude/phase spectral head,
and mel-spectrogram extraction.

All functions are pure; configs are frozen dataclasses validated at
construction. Internals run in float64, spectra are complex128.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError

__all__ = [
    "AudioBuffer",
    "StftConfig",
    "ComplexSpectrogram",
    "MelConfig",
    "stft",
    "istft",
    "head_to_spectrum",
    "mel_filterbank",
    "mel_spectrogram",
]

DEFAULT_N_FFT = 1280
DEFAULT_HOP = 320  # equals the encoder's total stride 2*4*5*8


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform samples plus their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"audio must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise DataError("audio contains non-finite samples")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = DEFAULT_N_FFT
    hop: int = DEFAULT_HOP
    window: np.ndarray = None  # default: periodic Hann

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft % 2 != 0:
            raise ConfigError(f"n_fft must be even and positive, got {self.n_fft}")
        if not (0 < self.hop <= self.n_fft):
            raise ConfigError(f"hop must satisfy 0 < hop <= n_fft, got {self.hop}")
        window = self.window
        if window is None:
            window = _periodic_hann(self.n_fft)
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (self.n_fft,):
            raise ConfigError(
                f"window must have length n_fft={self.n_fft}, got {window.shape}"
            )
        if np.any(window < 0) or not np.all(np.isfinite(window)):
            raise ConfigError("window must be non-negative and finite")
        object.__setattr__(self, "window", window)
        env = self._ola_envelope()
        if env.min() <= 1e-10 * env.max():
            raise ConfigError(
                "window/hop pair violates the constant-overlap-add condition"
            )

    def _ola_envelope(self) -> np.ndarray:
        """Steady-state overlap-added squared window, one hop period long."""
        wsq = self.window**2
        env = np.zeros(self.hop)
        for off in range(0, self.n_fft, self.hop):
            seg = wsq[off : off + self.hop]
            env[: len(seg)] += seg
        return env

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def pad(self) -> int:
        # centre padding chosen so frame count is exactly samples/hop
        return (self.n_fft - self.hop) // 2


@dataclass(frozen=True)
class ComplexSpectrogram:
    """frames x (n_fft/2 + 1) single-sideband complex coefficients."""

    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if coeffs.ndim != 2:
            raise ShapeError(f"spectrogram must be 2-D, got shape {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise DataError("spectrogram contains non-finite coefficients")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def frames(self) -> int:
        return self.coeffs.shape[0]

    @property
    def bins(self) -> int:
        return self.coeffs.shape[1]


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 100
    f_min: float = 0.0
    f_max: float = 12_000.0
    log_eps: float = 1e-5

    def __post_init__(self):
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if not (0 <= self.f_min < self.f_max):
            raise ConfigError("need 0 <= f_min < f_max")
        if self.log_eps <= 0:
            raise ConfigError("log_eps must be positive")


def stft(audio: AudioBuffer, cfg: StftConfig) -> ComplexSpectrogram:
    """Analysis transform with centre reflect-padding.

    Frame count is exactly floor(T/hop) for T >= hop, so 1 s at 24 kHz with
    hop 320 yields 75 frames.
    """
    x = audio.samples
    if len(x) < 2:
        raise DataError("signal too short for reflect padding")
    pad_left = cfg.pad
    pad_right = (cfg.n_fft - cfg.hop) - pad_left
    x = np.pad(x, (pad_left, pad_right), mode="reflect")
    n_frames = (len(x) - cfg.n_fft) // cfg.hop + 1
    if n_frames < 1:
        raise DataError("signal too short to produce a single frame")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.n_fft)[:: cfg.hop]
    frames = frames[:n_frames] * cfg.window
    return ComplexSpectrogram(np.fft.rfft(frames, axis=1))


def istft(
    spec: ComplexSpectrogram, cfg: StftConfig, sample_rate: int = 24_000
) -> AudioBuffer:
    """Overlap-add synthesis with window-square normalization.

    Output length is frames * hop (centre padding removed).
    """
    if spec.bins != cfg.n_bins:
        raise ShapeError(
            f"spectrogram has {spec.bins} bins, config expects {cfg.n_bins}"
        )
    frames = np.fft.irfft(spec.coeffs, n=cfg.n_fft, axis=1)
    total = (spec.frames - 1) * cfg.hop + cfg.n_fft
    out = np.zeros(total)
    env = np.zeros(total)
    wsq = cfg.window**2
    for i in range(spec.frames):
        off = i * cfg.hop
        out[off : off + cfg.n_fft] += frames[i] * cfg.window
        env[off : off + cfg.n_fft] += wsq
    out = out / np.where(env > 1e-11, env, 1.0)
    start = cfg.pad
    return AudioBuffer(
        out[start : start + spec.frames * cfg.hop], sample_rate=sample_rate
    )


def head_to_spectrum(h: np.ndarray, mag_ceiling: float = 1e2) -> ComplexSpectrogram:
    """Turn a frames x (n_fft + 2) log-magnitude/phase head output into
    complex coefficients exp(q) * (cos p + j sin p).

    exp(q) is clamped at ``mag_ceiling``: untrained or random heads can
    otherwise overflow the overlap-add.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] % 2 != 0 or h.shape[1] < 4:
        raise ShapeError(
            f"head output must be frames x (n_fft + 2) with even width >= 4, "
            f"got {h.shape}"
        )
    n_bins = h.shape[1] // 2
    q, p = h[:, :n_bins], h[:, n_bins:]
    mag = np.minimum(np.exp(q), mag_ceiling)
    return ComplexSpectrogram(mag * (np.cos(p) + 1j * np.sin(p)))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    sample_rate: int, n_fft: int, mel_cfg: MelConfig
) -> np.ndarray:
    """Triangular mel filterbank, n_mels x (n_fft/2 + 1), rows normalized to
    sum 1 so a flat power spectrum yields equal band energies."""
    if mel_cfg.f_max > sample_rate / 2:
        raise ConfigError(
            f"f_max {mel_cfg.f_max} exceeds Nyquist {sample_rate / 2}"
        )
    n_bins = n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / n_fft
    mel_pts = np.linspace(
        _hz_to_mel(mel_cfg.f_min), _hz_to_mel(mel_cfg.f_max), mel_cfg.n_mels + 2
    )
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((mel_cfg.n_mels, n_bins))
    for i in range(mel_cfg.n_mels):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        rising = (bin_hz - lo) / max(mid - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - mid, 1e-12)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
        s = fb[i].sum()
        if s <= 0:
            # n_fft too coarse for this band: take the nearest bin instead
            fb[i, int(round(mid / (sample_rate / n_fft)))] = 1.0
            s = 1.0
        fb[i] /= s
    return fb


def mel_spectrogram(
    audio: AudioBuffer, stft_cfg: StftConfig, mel_cfg: MelConfig
) -> np.ndarray:
    """Log-compressed mel filterbank energies, frames x n_mels."""
    spec = stft(audio, stft_cfg)
    power = np.abs(spec.coeffs) ** 2
    fb = mel_filterbank(audio.sample_rate, stft_cfg.n_fft, mel_cfg)
    energies = power @ fb.T
    return np.log(np.maximum(energies, mel_cfg.log_eps))
