"""FIR high-pass filtering, log-magnitude spectrograms, PSNR and SSIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgument, ShapeError

LOG_FLOOR = 1e-10
PSNR_CAP = 99.0


@dataclass(frozen=True)
class FilterSpec:
    taps: np.ndarray
    cutoff_hz: float
    sample_rate: int

    @property
    def num_taps(self):
        return self.taps.size


def design_highpass(cutoff_hz=30.0, sample_rate=16000, num_taps=101):
    """Windowed-sinc high-pass via spectral inversion of a Hamming low-pass.

    The low-pass is normalised to unit DC gain before inversion, so the
    high-pass taps sum to zero up to rounding.
    """
    if num_taps < 3 or num_taps % 2 == 0:
        raise InvalidArgument(f"num_taps must be odd and >= 3, got {num_taps}")
    if not 0 < cutoff_hz < sample_rate / 2:
        raise InvalidArgument(f"cutoff {cutoff_hz} Hz outside (0, {sample_rate / 2})")
    fc = cutoff_hz / sample_rate
    n = np.arange(num_taps) - (num_taps - 1) / 2
    lowpass = 2 * fc * np.sinc(2 * fc * n) * np.hamming(num_taps)
    lowpass /= lowpass.sum()
    taps = -lowpass
    taps[(num_taps - 1) // 2] += 1.0
    # exact mirror symmetry regardless of rounding in the window
    taps = 0.5 * (taps + taps[::-1])
    return FilterSpec(taps=taps, cutoff_hz=float(cutoff_hz), sample_rate=int(sample_rate))


def apply_fir(x, filt):
    """Same-length, centre-aligned convolution with zero padding."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgument("cannot filter an empty signal")
    taps = filt.taps if isinstance(filt, FilterSpec) else np.asarray(filt, dtype=np.float64)
    half = (taps.size - 1) // 2
    full = np.convolve(x, taps, mode="full")
    return full[half:half + x.size]


def frequency_response_db(taps, freqs_hz, sample_rate):
    """Magnitude response in dB evaluated directly from the tap DTFT."""
    taps = np.asarray(taps, dtype=np.float64)
    n = np.arange(taps.size)
    w = 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64)[:, None] / sample_rate
    h = np.abs((taps[None, :] * np.exp(-1j * w * n[None, :])).sum(axis=1))
    return 20 * np.log10(np.maximum(h, 1e-300))


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray
    n_fft: int
    hop: int
    sample_rate: int

    @property
    def shape(self):
        return self.values.shape


def stft_logmag(clip, n_fft=512, hop=128, sample_rate=None):
    """log10 magnitude of a Hann-windowed STFT, shape (n_fft/2 + 1, frames).

    Frames start at sample 0 with no centring, so the frame count is
    ``1 + (len - n_fft) // hop``.
    """
    if hasattr(clip, "samples"):
        x = np.asarray(clip.samples, dtype=np.float64)
        sample_rate = clip.sample_rate
    else:
        x = np.asarray(clip, dtype=np.float64).reshape(-1)
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise InvalidArgument(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise InvalidArgument(f"hop must be in (0, n_fft], got {hop}")
    if x.size < n_fft:
        raise InvalidArgument(f"signal of {x.size} samples is shorter than n_fft={n_fft}")
    n_frames = 1 + (x.size - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(n_fft + 1)[:-1]
    mag = np.abs(np.fft.rfft(frames, axis=1)).T
    return Spectrogram(np.log10(np.maximum(mag, LOG_FLOOR)), n_fft, hop, int(sample_rate or 0))


def psnr(a, b, peak=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise InvalidArgument("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return float(10 * np.log10(peak ** 2 / mse))


# 7x7 Gaussian window: radius = int(truncate * sigma + 0.5) = 3
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 2.0
SSIM_RADIUS = 3


def ssim(sa, sb, k1=0.01, k2=0.03):
    """Mean local SSIM between two spectrograms (or 2-D arrays).

    Local statistics use a 7x7 Gaussian window (sigma 1.5); the mean is taken
    over window centres that lie fully inside the image. The dynamic range is
    the joint max - min of both inputs, or 1 when they are constant.
    """
    if isinstance(sa, Spectrogram) and isinstance(sb, Spectrogram):
        if (sa.n_fft, sa.hop) != (sb.n_fft, sb.hop):
            raise ShapeError("spectrograms computed with different STFT settings")
    x = np.asarray(getattr(sa, "values", sa), dtype=np.float64)
    y = np.asarray(getattr(sb, "values", sb), dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < 2 * SSIM_RADIUS + 1:
        raise ShapeError(f"need a 2-D input of at least 7x7, got {x.shape}")
    data_range = max(x.max(), y.max()) - min(x.min(), y.min())
    if data_range == 0:
        data_range = 1.0
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def blur(z):
        return gaussian_filter(z, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cxy = blur(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    r = SSIM_RADIUS
    return float(s[r:-r, r:-r].mean())
