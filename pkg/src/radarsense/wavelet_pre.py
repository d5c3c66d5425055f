"""Sub-band filtering, complex-Morlet CWT and max compression.

The 160000-sample window is split in the DFT domain into three 5 MHz
sub-bands (-5..0, -2.5..2.5, 0..5 MHz). Each sub-band's 80000 bins are
re-centred at DC and inverse transformed, giving 80000 samples at 5 MS/s.
Bins sit at ``k * 62.5 Hz``; a bin belongs to ``[lo, hi)`` except the
sub-band boundary bin, which is given to the lower window. Concretely the
three windows take bins ``(-80000, 0]``, ``(-40000, 40000]`` and
``(0, 80000]``, with -80000 standing for the Nyquist bin.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .signal_synth import IQCapture

N_SAMPLES = 160_000
SUB_LEN = 80_000
N_LAGS_OUT = 400
LAG_BLOCK = 200
N_SCALES = 64
SUPPORT_SIGMAS = 4.0


def _default_sigma() -> float:
    # FWHM of the magnitude spectrum at scale 1 is 1.5 MHz
    sigma_f = 0.75e6 / np.sqrt(2 * np.log(2))
    return 1.0 / (2 * np.pi * sigma_f)


@dataclass(frozen=True)
class MorletSpec:
    f0_hz: float = 10e6
    sigma_s: float = field(default_factory=_default_sigma)
    scales: tuple = tuple(np.logspace(np.log10(0.5), np.log10(64), N_SCALES))

    def __post_init__(self):
        sc = np.asarray(self.scales, dtype=float)
        if not self.sigma_s > 0:
            raise ValueError("sigma_s must be positive")
        if sc.ndim != 1 or np.any(np.diff(sc) <= 0) or np.any(sc <= 0):
            raise ValueError("scales must be positive and strictly increasing")
        object.__setattr__(self, "scales", tuple(float(s) for s in sc))

    def psi(self, t: np.ndarray) -> np.ndarray:
        """Mother wavelet sampled at times ``t`` (seconds)."""
        s = self.sigma_s
        return (np.exp(-0.5 * (t / s) ** 2) * np.exp(2j * np.pi * self.f0_hz * t)
                / (s * np.sqrt(2 * np.pi)))

    def half_support(self, scale: float, fs: float) -> int:
        """Tap count on each side of the dilated wavelet, |t| <= 4 sigma s."""
        return int(np.floor(SUPPORT_SIGMAS * self.sigma_s * scale * fs + 1e-9))

    def correlator(self, scale: float, fs: float) -> np.ndarray:
        """Taps c[m] = psi*(m dt / s) / sqrt(s) for m = -M..M."""
        m = self.half_support(scale, fs)
        t = np.arange(-m, m + 1) / fs
        return np.conj(self.psi(t / scale)) / np.sqrt(abs(scale))


@dataclass
class ScalogramTensor:
    values: np.ndarray  # (3, 400, 64) float32

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (3, N_LAGS_OUT, N_SCALES):
            raise ValueError(f"scalogram must be 3x{N_LAGS_OUT}x{N_SCALES}, "
                             f"got {self.values.shape}")


def band_filter(s: IQCapture) -> tuple[IQCapture, IQCapture, IQCapture]:
    x = np.asarray(s.samples)
    if x.shape != (N_SAMPLES,):
        raise ValueError(f"expected {N_SAMPLES} samples, got {x.shape}")
    spec = np.fft.fft(x.astype(np.complex128))
    half = SUB_LEN // 2
    rate = s.sample_rate_hz / 2
    out = []
    # signed bin ranges (lo, hi]; the sub-band centre becomes DC
    for lo, centre in ((-N_SAMPLES // 2, -N_SAMPLES // 4), (-half, 0), (0, N_SAMPLES // 4)):
        k = np.arange(lo + 1, lo + SUB_LEN + 1)
        window = spec[k % N_SAMPLES]
        rel = k - centre  # offsets -39999..40000 around the centre
        sub = np.zeros(SUB_LEN, dtype=np.complex128)
        sub[rel % SUB_LEN] = window
        # scale so that a tone keeps its amplitude
        out.append(IQCapture(np.fft.ifft(sub) * (SUB_LEN / N_SAMPLES), rate))
    return tuple(out)


@lru_cache(maxsize=8)
def _kernel_bank(spec: MorletSpec, fs: float, n: int):
    """FFTs of every scale's convolution kernel, zero-padded to a common length."""
    ms = [spec.half_support(sc, fs) for sc in spec.scales]
    m_max = max(ms)
    nfft = sfft.next_fast_len(n + 2 * m_max)
    bank = np.zeros((len(spec.scales), nfft), dtype=np.complex64)
    for j, (sc, m) in enumerate(zip(spec.scales, ms)):
        c = spec.correlator(sc, fs)
        # convolution kernel h[k] = c[-k], placed so output index d + m_max is lag d
        h = np.zeros(nfft, dtype=np.complex128)
        h[m_max - m:m_max + m + 1] = c[::-1]
        bank[j] = sfft.fft(h)
    return bank, m_max, nfft


def cwt(si: IQCapture, m: MorletSpec = MorletSpec()) -> np.ndarray:
    """W(d, s) = sum_n x[n] psi*((n - d) dt / s) / sqrt(s), shape (len, n_scales).

    Evaluated at every sample lag as a zero-padded linear correlation,
    one frequency-domain product per scale.
    """
    x = np.asarray(si.samples, dtype=np.complex64)
    n = len(x)
    bank, m_max, nfft = _kernel_bank(m, float(si.sample_rate_hz), n)
    X = sfft.fft(x, nfft)
    y = sfft.ifft(bank * X[None, :], axis=1)
    return np.ascontiguousarray(y[:, m_max:m_max + n].T)


def compress_scalogram(wu: np.ndarray) -> np.ndarray:
    """|W| max-pooled over blocks of 200 lags: (80000, S) -> (400, S)."""
    if wu.ndim != 2 or wu.shape[0] != SUB_LEN:
        raise ValueError(f"expected ({SUB_LEN}, n_scales) input, got {wu.shape}")
    return np.abs(wu).reshape(N_LAGS_OUT, LAG_BLOCK, wu.shape[1]).max(axis=1)


def _compressed_cwt(si: IQCapture, m: MorletSpec) -> np.ndarray:
    # same as compress_scalogram(cwt(si, m)) without the transposed copy
    x = np.asarray(si.samples, dtype=np.complex64)
    bank, m_max, nfft = _kernel_bank(m, float(si.sample_rate_hz), len(x))
    X = sfft.fft(x, nfft)
    mags = np.abs(sfft.ifft(bank * X[None, :], axis=1)[:, m_max:m_max + len(x)])
    return mags.reshape(len(m.scales), N_LAGS_OUT, LAG_BLOCK).max(axis=2).T


def make_wavelet_stack(s: IQCapture, m: MorletSpec = MorletSpec()) -> ScalogramTensor:
    subs = band_filter(s)
    return ScalogramTensor(np.stack([_compressed_cwt(si, m) for si in subs]))


def dump_scalogram(path, w: ScalogramTensor) -> None:
    w.values.astype("<f4").tofile(path)


def load_scalogram_dump(path) -> ScalogramTensor:
    return ScalogramTensor(np.fromfile(path, dtype="<f4").reshape(3, N_LAGS_OUT, N_SCALES))
