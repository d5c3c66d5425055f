"""Labeled IQ capture synthesis: radar pulse trains, interference, AWGN.

All generators are pure functions of their parameters and an integer seed.
Randomness comes from Philox (counter-based) generators keyed by
``(seed, *stream)`` so independent draws never share state.

Frequencies are baseband offsets in Hz relative to the band centre; the
monitored band is ``[-BAND_HZ/2, BAND_HZ/2)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import Box

FS_HZ = 10e6
BAND_HZ = 10e6
WINDOW_S = 16e-3
DELTA_CF_HZ = 0.35e6
MIN_ON_TIME_S = 1e-3
SNR_GRID_DB = (10, 12, 14, 16, 18, 20)
INR_GRID_DB = (2, 4, 6, 8, 10)

# Emission bandwidth used for the unmodulated pulse types 1 and 2.
PULSE_MODULATED_BANDWIDTH_HZ = 1.6e6

# (pulse width s, pulse interval s, pulses per burst, burst duration s, bandwidth Hz)
RADAR_TABLE = {
    1: ((0.5e-6, 2.5e-6), (0.9e-3, 1.1e-3), (15, 40), (13e-3, 44e-3), (1e6, 1e6)),
    2: ((13e-6, 52e-6), (0.3e-3, 3.3e-3), (5, 20), (1e-3, 66e-3), (1e6, 1e6)),
    3: ((3e-6, 5e-6), (0.3e-3, 3.3e-3), (8, 24), (2e-3, 80e-3), (50e6, 100e6)),
    4: ((10e-6, 30e-6), (0.3e-3, 3.3e-3), (2, 8), (0.6e-3, 26e-3), (1e6, 10e6)),
    5: ((50e-6, 100e-6), (0.3e-3, 3.3e-3), (8, 24), (2e-3, 80e-3), (50e6, 100e6)),
}
CHIRP_TYPES = frozenset({3, 4, 5})

# LTE TDD uplink/downlink configurations, one letter per 1 ms subframe.
TDD_CONFIGS = (
    "DSUUUDSUUU",
    "DSUUDDSUUD",
    "DSUDDDSUDD",
    "DSUUUDDDDD",
    "DSUUDDDDDD",
    "DSUDDDDDDD",
    "DSUUUDSUUD",
)
# Downlink share of a special subframe (DwPTS), in ms.
SPECIAL_DL_S = 0.5e-3


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for the sub-stream ``(seed, *stream)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(int(s) & 0xFFFFFFFF for s in stream)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class IQCapture:
    samples: np.ndarray
    sample_rate_hz: float = FS_HZ
    center_freq_hz: float = 0.0

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.complex64).reshape(-1)
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class RadarParams:
    radar_type: int
    pulse_width_s: float
    pulse_interval_s: float
    num_pulses: int
    burst_duration_s: float
    bandwidth_hz: float
    center_freq_hz: float
    burst_start_s: float
    snr_db: float

    def pulse_starts(self) -> np.ndarray:
        return self.burst_start_s + self.pulse_interval_s * np.arange(self.num_pulses)


class InterferenceKind(str, Enum):
    QPSK_ON = "QPSK_ON"
    QPSK_ON_OFF = "QPSK_ON_OFF"
    OFDM_FDD = "OFDM_FDD"
    OFDM_TDD = "OFDM_TDD"

    @property
    def gated(self) -> bool:
        return self in (InterferenceKind.QPSK_ON_OFF, InterferenceKind.OFDM_TDD)


@dataclass
class InterferenceParams:
    kind: InterferenceKind
    inr_db: float
    bandwidth_hz: float
    cf_offset_hz: float = DELTA_CF_HZ
    on_off_pattern: list = field(default_factory=list)
    ul_dl_config: int | None = None

    def __post_init__(self):
        self.kind = InterferenceKind(self.kind)
        self.on_off_pattern = [(float(a), float(b)) for a, b in self.on_off_pattern]


@dataclass
class Annotation:
    radar_boxes: list = field(default_factory=list)
    interference_boxes: list = field(default_factory=list)
    radar_truth: RadarParams | None = None
    interference_truth: InterferenceParams | None = None

    def merged(self, other: "Annotation") -> "Annotation":
        return Annotation(
            self.radar_boxes + other.radar_boxes,
            self.interference_boxes + other.interference_boxes,
            self.radar_truth or other.radar_truth,
            self.interference_truth or other.interference_truth,
        )

    @property
    def has_radar(self) -> bool:
        return self.radar_truth is not None and bool(self.radar_boxes)

    @property
    def has_interference(self) -> bool:
        return self.interference_truth is not None and bool(self.interference_boxes)

    def to_dict(self) -> dict:
        def params(p):
            if p is None:
                return None
            d = asdict(p)
            if "kind" in d:
                d["kind"] = InterferenceKind(d["kind"]).value
                d["on_off_pattern"] = [list(s) for s in d["on_off_pattern"]]
            return d
        return {
            "radar_boxes": [b.to_dict() for b in self.radar_boxes],
            "interference_boxes": [b.to_dict() for b in self.interference_boxes],
            "radar_truth": params(self.radar_truth),
            "interference_truth": params(self.interference_truth),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Annotation":
        rt = d.get("radar_truth")
        it = d.get("interference_truth")
        return cls(
            [Box(**b) for b in d.get("radar_boxes", [])],
            [Box(**b) for b in d.get("interference_boxes", [])],
            RadarParams(**rt) if rt else None,
            InterferenceParams(**it) if it else None,
        )


# ---------------------------------------------------------------------------
# radar

def sample_radar_params(radar_type: int, rng_seed: int, window_s: float = WINDOW_S,
                        snr_db: float | None = None) -> RadarParams:
    """Draw a radar configuration from the parameter table for ``radar_type``.

    The burst start is drawn so that at least one pulse starts inside
    ``[0, window_s)`` and no pulse straddles the window start.
    """
    if radar_type not in RADAR_TABLE:
        raise ValueError(f"unknown radar type {radar_type!r}; expected 1..5")
    rng = rng_for(rng_seed, 0x5241, radar_type)
    (pw_lo, pw_hi), (pri_lo, pri_hi), (n_lo, n_hi), (bd_lo, bd_hi), (bw_lo, bw_hi) = \
        RADAR_TABLE[radar_type]
    pw = rng.uniform(pw_lo, pw_hi)
    pri = rng.uniform(pri_lo, pri_hi)
    n = int(rng.integers(n_lo, n_hi + 1))
    # the pulses of a burst have to fit in it: (n - 1) * pri <= burst
    burst = rng.uniform(max(bd_lo, (n - 1) * pri), bd_hi)
    if radar_type in CHIRP_TYPES:
        bw = rng.uniform(bw_lo, bw_hi)
    else:
        bw = PULSE_MODULATED_BANDWIDTH_HZ
    half = BAND_HZ / 2
    if bw < BAND_HZ:
        fc = rng.uniform(-half + bw / 2, half - bw / 2)
    else:
        fc = rng.uniform(-half, half)
    while True:
        start = rng.uniform(-(n - 1) * pri, window_s - pw)
        starts = start + pri * np.arange(n)
        inside = (starts >= 0) & (starts < window_s)
        straddle = (starts < 0) & (starts + pw > 0)
        if inside.any() and not straddle.any():
            break
    if snr_db is None:
        snr_db = float(rng.choice(SNR_GRID_DB))
    return RadarParams(radar_type, float(pw), float(pri), n, float(burst), float(bw), float(fc),
                       float(start), float(snr_db))


def radar_band_edges(p: RadarParams) -> tuple[float, float]:
    """Radar band clipped to the monitored band, Hz."""
    half = BAND_HZ / 2
    return max(-half, p.center_freq_hz - p.bandwidth_hz / 2), \
        min(half, p.center_freq_hz + p.bandwidth_hz / 2)


def synth_radar(p: RadarParams, window_s: float = WINDOW_S,
                fs: float = FS_HZ) -> tuple[IQCapture, Annotation]:
    """Unit-amplitude radar pulse train and one box per (partially) visible pulse.

    Types 1-2 are constant tones under a rectangular envelope; types 3-5
    are linear up-chirps. Chirp samples whose instantaneous frequency lies
    outside ``[-fs/2, fs/2)`` are dropped, which is what an ideal
    anti-aliasing front end would pass.
    """
    if p.radar_type not in RADAR_TABLE:
        raise ValueError(f"unknown radar type {p.radar_type!r}")
    if abs(p.center_freq_hz) > fs / 2:
        raise ValueError("radar centre frequency outside the sampled band")
    if p.radar_type not in CHIRP_TYPES and p.bandwidth_hz >= fs:
        raise ValueError(f"sample rate {fs:g} Hz too low for a {p.bandwidth_hz:g} Hz pulse")
    n_samples = int(round(window_s * fs))
    x = np.zeros(n_samples, dtype=np.complex128)
    f_lo, f_hi = radar_band_edges(p)
    bx = ((f_lo + f_hi) / 2 + BAND_HZ / 2) / BAND_HZ
    bw_frac = (f_hi - f_lo) / BAND_HZ
    boxes = []
    for t0 in p.pulse_starts():
        t1 = t0 + p.pulse_width_s
        if t0 >= window_s or t1 <= 0:
            continue
        i0 = max(0, int(np.ceil(t0 * fs - 1e-9)))
        i1 = min(n_samples, int(np.ceil(t1 * fs - 1e-9)))
        if i1 > i0:
            tau = np.arange(i0, i1) / fs - t0
            if p.radar_type in CHIRP_TYPES:
                f_start = p.center_freq_hz - p.bandwidth_hz / 2
                slope = p.bandwidth_hz / p.pulse_width_s
                phase = 2 * np.pi * (f_start * tau + 0.5 * slope * tau ** 2)
                inst_f = f_start + slope * tau
                keep = (inst_f >= -fs / 2) & (inst_f < fs / 2)
                x[i0:i1] = np.where(keep, np.exp(1j * phase), 0)
            else:
                x[i0:i1] = np.exp(2j * np.pi * p.center_freq_hz * tau)
        y0, y1 = max(0.0, t0) / window_s, min(window_s, t1) / window_s
        boxes.append(Box(bx, (y0 + y1) / 2, bw_frac, y1 - y0))
    return IQCapture(x, fs), Annotation(radar_boxes=boxes, radar_truth=p)


# ---------------------------------------------------------------------------
# interference

def periodic_pattern(on_s: float, off_s: float, window_s: float = WINDOW_S,
                     offset_s: float = 0.0) -> list[tuple[float, float]]:
    """ON segments of a periodic on/off gate, clipped to the window.

    ``offset_s`` is where an ON period starts (may be negative). Clipped
    segments shorter than the minimum ON time are dropped.
    """
    period = on_s + off_s
    k0 = int(np.floor((0 - offset_s) / period)) - 1
    segs = []
    t = offset_s + k0 * period
    while t < window_s:
        a, b = max(0.0, t), min(window_s, t + on_s)
        if b - a >= MIN_ON_TIME_S - 1e-12:
            segs.append((a, b))
        t += period
    return segs


def tdd_pattern(config: int, window_s: float = WINDOW_S,
                offset_s: float = 0.0) -> list[tuple[float, float]]:
    """Downlink activity for an LTE TDD UL/DL configuration.

    Downlink subframes are fully ON; special subframes are ON for their
    DwPTS part. The 10 ms frame starts at ``offset_s``.
    """
    if not 0 <= config < len(TDD_CONFIGS):
        raise ValueError(f"ul_dl_config must be 0..6, got {config}")
    frame = TDD_CONFIGS[config]
    sub = 1e-3
    raw = []
    k0 = int(np.floor(-offset_s / (10 * sub))) - 1
    t_frame = offset_s + k0 * 10 * sub
    while t_frame < window_s:
        for j, c in enumerate(frame):
            t = t_frame + j * sub
            if c == "D":
                raw.append((t, t + sub))
            elif c == "S":
                raw.append((t, t + SPECIAL_DL_S))
        t_frame += 10 * sub
    merged: list[list[float]] = []
    for a, b in raw:
        if merged and abs(a - merged[-1][1]) < 1e-12:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    segs = []
    for a, b in merged:
        a, b = max(0.0, a), min(window_s, b)
        if b - a >= MIN_ON_TIME_S - 1e-12:
            segs.append((a, b))
    return segs


def sample_interference_params(kind, rng_seed: int, window_s: float = WINDOW_S,
                               inr_db: float | None = None) -> InterferenceParams:
    """Random interference configuration: INR from the grid, random gate phase."""
    kind = InterferenceKind(kind)
    rng = rng_for(rng_seed, 0x4946, list(InterferenceKind).index(kind))
    if inr_db is None:
        inr_db = float(rng.choice(INR_GRID_DB))
    bw = 9.1e6 if kind in (InterferenceKind.QPSK_ON, InterferenceKind.QPSK_ON_OFF) else 9e6
    pattern: list = []
    config = None
    if kind is InterferenceKind.QPSK_ON_OFF:
        pattern = periodic_pattern(3e-3, 2e-3, window_s, offset_s=-rng.uniform(0, 5e-3))
    elif kind is InterferenceKind.OFDM_TDD:
        config = int(rng.integers(0, len(TDD_CONFIGS)))
        pattern = tdd_pattern(config, window_s, offset_s=-rng.uniform(0, 10e-3))
    return InterferenceParams(kind, float(inr_db), bw, DELTA_CF_HZ, pattern, config)


def _qpsk_rrc(n: int, fs: float, bandwidth_hz: float, rng: np.random.Generator,
              rolloff: float = 0.3) -> np.ndarray:
    """Circular root-raised-cosine QPSK waveform built in the frequency domain.

    The symbol rate is ``bandwidth / (1 + rolloff)``; the window holds an
    integer number of symbols so the symbol spectrum lands exactly on the
    sample-rate DFT grid.
    """
    rs = bandwidth_hz / (1 + rolloff)
    m = int(round(rs * n / fs))
    rs = m * fs / n
    sym = (rng.choice([-1.0, 1.0], m) + 1j * rng.choice([-1.0, 1.0], m)) / np.sqrt(2)
    a = np.fft.fft(sym)
    k = np.fft.fftfreq(n, 1.0 / n).astype(int)  # signed bin index
    f = k * fs / n
    af = np.abs(f)
    f1 = (1 - rolloff) * rs / 2
    f2 = (1 + rolloff) * rs / 2
    g = np.zeros(n)
    g[af <= f1] = 1.0
    tr = (af > f1) & (af <= f2)
    g[tr] = np.sqrt(0.5 * (1 + np.cos(np.pi / (rolloff * rs) * (af[tr] - f1))))
    return np.fft.ifft(a[k % m] * g)


def _ofdm(n: int, rng: np.random.Generator, nfft: int = 640, cp: int = 48,
          active: int = 576) -> np.ndarray:
    """OFDM-like multicarrier signal: ``active`` QPSK subcarriers, DC unused."""
    sym_len = nfft + cp
    n_sym = -(-n // sym_len)
    half = active // 2
    idx = np.r_[1:half + 1, nfft - half:nfft]
    grid = np.zeros((n_sym, nfft), dtype=np.complex128)
    grid[:, idx] = (rng.choice([-1.0, 1.0], (n_sym, active))
                    + 1j * rng.choice([-1.0, 1.0], (n_sym, active))) / np.sqrt(2)
    body = np.fft.ifft(grid, axis=1)
    syms = np.concatenate([body[:, -cp:], body], axis=1)
    return syms.reshape(-1)[:n]


def synth_interference(p: InterferenceParams, window_s: float = WINDOW_S, fs: float = FS_HZ,
                       rng_seed: int = 0) -> tuple[IQCapture, Annotation]:
    """Interference waveform with unit mean power while ON, plus its ON boxes."""
    if p.bandwidth_hz > BAND_HZ:
        raise ValueError("interference bandwidth exceeds the monitored band")
    n = int(round(window_s * fs))
    rng = rng_for(rng_seed, 0x5746, list(InterferenceKind).index(p.kind))
    if p.kind in (InterferenceKind.QPSK_ON, InterferenceKind.QPSK_ON_OFF):
        x = _qpsk_rrc(n, fs, p.bandwidth_hz, rng)
    else:
        active = int(round(p.bandwidth_hz / (fs / 640)))
        x = _ofdm(n, rng, active=active - active % 2)
    t = np.arange(n) / fs
    x = x * np.exp(2j * np.pi * p.cf_offset_hz * t)
    x /= np.sqrt(np.mean(np.abs(x) ** 2))

    if p.kind.gated:
        segments = p.on_off_pattern
        if not segments and p.kind is InterferenceKind.OFDM_TDD and p.ul_dl_config is not None:
            segments = tdd_pattern(p.ul_dl_config, window_s)
        if not segments:
            raise ValueError(f"{p.kind.value} needs a non-empty ON/OFF pattern")
    else:
        segments = [(0.0, window_s)]
    gate = np.zeros(n, dtype=bool)
    for a, b in segments:
        if b - a < MIN_ON_TIME_S - 1e-12:
            raise ValueError(f"ON segment {a:g}-{b:g} s shorter than the 1 ms minimum")
        gate[int(round(a * fs)):int(round(b * fs))] = True
    x = np.where(gate, x, 0)

    half = BAND_HZ / 2
    f_lo = max(-half, p.cf_offset_hz - p.bandwidth_hz / 2)
    f_hi = min(half, p.cf_offset_hz + p.bandwidth_hz / 2)
    bx, bw = ((f_lo + f_hi) / 2 + half) / BAND_HZ, (f_hi - f_lo) / BAND_HZ
    boxes = [Box(bx, (a + b) / 2 / window_s, bw, (b - a) / window_s)
             for a, b in segments]
    truth = replace(p, on_off_pattern=list(segments))
    return IQCapture(x, fs), Annotation(interference_boxes=boxes, interference_truth=truth)


# ---------------------------------------------------------------------------
# mixing

def band_power(x: np.ndarray, fs: float, f_center: float, width_hz: float = 1e6) -> float:
    """Mean power of ``x`` in a brick-wall band of ``width_hz`` around ``f_center``."""
    n = len(x)
    spec = np.fft.fft(x)
    f = np.fft.fftfreq(n, 1.0 / fs)
    sel = np.abs(f - f_center) <= width_hz / 2
    return float(np.sum(np.abs(spec[sel]) ** 2) / n ** 2)


def spectral_centroid(x: np.ndarray, fs: float) -> float:
    """Power-weighted mean frequency of ``x``, Hz."""
    p = np.abs(np.fft.fft(x)) ** 2
    total = p.sum()
    return float(np.sum(p * np.fft.fftfreq(len(x), 1.0 / fs)) / total) if total > 0 else 0.0


def peak_band_power(x: np.ndarray, fs: float, f_center: float, width_hz: float = 1e6) -> float:
    """Peak instantaneous power of ``x`` after a brick-wall band-pass of ``width_hz``."""
    f = np.fft.fftfreq(len(x), 1.0 / fs)
    y = np.fft.ifft(np.fft.fft(x) * (np.abs(f - f_center) <= width_hz / 2))
    return float(np.max(np.abs(y) ** 2)) if len(y) else 0.0


def scale_and_mix(radar: IQCapture | None, interf: IQCapture | None, snr_db: float | None,
                  inr_db: float | None, noise_seed: int, *,
                  radar_center_hz: float | None = None,
                  interf_center_hz: float = DELTA_CF_HZ, noise_power: float = 1.0,
                  window_s: float = WINDOW_S, fs: float = FS_HZ) -> IQCapture:
    """Add one AWGN realization to scaled radar and interference components.

    Noise is complex Gaussian with total power ``noise_power`` spread flat
    over the sampled band, so its power in 1 MHz is
    ``N1 = noise_power * 1e6 / fs``.

    * radar: scaled so that the peak instantaneous power of the radar seen
      through a 1 MHz brick-wall filter at ``radar_center_hz`` (default: the
      radar's spectral centroid) equals ``N1 * 10**(snr/10)``. A wide chirp
      dwells only briefly in any 1 MHz slice, so at equal SNR it carries more
      total power than a narrow pulse.
    * interference: scaled so that, averaged over its ON samples, its power
      in the 1 MHz around ``interf_center_hz`` equals ``N1 * (10**(inr/10) - 1)``
      (INR counts interference plus noise over noise).
    """
    if radar is not None:
        fs, n = radar.sample_rate_hz, len(radar)
    elif interf is not None:
        fs, n = interf.sample_rate_hz, len(interf)
    else:
        n = int(round(window_s * fs))
    n1 = noise_power * 1e6 / fs
    out = np.zeros(n, dtype=np.complex128)

    if radar is not None and snr_db is not None:
        r = radar.samples.astype(np.complex128)
        fc = spectral_centroid(r, fs) if radar_center_hz is None else radar_center_hz
        peak = peak_band_power(r, fs, fc)
        if peak > 0:
            out += r * np.sqrt(n1 * 10 ** (snr_db / 10) / peak)
    if interf is not None and inr_db is not None:
        if len(interf) != n:
            raise ValueError("radar and interference captures differ in length")
        ratio = 10 ** (inr_db / 10) - 1
        if ratio < -1e-12:
            raise ValueError("INR below 0 dB cannot be realized")
        s = interf.samples.astype(np.complex128)
        on_fraction = np.count_nonzero(s) / n
        if on_fraction > 0 and ratio > 0:
            p1 = band_power(s, fs, interf_center_hz) / on_fraction
            out += s * np.sqrt(n1 * ratio / p1)

    rng = rng_for(noise_seed, 0x4E4F)
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(noise_power / 2)
    return IQCapture(out + noise, fs)
