"""Time-frequency analysis of control inputs with a complex Morlet wavelet.

Wavelet at scale ``s`` (seconds)::

    psi_s(u) = exp(1j * w0 * u / s) * exp(-u**2 / (2 s**2)) / (s * sqrt(2 pi)),   w0 = 2 pi

so the envelope is a unit-variance Gaussian in units of ``s`` and the centre
frequency is ``w0 / (2 pi s) = 1 / s`` Hz.  The ``1/s`` amplitude normalization
makes a unit-amplitude sinusoid produce a peak magnitude of about 0.5 at its
own frequency regardless of scale.  Coefficients are computed by direct
convolution with zero padding; edge effects are not masked but the e-folding
time ``sqrt(2) s`` of each scale is reported as the cone of influence.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

W0 = 2.0 * np.pi
TRUNCATE = 4.0  # kernel support in envelope standard deviations


@dataclass
class Scalogram:
    times: np.ndarray        # (n_time,) seconds
    frequencies: np.ndarray  # (n_freq,) Hz
    magnitudes: np.ndarray   # (n_freq, n_time)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.magnitudes = np.asarray(self.magnitudes, dtype=float)
        if self.magnitudes.shape != (self.frequencies.size, self.times.size):
            raise ValueError("magnitude matrix does not match the time and frequency grids")

    @property
    def cone_of_influence(self) -> np.ndarray:
        """Edge-affected half width in seconds for each frequency row."""
        return np.sqrt(2.0) / self.frequencies

    def to_csv(self) -> str:
        """Long format ``time_s,freq_hz,magnitude``, time-major."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s", "freq_hz", "magnitude"])
        for j, t in enumerate(self.times):
            for i, f in enumerate(self.frequencies):
                w.writerow([format(t, ".17g"), format(f, ".17g"), format(self.magnitudes[i, j], ".17g")])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Scalogram":
        rows = list(csv.reader(text.splitlines()))[1:]
        data = np.array([[float(v) for v in r] for r in rows])
        times = np.unique(data[:, 0])
        freqs = data[: len(data) // len(times), 1]
        mags = data[:, 2].reshape(len(times), len(freqs)).T
        return cls(times, freqs, mags)


def frequency_grid(n_samples: int, dt: float, n: int = 64, f_min: float | None = None,
                   f_max: float | None = None) -> np.ndarray:
    """Log-spaced grid, by default from ``2 / (n_samples dt)`` to ``0.45 / dt``."""
    f_min = 2.0 / (n_samples * dt) if f_min is None else f_min
    f_max = 0.45 / dt if f_max is None else f_max
    nyquist = 0.5 / dt
    if not 0.0 < f_min < f_max:
        raise ValueError(f"need 0 < f_min < f_max, got {f_min}, {f_max}")
    if f_max >= nyquist:
        raise ValueError(f"f_max {f_max} Hz is not below the Nyquist frequency {nyquist} Hz")
    return np.geomspace(f_min, f_max, n)


def morlet_kernel(scale: float, dt: float) -> np.ndarray:
    half = int(np.ceil(TRUNCATE * scale / dt))
    u = np.arange(-half, half + 1) * dt
    return np.exp(1j * W0 * u / scale - 0.5 * (u / scale) ** 2) / (scale * np.sqrt(2.0 * np.pi))


def morlet_cwt(signal, dt: float, freqs) -> Scalogram:
    x = np.asarray(signal, dtype=float)
    freqs = np.asarray(freqs, dtype=float)
    if x.ndim != 1 or x.size < 8:
        raise ValueError("signal must be 1-D with at least 8 samples")
    if np.any(freqs <= 0) or np.any(freqs >= 0.5 / dt):
        raise ValueError("frequencies must lie in (0, Nyquist)")
    n = x.size
    mags = np.empty((freqs.size, n))
    for i, f in enumerate(freqs):
        k = morlet_kernel(1.0 / f, dt)
        half = (k.size - 1) // 2
        # the Morlet kernel satisfies conj(psi(-u)) = psi(u), so correlation is convolution
        full = np.convolve(x, k) * dt
        mags[i] = np.abs(full[half:half + n])
    return Scalogram(np.arange(n) * dt, freqs, mags)


def average_scalograms(items) -> Scalogram:
    items = list(items)
    if not items:
        raise ValueError("nothing to average")
    first = items[0]
    for s in items[1:]:
        if not (np.array_equal(s.times, first.times) and np.array_equal(s.frequencies, first.frequencies)):
            raise ValueError("scalograms must share time and frequency grids")
    mags = np.mean([s.magnitudes for s in items], axis=0)
    return Scalogram(first.times.copy(), first.frequencies.copy(), mags)


def spectral_spread(s: Scalogram, window: tuple[float, float] | None = None) -> float:
    """Mean over time of the Shannon entropy (nats) of magnitude across frequency.

    Columns with zero total magnitude are skipped; an all-zero window gives 0.
    """
    if window is None:
        cols = np.ones(s.times.size, dtype=bool)
    else:
        t0, t1 = window
        if t0 > t1 or t1 < s.times[0] or t0 > s.times[-1]:
            raise ValueError(f"window {window} lies outside the scalogram")
        cols = (s.times >= t0) & (s.times <= t1)
    mag = s.magnitudes[:, cols]
    total = mag.sum(axis=0)
    keep = total > 0
    if not keep.any():
        return 0.0
    p = mag[:, keep] / total[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=0)
    return float(ent.mean())


def input_scalograms(logs, dt: float, channel: int = 0, freqs=None) -> list[Scalogram]:
    """Scalogram of input channel ``channel`` for each run log (all logs must have equal length)."""
    logs = list(logs)
    n = len(logs[0])
    freqs = frequency_grid(n, dt) if freqs is None else freqs
    return [morlet_cwt(log.u[:, channel], dt, freqs) for log in logs]
