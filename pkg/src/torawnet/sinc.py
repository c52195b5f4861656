"""Trainable band-pass Sinc filterbank front end."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Module
from .tensor import ConvSpec, Tensor, absolute, conv1d, make_node, minimum


def window_taps(length: int, kind: str = "hamming") -> np.ndarray:
    if kind == "hamming":
        return np.hamming(length)
    if kind == "rectangular":
        return np.ones(length)
    raise ValueError(f"unknown window {kind!r}")


@dataclass(eq=False)
class SincFilterbank(Module):
    """Per-filter learnable low cutoff and bandwidth, both in Hz.

    Effective cutoffs are ``f1 = min(f_min + |f_low|, sr/2 - min_band)`` and
    ``f2 = min(f1 + min_band + |band|, sr/2)``, so raw parameters of any sign or
    size give a valid band.  With ``unit_norm`` every materialized filter is
    rescaled to unit L2 norm, so filter energy no longer depends on bandwidth.
    """

    f_low: Tensor
    band: Tensor
    filter_length: int = 129
    sample_rate: int = 16000
    f_min: float = 30.0
    min_band: float = 30.0
    window: str = "hamming"
    unit_norm: bool = False
    _taps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.filter_length % 2 == 0:
            raise ValueError(f"filter length must be odd, got {self.filter_length}")
        self._taps = window_taps(self.filter_length, self.window)

    @property
    def n_filters(self) -> int:
        return self.f_low.shape[0]

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2

    def freeze(self) -> None:
        for p in (self.f_low, self.band):
            p.requires_grad = False
            p.grad = None

    def cutoffs(self) -> tuple[Tensor, Tensor]:
        ceiling_low = Tensor(np.full(self.n_filters, self.nyquist - self.min_band))
        f1 = minimum(absolute(self.f_low) + self.f_min, ceiling_low)
        f2 = minimum(f1 + (absolute(self.band) + self.min_band), Tensor(np.full(self.n_filters, self.nyquist)))
        return f1, f2

    def cutoffs_hz(self) -> tuple[np.ndarray, np.ndarray]:
        f1, f2 = self.cutoffs()
        return f1.data.copy(), f2.data.copy()

    def kernel(self) -> Tensor:
        """Materialize the (n_filters, 1, filter_length) convolution kernel."""
        f1, f2 = self.cutoffs()
        g = bandpass_kernel(f1, f2, self.filter_length, self.sample_rate, self._taps)
        if self.unit_norm:
            g = g / ((g * g).sum(axis=2, keepdims=True) ** 0.5)
        return g

    def __call__(self, waveform: Tensor) -> Tensor:
        return sinc_forward(self, waveform)


def init_linear_scale(
    n_filters: int = 128,
    filter_length: int = 129,
    sample_rate: int = 16000,
    f_min: float = 30.0,
    min_band: float | None = None,
    window: str = "hamming",
    trainable: bool = True,
    unit_norm: bool = False,
) -> SincFilterbank:
    """Equal-width bands tiling [f_min, sr/2]: f_low[i] = f_min + i*W, band[i] = W."""
    if n_filters < 1:
        raise ValueError("need at least one filter")
    if filter_length % 2 == 0:
        raise ValueError(f"filter length must be odd, got {filter_length}")
    min_band = f_min if min_band is None else min_band
    nyquist = sample_rate / 2
    if n_filters * min_band > nyquist - f_min:
        raise ValueError(f"{n_filters} bands of at least {min_band} Hz do not fit below Nyquist")
    width = (nyquist - f_min) / n_filters
    f_low = f_min + width * np.arange(n_filters)
    band = np.full(n_filters, width)
    return SincFilterbank(
        Tensor(f_low, requires_grad=trainable, name="sinc.f_low"),
        Tensor(band, requires_grad=trainable, name="sinc.band"),
        filter_length=filter_length,
        sample_rate=sample_rate,
        f_min=f_min,
        min_band=min_band,
        window=window,
        unit_norm=unit_norm,
    )


def bandpass_kernel(f1: Tensor, f2: Tensor, length: int, sample_rate: int, taps: np.ndarray) -> Tensor:
    """Windowed ideal band-pass responses for cutoffs f1 < f2 (Hz).

    g[n] = (sin(2 pi f2 n / sr) - sin(2 pi f1 n / sr)) / (pi n), g[0] = 2 (f2 - f1) / sr,
    which is 2 f/sr * sinc(2 f n / sr) differenced over the two cutoffs.
    """
    half = (length - 1) // 2
    n = np.arange(-half, half + 1, dtype=np.float64)
    nz = n != 0
    omega = 2 * np.pi * n / sample_rate

    def lowpass(f: np.ndarray) -> np.ndarray:
        arg = np.outer(f, omega)
        out = np.empty_like(arg)
        out[:, nz] = np.sin(arg[:, nz]) / (np.pi * n[nz])
        out[:, ~nz] = 2 * f[:, None] / sample_rate
        return out

    def dlowpass(f: np.ndarray) -> np.ndarray:
        return 2 * np.cos(np.outer(f, omega)) / sample_rate

    g = (lowpass(f2.data) - lowpass(f1.data)) * taps
    d2 = dlowpass(f2.data) * taps
    d1 = dlowpass(f1.data) * taps

    def backward(grad):
        grad = grad[:, 0, :]
        return -(grad * d1).sum(axis=1), (grad * d2).sum(axis=1)

    return make_node(g[:, None, :], (f1, f2), backward, "sinc_bandpass")


def sinc_forward(fb: SincFilterbank, waveform: Tensor) -> Tensor:
    """Filter a [B, 1, T] waveform batch into [B, n_filters, T - l + 1]."""
    if waveform.ndim != 3 or waveform.shape[1] != 1:
        raise ValueError(f"expected waveform of shape [B, 1, T], got {waveform.shape}")
    if waveform.shape[2] < fb.filter_length:
        raise ValueError(f"waveform of {waveform.shape[2]} samples is shorter than the {fb.filter_length}-tap filter")
    return conv1d(waveform, fb.kernel(), ConvSpec(1, 0, 1))


def magnitude_response(kernel: np.ndarray, sample_rate: int, n_fft: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Return (bin frequencies in Hz, |DFT| per filter) for an (n, 1, l) kernel."""
    taps = np.asarray(kernel).reshape(kernel.shape[0], -1)
    mags = np.abs(np.fft.rfft(taps, n=n_fft, axis=1))
    return np.fft.rfftfreq(n_fft, 1.0 / sample_rate), mags
