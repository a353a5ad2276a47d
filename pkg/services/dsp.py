"""
services/dsp.py

Frequency-domain primitives shared by the feature, solver and tracker services.

Normalization contract: every transform here is UNITARY (``norm="ortho"``,
1/sqrt(N) in each direction), so Parseval holds exactly and the sqrt(N) that
relates a spatial filter to its spectrum is always written out explicitly by
the caller (see ``services.solver.filter_spectrum``).

Key functions:
- `fft2(grid)` / `ifft2(grid)`: unitary 2-D transforms over the two leading axes.
- `circular_correlate(a, b)`: c(t) = sum_n a(n + t) * b(n), computed in the frequency domain.
- `hann_window(mh, mw)`: separable raised-cosine window.
- `gaussian_label(mh, mw, sigma)`: desired response with its peak rolled to index (0, 0).

Usage:
    from services.dsp import fft2, ifft2, gaussian_label
    y = gaussian_label(16, 16, sigma=1.0)
    yf = fft2(y.y)
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.fft


class DSPError(ValueError):
    """Invalid argument to a frequency-domain primitive."""


@dataclass(frozen=True)
class Label:
    y: np.ndarray
    peak: Tuple[int, int] = (0, 0)


def fft2(grid: np.ndarray) -> np.ndarray:
    """Unitary forward transform over axes (0, 1); trailing axes are channels."""
    return scipy.fft.fft2(grid, axes=(0, 1), norm="ortho")


def ifft2(grid: np.ndarray) -> np.ndarray:
    """Unitary inverse transform over axes (0, 1)."""
    return scipy.fft.ifft2(grid, axes=(0, 1), norm="ortho")


def circular_correlate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Circular cross-correlation of two equally sized real grids.

    Returns c with c[t] = sum_n a[(n + t) mod size] * b[n]. Under the unitary
    transform this is sqrt(N) * fft2(a) * conj(fft2(b)).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DSPError(f"correlation operands differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[0] * a.shape[1]
    spectrum = np.sqrt(n) * fft2(a) * np.conj(fft2(b))
    return np.real(ifft2(spectrum))


def hann_window(mh: int, mw: int) -> np.ndarray:
    """Separable raised-cosine window; a 1-long axis is defined as 1."""
    if mh < 1 or mw < 1:
        raise DSPError(f"window size must be positive, got {mh}x{mw}")

    def _axis(m: int) -> np.ndarray:
        if m == 1:
            return np.ones(1)
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(m) / (m - 1))

    return np.outer(_axis(mh), _axis(mw))


def gaussian_label(mh: int, mw: int, sigma: float) -> Label:
    """
    Gaussian desired response centered on the grid, then circularly shifted
    so the peak sits at (0, 0). The result is circularly symmetric, so its
    spectrum is real.
    """
    if not sigma > 0:
        raise DSPError(f"label bandwidth must be positive, got sigma={sigma}")
    r0, c0 = mh // 2, mw // 2
    rows = np.arange(mh) - r0
    cols = np.arange(mw) - c0
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    y = np.exp(-(rr ** 2 + cc ** 2) / (2.0 * sigma ** 2))
    y = np.roll(y, (-r0, -c0), axis=(0, 1))
    return Label(y=y, peak=(0, 0))


def label_sigma(target_cells: Tuple[int, int], output_sigma_factor: float) -> float:
    """Label bandwidth in cells: factor * sqrt(target height * target width)."""
    return output_sigma_factor * float(np.sqrt(target_cells[0] * target_cells[1]))
