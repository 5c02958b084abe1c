"""Small shared DSP pieces: windowed-sinc fractional delays.

Both the beamformer and the image-source room simulator delay signals by
non-integer sample counts; they share the same 8-tap Kaiser-windowed sinc
interpolator so their notions of "a delay" agree.
"""

from __future__ import annotations

import numpy as np
from scipy.special import i0

FRAC_DELAY_TAPS = 8
# Tap offsets run -(taps/2 - 1) .. taps/2 around the integer sample; the
# room simulator's causality contract is stated up to this half-width.
FRAC_DELAY_HALF_WIDTH = FRAC_DELAY_TAPS // 2
_KAISER_BETA = 8.0


def _kaiser_cont(t: np.ndarray, half_span: float, beta: float = _KAISER_BETA) -> np.ndarray:
    # continuous Kaiser window, zero outside |t| >= half_span
    inside = 1.0 - (t / half_span) ** 2
    win = np.where(inside > 0.0, i0(beta * np.sqrt(np.clip(inside, 0.0, None))), 0.0)
    return win / i0(beta)


def kernel_offsets(taps: int = FRAC_DELAY_TAPS) -> np.ndarray:
    return np.arange(taps) - (taps // 2 - 1)


def frac_delay_kernel(frac: float, taps: int = FRAC_DELAY_TAPS) -> np.ndarray:
    """Interpolation kernel for a delay of ``frac`` in [0, 1) samples.

    Taps sit at ``kernel_offsets`` relative to the integer part of the
    delay. For frac == 0 the kernel collapses to a unit impulse, so integer
    delays are exact.
    """
    t = kernel_offsets(taps) - frac
    kernel = np.sinc(t) * _kaiser_cont(t, taps / 2 + 0.5)
    # unit DC gain keeps broadband level flat
    return kernel / kernel.sum()


def delay_signal(x: np.ndarray, delay_samples: float, taps: int = FRAC_DELAY_TAPS) -> np.ndarray:
    """Delay ``x`` by a (possibly negative, fractional) number of samples.

    Output has the same length; samples shifted in from outside the frame
    are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    n_int = int(np.floor(delay_samples))
    frac = float(delay_samples - n_int)
    kernel = frac_delay_kernel(frac, taps)
    out = np.zeros_like(x)
    for coeff, off in zip(kernel, kernel_offsets(taps)):
        shift = n_int + int(off)
        if coeff == 0.0 or shift >= n or shift <= -n:
            continue
        if shift >= 0:
            out[..., shift:] += coeff * x[..., : n - shift]
        else:
            out[..., : n + shift] += coeff * x[..., -shift:]
    return out
