"""Discrete Fourier transforms over the last axis.

Power-of-two lengths go through the radix-2 kernel; any other length falls
back to the direct O(d^2) sum. Spectra are full-length complex arrays.
"""
import numpy as np

from .. import kernels
from ..errors import SpectrumIntegrityError

SYMMETRY_TOL = 1e-6


def dft_direct(x, inverse=False):
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    basis = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    return x @ basis.T


def _transform(x, inverse):
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1:
        raise ValueError("transform length must be >= 1")
    if not kernels.is_power_of_two(n):
        return dft_direct(x, inverse)
    flat = x.reshape(-1, n)
    return kernels.fft_radix2(flat, inverse).reshape(x.shape)


def fft(x):
    """Unnormalised forward transform ``X[k] = sum_n x[n] exp(-2 pi i k n / d)``."""
    return _transform(x, inverse=False)


def ifft_complex(X):
    X = np.asarray(X, dtype=np.complex128)
    return _transform(X, inverse=True) / X.shape[-1]


def conjugate_asymmetry(X):
    X = np.asarray(X, dtype=np.complex128)
    mirror = np.roll(X[..., ::-1], 1, axis=-1)
    return np.max(np.abs(X - np.conj(mirror)), initial=0.0)


def ifft(X, check=True):
    """Inverse transform of a spectrum that came from a real signal.

    The imaginary residue is dropped. With ``check`` the spectrum must be
    conjugate-symmetric to within ``SYMMETRY_TOL`` (relative to its peak
    magnitude when that exceeds 1).
    """
    X = np.asarray(X, dtype=np.complex128)
    if check:
        scale = max(1.0, float(np.max(np.abs(X), initial=0.0)))
        asym = conjugate_asymmetry(X)
        if asym > SYMMETRY_TOL * scale:
            raise SpectrumIntegrityError(
                f"spectrum is not conjugate-symmetric (asymmetry {asym:.3e})")
    return ifft_complex(X).real
