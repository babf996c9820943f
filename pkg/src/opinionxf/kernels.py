"""Hot numeric kernels with numba and pure-numpy implementations.

Each kernel exists twice: ``*_nb`` (numba, loop form) and ``*_np`` (vectorised
numpy). The public names dispatch on :data:`opinionxf._jit.USE_NUMBA`. Both
variants take and return the same dtypes so they can be benchmarked and
cross-checked against each other.
"""
import numpy as np

from ._jit import HAVE_NUMBA, USE_NUMBA, njit


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


# --------------------------------------------------------------------------
# radix-2 FFT over the last axis of a (B, n) complex array, unnormalised
# --------------------------------------------------------------------------

def fft_radix2_np(x, inverse=False):
    x = np.ascontiguousarray(x, dtype=np.complex128)
    B, n = x.shape
    out = x[:, bit_reverse_indices(n)]
    sign = 1.0 if inverse else -1.0
    tw = np.exp(sign * 2j * np.pi * np.arange(n // 2) / n)
    m = 2
    while m <= n:
        half = m // 2
        w = tw[:: n // m][:half]
        v = out.reshape(B, n // m, m)
        u = v[..., :half].copy()
        t = w * v[..., half:]
        v[..., :half] = u + t
        v[..., half:] = u - t
        m *= 2
    return out


def _fft_radix2_loop(x, inverse):
    B, n = x.shape
    out = x.copy()
    sign = 1.0 if inverse else -1.0
    half_n = n // 2
    tw = np.empty(max(half_n, 1), dtype=np.complex128)
    for k in range(half_n):
        ang = sign * 2.0 * np.pi * k / n
        tw[k] = complex(np.cos(ang), np.sin(ang))
    for b in range(B):
        j = 0
        for i in range(1, n):
            bit = n >> 1
            while j & bit:
                j ^= bit
                bit >>= 1
            j |= bit
            if i < j:
                tmp = out[b, i]
                out[b, i] = out[b, j]
                out[b, j] = tmp
        m = 2
        while m <= n:
            half = m // 2
            step = n // m
            for start in range(0, n, m):
                for k in range(half):
                    w = tw[k * step]
                    u = out[b, start + k]
                    t = w * out[b, start + k + half]
                    out[b, start + k] = u + t
                    out[b, start + k + half] = u - t
            m *= 2
    return out


_fft_radix2_nb = njit(_fft_radix2_loop)


def fft_radix2_nb(x, inverse=False):
    x = np.ascontiguousarray(x, dtype=np.complex128)
    return _fft_radix2_nb(x, bool(inverse))


# --------------------------------------------------------------------------
# batched 2-qubit Ry-Ry-CZ statevector and <Z x Z>
# --------------------------------------------------------------------------

def ry_ry_cz_zz_np(theta1, theta2):
    theta1 = np.asarray(theta1, dtype=np.float64)
    theta2 = np.asarray(theta2, dtype=np.float64)
    c1, s1 = np.cos(theta1 / 2), np.sin(theta1 / 2)
    c2, s2 = np.cos(theta2 / 2), np.sin(theta2 / 2)
    amps = np.stack([c1 * c2, c1 * s2, s1 * c2, -(s1 * s2)], axis=-1).astype(np.complex128)
    probs = np.abs(amps) ** 2
    return probs[..., 0] - probs[..., 1] - probs[..., 2] + probs[..., 3]


def _ry_ry_cz_zz_loop(theta1, theta2):
    n = theta1.shape[0]
    out = np.empty(n, dtype=np.float64)
    parity = np.array([1.0, -1.0, -1.0, 1.0])
    amps = np.empty(4, dtype=np.complex128)
    for i in range(n):
        c1 = np.cos(theta1[i] / 2)
        s1 = np.sin(theta1[i] / 2)
        c2 = np.cos(theta2[i] / 2)
        s2 = np.sin(theta2[i] / 2)
        amps[0] = c1 * c2
        amps[1] = c1 * s2
        amps[2] = s1 * c2
        amps[3] = s1 * s2
        amps[3] = -amps[3]
        acc = 0.0
        for k in range(4):
            a = amps[k]
            acc += parity[k] * (a.real * a.real + a.imag * a.imag)
        out[i] = acc
    return out


_ry_ry_cz_zz_nb = njit(_ry_ry_cz_zz_loop)


def ry_ry_cz_zz_nb(theta1, theta2):
    t1 = np.ascontiguousarray(np.ravel(theta1), dtype=np.float64)
    t2 = np.ascontiguousarray(np.ravel(theta2), dtype=np.float64)
    return _ry_ry_cz_zz_nb(t1, t2).reshape(np.shape(theta1))


if USE_NUMBA:
    fft_radix2 = fft_radix2_nb
    ry_ry_cz_zz = ry_ry_cz_zz_nb
else:
    fft_radix2 = fft_radix2_np
    ry_ry_cz_zz = ry_ry_cz_zz_np

__all__ = [
    "HAVE_NUMBA",
    "USE_NUMBA",
    "bit_reverse_indices",
    "fft_radix2",
    "fft_radix2_nb",
    "fft_radix2_np",
    "is_power_of_two",
    "ry_ry_cz_zz",
    "ry_ry_cz_zz_nb",
    "ry_ry_cz_zz_np",
]
