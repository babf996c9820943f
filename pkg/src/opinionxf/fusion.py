"""Frequency-spectrum fusion of the presentation token with the mean question token.

The lowest ``K`` bins of the presentation spectrum get new magnitudes from a
small band MLP (input: the ``K`` low-bin magnitudes of both spectra) while
keeping their original phases. Bins ``d-k`` mirror bins ``k`` so the inverse
transform stays real. Gradients of the two spectral steps are written out by
hand; see ``docs/fusion_gradients.md``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import autograd as ag
from .numerics.autograd import Tensor
from .numerics.spectral import fft, ifft

ACTIVATIONS = ("softplus", "relu")


@dataclass(frozen=True)
class FusionParams:
    """Shape of the band MLP: 2K -> 2K (GELU) -> K (non-negative)."""

    d_model: int
    bands: int
    activation: str = "softplus"

    def __post_init__(self):
        if self.d_model < 2 or self.d_model & (self.d_model - 1):
            raise ConfigError(f"fusion needs a power-of-two d_model, got {self.d_model}")
        if not 1 <= self.bands <= self.d_model // 2:
            raise ConfigError(f"fusion bands must be in [1, {self.d_model // 2}], got {self.bands}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown band activation {self.activation!r}")

    def shapes(self):
        K = self.bands
        return {
            "fusion.w1": (2 * K, 2 * K),
            "fusion.b1": (2 * K,),
            "fusion.w2": (2 * K, K),
            "fusion.b2": (K,),
        }


def _unit_phase(P):
    mag = np.abs(P)
    return np.where(mag > 0, P / np.where(mag > 0, mag, 1.0), 1.0 + 0j), mag


def spectral_magnitudes(x, bands):
    """|fft(x)|[..., :bands] with gradient."""
    x = ag.as_tensor(x)
    P = fft(x.data)
    u, mag = _unit_phase(P)
    live = mag > 0

    def backward(g):
        c = np.zeros(x.shape, dtype=np.complex128)
        c[..., :bands] = g * u[..., :bands] * live[..., :bands]
        return (fft(np.conj(c)).real,)

    return ag.custom(mag[..., :bands].copy(), (x,), backward, "spectral_magnitudes")


def _mirror(F, bands):
    d = F.shape[-1]
    for k in range(1, bands):
        F[..., d - k] = np.conj(F[..., k])
    return F


def spectral_reconstruct(p, magnitudes, bands):
    """ifft of fft(p) with bins < bands set to ``magnitudes * phase(P_k)``."""
    p, magnitudes = ag.as_tensor(p), ag.as_tensor(magnitudes)
    d = p.shape[-1]
    P = fft(p.data)
    u, mag = _unit_phase(P)
    F = P.copy()
    F[..., :bands] = magnitudes.data * u[..., :bands]
    _mirror(F, bands)
    out = ifft(F)

    weight = np.full(bands, 2.0)
    weight[0] = 1.0
    mask = np.zeros(d, dtype=bool)
    mask[:bands] = True
    mask[d - bands + 1:] = True

    def backward(g):
        G = fft(g)
        Gk = np.conj(G[..., :bands])
        uk = u[..., :bands]
        grad_m = weight / d * (uk * Gk).real
        # p -> p - lowpass(p) is linear and self-adjoint
        grad_p = g - ifft(np.where(mask, G, 0.0), check=False)
        # phase path: R depends on arg(P_k) for 0 < k < bands
        g_phase = -weight / d * magnitudes.data * (uk * Gk).imag
        Pk = P[..., :bands]
        live = mag[..., :bands] > 0
        h = np.zeros(P.shape, dtype=np.complex128)
        h[..., :bands] = np.where(live, g_phase / np.where(live, Pk, 1.0), 0.0)
        h[..., 0] = 0.0
        grad_p = grad_p + fft(h).imag
        return grad_p, grad_m

    return ag.custom(out, (p, magnitudes), backward, "spectral_reconstruct")


def band_mlp(features, params, activation="softplus"):
    hidden = ag.gelu(features @ params["fusion.w1"] + params["fusion.b1"])
    pre = hidden @ params["fusion.w2"] + params["fusion.b2"]
    return ag.softplus(pre) if activation == "softplus" else ag.relu(pre)


def fuse(p, q_tokens, params, bands, activation="softplus"):
    """Return ``(fused_p, augmented_q)``.

    ``p`` is ``(..., d)`` and ``q_tokens`` is ``(..., Q, d)``; every question
    token receives ``fused_p`` as a residual.
    """
    p = ag.as_tensor(p)
    q_tokens = ag.as_tensor(q_tokens)
    qbar = q_tokens.mean(axis=-2)
    feats = ag.concat([spectral_magnitudes(p, bands), spectral_magnitudes(qbar, bands)], axis=-1)
    m = band_mlp(feats, params, activation)
    fused = spectral_reconstruct(p, m, bands)
    augmented = q_tokens + ag.reshape(fused, fused.shape[:-1] + (1, fused.shape[-1]))
    return fused, augmented


def fusion_summaries(fused_p, augmented_q):
    """``u`` is the fused presentation token, ``v`` the mean augmented question token."""
    return ag.as_tensor(fused_p), ag.as_tensor(augmented_q).mean(axis=-2)


def identity_band_params(bands, offset=40.0):
    """Band MLP weights that reproduce the presentation magnitudes (relu output).

    GELU is exact identity once its input exceeds ~10 in float64, so the
    hidden layer is shifted up by ``offset`` and shifted back at the output.
    """
    K = bands
    w1 = np.zeros((2 * K, 2 * K))
    w1[:K, :K] = np.eye(K)
    w2 = np.zeros((2 * K, K))
    w2[:K, :K] = np.eye(K)
    return {
        "fusion.w1": w1,
        "fusion.b1": np.concatenate([np.full(K, offset), np.zeros(K)]),
        "fusion.w2": w2,
        "fusion.b2": np.full(K, -offset),
    }


__all__ = [
    "FusionParams",
    "Tensor",
    "band_mlp",
    "fuse",
    "fusion_summaries",
    "identity_band_params",
    "spectral_magnitudes",
    "spectral_reconstruct",
]
