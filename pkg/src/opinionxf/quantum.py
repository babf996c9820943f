"""Two-qubit Ry-Ry-CZ circuit and the quantum token built from its <Z x Z>."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .numerics import autograd as ag

KET_00 = np.array([1, 0, 0, 0], dtype=np.complex128)
ZZ_DIAGONAL = np.array([1.0, -1.0, -1.0, 1.0])
CZ_DIAGONAL = np.array([1, 1, 1, -1], dtype=np.complex128)


@dataclass(frozen=True)
class QuantumTokenParams:
    d_model: int
    features: tuple = (0, 1)

    def __post_init__(self):
        i, j = self.features
        if i == j:
            raise ConfigError("quantum feature indices must differ")
        if not (0 <= i < self.d_model and 0 <= j < self.d_model):
            raise ConfigError("quantum feature indices out of range")

    def shapes(self):
        return {"quantum.weight": (self.d_model,), "quantum.bias": (self.d_model,)}


def ry(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def ry_ry_state(theta1, theta2):
    """Ry(theta1) on qubit 1 and Ry(theta2) on qubit 2 applied to |00>."""
    return np.kron(ry(theta1), ry(theta2)) @ KET_00


def apply_cz(state):
    return CZ_DIAGONAL * np.asarray(state, dtype=np.complex128)


def expect_zz(state):
    state = np.asarray(state)
    return float(np.dot(ZZ_DIAGONAL, np.abs(state) ** 2))


def circuit_expectation(theta1, theta2):
    return expect_zz(apply_cz(ry_ry_state(theta1, theta2)))


def quantum_token(fused_p, weight, bias, features=(0, 1), angles=None):
    """``token = <ZZ> * weight + bias`` with the angles taken from ``fused_p``.

    The angles are read from ``fused_p.data``: no gradient reaches ``fused_p``
    through this path, while ``weight`` and ``bias`` train normally. Passing
    ``angles`` overrides the read (used to hold them fixed in gradient checks).
    Returns ``(token, angles)``.
    """
    fused_p = ag.as_tensor(fused_p)
    if angles is None:
        data = fused_p.data
        angles = (data[..., features[0]].copy(), data[..., features[1]].copy())
    e = kernels.ry_ry_cz_zz(np.atleast_1d(angles[0]), np.atleast_1d(angles[1]))
    e = e.reshape(np.shape(angles[0]) + (1,))
    token = ag.Tensor(e) * weight + bias
    return token, angles
