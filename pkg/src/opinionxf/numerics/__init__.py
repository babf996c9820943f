"""Dense-array substrate: reverse-mode autodiff, DFTs and gradient checking."""
from . import autograd
from .autograd import Tensor, stop_gradient
from .functional import layer_norm, softmax
from .gradcheck import GradCheckReport, grad_check, relative_error
from .spectral import conjugate_asymmetry, dft_direct, fft, ifft, ifft_complex

__all__ = [
    "GradCheckReport",
    "Tensor",
    "autograd",
    "conjugate_asymmetry",
    "dft_direct",
    "fft",
    "grad_check",
    "ifft",
    "ifft_complex",
    "layer_norm",
    "relative_error",
    "softmax",
    "stop_gradient",
]
