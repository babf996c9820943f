"""Self-check suite: closed-form oracles for the numerical kernels and gradients.

Each check returns a :class:`CheckResult`. :func:`run_all` collects them and
:func:`format_table` renders the pass/fail table printed by ``opinionxf verify``.
"""
from dataclasses import dataclass
import time

import numpy as np

from . import kernels
from ._jit import backend_name
from .embeddings import AnswerEmbeddingTable, normalize
from .fusion import fuse, identity_band_params
from .metrics import macro_f1, micro_accuracy
from .model import ModelConfig, as_tensors, init_params
from .numerics import autograd as ag
from .numerics.gradcheck import grad_check
from .numerics.spectral import dft_direct, fft, ifft
from .quantum import quantum_token
from .training import TrainConfig, total_loss


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float
    detail: str = ""


def _timed(name, tol, fn):
    t0 = time.perf_counter()
    value, detail = fn()
    return CheckResult(name, bool(value <= tol), float(value), tol, time.perf_counter() - t0, detail)


# ---------------------------------------------------------------------------
# spectral
# ---------------------------------------------------------------------------

FFT_SIZES = (4, 8, 16, 128)


def check_fft_oracle(n_vectors=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for d in FFT_SIZES:
        x = rng.standard_normal((n_vectors, d))
        worst = max(worst, float(np.abs(fft(x) - dft_direct(x)).max()))
    return worst, f"sizes {FFT_SIZES}, {n_vectors} vectors each"


def check_fft_roundtrip(n_vectors=100, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for d in FFT_SIZES:
        x = rng.standard_normal((n_vectors, d))
        worst = max(worst, float(np.abs(ifft(fft(x)) - x).max()))
    return worst, "max |ifft(fft(x)) - x|"


def check_parseval(n_vectors=100, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for d in FFT_SIZES:
        x = rng.standard_normal((n_vectors, d))
        lhs = np.sum(x * x, axis=-1)
        rhs = np.sum(np.abs(fft(x)) ** 2, axis=-1) / d
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst, "max |sum x^2 - sum |X|^2 / d|"


# ---------------------------------------------------------------------------
# quantum
# ---------------------------------------------------------------------------

def check_quantum_grid(points=21):
    grid = np.linspace(0.0, 2 * np.pi, points)
    t1, t2 = np.meshgrid(grid, grid, indexing="ij")
    got = kernels.ry_ry_cz_zz(t1.ravel(), t2.ravel())
    err = float(np.abs(got - np.cos(t1.ravel()) * np.cos(t2.ravel())).max())
    return err, f"{points}x{points} grid on [0, 2pi]"


def check_kernel_backends(seed=3):
    """The numba and numpy kernels agree (trivially when numba is unavailable)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((8, 64)) + 1j * rng.standard_normal((8, 64))
    err = float(np.abs(kernels.fft_radix2_nb(x) - kernels.fft_radix2_np(x)).max())
    t = rng.uniform(0, 2 * np.pi, size=(2, 200))
    err = max(err, float(np.abs(kernels.ry_ry_cz_zz_nb(t[0], t[1])
                                - kernels.ry_ry_cz_zz_np(t[0], t[1])).max()))
    return err, f"backend={backend_name()}"


def check_angle_gradient(seed=4):
    """No gradient reaches the fused presentation token through the circuit."""
    rng = np.random.default_rng(seed)
    p = ag.Tensor(rng.standard_normal((3, 8)), requires_grad=True)
    w = ag.Tensor(rng.standard_normal(8), requires_grad=True)
    b = ag.Tensor(np.zeros(8), requires_grad=True)
    token, _ = quantum_token(p, w, b)
    (token * token).sum().backward()
    g = p.grad if p.grad is not None else np.zeros_like(p.data)
    return float(np.abs(g).max()), "max |d token / d fused_p|"


# ---------------------------------------------------------------------------
# fusion and gradients
# ---------------------------------------------------------------------------

def check_fusion_identity(d_model=16, bands=4, seed=5):
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((5, d_model))
    q = rng.standard_normal((5, 3, d_model))
    params = {k: ag.Tensor(v) for k, v in identity_band_params(bands).items()}
    fused, _ = fuse(p, q, params, bands, activation="relu")
    return float(np.abs(fused.data - p).max()), "relu band MLP set to pass magnitudes through"


def tiny_setup(variant, seed=0):
    """Tiny float64 model plus a 4-record batch for finite-difference checks."""
    flags = {
        "base": dict(use_fusion=False, use_quantum=False, use_contrastive=False),
        "fusion": dict(use_fusion=True, use_quantum=False, use_contrastive=False),
        "quantum": dict(use_fusion=True, use_quantum=True, use_contrastive=True),
    }[variant]
    vocab_sizes = [3, 4]
    config = ModelConfig(vocab_sizes=vocab_sizes, d_model=8, n_layers=1, n_heads=1, d_ff=16,
                         embedding_dim=8, fusion_bands=2, seed=seed, **flags)
    rng = np.random.default_rng(seed + 100)
    table = AnswerEmbeddingTable([normalize(rng.standard_normal((V, 8))) for V in vocab_sizes])
    params = init_params(config, table, seed)
    # perturb zero-initialised vectors so every parameter sees a generic point
    arrays = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.arrays.items()}
    pre = np.stack([rng.integers(0, V, size=4) for V in vocab_sizes], axis=1)
    post = np.stack([rng.integers(0, V, size=4) for V in vocab_sizes], axis=1)
    decks = normalize(rng.standard_normal((4, 8)))
    return config, params.trainable_names(config), arrays, pre, post, decks


def check_gradients(variant, tol=1e-4, seed=0):
    config, trainable, arrays, pre, post, decks = tiny_setup(variant, seed)
    train_config = TrainConfig(contrastive_weight=0.5)
    angles = None
    if config.use_quantum:
        _, out = total_loss(as_tensors(arrays), config, train_config, pre, post, decks)
        angles = out.angles

    def f(P):
        return total_loss(P, config, train_config, pre, post, decks, angles=angles)[0]

    report = grad_check(f, arrays, eps=1e-5, tol=tol, names=trainable)
    worst = max(report.errors, key=report.errors.get)
    return report.max_error, f"{len(trainable)} tensors, worst {worst}"


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def check_metric_fixtures():
    a, b = 0, 1
    errs = [
        abs(macro_f1([[a], [a], [b]], [[a], [b], [b]]) - 2 / 3),
        abs(macro_f1([[a], [a]], [[a], [b]]) - 1 / 3),
        abs(micro_accuracy([[a], [a], [b]], [[a], [b], [b]]) - 2 / 3),
    ]
    return max(errs), "hand fixtures 2/3, 1/3, 2/3"


def brute_force_macro_f1(preds, targets):
    """Confusion-matrix route, independent of the metrics module."""
    preds, targets = np.asarray(preds), np.asarray(targets)
    per_q = []
    for q in range(preds.shape[1]):
        p, t = preds[:, q], targets[:, q]
        labels = sorted(set(p.tolist()) | set(t.tolist()))
        index = {k: i for i, k in enumerate(labels)}
        C = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for pi, ti in zip(p, t):
            C[index[pi], index[ti]] += 1
        f1s = []
        for i in range(len(labels)):
            tp, fp, fn = C[i, i], C[i].sum() - C[i, i], C[:, i].sum() - C[i, i]
            f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
        per_q.append(sum(f1s) / len(f1s))
    return sum(per_q) / len(per_q)


def check_metric_oracle(n_fixtures=50, seed=6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_fixtures):
        n = int(rng.integers(1, 11))
        Q = int(rng.integers(1, 6))
        V = int(rng.integers(2, 5))
        preds = rng.integers(0, V, size=(n, Q))
        gold = rng.integers(0, V, size=(n, Q))
        worst = max(worst, abs(macro_f1(preds, gold) - brute_force_macro_f1(preds, gold)))
    return worst, f"{n_fixtures} random fixtures"


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

CHECKS = [
    ("fft vs direct DFT", 1e-10, check_fft_oracle),
    ("ifft(fft(x)) round trip", 1e-9, check_fft_roundtrip),
    ("Parseval", 1e-9, check_parseval),
    ("ZZ expectation grid", 1e-12, check_quantum_grid),
    ("numba vs numpy kernels", 1e-10, check_kernel_backends),
    ("circuit angle gradient", 0.0, check_angle_gradient),
    ("fusion identity", 1e-9, check_fusion_identity),
    ("grad check: base", 1e-4, lambda: check_gradients("base")),
    ("grad check: fusion", 1e-4, lambda: check_gradients("fusion")),
    ("grad check: quantum", 1e-4, lambda: check_gradients("quantum")),
    ("metric hand fixtures", 0.0, check_metric_fixtures),
    ("metric vs confusion matrix", 1e-12, check_metric_oracle),
]


def run_check(name):
    for check_name, tol, fn in CHECKS:
        if check_name == name:
            return _timed(check_name, tol, fn)
    raise KeyError(name)


def run_all(checks=None):
    return [_timed(name, tol, fn) for name, tol, fn in (checks or CHECKS)]


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'value':>10}  {'tol':>8}  {'secs':>6}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.value:10.2e}  {r.tolerance:8.0e}  {r.seconds:6.2f}  "
                     f"{'PASS' if r.passed else 'FAIL'}  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)
