"""Stationary covariance functions, their gradients and Lipschitz constants.

Two families are supported: the squared exponential and Matern-5/2, both
with ARD (per-dimension) lengthscales. Lipschitz constants bound
|k(x, x') - k(y, x')| / ||x - y||_2 globally; for ARD the smallest
lengthscale gives the conservative constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArityMismatch, UnsupportedFamily

SQUARED_EXPONENTIAL = "squared-exponential"
MATERN52 = "matern-5/2"
FAMILIES = (SQUARED_EXPONENTIAL, MATERN52)

_SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class Kernel:
    family: str
    lengthscale: np.ndarray   # (arity,)
    signal_variance: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedFamily(f"unknown kernel family {self.family!r}")
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal variance must be positive")
        object.__setattr__(self, "lengthscale", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))

    @property
    def arity(self) -> int:
        return self.lengthscale.size

    def with_params(self, lengthscale=None, signal_variance=None) -> "Kernel":
        return Kernel(
            self.family,
            self.lengthscale if lengthscale is None else lengthscale,
            self.signal_variance if signal_variance is None else signal_variance,
        )


def make_kernel(family: str, lengthscale, signal_variance: float,
                arity: int | None = None) -> Kernel:
    """Build a kernel, broadcasting a scalar lengthscale to `arity`."""
    ls = np.atleast_1d(np.asarray(lengthscale, dtype=float))
    if arity is not None and ls.size == 1 and arity > 1:
        ls = np.full(arity, ls[0])
    if arity is not None and ls.size != arity:
        raise ArityMismatch(f"lengthscale has arity {ls.size}, expected {arity}")
    return Kernel(family, ls, signal_variance)


def _check_arity(kernel: Kernel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[-1] != kernel.arity:
        raise ArityMismatch(
            f"point has arity {x.shape[-1]}, kernel expects {kernel.arity}"
        )
    return x


def _as_rows(kernel: Kernel, x) -> np.ndarray:
    """Row-stacked float view with the kernel's arity (hot-path variant)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != kernel.arity:
        raise ArityMismatch(
            f"point has arity {x.shape[-1]}, kernel expects {kernel.arity}"
        )
    return x


def cross_covariance(kernel: Kernel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Covariance matrix k(a_i, b_j) for row-stacked points a (p, m), b (q, m)."""
    a = _as_rows(kernel, a)
    b = _as_rows(kernel, b)
    diff = (a[:, None, :] - b[None, :, :]) / kernel.lengthscale
    r2 = np.sum(diff * diff, axis=-1)
    if kernel.family == SQUARED_EXPONENTIAL:
        return kernel.signal_variance * np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    return (
        kernel.signal_variance
        * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2)
        * np.exp(-_SQRT5 * r)
    )


def gram(kernel: Kernel, x: np.ndarray) -> np.ndarray:
    return cross_covariance(kernel, x, x)


def kernel_eval(kernel: Kernel, x, x2) -> float:
    """Covariance between two single points."""
    x = _check_arity(kernel, x)
    x2 = _check_arity(kernel, x2)
    return float(cross_covariance(kernel, x[None, :], x2[None, :])[0, 0])


def cross_gradient(kernel: Kernel, x, b: np.ndarray) -> np.ndarray:
    """Gradients of k(x, b_j) with respect to x, row-stacked as (q, m)."""
    x = _check_arity(kernel, x)
    b = np.atleast_2d(_check_arity(kernel, b))
    inv_ls2 = 1.0 / (kernel.lengthscale * kernel.lengthscale)
    diff = x[None, :] - b                      # (q, m)
    scaled = diff * inv_ls2
    r2 = np.sum((diff / kernel.lengthscale) ** 2, axis=-1)
    if kernel.family == SQUARED_EXPONENTIAL:
        k = kernel.signal_variance * np.exp(-0.5 * r2)
        return -k[:, None] * scaled
    r = np.sqrt(r2)
    # dk/dr = -(5/3) sv r (1 + sqrt5 r) e^{-sqrt5 r}; the 1/r of dr/dx cancels.
    coef = -(5.0 / 3.0) * kernel.signal_variance * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    return coef[:, None] * scaled


def kernel_gradient(kernel: Kernel, x, x2) -> np.ndarray:
    """Gradient of k(x, x2) with respect to x."""
    x2 = _check_arity(kernel, x2)
    return cross_gradient(kernel, x, x2[None, :])[0]


def cross_covariance_and_gradients(kernel: Kernel, a: np.ndarray, b: np.ndarray):
    """Covariances k(a_i, b_j) as (p, q) plus gradients w.r.t. a_i as (p, q, m).

    One fused pass for the acquisition hot loop.
    """
    a = _as_rows(kernel, a)
    b = _as_rows(kernel, b)
    inv_ls2 = 1.0 / (kernel.lengthscale * kernel.lengthscale)
    diff = a[:, None, :] - b[None, :, :]          # (p, q, m)
    r2 = np.sum(diff * diff * inv_ls2, axis=-1)
    if kernel.family == SQUARED_EXPONENTIAL:
        k = kernel.signal_variance * np.exp(-0.5 * r2)
        grads = -k[:, :, None] * diff * inv_ls2
        return k, grads
    r = np.sqrt(r2)
    e = np.exp(-_SQRT5 * r)
    k = kernel.signal_variance * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * e
    coef = -(5.0 / 3.0) * kernel.signal_variance * (1.0 + _SQRT5 * r) * e
    grads = coef[:, :, None] * diff * inv_ls2
    return k, grads


def _golden_max(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Golden-section maximizer of a unimodal f on [lo, hi]; returns max value."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return max(fc, fd)


def kernel_lipschitz(kernel: Kernel) -> float:
    """Global Lipschitz constant of x -> k(x, x') in the euclidean norm.

    With r the lengthscale-normalized distance, ||grad k|| <=
    max_r |dk/dr| / min(lengthscale); the squared exponential maximum is
    at r = 1 in closed form, Matern-5/2 is maximized numerically.
    """
    ls_min = float(np.min(kernel.lengthscale))
    if kernel.family == SQUARED_EXPONENTIAL:
        return kernel.signal_variance * math.exp(-0.5) / ls_min
    if kernel.family == MATERN52:
        def radial_slope(r):
            return (5.0 / 3.0) * r * (1.0 + _SQRT5 * r) * math.exp(-_SQRT5 * r)

        peak = _golden_max(radial_slope, 0.0, 10.0)
        return kernel.signal_variance * peak / ls_min
    raise UnsupportedFamily(f"no Lipschitz bound for family {kernel.family!r}")


def gram_with_loghyper_grads(kernel: Kernel, x: np.ndarray):
    """Gram matrix plus its derivatives with respect to log lengthscales
    and log signal variance, for marginal-likelihood ascent."""
    x = np.atleast_2d(_check_arity(kernel, x))
    diff = x[:, None, :] - x[None, :, :]
    scaled2 = (diff / kernel.lengthscale) ** 2     # (t, t, m)
    r2 = np.sum(scaled2, axis=-1)
    if kernel.family == SQUARED_EXPONENTIAL:
        k = kernel.signal_variance * np.exp(-0.5 * r2)
        d_ls = k[:, :, None] * scaled2             # dK/dlog ls_j
    else:
        r = np.sqrt(r2)
        e = np.exp(-_SQRT5 * r)
        k = kernel.signal_variance * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * e
        coef = (5.0 / 3.0) * kernel.signal_variance * (1.0 + _SQRT5 * r) * e
        d_ls = coef[:, :, None] * scaled2
    return k, d_ls, k.copy()                       # last entry: dK/dlog sv
