"""Decentralized upper-confidence acquisition with quartic calibration.

The exploration term of GP-UCB, the posterior standard deviation, has no
additive decomposition. Over a variance interval [v_-, v_+] the line
a*x + 1/(4a) overestimates sqrt(x) everywhere (discriminant zero by
construction) and the least-squares-optimal slope a is the unique
positive root of a quartic polynomial. Each factor then scores

    phi_i(x) = mean_i(x) + a * sqrt(beta_t) * var_i(x)

and the sum of the phi_i plus the constant sqrt(beta_t)/(4a) dominates
classic GP-UCB while splitting cleanly over the factor graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroVariance, InvalidDelta, NegativeLipschitz
from .kernels import cross_covariance_and_gradients, kernel_lipschitz


@dataclass(frozen=True)
class VarianceBounds:
    """Aleatoric floors per factor and the induced total-variance interval."""

    v_minus_per_factor: np.ndarray
    v_minus: float
    delta_minus: float
    v_plus: float

    def with_v_plus(self, v_plus: float) -> "VarianceBounds":
        """Clamped copy used when observed variance exceeds the bound."""
        return VarianceBounds(self.v_minus_per_factor, self.v_minus,
                              self.delta_minus, max(float(v_plus), self.v_minus))


def variance_bounds(v_minus_per_factor) -> VarianceBounds:
    """Total-variance interval from per-factor aleatoric floors.

    v_- is the sum of the floors, delta_-^2 the sum of sqrt(v_i v_j) over
    pairs i != j, and v_+ = (sqrt(v_-) + 2 delta_-)^2.
    """
    v = np.atleast_1d(np.asarray(v_minus_per_factor, dtype=float))
    if np.any(v < 0):
        raise ValueError("per-factor variance floors must be non-negative")
    if not np.any(v > 0):
        raise AllZeroVariance("all per-factor variance floors are zero")
    v_minus = float(np.sum(v))
    roots = np.sqrt(v)
    delta_sq = float(np.sum(roots) ** 2 - v_minus)
    delta_minus = math.sqrt(max(delta_sq, 0.0))
    v_plus = (math.sqrt(v_minus) + 2.0 * delta_minus) ** 2
    return VarianceBounds(v, v_minus, delta_minus, v_plus)


def calibration_polynomial(a: float, v_minus: float, v_plus: float) -> float:
    """The quartic whose unique positive root is the optimal slope."""
    def span(p):
        return v_plus ** p - v_minus ** p

    return (
        (2.0 * span(3) / 3.0) * a ** 4
        - (4.0 * span(2.5) / 5.0) * a ** 3
        + (span(1.5) / 3.0) * a
        - span(1) / 8.0
    )


def _calibration_polynomial_slope(a, v_minus, v_plus):
    def span(p):
        return v_plus ** p - v_minus ** p

    return (
        (8.0 * span(3) / 3.0) * a ** 3
        - (12.0 * span(2.5) / 5.0) * a ** 2
        + span(1.5) / 3.0
    )


def solve_quartic_a(bounds: VarianceBounds) -> float:
    """Slope of the tightest linear overestimate of sqrt on [v_-, v_+].

    Bisection on the quartic, bracketed by the tangent slope at the left
    endpoint (the polynomial is increasing on the positive axis), then a
    few Newton polish steps. A degenerate interval returns the tangent
    slope at the single point.
    """
    v_minus, v_plus = bounds.v_minus, bounds.v_plus
    if v_minus <= 0:
        raise ValueError("v_minus must be positive to calibrate")
    if v_plus < v_minus:
        raise ValueError("v_plus must be at least v_minus")
    if v_plus - v_minus <= 1e-14 * v_plus:
        return 1.0 / (2.0 * math.sqrt(v_minus))

    hi = 1.0 / (2.0 * math.sqrt(v_minus))
    for _ in range(60):
        if calibration_polynomial(hi, v_minus, v_plus) >= 0.0:
            break
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if calibration_polynomial(mid, v_minus, v_plus) < 0.0:
            lo = mid
        else:
            hi = mid
    a = 0.5 * (lo + hi)
    for _ in range(3):
        slope = _calibration_polynomial_slope(a, v_minus, v_plus)
        if slope <= 0:
            break
        step = calibration_polynomial(a, v_minus, v_plus) / slope
        a_new = a - step
        if not (0.0 < a_new < 2.0 * hi):
            break
        a = a_new
    return a


def beta_schedule(t: int, delta: float, cardinality: float) -> float:
    """Confidence multiplier 2 log(|D| pi^2 t^2 / (6 delta))."""
    if not (0.0 < delta < 1.0):
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")
    if t < 1:
        raise ValueError("t must be at least 1")
    if cardinality < 1:
        raise ValueError("effective cardinality must be at least 1")
    return 2.0 * math.log(cardinality * math.pi ** 2 * t ** 2 / (6.0 * delta))


@dataclass(frozen=True)
class AcquisitionBundle:
    """Calibrated per-factor acquisition over a fitted model."""

    model: object                 # JointGPModel or DecomposedGPModel
    a: float
    beta_t: float
    bounds: VarianceBounds
    t: int

    @property
    def n_factors(self) -> int:
        return self.model.n_factors


def make_bundle(model, bounds: VarianceBounds, delta: float,
                cardinality: float, t: int | None = None) -> AcquisitionBundle:
    t_eff = max(1, model.t if t is None else t)
    return AcquisitionBundle(
        model=model,
        a=solve_quartic_a(bounds),
        beta_t=beta_schedule(t_eff, delta, cardinality),
        bounds=bounds,
        t=t_eff,
    )


def local_acquisition(bundle: AcquisitionBundle, i: int, x_vi) -> float:
    mean, variance = bundle.model.posterior_factor(i, x_vi)
    return mean + bundle.a * math.sqrt(bundle.beta_t) * variance


def local_acquisition_batch(bundle: AcquisitionBundle, i: int, x_vi: np.ndarray):
    means, variances = bundle.model.posterior_factor_batch(i, x_vi)
    return means + bundle.a * math.sqrt(bundle.beta_t) * variances


def local_acquisition_value_grad(bundle: AcquisitionBundle, i: int,
                                 x_vi: np.ndarray):
    """Values and gradients of phi_i at row-stacked points (b, m).

    The gradient is G^T (alpha - 2 a sqrt(beta) w) with G the kernel
    gradient rows and w the Gram solve of the covariance vector; both
    reuse the model's stored factorization.
    """
    model = bundle.model
    kernel = model.factor_kernel(i)
    x_vi = np.asarray(x_vi, dtype=float)
    if x_vi.ndim == 1:
        x_vi = x_vi[None, :]
    b = x_vi.shape[0]
    scale = bundle.a * math.sqrt(bundle.beta_t)
    if model.t == 0:
        values = np.full(b, scale * kernel.signal_variance)
        return values, np.zeros_like(x_vi)
    proj = model.factor_projection(i)
    alpha = model.factor_alpha(i)
    k_vec, k_grads = cross_covariance_and_gradients(kernel, x_vi, proj)
    w = model.factor_solve(i, k_vec.T)                    # (t, b)
    means = k_vec @ alpha
    variances = np.maximum(
        kernel.signal_variance - np.einsum("bt,tb->b", k_vec, w), 0.0
    )
    values = means + scale * variances
    coeff = alpha[:, None] - 2.0 * scale * w              # (t, b)
    grads = np.einsum("btm,tb->bm", k_grads, coeff)
    return values, grads


def local_acquisition_gradient(bundle: AcquisitionBundle, i: int, x_vi) -> np.ndarray:
    _, grads = local_acquisition_value_grad(bundle, i, np.atleast_2d(x_vi))
    return grads[0]


def total_acquisition(bundle: AcquisitionBundle, x) -> float:
    """Sum of the factor acquisitions at a full point."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for i, factor in enumerate(bundle.model.decomposition.factors):
        total += local_acquisition(bundle, i, x[list(factor)])
    return total


def total_acquisition_batch(bundle: AcquisitionBundle, x: np.ndarray):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(x.shape[0])
    for i, factor in enumerate(bundle.model.decomposition.factors):
        total += local_acquisition_batch(bundle, i, x[:, list(factor)])
    return total


def lipschitz_phi(bundle: AcquisitionBundle, i: int) -> float:
    """Lipschitz constant of phi_i: t L(k_i) rho(K^-1) M_i.

    M_i bounds |y_j - 2 a sqrt(beta) k_i(x, x_j)| over the output range
    and the kernel-value range [0, signal_variance]; the prior (t = 0)
    acquisition is constant so its constant is 0.
    """
    model = bundle.model
    if model.t == 0:
        return 0.0
    kernel = model.factor_kernel(i)
    y_lo, y_hi = model.outputs_range(i)
    scale = 2.0 * bundle.a * math.sqrt(bundle.beta_t)
    m_i = max(abs(y_hi), abs(y_lo - scale * kernel.signal_variance))
    value = model.t * kernel_lipschitz(kernel) * model.rho_gram_inverse(i) * m_i
    if value < 0:
        raise NegativeLipschitz("computed a negative Lipschitz constant")
    return value


@dataclass(frozen=True)
class FactorNode:
    """One additive term of the objective handed to the consensus maximizer."""

    vars: tuple[int, ...]
    value_grad: object            # callable (b, m) -> (values (b,), grads (b, m))
    lipschitz: float | None = None


def bundle_factor_nodes(bundle: AcquisitionBundle, weight: float = 1.0,
                        with_lipschitz: bool = False) -> list[FactorNode]:
    """View a calibrated bundle as factor nodes, optionally weighted."""
    nodes = []
    for i, factor in enumerate(bundle.model.decomposition.factors):
        def value_grad(x, _i=i):
            values, grads = local_acquisition_value_grad(bundle, _i, x)
            if weight != 1.0:
                return weight * values, weight * grads
            return values, grads

        lip = None
        if with_lipschitz:
            lip = weight * lipschitz_phi(bundle, i)
        nodes.append(FactorNode(vars=factor, value_grad=value_grad, lipschitz=lip))
    return nodes
