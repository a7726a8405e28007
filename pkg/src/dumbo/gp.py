"""Posterior inference for factor functions.

Two conditioning modes exist. The joint-output mode conditions every
factor on the same outputs y through the summed-kernel Gram matrix; the
decomposed-output mode trains one GP per factor on its own output column
of Y. Both expose the same query surface so the acquisition layer does
not care which one it holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .domain import Dataset, Decomposition, validate_decomposition
from .errors import (
    IndexOutOfRange,
    MissingFactorOutputs,
    ShapeMismatch,
    SingularGram,
)
from .kernels import Kernel, cross_covariance

JITTER_START_REL = 1e-10
JITTER_MAX_REL = 1e-4
_MIN_EIG_TOL = 1e-8


def _check_factor_kernels(dec: Decomposition, kernels) -> tuple[Kernel, ...]:
    kernels = tuple(kernels)
    if len(kernels) != dec.n:
        raise ShapeMismatch(
            f"{len(kernels)} kernels supplied for {dec.n} factors"
        )
    for factor, kernel in zip(dec.factors, kernels):
        if kernel.arity != len(factor):
            raise ShapeMismatch(
                f"kernel arity {kernel.arity} does not match factor size {len(factor)}"
            )
    return kernels


def _chol_with_jitter(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a + jitter*I with escalating jitter."""
    scale = float(np.mean(np.diag(a))) if a.size else 1.0
    if scale <= 0:
        scale = 1.0
    jitter = JITTER_START_REL * scale
    limit = JITTER_MAX_REL * scale
    while True:
        try:
            low = cholesky(a + jitter * np.eye(a.shape[0]), lower=True)
            return low, jitter
        except np.linalg.LinAlgError:
            pass
        except Exception:
            pass
        jitter *= 10.0
        if jitter > limit * (1 + 1e-12):
            raise SingularGram(
                f"Cholesky failed up to jitter {limit:g} (relative 1e-4)"
            )


def _min_eigenvalue(low: np.ndarray) -> float:
    """Smallest eigenvalue of A = L L^T by inverse power iteration."""
    t = low.shape[0]
    if t == 0:
        return 0.0
    v = np.full(t, 1.0 / np.sqrt(t))
    estimate = None
    for _ in range(10_000):
        z = cho_solve((low, True), v)
        z_norm = np.linalg.norm(z)
        if not np.isfinite(z_norm) or z_norm == 0.0:
            break
        v = z / z_norm
        av = low @ (low.T @ v)
        rayleigh = float(v @ av)
        if estimate is not None and abs(rayleigh - estimate) <= _MIN_EIG_TOL * abs(rayleigh):
            return rayleigh
        estimate = rayleigh
    # No convergence within budget (near-degenerate spectrum); exact fallback.
    return float(np.linalg.eigvalsh(low @ low.T)[0])


@dataclass(frozen=True)
class JointGPModel:
    """Fitted surrogate with the summed-kernel Gram matrix shared by all
    factors. Immutable; safe for concurrent posterior queries."""

    dataset: Dataset
    decomposition: Decomposition
    kernels: tuple[Kernel, ...]
    noise_variance: float
    chol: np.ndarray | None          # lower factor of K + noise I + jitter I
    alpha: np.ndarray | None         # (K + noise I + jitter I)^{-1} y
    jitter: float
    min_eigenvalue: float
    projections: tuple[np.ndarray, ...]   # training inputs per factor

    @property
    def t(self) -> int:
        return self.dataset.t

    @property
    def n_factors(self) -> int:
        return self.decomposition.n

    def factor_kernel(self, i: int) -> Kernel:
        return self.kernels[i]

    def factor_projection(self, i: int) -> np.ndarray:
        return self.projections[i]

    def factor_alpha(self, i: int) -> np.ndarray:
        return self.alpha

    def factor_solve(self, i: int, rhs: np.ndarray) -> np.ndarray:
        return cho_solve((self.chol, True), rhs, check_finite=False)

    def outputs_range(self, i: int) -> tuple[float, float]:
        y = self.dataset.outputs
        return float(np.min(y)), float(np.max(y))

    def rho_gram_inverse(self, i: int) -> float:
        """Spectral radius of the regularized Gram inverse, 1/lambda_min."""
        return 1.0 / self.min_eigenvalue

    def posterior_factor(self, i, x_vi) -> tuple[float, float]:
        means, variances = self.posterior_factor_batch(i, np.atleast_2d(x_vi))
        return float(means[0]), float(variances[0])

    def posterior_factor_batch(self, i, x_vi: np.ndarray):
        if i < 0 or i >= self.n_factors:
            raise IndexOutOfRange(i, -1)
        kernel = self.kernels[i]
        x_vi = np.atleast_2d(np.asarray(x_vi, dtype=float))
        prior_var = np.full(x_vi.shape[0], kernel.signal_variance)
        if self.t == 0:
            return np.zeros(x_vi.shape[0]), prior_var
        k_vec = cross_covariance(kernel, x_vi, self.projections[i])  # (q, t)
        means = k_vec @ self.alpha
        w = cho_solve((self.chol, True), k_vec.T, check_finite=False)                    # (t, q)
        variances = prior_var - np.einsum("qt,tq->q", k_vec, w)
        return means, np.maximum(variances, 0.0)

    def posterior_total(self, x) -> tuple[float, float]:
        means, variances = self.posterior_total_batch(np.atleast_2d(x))
        return float(means[0]), float(variances[0])

    def posterior_total_batch(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mean = np.zeros(x.shape[0])
        var = np.zeros(x.shape[0])
        for i, factor in enumerate(self.decomposition.factors):
            m, v = self.posterior_factor_batch(i, x[:, list(factor)])
            mean += m
            var += v
        return mean, var


def fit_joint(dataset: Dataset, dec: Decomposition, kernels,
              noise_variance: float) -> JointGPModel:
    """Condition all factors on the joint outputs through the summed kernel."""
    validate_decomposition(dec)
    kernels = _check_factor_kernels(dec, kernels)
    if dataset.t and dataset.d != dec.d:
        raise ShapeMismatch("dataset dimension does not match decomposition")
    projections = tuple(
        dataset.inputs[:, list(f)] for f in dec.factors
    )
    if dataset.t == 0:
        return JointGPModel(dataset, dec, kernels, float(noise_variance),
                            None, None, 0.0, 0.0, projections)
    k = np.zeros((dataset.t, dataset.t))
    for kernel, proj in zip(kernels, projections):
        k += cross_covariance(kernel, proj, proj)
    a = k + float(noise_variance) * np.eye(dataset.t)
    low, jitter = _chol_with_jitter(a)
    alpha = cho_solve((low, True), dataset.outputs)
    min_eig = _min_eigenvalue(low)
    if min_eig <= 0:
        raise SingularGram("regularized Gram matrix is not positive definite")
    return JointGPModel(dataset, dec, kernels, float(noise_variance),
                        low, alpha, jitter, min_eig, projections)


@dataclass(frozen=True)
class _FactorGP:
    kernel: Kernel
    projection: np.ndarray
    outputs: np.ndarray
    chol: np.ndarray | None
    alpha: np.ndarray | None
    jitter: float
    min_eigenvalue: float


@dataclass(frozen=True)
class DecomposedGPModel:
    """One independent GP per factor, conditioned on its output column."""

    dataset: Dataset
    decomposition: Decomposition
    kernels: tuple[Kernel, ...]
    noise_variance: float
    factors: tuple[_FactorGP, ...]

    @property
    def t(self) -> int:
        return self.dataset.t

    @property
    def n_factors(self) -> int:
        return self.decomposition.n

    def factor_kernel(self, i: int) -> Kernel:
        return self.kernels[i]

    def factor_projection(self, i: int) -> np.ndarray:
        return self.factors[i].projection

    def factor_alpha(self, i: int) -> np.ndarray:
        return self.factors[i].alpha

    def factor_solve(self, i: int, rhs: np.ndarray) -> np.ndarray:
        return cho_solve((self.factors[i].chol, True), rhs, check_finite=False)

    def outputs_range(self, i: int) -> tuple[float, float]:
        col = self.factors[i].outputs
        return float(np.min(col)), float(np.max(col))

    def rho_gram_inverse(self, i: int) -> float:
        return 1.0 / self.factors[i].min_eigenvalue

    def posterior_factor(self, i, x_vi) -> tuple[float, float]:
        means, variances = self.posterior_factor_batch(i, np.atleast_2d(x_vi))
        return float(means[0]), float(variances[0])

    def posterior_factor_batch(self, i, x_vi: np.ndarray):
        if i < 0 or i >= self.n_factors:
            raise IndexOutOfRange(i, -1)
        fac = self.factors[i]
        x_vi = np.atleast_2d(np.asarray(x_vi, dtype=float))
        prior_var = np.full(x_vi.shape[0], fac.kernel.signal_variance)
        if self.t == 0:
            return np.zeros(x_vi.shape[0]), prior_var
        k_vec = cross_covariance(fac.kernel, x_vi, fac.projection)
        means = k_vec @ fac.alpha
        w = cho_solve((fac.chol, True), k_vec.T, check_finite=False)
        variances = prior_var - np.einsum("qt,tq->q", k_vec, w)
        return means, np.maximum(variances, 0.0)

    def posterior_total(self, x) -> tuple[float, float]:
        means, variances = self.posterior_total_batch(np.atleast_2d(x))
        return float(means[0]), float(variances[0])

    def posterior_total_batch(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mean = np.zeros(x.shape[0])
        var = np.zeros(x.shape[0])
        for i, factor in enumerate(self.decomposition.factors):
            m, v = self.posterior_factor_batch(i, x[:, list(factor)])
            mean += m
            var += v
        return mean, var


def fit_decomposed(dataset: Dataset, dec: Decomposition, kernels,
                   noise_variance: float) -> DecomposedGPModel:
    """Train one GP per factor on the corresponding column of Y."""
    validate_decomposition(dec, allow_duplicates=True)
    kernels = _check_factor_kernels(dec, kernels)
    if dataset.factor_outputs is None:
        raise MissingFactorOutputs("decomposed fitting needs factor outputs")
    if dataset.factor_outputs.shape[1] != dec.n:
        raise ShapeMismatch("factor output columns do not match factor count")
    # Row sums were checked at Dataset construction (tolerance 1e-6).
    factors = []
    for i, (kernel, factor) in enumerate(zip(kernels, dec.factors)):
        proj = dataset.inputs[:, list(factor)]
        col = dataset.factor_outputs[:, i]
        if dataset.t == 0:
            factors.append(_FactorGP(kernel, proj, col, None, None, 0.0, 0.0))
            continue
        a = cross_covariance(kernel, proj, proj)
        a = a + float(noise_variance) * np.eye(dataset.t)
        low, jitter = _chol_with_jitter(a)
        alpha = cho_solve((low, True), col)
        min_eig = _min_eigenvalue(low)
        if min_eig <= 0:
            raise SingularGram("per-factor Gram matrix is not positive definite")
        factors.append(_FactorGP(kernel, proj, col, low, alpha, jitter, min_eig))
    return DecomposedGPModel(dataset, dec, kernels, float(noise_variance),
                             tuple(factors))


def log_marginal_likelihood(model: JointGPModel) -> float:
    """Gaussian log evidence of y under the summed-kernel GP with noise."""
    if model.t < 1:
        raise ShapeMismatch("log marginal likelihood needs at least one observation")
    y = model.dataset.outputs
    return float(
        -0.5 * y @ model.alpha
        - np.sum(np.log(np.diag(model.chol)))
        - 0.5 * model.t * np.log(2.0 * np.pi)
    )


def fit_kernel_hyperparameters(dataset: Dataset, dec: Decomposition, kernels,
                               noise_variance: float,
                               rng: np.random.Generator,
                               restarts: int = 3,
                               decomposed: bool = False) -> tuple[Kernel, ...]:
    """Refit lengthscales and signal variances by marginal-likelihood ascent.

    Multi-start L-BFGS on the log hyperparameters; `restarts` includes the
    current values as the first start. In decomposed mode each factor GP is
    fitted on its own output column, which separates the problem.
    """
    kernels = _check_factor_kernels(dec, kernels)
    if dataset.t < 2:
        return kernels
    if decomposed:
        if dataset.factor_outputs is None:
            raise MissingFactorOutputs("decomposed refit needs factor outputs")
        new = []
        for i, (kernel, factor) in enumerate(zip(kernels, dec.factors)):
            proj = dataset.inputs[:, list(factor)]
            col = dataset.factor_outputs[:, i]
            new.append(_fit_single_gp(proj, col, kernel, noise_variance, rng,
                                      restarts))
        return tuple(new)
    return _fit_summed_gp(dataset, dec, kernels, noise_variance, rng, restarts)


def _pack(kernels) -> np.ndarray:
    parts = []
    for k in kernels:
        parts.append(np.log(k.lengthscale))
        parts.append([np.log(k.signal_variance)])
    return np.concatenate([np.atleast_1d(p) for p in parts])


def _unpack(theta: np.ndarray, kernels) -> tuple[Kernel, ...]:
    out, pos = [], 0
    for k in kernels:
        m = k.arity
        ls = np.exp(theta[pos:pos + m])
        sv = float(np.exp(theta[pos + m]))
        pos += m + 1
        out.append(k.with_params(ls, sv))
    return tuple(out)


def _theta_bounds(kernels, y: np.ndarray) -> list[tuple[float, float]]:
    v_y = max(float(np.var(y)), 1e-12)
    bounds = []
    for k in kernels:
        for ls in k.lengthscale:
            bounds.append((np.log(ls) - np.log(100.0), np.log(ls) + np.log(1000.0)))
        bounds.append((0.5 * np.log(v_y) - np.log(1e4), 0.5 * np.log(v_y) + np.log(1e4)))
    return bounds


def _fit_summed_gp(dataset, dec, kernels, noise_variance, rng, restarts):
    from .kernels import gram_with_loghyper_grads

    x_all = dataset.inputs
    y = dataset.outputs
    t = dataset.t
    projections = [x_all[:, list(f)] for f in dec.factors]
    eye = np.eye(t)

    def negative_evidence(theta):
        ks = _unpack(theta, kernels)
        k_total = np.zeros((t, t))
        grads = []
        for kernel, proj in zip(ks, projections):
            km, d_ls, d_sv = gram_with_loghyper_grads(kernel, proj)
            k_total += km
            grads.append((d_ls, d_sv))
        a = k_total + noise_variance * eye
        try:
            low, _ = _chol_with_jitter(a)
        except SingularGram:
            return 1e12, np.zeros_like(theta)
        alpha = cho_solve((low, True), y)
        logdet = 2.0 * np.sum(np.log(np.diag(low)))
        nll = 0.5 * (y @ alpha) + 0.5 * logdet + 0.5 * t * np.log(2.0 * np.pi)
        a_inv = cho_solve((low, True), eye)
        outer = np.outer(alpha, alpha) - a_inv
        g = []
        for d_ls, d_sv in grads:
            for j in range(d_ls.shape[2]):
                g.append(-0.5 * np.sum(outer * d_ls[:, :, j]))
            g.append(-0.5 * np.sum(outer * d_sv))
        return float(nll), np.asarray(g)

    return _multistart(negative_evidence, kernels, y, rng, restarts)


def _fit_single_gp(proj, y, kernel, noise_variance, rng, restarts):
    t = proj.shape[0]
    eye = np.eye(t)
    from .kernels import gram_with_loghyper_grads

    def negative_evidence(theta):
        (k,) = _unpack(theta, (kernel,))
        km, d_ls, d_sv = gram_with_loghyper_grads(k, proj)
        a = km + noise_variance * eye
        try:
            low, _ = _chol_with_jitter(a)
        except SingularGram:
            return 1e12, np.zeros_like(theta)
        alpha = cho_solve((low, True), y)
        logdet = 2.0 * np.sum(np.log(np.diag(low)))
        nll = 0.5 * (y @ alpha) + 0.5 * logdet + 0.5 * t * np.log(2.0 * np.pi)
        a_inv = cho_solve((low, True), eye)
        outer = np.outer(alpha, alpha) - a_inv
        g = [-0.5 * np.sum(outer * d_ls[:, :, j]) for j in range(d_ls.shape[2])]
        g.append(-0.5 * np.sum(outer * d_sv))
        return float(nll), np.asarray(g)

    return _multistart(negative_evidence, (kernel,), y, rng, restarts)[0]


def _multistart(negative_evidence, kernels, y, rng, restarts):
    from scipy.optimize import minimize

    theta0 = _pack(kernels)
    bounds = _theta_bounds(kernels, y)
    starts = [theta0]
    for _ in range(max(0, restarts - 1)):
        starts.append(theta0 + rng.uniform(-1.0, 1.0, size=theta0.size))
    best_theta, best_val = theta0, negative_evidence(theta0)[0]
    for start in starts:
        res = minimize(negative_evidence, start, jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": 200})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_theta = float(res.fun), res.x
    return _unpack(best_theta, kernels)
