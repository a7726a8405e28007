"""Metropolis-Hastings sampling of additive decompositions.

Candidates are disjoint partitions of the input dimensions, scored by
the GP log evidence of the summed-kernel model under a uniform prior.
Proposals move one dimension to another group or to a fresh singleton;
the move counts are asymmetric, so acceptance carries the usual Hastings
correction. The chain starts from the fully dependent partition and
persists across optimization steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .acquisition import (
    AcquisitionBundle,
    FactorNode,
    bundle_factor_nodes,
    total_acquisition,
)
from .domain import Dataset, Decomposition, validate_decomposition
from .gp import fit_joint, log_marginal_likelihood


def fully_dependent(d: int) -> Decomposition:
    return Decomposition((tuple(range(d)),), d)


@dataclass
class DecompositionChain:
    current: Decomposition
    rng: np.random.Generator
    accepted: int = 0
    proposed: int = 0
    _cache: dict = field(default_factory=dict)
    _cache_token: object = None

    @classmethod
    def start(cls, d: int, rng: np.random.Generator) -> "DecompositionChain":
        return cls(current=fully_dependent(d), rng=rng)

    @property
    def acceptance_ratio(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def cache_for(self, token) -> dict:
        """Log-posterior cache, invalidated whenever the dataset changes."""
        if token != self._cache_token:
            self._cache = {}
            self._cache_token = token
        return self._cache


def _move_counts(factors: list[set], j: int) -> int:
    """Number of legal destinations for dimension j (other groups, plus a
    new singleton when j does not already sit alone)."""
    home = next(i for i, g in enumerate(factors) if j in g)
    others = len(factors) - 1
    return others + (1 if len(factors[home]) >= 2 else 0)


def propose_with_correction(current: Decomposition,
                            rng: np.random.Generator):
    """One single-dimension move; returns (candidate, log Hastings term).

    The correction is log q(current | candidate) - log q(candidate | current),
    i.e. log(m_forward / m_reverse) for uniform (dimension, destination)
    draws.
    """
    d = current.d
    if d == 1:
        return current, 0.0
    groups = [set(f) for f in current.factors]
    j = int(rng.integers(d))
    home = next(i for i, g in enumerate(groups) if j in g)
    destinations = [i for i in range(len(groups)) if i != home]
    if len(groups[home]) >= 2:
        destinations.append(-1)          # fresh singleton
    if not destinations:                 # single group of size 1 => d == 1
        return current, 0.0
    m_forward = len(destinations)
    choice = destinations[int(rng.integers(m_forward))]
    groups[home].discard(j)
    if choice == -1:
        groups.append({j})
    else:
        groups[choice].add(j)
    groups = [g for g in groups if g]
    candidate = Decomposition(tuple(tuple(sorted(g)) for g in groups), d)
    m_reverse = _move_counts([set(f) for f in candidate.factors], j)
    return candidate, math.log(m_forward) - math.log(m_reverse)


def propose_decomposition(current: Decomposition,
                          rng: np.random.Generator) -> Decomposition:
    candidate, _ = propose_with_correction(current, rng)
    return candidate


def decomposition_log_posterior(candidate: Decomposition, dataset: Dataset,
                                kernel_provider, noise_variance: float,
                                cache: dict | None = None) -> float:
    """log p(candidate | data) up to the shared normalizer: GP log evidence
    plus a uniform partition prior (constant, dropped). Fewer than two
    observations carry no evidence and return 0."""
    key = candidate.fingerprint()
    if cache is not None and key in cache:
        return cache[key]
    validate_decomposition(candidate)
    if dataset.t < 2:
        value = 0.0
    else:
        kernels = tuple(kernel_provider(f) for f in candidate.factors)
        model = fit_joint(dataset, candidate, kernels, noise_variance)
        value = log_marginal_likelihood(model)
    if cache is not None:
        cache[key] = value
    return value


def mcmc_step(chain: DecompositionChain, dataset: Dataset, kernel_provider,
              noise_variance: float, cache: dict) -> None:
    candidate, log_correction = propose_with_correction(chain.current, chain.rng)
    chain.proposed += 1
    if candidate == chain.current:
        return
    lp_current = decomposition_log_posterior(
        chain.current, dataset, kernel_provider, noise_variance, cache)
    lp_candidate = decomposition_log_posterior(
        candidate, dataset, kernel_provider, noise_variance, cache)
    log_accept = lp_candidate - lp_current + log_correction
    if log_accept >= 0 or chain.rng.uniform() < math.exp(log_accept):
        chain.current = candidate
        chain.accepted += 1


def mcmc_sample_candidates(chain: DecompositionChain, dataset: Dataset,
                           k: int, steps_per_candidate: int,
                           kernel_provider, noise_variance: float) -> list:
    """Advance the chain and record one candidate every
    steps_per_candidate accepted-or-rejected steps."""
    if k < 1:
        raise ValueError("candidate count must be at least 1")
    cache = chain.cache_for(dataset.t)
    candidates = []
    for _ in range(k):
        for _ in range(steps_per_candidate):
            mcmc_step(chain, dataset, kernel_provider, noise_variance, cache)
        candidates.append(chain.current)
    return candidates


@dataclass(frozen=True)
class AveragedAcquisition:
    """Average of per-candidate acquisitions; itself additive, so each
    candidate-factor pair becomes one consensus node with its candidate
    weight folded in. Weights default to uniform (the operative formula);
    posterior weights are available behind the mcmc.weighted flag."""

    bundles: tuple[AcquisitionBundle, ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.bundles:
            raise ValueError("need at least one candidate bundle")
        k = len(self.bundles)
        if self.weights is None:
            object.__setattr__(self, "weights", tuple(1.0 / k for _ in range(k)))
        elif len(self.weights) != k:
            raise ValueError("one weight per candidate bundle required")

    @property
    def k(self) -> int:
        return len(self.bundles)

    def value(self, x) -> float:
        return sum(w * total_acquisition(b, x)
                   for w, b in zip(self.weights, self.bundles))

    def factor_nodes(self, with_lipschitz: bool = False) -> list[FactorNode]:
        nodes: list[FactorNode] = []
        for weight, bundle in zip(self.weights, self.bundles):
            nodes.extend(
                bundle_factor_nodes(bundle, weight=weight,
                                    with_lipschitz=with_lipschitz)
            )
        return nodes


def posterior_weights(log_posteriors) -> tuple[float, ...]:
    lp = np.asarray(log_posteriors, dtype=float)
    lp = lp - np.max(lp)
    w = np.exp(lp)
    return tuple(w / np.sum(w))


def averaged_acquisition(bundles, x) -> float:
    """Mean over candidates of the summed local acquisitions."""
    return AveragedAcquisition(tuple(bundles)).value(x)
