"""Synthetic benchmark functions with known additive decompositions.

All four functions are maximized. Optima: the camelback and Hartmann
values were refined once by multi-start local search and are pinned to
full float precision; Powell and Rastrigin peak at the origin with value
zero by construction. Factor outputs always sum to the joint value, so
every benchmark supports the decomposed observation mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import BoxDomain, Decomposition
from .errors import OutOfDomain

_HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMANN_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
_HARTMANN_P = 1e-4 * np.array([
    [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
    [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
    [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
    [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
])

SHC_OPTIMIZER = np.array([0.08984200808599517, -0.7126564076206299])
SHC_OPTIMUM = 1.0316284534898772
HARTMANN6_OPTIMIZER = np.array([
    0.2016895100807365, 0.15001069423389773, 0.47687397198255177,
    0.2753324300138084, 0.31165161832429245, 0.657300533027725,
])
HARTMANN6_OPTIMUM = 3.3223680114155147


@dataclass(frozen=True)
class BenchmarkSpec:
    """A named objective with its domain, decomposition and optimum."""

    name: str
    domain: BoxDomain
    decomposition: Decomposition
    factor_evaluator: object        # callable x -> (t,) -> factor outputs (n,)
    optimum: float | None = None
    optimizer: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def n_factors(self) -> int:
        return self.decomposition.n

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise OutOfDomain(f"{self.name} expects a point of dimension {self.d}")
        if not self.domain.contains(x, tol=1e-12):
            raise OutOfDomain(f"point lies outside the {self.name} domain")
        return x

    def evaluate_factors(self, x):
        """Factor outputs and their sum at x."""
        x = self._check(x)
        factors = np.asarray(self.factor_evaluator(x), dtype=float)
        return factors, float(np.sum(factors))

    def evaluate(self, x) -> float:
        return self.evaluate_factors(x)[1]


def _shc_factors(x: np.ndarray) -> np.ndarray:
    x1, x2 = x
    return np.array([
        (-4.0 + 2.1 * x1 ** 2 - x1 ** 4 / 3.0) * x1 ** 2,
        -x1 * x2,
        (4.0 - 4.0 * x2 ** 2) * x2 ** 2,
    ])


def _hartmann6_factors(x: np.ndarray) -> np.ndarray:
    inner = np.sum(_HARTMANN_A * (x - _HARTMANN_P) ** 2, axis=1)
    return _HARTMANN_ALPHA * np.exp(-inner)


def _powell_block(b: np.ndarray) -> float:
    return -(
        (b[0] + 10.0 * b[1]) ** 2
        + 5.0 * (b[2] - b[3]) ** 2
        + (b[1] - 2.0 * b[2]) ** 4
        + 10.0 * (b[0] - b[3]) ** 4
    )


def _powell24_factors(x: np.ndarray) -> np.ndarray:
    return np.array([_powell_block(x[4 * i:4 * i + 4]) for i in range(6)])


def _rastrigin_block(b: np.ndarray) -> float:
    return -10.0 * b.size - float(np.sum(b * b - 10.0 * np.cos(2.0 * np.pi * b)))


def _rastrigin100_factors(x: np.ndarray) -> np.ndarray:
    return np.array([_rastrigin_block(x[5 * i:5 * i + 5]) for i in range(20)])


def _blocks(d: int, size: int) -> Decomposition:
    groups = tuple(tuple(range(i, i + size)) for i in range(0, d, size))
    return Decomposition(groups, d)


def make_shc() -> BenchmarkSpec:
    return BenchmarkSpec(
        name="shc",
        domain=BoxDomain(np.array([-3.0, -2.0]), np.array([3.0, 2.0])),
        decomposition=Decomposition(((0,), (0, 1), (1,)), 2),
        factor_evaluator=_shc_factors,
        optimum=SHC_OPTIMUM,
        optimizer=SHC_OPTIMIZER,
    )


def make_hartmann6() -> BenchmarkSpec:
    dims = tuple(range(6))
    return BenchmarkSpec(
        name="hartmann6",
        domain=BoxDomain(np.zeros(6), np.ones(6)),
        decomposition=Decomposition((dims, dims, dims, dims), 6),
        factor_evaluator=_hartmann6_factors,
        optimum=HARTMANN6_OPTIMUM,
        optimizer=HARTMANN6_OPTIMIZER,
    )


def make_powell24() -> BenchmarkSpec:
    return BenchmarkSpec(
        name="powell24",
        domain=BoxDomain(np.full(24, -4.0), np.full(24, 5.0)),
        decomposition=_blocks(24, 4),
        factor_evaluator=_powell24_factors,
        optimum=0.0,
        optimizer=np.zeros(24),
    )


def make_rastrigin100() -> BenchmarkSpec:
    return BenchmarkSpec(
        name="rastrigin100",
        domain=BoxDomain(np.full(100, -5.12), np.full(100, 5.12)),
        decomposition=_blocks(100, 5),
        factor_evaluator=_rastrigin100_factors,
        optimum=0.0,
        optimizer=np.zeros(100),
    )


BENCHMARKS = {
    "shc": make_shc,
    "hartmann6": make_hartmann6,
    "powell24": make_powell24,
    "rastrigin100": make_rastrigin100,
}


def get_benchmark(name: str) -> BenchmarkSpec:
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise KeyError(
            f"unknown benchmark {name!r}; available: {sorted(BENCHMARKS)}"
        ) from None


def eval_shc(x):
    spec = make_shc()
    factors, total = spec.evaluate_factors(x)
    return total, factors


def eval_hartmann6(x):
    spec = make_hartmann6()
    factors, total = spec.evaluate_factors(x)
    return total, factors


def eval_powell24(x):
    spec = make_powell24()
    factors, total = spec.evaluate_factors(x)
    return total, factors


def eval_rastrigin100(x):
    spec = make_rastrigin100()
    factors, total = spec.evaluate_factors(x)
    return total, factors
