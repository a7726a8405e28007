"""Core value types: box domains, additive decompositions, factor graphs, datasets.

Dimensions are 1-based in user-facing text (config files, printed
fingerprints) and 0-based everywhere internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateFactor,
    EmptyFactor,
    IndexOutOfRange,
    OutOfDomain,
    RowSumViolation,
    ShapeMismatch,
    UncoveredDimension,
)

ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box in R^d. Immutable; arrays must not be mutated."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ShapeMismatch("lower and upper must be 1-d arrays of equal length")
        if lower.size < 1:
            raise ShapeMismatch("domain needs at least one dimension")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol)
        )

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        if size is None:
            return rng.uniform(self.lower, self.upper)
        return rng.uniform(self.lower, self.upper, size=(size, self.d))

    def project(self, dims) -> "BoxDomain":
        """Sub-box over the given 0-based dimensions."""
        dims = list(dims)
        return BoxDomain(self.lower[dims], self.upper[dims])


@dataclass(frozen=True)
class Decomposition:
    """A set of factor index-sets (0-based) covering dimensions 0..d-1.

    Factors are kept canonical (indices sorted within a factor; factors
    sorted by smallest member, then lexicographically) so equality is
    structural. Anything paired with factors positionally (kernels,
    factor evaluators, output columns) must follow `factors` as stored,
    i.e. canonical order.
    """

    factors: tuple[tuple[int, ...], ...]
    d: int

    def __post_init__(self):
        canon = tuple(
            sorted((tuple(sorted(set(int(j) for j in f))) for f in self.factors))
        )
        object.__setattr__(self, "factors", canon)
        object.__setattr__(self, "d", int(self.d))

    @property
    def n(self) -> int:
        return len(self.factors)

    @property
    def mfs(self) -> int:
        """Maximum factor size over the decomposition."""
        return max(len(f) for f in self.factors) if self.factors else 0

    def fingerprint(self) -> str:
        """Canonical 1-based text form, e.g. "1,2;2,3"."""
        return format_decomposition(self)


def validate_decomposition(dec: Decomposition, d: int | None = None,
                           allow_duplicates: bool = False) -> None:
    """Check coverage, non-emptiness and index-range invariants.

    Raises UncoveredDimension, EmptyFactor, IndexOutOfRange or
    DuplicateFactor. Duplicate index-sets are unidentifiable from joint
    outputs; `allow_duplicates` exists for the decomposed-output path
    where per-factor observations disambiguate them.
    """
    d = dec.d if d is None else int(d)
    if d < 1:
        raise ShapeMismatch("dimension count must be at least 1")
    if dec.d != d:
        raise ShapeMismatch(f"decomposition is for d={dec.d}, expected d={d}")
    if dec.n < 1:
        raise EmptyFactor(0)
    covered = set()
    for i, factor in enumerate(dec.factors):
        if len(factor) == 0:
            raise EmptyFactor(i)
        for j in factor:
            if j < 0 or j >= d:
                raise IndexOutOfRange(i, j)
        covered.update(factor)
    for j in range(d):
        if j not in covered:
            raise UncoveredDimension(j)
    if not allow_duplicates:
        for i in range(1, dec.n):
            if dec.factors[i] == dec.factors[i - 1]:
                raise DuplicateFactor(i - 1, i)


@dataclass(frozen=True)
class FactorGraph:
    """Bipartite adjacency between factors and the dimensions they use."""

    factor_to_vars: tuple[tuple[int, ...], ...]
    var_to_factors: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return len(self.factor_to_vars)

    @property
    def d(self) -> int:
        return len(self.var_to_factors)


def build_factor_graph(dec: Decomposition, allow_duplicates: bool = False) -> FactorGraph:
    """Adjacency read-off: F_j = {i : j in V_i}."""
    validate_decomposition(dec, allow_duplicates=allow_duplicates)
    incident: list[list[int]] = [[] for _ in range(dec.d)]
    for i, factor in enumerate(dec.factors):
        for j in factor:
            incident[j].append(i)
    return FactorGraph(
        factor_to_vars=dec.factors,
        var_to_factors=tuple(tuple(f) for f in incident),
    )


def parse_decomposition(text: str, d: int) -> Decomposition:
    """Parse the 1-based text form "1,2;2,3" into a Decomposition."""
    from .errors import ParseError

    groups = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            raise ParseError(f"empty factor in decomposition text {text!r}")
        try:
            indices = [int(tok) for tok in part.split(",")]
        except ValueError as exc:
            raise ParseError(f"bad index in decomposition text {text!r}") from exc
        groups.append(tuple(j - 1 for j in indices))
    dec = Decomposition(tuple(groups), d)
    validate_decomposition(dec, d, allow_duplicates=True)
    return dec


def format_decomposition(dec: Decomposition) -> str:
    return ";".join(",".join(str(j + 1) for j in f) for f in dec.factors)


@dataclass(frozen=True)
class Dataset:
    """Observed queries and outputs; factor_outputs carries the decomposed
    observation matrix Y when the per-factor outputs are measurable."""

    inputs: np.ndarray                       # (t, d)
    outputs: np.ndarray                      # (t,)
    factor_outputs: np.ndarray | None = None  # (t, n)
    noise_variance: float = 0.0

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        outputs = np.asarray(self.outputs, dtype=float)
        if inputs.ndim != 2:
            raise ShapeMismatch("inputs must be a (t, d) array")
        if outputs.shape != (inputs.shape[0],):
            raise ShapeMismatch("outputs must be a (t,) vector matching inputs")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        if self.factor_outputs is not None:
            fo = np.asarray(self.factor_outputs, dtype=float)
            if fo.ndim != 2 or fo.shape[0] != inputs.shape[0]:
                raise ShapeMismatch("factor_outputs must be a (t, n) matrix")
            rows = fo.sum(axis=1)
            if rows.size and np.max(np.abs(rows - outputs)) > ROW_SUM_TOL:
                raise RowSumViolation(
                    "factor outputs must sum to the joint output per row"
                )
            object.__setattr__(self, "factor_outputs", fo)

    @classmethod
    def empty(cls, d: int, n_factors: int | None = None,
              noise_variance: float = 0.0) -> "Dataset":
        fo = None if n_factors is None else np.zeros((0, n_factors))
        return cls(np.zeros((0, d)), np.zeros(0), fo, noise_variance)

    @property
    def t(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def append(self, x, y: float, factor_y=None) -> "Dataset":
        """Return a new dataset with one more observation."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if x.shape[1] != self.d:
            raise ShapeMismatch("appended point has wrong dimension")
        inputs = np.vstack([self.inputs, x])
        outputs = np.append(self.outputs, float(y))
        fo = self.factor_outputs
        if fo is not None:
            if factor_y is None:
                raise ShapeMismatch("dataset carries factor outputs; provide factor_y")
            fy = np.asarray(factor_y, dtype=float).reshape(1, -1)
            fo = np.vstack([fo, fy])
        elif factor_y is not None:
            raise ShapeMismatch("dataset has no factor outputs; factor_y unexpected")
        return Dataset(inputs, outputs, fo, self.noise_variance)

    def check_inside(self, domain: BoxDomain, tol: float = 1e-9) -> None:
        for row in self.inputs:
            if not domain.contains(row, tol=tol):
                raise OutOfDomain(f"dataset point {row} lies outside the domain")
