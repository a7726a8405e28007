"""The outer Bayesian-optimization loop and its regret instrumentation.

Four variants share one step routine: the decomposition is either known
or sampled by the partition chain each step, the consensus maximizer
either iterates to tolerance or early-stops after one iteration, and
outputs are observed jointly or per factor. Campaigns are deterministic
given their seed; distinct seeds share no mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import (
    AcquisitionBundle,
    make_bundle,
    total_acquisition_batch,
    variance_bounds,
)
from .admm import AdmmParams, admm_maximize, graph_from_nodes
from .decomp import (
    AveragedAcquisition,
    DecompositionChain,
    decomposition_log_posterior,
    mcmc_sample_candidates,
    posterior_weights,
)
from .domain import BoxDomain, Dataset, Decomposition
from .errors import IncompatibleVariant
from .gp import fit_decomposed, fit_joint, fit_kernel_hyperparameters
from .kernels import SQUARED_EXPONENTIAL, make_kernel

V_MINUS_FLOOR = 1e-8


@dataclass(frozen=True)
class Variant:
    decomposition_source: str     # known | mcmc_inferred
    admm_mode: str                # converged | early_stop
    output_mode: str              # joint | decomposed

    def __post_init__(self):
        if self.decomposition_source not in ("known", "mcmc_inferred"):
            raise ValueError(f"bad decomposition source {self.decomposition_source!r}")
        if self.admm_mode not in ("converged", "early_stop"):
            raise ValueError(f"bad admm mode {self.admm_mode!r}")
        if self.output_mode not in ("joint", "decomposed"):
            raise ValueError(f"bad output mode {self.output_mode!r}")
        if self.output_mode == "decomposed" and self.decomposition_source != "known":
            raise IncompatibleVariant(
                "decomposed outputs require a known decomposition"
            )


VARIANTS = {
    "dumbo": Variant("mcmc_inferred", "converged", "joint"),
    "add-dumbo": Variant("known", "converged", "decomposed"),
    "es-dumbo": Variant("mcmc_inferred", "early_stop", "joint"),
    "es-add-dumbo": Variant("known", "early_stop", "decomposed"),
}


@dataclass
class CampaignSettings:
    init_points: int = 5
    noise_std: float = 0.0
    delta: float = 0.1
    effective_cardinality: float = 1e6
    v_minus: object = None              # None | scalar | per-factor list
    kernel_family: str = SQUARED_EXPONENTIAL
    kernel_lengthscale: object = None   # None -> 0.2 * box width, fitted
    kernel_signal_variance: object = None
    kernel_fit_every: int = 10
    kernel_fit_restarts: int = 3
    mcmc_k: int = 5
    mcmc_steps_per_candidate: int = 10
    mcmc_seed: int = 0
    mcmc_weighted: bool = False
    admm: AdmmParams = field(default_factory=AdmmParams)

    @property
    def kernels_fixed(self) -> bool:
        fully_pinned = (self.kernel_lengthscale is not None
                        and self.kernel_signal_variance is not None)
        return fully_pinned or self.kernel_fit_every == 0


@dataclass
class TracePoint:
    seed: int
    iteration: int
    x: np.ndarray
    observed: float
    immediate_regret: float | None
    min_regret: float                   # best value so far when f* is unknown
    bound: float | None = None
    admm_iterations: int | None = None
    primal_residual: float | None = None
    a: float | None = None
    beta_t: float | None = None
    fingerprint: str = ""


@dataclass
class CampaignState:
    objective: object
    variant: Variant
    settings: CampaignSettings
    seed: int
    rng: np.random.Generator
    dataset: Dataset
    chain: DecompositionChain | None
    kernels: tuple | None               # per-factor kernels (known mode)
    kernels_by_arity: dict              # arity -> Kernel (inferred mode)
    iteration: int = 0
    incumbent_x: np.ndarray | None = None
    incumbent_y: float = -np.inf
    v_plus_observed: float = 0.0
    clamp_events: int = 0
    trace: list = field(default_factory=list)

    @property
    def min_regret(self) -> float:
        if self.trace:
            return self.trace[-1].min_regret
        return np.inf


def _default_kernel(settings: CampaignSettings, domain: BoxDomain,
                    dims) -> "object":
    dims = list(dims)
    if settings.kernel_lengthscale is None:
        ls = 0.2 * domain.width[dims]
    else:
        ls = np.atleast_1d(np.asarray(settings.kernel_lengthscale, dtype=float))
        if ls.size == 1:
            ls = np.full(len(dims), ls[0])
        else:
            ls = ls[dims]
    sv = 1.0 if settings.kernel_signal_variance is None \
        else float(settings.kernel_signal_variance)
    return make_kernel(settings.kernel_family, ls, sv, arity=len(dims))


def _arity_kernel(state: CampaignState, factor) -> "object":
    arity = len(factor)
    kernel = state.kernels_by_arity.get(arity)
    if kernel is None:
        settings = state.settings
        domain = state.objective.domain
        if settings.kernel_lengthscale is None:
            ls = np.full(arity, 0.2 * float(np.mean(domain.width)))
        else:
            raw = np.atleast_1d(np.asarray(settings.kernel_lengthscale, dtype=float))
            ls = np.full(arity, float(np.mean(raw)))
        sv = 1.0 if settings.kernel_signal_variance is None \
            else float(settings.kernel_signal_variance)
        kernel = make_kernel(settings.kernel_family, ls, sv, arity=arity)
        state.kernels_by_arity[arity] = kernel
    return kernel


def validate_objective(objective, variant: Variant) -> None:
    if variant.decomposition_source == "known":
        if getattr(objective, "decomposition", None) is None:
            raise IncompatibleVariant(
                "variant needs a known decomposition but the objective has none"
            )
    if variant.output_mode == "decomposed":
        if getattr(objective, "evaluate_factors", None) is None:
            raise IncompatibleVariant(
                "variant needs decomposed outputs but the objective is scalar-only"
            )


def start_campaign(objective, variant: Variant, seed: int,
                   settings: CampaignSettings) -> CampaignState:
    """Seed the rng, evaluate the initial design and set up the chain."""
    validate_objective(objective, variant)
    domain: BoxDomain = objective.domain
    rng = np.random.default_rng(seed)
    noise_var = settings.noise_std ** 2
    decomposed = variant.output_mode == "decomposed"
    known_dec = getattr(objective, "decomposition", None)
    dataset = Dataset.empty(
        domain.d,
        n_factors=known_dec.n if decomposed else None,
        noise_variance=noise_var,
    )
    chain = None
    if variant.decomposition_source == "mcmc_inferred":
        chain = DecompositionChain.start(
            domain.d, np.random.default_rng([settings.mcmc_seed, seed]))
    kernels = None
    if variant.decomposition_source == "known":
        kernels = tuple(
            _default_kernel(settings, domain, f) for f in known_dec.factors
        )
    state = CampaignState(
        objective=objective, variant=variant, settings=settings, seed=seed,
        rng=rng, dataset=dataset, chain=chain, kernels=kernels,
        kernels_by_arity={},
    )
    for k in range(settings.init_points):
        x = domain.sample(rng)
        _observe(state, x, record_model_fields=False)
    return state


def _observe(state: CampaignState, x: np.ndarray,
             record_model_fields: bool, bundles=None, diag=None) -> None:
    objective = state.objective
    settings = state.settings
    decomposed = state.variant.output_mode == "decomposed"
    if decomposed:
        factors, y_true = objective.evaluate_factors(x)
        if settings.noise_std > 0:
            n = factors.size
            factors = factors + state.rng.normal(
                0.0, settings.noise_std / math.sqrt(n), n)
        y_obs = float(np.sum(factors))
        state.dataset = state.dataset.append(x, y_obs, factor_y=factors)
    else:
        y_true = objective.evaluate(x)
        y_obs = y_true + (state.rng.normal(0.0, settings.noise_std)
                          if settings.noise_std > 0 else 0.0)
        state.dataset = state.dataset.append(x, y_obs)

    if y_obs > state.incumbent_y:
        state.incumbent_y = y_obs
        state.incumbent_x = np.asarray(x, dtype=float).copy()

    optimum = getattr(objective, "optimum", None)
    regret = None if optimum is None else float(optimum - y_true)
    if optimum is None:
        min_stat = state.incumbent_y      # best-value stands in for regret
    else:
        prev = state.trace[-1].min_regret if state.trace else np.inf
        min_stat = min(prev, regret)

    point = TracePoint(
        seed=state.seed,
        iteration=len(state.trace) + 1,
        x=np.asarray(x, dtype=float).copy(),
        observed=float(y_obs),
        immediate_regret=regret,
        min_regret=float(min_stat),
    )
    if record_model_fields and bundles is not None:
        point.bound = float(np.mean([regret_bound(b, x) for b in bundles]))
        point.a = float(np.mean([b.a for b in bundles]))
        point.beta_t = float(bundles[0].beta_t)
        if state.variant.decomposition_source == "mcmc_inferred":
            point.fingerprint = state.chain.current.fingerprint()
        else:
            point.fingerprint = state.objective.decomposition.fingerprint()
    if diag is not None:
        point.admm_iterations = diag.iterations
        point.primal_residual = (diag.primal_residuals[-1]
                                 if diag.primal_residuals else None)
    state.trace.append(point)


def _calibration_floors(settings: CampaignSettings, n: int,
                        noise_variance: float) -> np.ndarray:
    if settings.v_minus is None:
        v = np.full(n, noise_variance / n)
    else:
        raw = np.atleast_1d(np.asarray(settings.v_minus, dtype=float))
        v = np.full(n, raw[0]) if raw.size == 1 else raw
        if v.size != n:
            raise IncompatibleVariant(
                f"{v.size} variance floors configured for {n} factors"
            )
    if not np.any(v > 0):
        v = np.full(n, V_MINUS_FLOOR)
    return v


def _calibrate(state: CampaignState, model) -> AcquisitionBundle:
    settings = state.settings
    floors = _calibration_floors(settings, model.n_factors,
                                 state.dataset.noise_variance)
    bounds = variance_bounds(floors)
    if state.v_plus_observed > bounds.v_plus:
        bounds = bounds.with_v_plus(state.v_plus_observed)
    return make_bundle(model, bounds, settings.delta,
                       settings.effective_cardinality)


def _fit_candidate(state: CampaignState, dec: Decomposition):
    if state.variant.output_mode == "decomposed":
        return fit_decomposed(state.dataset, dec, state.kernels,
                              state.dataset.noise_variance)
    if state.variant.decomposition_source == "known":
        kernels = state.kernels
    else:
        kernels = tuple(_arity_kernel(state, f) for f in dec.factors)
    return fit_joint(state.dataset, dec, kernels,
                     state.dataset.noise_variance)


def _maybe_refit_kernels(state: CampaignState) -> None:
    settings = state.settings
    if state.settings.kernels_fixed or state.dataset.t < 2:
        return
    if state.iteration % settings.kernel_fit_every != 0:
        return
    if state.variant.decomposition_source == "known":
        dec = state.objective.decomposition
        state.kernels = fit_kernel_hyperparameters(
            state.dataset, dec, state.kernels, state.dataset.noise_variance,
            state.rng, restarts=settings.kernel_fit_restarts,
            decomposed=state.variant.output_mode == "decomposed",
        )
    else:
        dec = state.chain.current
        kernels = tuple(_arity_kernel(state, f) for f in dec.factors)
        fitted = fit_kernel_hyperparameters(
            state.dataset, dec, kernels, state.dataset.noise_variance,
            state.rng, restarts=settings.kernel_fit_restarts,
        )
        for factor, kernel in zip(dec.factors, fitted):
            state.kernels_by_arity[len(factor)] = kernel
        # the per-arity store changed, so cached evidence is stale
        if state.chain is not None:
            state.chain.cache_for(("refit", state.iteration, state.dataset.t))


def _snapshot(state: CampaignState):
    chain = None
    if state.chain is not None:
        chain = (state.chain.current, state.chain.accepted,
                 state.chain.proposed, state.chain.rng.bit_generator.state)
    return (state.rng.bit_generator.state, chain, state.kernels,
            dict(state.kernels_by_arity), state.v_plus_observed,
            state.clamp_events)


def _restore(state: CampaignState, snapshot) -> None:
    rng_state, chain, kernels, by_arity, v_plus, clamps = snapshot
    state.rng.bit_generator.state = rng_state
    if chain is not None:
        state.chain.current, state.chain.accepted, state.chain.proposed = chain[:3]
        state.chain.rng.bit_generator.state = chain[3]
    state.kernels = kernels
    state.kernels_by_arity = by_arity
    state.v_plus_observed = v_plus
    state.clamp_events = clamps


def bo_step(state: CampaignState) -> CampaignState:
    """One full iteration: sample/fix the decomposition, fit, calibrate,
    maximize by consensus, query, observe, append.

    Oracle failures propagate with the campaign state rolled back."""
    objective = state.objective
    settings = state.settings
    domain: BoxDomain = objective.domain
    noise_var = state.dataset.noise_variance
    snapshot = _snapshot(state)
    try:
        _maybe_refit_kernels(state)

        if state.variant.decomposition_source == "mcmc_inferred":
            candidates = mcmc_sample_candidates(
                state.chain, state.dataset, settings.mcmc_k,
                settings.mcmc_steps_per_candidate,
                lambda f: _arity_kernel(state, f), noise_var,
            )
        else:
            candidates = [objective.decomposition]

        models = [_fit_candidate(state, dec) for dec in candidates]
        need_lipschitz = state.variant.admm_mode == "early_stop"
        params = replace(settings.admm, mode=state.variant.admm_mode)

        query: np.ndarray | None = None
        diag = None
        bundles: list[AcquisitionBundle] = []
        clamped = False
        for attempt in range(2):
            bundles = [_calibrate(state, m) for m in models]
            weights = None
            if len(bundles) > 1 and settings.mcmc_weighted:
                cache = state.chain.cache_for(state.dataset.t)
                weights = posterior_weights([
                    decomposition_log_posterior(
                        dec, state.dataset,
                        lambda f: _arity_kernel(state, f), noise_var, cache)
                    for dec in candidates
                ])
            nodes = AveragedAcquisition(tuple(bundles), weights).factor_nodes(
                with_lipschitz=need_lipschitz)
            graph = graph_from_nodes(nodes, domain.d)
            x0 = state.incumbent_x if state.dataset.t else None
            query, diag = admm_maximize(nodes, graph, domain, params,
                                        state.rng, x0=x0)
            variances = [b.model.posterior_total(query)[1] for b in bundles]
            state.v_plus_observed = max(state.v_plus_observed, max(variances))
            violated = any(
                v > b.bounds.v_plus * (1 + 1e-9)
                for v, b in zip(variances, bundles)
            )
            if not violated:
                break
            if not clamped:
                state.clamp_events += 1
                clamped = True
            # second pass recalibrates once with the clamped interval

        if state.dataset.t and np.any(
                np.all(state.dataset.inputs == query, axis=1)):
            jiggle = state.rng.uniform(-1e-6, 1e-6, domain.d) * domain.width
            query = domain.clip(query + jiggle)

        _observe(state, domain.clip(query), record_model_fields=True,
                 bundles=bundles, diag=diag)
    except Exception:
        _restore(state, snapshot)
        raise
    state.iteration += 1
    return state


def regret_bound(bundle: AcquisitionBundle, x) -> float:
    """Instantaneous-regret certificate 2 sqrt(beta) (a sum_i var_i + 1/(4a))."""
    _, variance = bundle.model.posterior_total(x)
    return 2.0 * math.sqrt(bundle.beta_t) * (
        bundle.a * variance + 1.0 / (4.0 * bundle.a)
    )


@dataclass
class CampaignResult:
    traces: dict
    iterations: np.ndarray
    median: np.ndarray
    se: np.ndarray
    final_min_regret: dict

    @property
    def final_median(self) -> float:
        return float(np.median(list(self.final_min_regret.values())))


def run_campaign(objective, variant: Variant, budget: int, seeds,
                 settings: CampaignSettings | None = None) -> CampaignResult:
    """Run one campaign per seed and aggregate the minimal-regret traces
    (median and standard error per iteration over the seeds)."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    settings = settings or CampaignSettings()
    traces = {}
    for seed in seeds:
        state = start_campaign(objective, variant, seed, settings)
        for _ in range(budget):
            bo_step(state)
        traces[seed] = state.trace
    return aggregate_traces(traces)


def aggregate_traces(traces: dict) -> CampaignResult:
    lengths = {len(tr) for tr in traces.values()}
    if len(lengths) != 1:
        raise ValueError("traces have unequal lengths")
    n_iter = lengths.pop()
    matrix = np.array([[tp.min_regret for tp in tr] for tr in traces.values()])
    median = np.median(matrix, axis=0)
    if matrix.shape[0] > 1:
        se = np.std(matrix, axis=0, ddof=1) / math.sqrt(matrix.shape[0])
    else:
        se = np.zeros(n_iter)
    final = {seed: tr[-1].min_regret for seed, tr in traces.items()}
    return CampaignResult(
        traces=traces,
        iterations=np.arange(1, n_iter + 1),
        median=median,
        se=se,
        final_min_regret=final,
    )


@dataclass(frozen=True)
class DiscreteStudySpec:
    """Finite-domain setup for the regret-bound concentration study."""

    points: np.ndarray              # (m, d)
    decomposition: Decomposition
    kernels: tuple
    domain: BoxDomain
    noise_variance: float = 0.0


@dataclass
class StudyResult:
    violations: int
    total: int

    @property
    def fraction(self) -> float:
        return self.violations / self.total if self.total else 0.0


def bound_violation_study(spec: DiscreteStudySpec, seeds, steps: int,
                          delta: float, truth_sampler=None) -> StudyResult:
    """Sample truths from the model prior on a finite domain, query the
    exact acquisition argmax each step, and count how often the immediate
    regret exceeds its certificate."""
    points = np.asarray(spec.points, dtype=float)
    m = points.shape[0]
    n = spec.decomposition.n
    from .kernels import cross_covariance

    prior = np.zeros((m, m))
    for kernel, factor in zip(spec.kernels, spec.decomposition.factors):
        proj = points[:, list(factor)]
        prior += cross_covariance(kernel, proj, proj)
    prior_chol = np.linalg.cholesky(prior + 1e-10 * np.eye(m))

    violations = 0
    total = 0
    for seed in seeds:
        rng = np.random.default_rng([seed, 977])
        if truth_sampler is None:
            truth = prior_chol @ rng.standard_normal(m)
        else:
            truth = np.asarray(truth_sampler(rng), dtype=float)
        best = float(np.max(truth))
        idx = int(rng.integers(m))
        dataset = Dataset.empty(points.shape[1],
                                noise_variance=spec.noise_variance)
        dataset = dataset.append(points[idx], truth[idx])
        floors = np.full(n, max(spec.noise_variance / n, V_MINUS_FLOOR))
        for _ in range(steps):
            model = fit_joint(dataset, spec.decomposition, spec.kernels,
                              spec.noise_variance)
            _, var_all = model.posterior_total_batch(points)
            bounds = variance_bounds(floors)
            observed_max = float(np.max(var_all))
            if observed_max > bounds.v_plus:
                bounds = bounds.with_v_plus(observed_max)
            bundle = make_bundle(model, bounds, delta, m)
            scores = total_acquisition_batch(bundle, points)
            pick = int(np.argmax(scores))
            regret = best - truth[pick]
            certificate = regret_bound(bundle, points[pick])
            total += 1
            if regret > certificate + 1e-12:
                violations += 1
            dataset = dataset.append(points[pick], truth[pick])
    return StudyResult(violations=violations, total=total)
