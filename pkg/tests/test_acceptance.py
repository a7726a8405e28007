"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Criteria 8 and 9 run full-scale campaigns (budget 110, noiseless); they
dominate the suite's runtime and deliberately use the library defaults.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate
from scipy.optimize import minimize

from dumbo.acquisition import (
    AcquisitionBundle,
    VarianceBounds,
    calibration_polynomial,
    lipschitz_phi,
    local_acquisition_batch,
    make_bundle,
    solve_quartic_a,
    variance_bounds,
)
from dumbo.admm import (
    AdmmParams,
    admm_maximize,
    consensus_update,
    graph_from_nodes,
    minimax_consensus,
)
from dumbo.acquisition import FactorNode
from dumbo.benchmarks import get_benchmark
from dumbo.decomp import (
    DecompositionChain,
    decomposition_log_posterior,
    fully_dependent,
    mcmc_step,
)
from dumbo.domain import BoxDomain, Dataset, Decomposition
from dumbo.driver import (
    CampaignSettings,
    DiscreteStudySpec,
    VARIANTS,
    bound_violation_study,
    run_campaign,
)
from dumbo.gp import fit_decomposed, fit_joint
from dumbo.kernels import (
    MATERN52,
    SQUARED_EXPONENTIAL,
    cross_covariance,
    make_kernel,
)

SEEDS = [0, 1, 2, 3, 4]
BUDGET = 110


def report(num, label, ok, detail):
    print(f"\nACCEPTANCE {num} ({label}): {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num} failed: {detail}"


@pytest.fixture(scope="module")
def shc_dumbo():
    return run_campaign(get_benchmark("shc"), VARIANTS["dumbo"], BUDGET,
                        SEEDS, CampaignSettings())


def golden_least_squares_a(v_minus, v_plus, tol=1e-9):
    def objective(a):
        val, _ = integrate.quad(
            lambda u: (math.sqrt(u) - (a * u + 1.0 / (4.0 * a))) ** 2,
            v_minus, v_plus, limit=500, epsabs=1e-14, epsrel=1e-13)
        return val

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 1e-9, 1.0 / math.sqrt(v_minus)
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = objective(c), objective(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = objective(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = objective(d)
    return 0.5 * (lo + hi)


def test_criterion_1_quartic_calibration():
    rng = np.random.default_rng(101)
    worst_da = worst_p = 0.0
    for _ in range(100):
        v_minus = rng.uniform(1e-6, 1e3)
        v_plus = rng.uniform(v_minus, 1e3)
        if v_plus <= v_minus:
            continue
        a = solve_quartic_a(VarianceBounds(None, v_minus, 0.0, v_plus))
        oracle = golden_least_squares_a(v_minus, v_plus)
        worst_da = max(worst_da, abs(a - oracle))
        worst_p = max(worst_p, abs(calibration_polynomial(a, v_minus, v_plus)))
    ok = worst_da <= 1e-6 and worst_p <= 1e-10
    report(1, "quartic calibration", ok,
           f"max |da| {worst_da:.2e} (<=1e-6), max |P(a)| {worst_p:.2e} (<=1e-10)")


def test_criterion_2_tightness_and_overestimation():
    rng = np.random.default_rng(202)
    tight_viol = 0
    samples = 0
    while samples < 100_000:
        n = int(rng.integers(2, 11))
        v = rng.uniform(0.05, 3.0, size=n)
        bounds = variance_bounds(v)
        a = solve_quartic_a(bounds)
        caps = v * (bounds.v_plus / bounds.v_minus)
        batch = min(1000, 100_000 - samples)
        u = rng.uniform(0.0, 1.0, size=(batch, n))
        s2 = v + u * (caps - v)
        lhs = a * s2.sum(axis=1) + 1.0 / (4.0 * a)
        rhs = np.sqrt(s2).sum(axis=1)
        tight_viol += int(np.sum(lhs > rhs))
        samples += batch

    over_viol = 0
    for _ in range(10):
        v_minus = 10.0 ** rng.uniform(-2, 2)
        v_plus = v_minus * 10.0 ** rng.uniform(0.01, 2)
        a = solve_quartic_a(VarianceBounds(None, v_minus, 0.0, v_plus))
        xs = rng.uniform(0.0, 4.0 * v_plus, size=10_000)
        over_viol += int(np.sum(a * xs + 1.0 / (4.0 * a) < np.sqrt(xs)))
    ok = tight_viol == 0 and over_viol == 0
    report(2, "confidence-term tightness", ok,
           f"{tight_viol}/100000 tightness violations, "
           f"{over_viol}/100000 overestimation violations")


def test_criterion_3_gp_oracle_equivalence():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 7))
        t = int(rng.integers(1, 11))
        labels = rng.integers(0, d, d)
        parts = {}
        for j, lab in enumerate(labels):
            parts.setdefault(lab, []).append(j)
        dec = Decomposition(tuple(tuple(v) for v in parts.values()), d)
        family = SQUARED_EXPONENTIAL if rng.uniform() < 0.5 else MATERN52
        kernels = tuple(
            make_kernel(family, rng.uniform(0.5, 2.0, size=len(f)),
                        rng.uniform(0.5, 2.0)) for f in dec.factors)
        xs = rng.uniform(-2, 2, size=(t, d))
        ys = rng.normal(size=t)
        noise = float(rng.uniform(0.01, 0.2))
        ds = Dataset(xs, ys, noise_variance=noise)
        model = fit_joint(ds, dec, kernels, noise)

        k_total = np.zeros((t, t))
        for kern, f in zip(kernels, dec.factors):
            proj = xs[:, list(f)]
            k_total += cross_covariance(kern, proj, proj)
        a_inv = np.linalg.inv(k_total + (noise + model.jitter) * np.eye(t))

        x = rng.uniform(-2, 2, size=d)
        total_mean = total_var = 0.0
        for i, f in enumerate(dec.factors):
            x_vi = x[list(f)]
            mean, var = model.posterior_factor(i, x_vi)
            k_vec = cross_covariance(kernels[i], x_vi[None, :],
                                     xs[:, list(f)])[0]
            o_mean = k_vec @ a_inv @ ys
            o_var = max(kernels[i].signal_variance - k_vec @ a_inv @ k_vec, 0.0)
            worst = max(worst, abs(mean - o_mean), abs(var - o_var))
            total_mean += o_mean
            total_var += o_var
        mean, var = model.posterior_total(x)
        worst = max(worst, abs(mean - total_mean), abs(var - total_var))
    ok = worst <= 1e-8

    # decomposed-output path with one factor collapses onto the joint path
    rng2 = np.random.default_rng(73)
    worst_pair = 0.0
    for _ in range(10):
        d = 2
        dec = Decomposition((tuple(range(d)),), d)
        k = make_kernel(SQUARED_EXPONENTIAL, [1.0] * d, 1.3)
        xs = rng2.uniform(-1, 1, size=(6, d))
        ys = rng2.normal(size=6)
        joint = fit_joint(Dataset(xs, ys, noise_variance=0.05), dec, (k,), 0.05)
        deco = fit_decomposed(
            Dataset(xs, ys, factor_outputs=ys[:, None], noise_variance=0.05),
            dec, (k,), 0.05)
        x = rng2.uniform(-1, 1, size=d)
        jm, jv = joint.posterior_factor(0, x)
        dm, dv = deco.posterior_factor(0, x)
        worst_pair = max(worst_pair, abs(jm - dm), abs(jv - dv))
    ok = ok and worst_pair <= 1e-10
    report(3, "posterior oracle equivalence", ok,
           f"max joint-vs-oracle gap {worst:.2e} (<=1e-8), "
           f"n=1 decomposed-vs-joint gap {worst_pair:.2e} (<=1e-10)")


def _quad_node(vars_, center, lipschitz=None):
    center = np.asarray(center, dtype=float)

    def value_grad(x):
        diff = x - center
        return -np.sum(diff * diff, axis=1), -2.0 * diff

    return FactorNode(vars=tuple(vars_), value_grad=value_grad,
                      lipschitz=lipschitz)


def test_criterion_4_admm_concave_instances():
    rng = np.random.default_rng(404)
    box = BoxDomain(np.array([-5.0, -5.0]), np.array([5.0, 5.0]))
    params = AdmmParams(primal_tolerance=1e-9, dual_tolerance=1e-9)

    nodes = [_quad_node((0,), [1.5]), _quad_node((1,), [-2.5])]
    q1, d1 = admm_maximize(nodes, graph_from_nodes(nodes, 2), box, params, rng)
    val1 = -(q1[0] - 1.5) ** 2 - (q1[1] + 2.5) ** 2
    gap1_loc = max(abs(q1[0] - 1.5), abs(q1[1] + 2.5))
    ok1 = d1.iterations <= 50 and gap1_loc <= 1e-2 and abs(val1) <= 1e-3

    nodes2 = [_quad_node((0, 1), [1.0, 0.0]), _quad_node((1,), [2.0])]
    q2, d2 = admm_maximize(nodes2, graph_from_nodes(nodes2, 2), box, params, rng)
    grid = np.linspace(-5, 5, 1001)
    xs, ys = np.meshgrid(grid, grid, indexing="ij")
    landscape = -((xs - 1.0) ** 2) - ys ** 2 - (ys - 2.0) ** 2
    best_idx = np.unravel_index(np.argmax(landscape), landscape.shape)
    oracle_val = landscape[best_idx]
    oracle_loc = np.array([grid[best_idx[0]], grid[best_idx[1]]])
    val2 = -(q2[0] - 1.0) ** 2 - q2[1] ** 2 - (q2[1] - 2.0) ** 2
    gap2_val = abs(val2 - oracle_val)
    gap2_loc = np.max(np.abs(q2 - oracle_loc))
    ok2 = d2.iterations <= 50 and gap2_val <= 1e-3 and gap2_loc <= 1e-2
    report(4, "consensus maximizer on concave fixtures", ok1 and ok2,
           f"separable: loc gap {gap1_loc:.1e}, {d1.iterations} iters; "
           f"overlapping: value gap {gap2_val:.1e}, loc gap {gap2_loc:.1e}, "
           f"{d2.iterations} iters")


def test_criterion_5_minimax_consensus():
    rng = np.random.default_rng(505)
    worst = 0.0
    worst_eq = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 5))
        n = int(rng.integers(2, 6))
        vars_ = []
        for _ in range(n):
            size = int(rng.integers(1, d + 1))
            vars_.append(tuple(sorted(rng.choice(d, size=size, replace=False))))
        for j in range(d):                       # ensure coverage
            if not any(j in v for v in vars_):
                vars_[int(rng.integers(n))] = tuple(
                    sorted(set(vars_[int(rng.integers(n))]) | {j}))
        vars_ = [tuple(v) for v in vars_]
        nodes = [_quad_node(v, np.zeros(len(v))) for v in vars_]
        graph = graph_from_nodes(nodes, d)
        box = BoxDomain(np.full(d, -100.0), np.full(d, 100.0))
        locals_ = [rng.normal(size=len(v)) for v in vars_]
        weights = rng.uniform(0.1, 5.0, size=n)

        def disagreement(x):
            return sum(w * np.sum((loc - x[list(v)]) ** 2)
                       for w, loc, v in zip(weights, locals_, vars_))

        res = minimize(disagreement, np.zeros(d), method="BFGS",
                       options={"gtol": 1e-13})
        ours = minimax_consensus(locals_, list(weights), graph, box)
        worst = max(worst, float(np.max(np.abs(ours - res.x))))

        plain = consensus_update(locals_, graph, box)
        equal = minimax_consensus(locals_, [1.7] * n, graph, box)
        worst_eq = max(worst_eq, float(np.max(np.abs(plain - equal))))
    ok = worst <= 1e-6 and worst_eq <= 1e-12
    report(5, "minimax consensus", ok,
           f"max gap to numeric minimizer {worst:.2e} (<=1e-6), "
           f"equal-weight gap {worst_eq:.2e} (<=1e-12)")


def test_criterion_6_lipschitz_bound():
    rng = np.random.default_rng(606)
    worst_excess = -np.inf
    for _ in range(20):
        m = int(rng.integers(1, 4))
        t = int(rng.integers(2, 9))
        dec = Decomposition((tuple(range(m)),), m)
        family = SQUARED_EXPONENTIAL if rng.uniform() < 0.5 else MATERN52
        kernel = make_kernel(family, rng.uniform(0.5, 2.0, size=m),
                             rng.uniform(0.5, 2.0))
        xs = rng.uniform(-2, 2, size=(t, m))
        ys = rng.normal(size=t) * rng.uniform(0.5, 3.0)
        noise = float(rng.uniform(0.0, 0.1))
        model = fit_joint(Dataset(xs, ys, noise_variance=noise), dec,
                          (kernel,), noise)
        bundle = AcquisitionBundle(
            model, a=float(rng.uniform(0.1, 1.0)),
            beta_t=float(rng.uniform(1.0, 16.0)),
            bounds=VarianceBounds(None, 0.1, 0.0, 1.0), t=t)
        bound = lipschitz_phi(bundle, 0)
        a_pts = rng.uniform(-3, 3, size=(10_000, m))
        b_pts = rng.uniform(-3, 3, size=(10_000, m))
        va = local_acquisition_batch(bundle, 0, a_pts)
        vb = local_acquisition_batch(bundle, 0, b_pts)
        den = np.linalg.norm(a_pts - b_pts, axis=1)
        keep = den > 1e-9
        ratios = np.abs(va - vb)[keep] / den[keep]
        worst_excess = max(worst_excess, float(np.max(ratios) - bound))
    ok = worst_excess <= 0.0
    report(6, "acquisition Lipschitz certificate", ok,
           f"max (empirical ratio - bound) = {worst_excess:.2e} (<=0)")


def test_criterion_7_regret_bound_study():
    rng = np.random.default_rng(707)
    box = BoxDomain(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    points = box.sample(rng, size=50)
    dec = Decomposition(((0,), (1,)), 2)
    kernels = tuple(make_kernel(SQUARED_EXPONENTIAL, 0.5, 1.0, arity=1)
                    for _ in range(2))
    spec = DiscreteStudySpec(points=points, decomposition=dec,
                             kernels=kernels, domain=box)
    result = bound_violation_study(spec, seeds=range(20), steps=30, delta=0.1)
    ok = result.total == 600 and result.fraction <= 0.15
    report(7, "regret-bound concentration study", ok,
           f"violation fraction {result.fraction:.3f} over "
           f"{result.total} steps (<=0.15 at delta=0.1)")


def test_criterion_8a_shc_reproduction(shc_dumbo):
    median = shc_dumbo.final_median
    ok = median <= 0.15
    report("8a", "camelback reproduction", ok,
           f"median minimal regret {median:.4f} (<=0.15)")


def test_criterion_8b_hartmann_reproduction():
    spec = get_benchmark("hartmann6")
    result = run_campaign(spec, VARIANTS["dumbo"], BUDGET, SEEDS,
                          CampaignSettings())
    ranges = []
    for seed in SEEDS:
        rng = np.random.default_rng([seed, 555])
        values = [spec.evaluate(spec.domain.sample(rng))
                  for _ in range(BUDGET + 5)]
        ranges.append(max(values) - min(values))
    threshold = 0.2 * float(np.median(ranges))
    median = result.final_median
    ok = median <= threshold
    report("8b", "hartmann reproduction", ok,
           f"median minimal regret {median:.4f} <= 20% of random-search "
           f"range {threshold:.4f}")


def test_criterion_8c_powell_reproduction():
    result = run_campaign(get_benchmark("powell24"), VARIANTS["add-dumbo"],
                          BUDGET, SEEDS, CampaignSettings())
    median = result.final_median
    ok = median <= 2000.0
    report("8c", "powell reproduction", ok,
           f"median minimal regret {median:.1f} (<=2000)")


def test_criterion_8d_rastrigin_smoke():
    start = time.time()
    result = run_campaign(get_benchmark("rastrigin100"), VARIANTS["add-dumbo"],
                          BUDGET, [0], CampaignSettings())
    elapsed = time.time() - start
    ok = elapsed < 7200 and len(result.traces[0]) == BUDGET + 5
    report("8d", "rastrigin smoke", ok,
           f"completed in {elapsed:.0f}s (<7200), final minimal regret "
           f"{result.final_median:.1f} (no threshold)")


def test_criterion_9_early_stop_parity(shc_dumbo):
    es = run_campaign(get_benchmark("shc"), VARIANTS["es-dumbo"], BUDGET,
                      SEEDS, CampaignSettings())
    one_iteration = all(
        tp.admm_iterations == 1
        for trace in es.traces.values() for tp in trace
        if tp.admm_iterations is not None
    )
    ratio = es.final_median / max(shc_dumbo.final_median, 1e-12)
    ok = one_iteration and es.final_median <= 3.0 * shc_dumbo.final_median
    report(9, "early-stop parity", ok,
           f"one consensus iteration per step: {one_iteration}; "
           f"median regret {es.final_median:.4f} vs {shc_dumbo.final_median:.4f} "
           f"(ratio {ratio:.2f} <= 3)")


def test_criterion_10_mcmc_sanity():
    def provider(factor):
        return make_kernel(SQUARED_EXPONENTIAL, [1.0] * len(factor), 1.0)

    chain = DecompositionChain.start(2, np.random.default_rng(1010))
    empty = Dataset.empty(2)
    cache = chain.cache_for(empty.t)
    visits = {"1,2": 0, "1;2": 0}
    for _ in range(10_000):
        mcmc_step(chain, empty, provider, 0.0, cache)
        visits[chain.current.fingerprint()] += 1
    spread = abs(visits["1,2"] / 10_000 - 0.5)
    ok_flat = spread <= 0.05

    truth = Decomposition(((0,), (1,)), 2)
    dependent = fully_dependent(2)
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        xs = rng.uniform(-2, 2, size=(30, 2))
        ys = np.sin(3 * xs[:, 0]) + np.cos(2 * xs[:, 1])
        ds = Dataset(xs, ys, noise_variance=0.01)
        if decomposition_log_posterior(truth, ds, provider, 0.01) > \
                decomposition_log_posterior(dependent, ds, provider, 0.01):
            wins += 1
    ok_recover = wins >= 16
    report(10, "partition-chain sanity", ok_flat and ok_recover,
           f"flat-target deviation {spread:.3f} (<=0.05), "
           f"truth recovery {wins}/20 (>=16)")
