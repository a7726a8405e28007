"""Consensus maximization of an additively decomposed acquisition.

Each factor node ascends its augmented Lagrangian around the current
consensus, the consensus averages the overlapping local copies per
dimension, and dual variables accumulate the disagreement. Residuals are
measured in box-normalized coordinates so tolerances transfer across
problems. Early stopping runs exactly one iteration and returns the
Lipschitz-weighted minimax consensus instead of iterating to agreement.

Local subproblems only couple through the consensus and duals, so the
Jacobi and Gauss-Seidel orders compute identical iterates; the switch is
kept for configuration compatibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import BoxDomain, FactorGraph
from .errors import NegativeLipschitz, NonFiniteGradient

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


@dataclass
class AdmmParams:
    eta: float = 1.0
    max_iterations: int = 50
    primal_tolerance: float | None = None    # None -> 1e-3 * sqrt(d)
    dual_tolerance: float | None = None
    inner_steps: int = 100
    inner_step_size: float = 0.05            # in box-normalized coordinates
    restarts: int = 2
    polish_steps: int = 25
    mode: str = "converged"                  # converged | early_stop
    update_order: str = "jacobi"             # jacobi | gauss_seidel

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.mode not in ("converged", "early_stop"):
            raise ValueError(f"unknown admm mode {self.mode!r}")
        if self.update_order not in ("jacobi", "gauss_seidel"):
            raise ValueError(f"unknown update order {self.update_order!r}")

    def resolved_tolerances(self, d: int) -> tuple[float, float]:
        default = 1e-3 * np.sqrt(d)
        return (
            default if self.primal_tolerance is None else self.primal_tolerance,
            default if self.dual_tolerance is None else self.dual_tolerance,
        )


@dataclass
class AdmmState:
    locals: list[np.ndarray]
    duals: list[np.ndarray]
    consensus: np.ndarray
    iteration: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf


@dataclass
class AdmmDiagnostics:
    iterations: int = 0
    local_steps: int = 0
    consensus_updates: int = 0
    dual_updates: int = 0
    clip_events: int = 0
    converged: bool = False
    used_minimax: bool = False
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    acquisition_value: float = float("nan")


def graph_from_nodes(nodes, d: int) -> FactorGraph:
    """Bipartite adjacency for an arbitrary node list (e.g. the union of
    several candidate decompositions)."""
    incident: list[list[int]] = [[] for _ in range(d)]
    for i, node in enumerate(nodes):
        for j in node.vars:
            incident[j].append(i)
    return FactorGraph(
        factor_to_vars=tuple(tuple(n.vars) for n in nodes),
        var_to_factors=tuple(tuple(f) for f in incident),
    )


def local_step(node, x_bar_vi: np.ndarray, lam: np.ndarray, eta: float,
               box_lo: np.ndarray, box_hi: np.ndarray,
               params: AdmmParams, rng: np.random.Generator) -> np.ndarray:
    """Ascend the local augmented Lagrangian

        L_i(x) = phi_i(x) - lam^T (x - x_bar_vi) - eta/2 ||x - x_bar_vi||^2

    by a budgeted ADAM phase over multiple starts (consensus warm start
    plus uniform restarts) followed by a backtracking polish, clipped to
    the factor's box projection. Never returns a point worse than the
    warm start.
    """
    width = box_hi - box_lo

    def lagrangian(x: np.ndarray):
        values, grads = node.value_grad(x)
        diff = x - x_bar_vi
        values = values - diff @ lam - 0.5 * eta * np.sum(diff * diff, axis=1)
        grads = grads - lam - eta * diff
        return values, grads

    starts = [np.clip(x_bar_vi, box_lo, box_hi)]
    for _ in range(max(0, params.restarts - 1)):
        starts.append(rng.uniform(box_lo, box_hi))
    x = np.array(starts)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    lr0 = params.inner_step_size * width
    best_x = x.copy()
    best_val = np.full(x.shape[0], -np.inf)
    for k in range(params.inner_steps):
        values, grads = lagrangian(x)
        if not np.all(np.isfinite(grads)):
            raise NonFiniteGradient("local ascent produced a non-finite gradient")
        improved = values > best_val
        best_val = np.where(improved, values, best_val)
        best_x[improved] = x[improved]
        m = _ADAM_B1 * m + (1.0 - _ADAM_B1) * grads
        v = _ADAM_B2 * v + (1.0 - _ADAM_B2) * grads * grads
        m_hat = m / (1.0 - _ADAM_B1 ** (k + 1))
        v_hat = v / (1.0 - _ADAM_B2 ** (k + 1))
        lr = lr0 / (1.0 + 10.0 * k / max(params.inner_steps, 1))
        x = np.clip(x + lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS), box_lo, box_hi)
    values, _ = lagrangian(x)
    improved = values > best_val
    best_val = np.where(improved, values, best_val)
    best_x[improved] = x[improved]

    top = int(np.argmax(best_val))
    x_best = best_x[top]
    val_best = float(best_val[top])
    step = float(np.max(lr0))
    for _ in range(params.polish_steps):
        values, grads = lagrangian(x_best[None, :])
        val, grad = float(values[0]), grads[0]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient("polish phase produced a non-finite gradient")
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-14:
            break
        accepted = False
        while step > 1e-16:
            trial = np.clip(x_best + step * grad, box_lo, box_hi)
            tval = float(lagrangian(trial[None, :])[0][0])
            if tval > val:
                x_best, val_best = trial, tval
                step *= 1.5
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return x_best


def consensus_update(locals_: list[np.ndarray], graph: FactorGraph,
                     domain: BoxDomain) -> np.ndarray:
    """Per-dimension mean of the incident local copies, clipped to the box."""
    x_bar = np.empty(graph.d)
    for j, incident in enumerate(graph.var_to_factors):
        total = 0.0
        for i in incident:
            pos = graph.factor_to_vars[i].index(j)
            total += locals_[i][pos]
        x_bar[j] = total / len(incident)
    return domain.clip(x_bar)


def dual_update(locals_: list[np.ndarray], duals: list[np.ndarray],
                consensus: np.ndarray, eta: float,
                graph: FactorGraph) -> list[np.ndarray]:
    """lambda_i <- lambda_i + eta (x_i - x_bar_vi)."""
    out = []
    for i, vars_i in enumerate(graph.factor_to_vars):
        out.append(duals[i] + eta * (locals_[i] - consensus[list(vars_i)]))
    return out


def minimax_consensus(locals_: list[np.ndarray], lipschitz,
                      graph: FactorGraph, domain: BoxDomain) -> np.ndarray:
    """Lipschitz-weighted per-dimension mean of the local copies.

    Minimizes sum_i L_i ||x_i - x_vi||^2 exactly; with any constant
    unknown the plain average is the stated approximation. Dimensions
    whose incident constants are all zero also fall back to the average.
    """
    if lipschitz is None or any(l is None for l in lipschitz):
        return consensus_update(locals_, graph, domain)
    lipschitz = [float(l) for l in lipschitz]
    if any(l < 0 for l in lipschitz):
        raise NegativeLipschitz("Lipschitz weights must be non-negative")
    x_tilde = np.empty(graph.d)
    for j, incident in enumerate(graph.var_to_factors):
        weight_sum = sum(lipschitz[i] for i in incident)
        total = 0.0
        for i in incident:
            pos = graph.factor_to_vars[i].index(j)
            w = lipschitz[i] if weight_sum > 0 else 1.0
            total += w * locals_[i][pos]
        x_tilde[j] = total / (weight_sum if weight_sum > 0 else len(incident))
    return domain.clip(x_tilde)


def _normalized_norm(vec: np.ndarray, width: np.ndarray) -> float:
    return float(np.linalg.norm(vec / width))


def admm_maximize(nodes, graph: FactorGraph, domain: BoxDomain,
                  params: AdmmParams, rng: np.random.Generator,
                  x0: np.ndarray | None = None):
    """Run the consensus maximizer over the factor nodes.

    Converged mode iterates until the primal and dual residuals drop
    below tolerance (or max_iterations); early-stop mode runs exactly one
    iteration and returns the minimax consensus of the local copies.
    Returns (query point, AdmmDiagnostics).
    """
    d = domain.d
    tol_primal, tol_dual = params.resolved_tolerances(d)
    width = domain.width
    x_bar = domain.clip(domain.center if x0 is None else np.asarray(x0, dtype=float))
    var_lists = [list(n.vars) for n in nodes]
    boxes = [(domain.lower[v], domain.upper[v]) for v in var_lists]
    state = AdmmState(
        locals=[x_bar[v].copy() for v in var_lists],
        duals=[np.zeros(len(v)) for v in var_lists],
        consensus=x_bar.copy(),
    )
    diag = AdmmDiagnostics()

    for iteration in range(1, params.max_iterations + 1):
        # Locals decouple given (consensus, duals); both orders read the
        # same snapshot, the loop order only fixes the rng stream.
        order = range(len(nodes))
        new_locals = list(state.locals)
        for i in order:
            lo, hi = boxes[i]
            new_locals[i] = local_step(
                nodes[i], state.consensus[var_lists[i]], state.duals[i],
                params.eta, lo, hi, params, rng,
            )
            diag.local_steps += 1
        state.locals = new_locals

        previous = state.consensus
        raw_mean = consensus_update(state.locals, graph, _UNCLIPPED)
        state.consensus = domain.clip(raw_mean)
        if not np.array_equal(raw_mean, state.consensus):
            diag.clip_events += 1
        diag.consensus_updates += 1

        state.duals = dual_update(state.locals, state.duals, state.consensus,
                                  params.eta, graph)
        diag.dual_updates += 1

        state.primal_residual = max(
            _normalized_norm(state.locals[i] - state.consensus[var_lists[i]],
                             width[var_lists[i]])
            for i in range(len(nodes))
        )
        state.dual_residual = params.eta * _normalized_norm(
            state.consensus - previous, width
        )
        state.iteration = iteration
        diag.iterations = iteration
        diag.primal_residuals.append(state.primal_residual)
        diag.dual_residuals.append(state.dual_residual)

        if params.mode == "early_stop":
            diag.used_minimax = True
            lips = [n.lipschitz for n in nodes]
            query = minimax_consensus(state.locals, lips, graph, domain)
            diag.acquisition_value = _total_value(nodes, query)
            return query, diag

        if (state.primal_residual <= tol_primal
                and state.dual_residual <= tol_dual):
            diag.converged = True
            break

    query = state.consensus
    diag.acquisition_value = _total_value(nodes, query)
    return query, diag


class _Unclipped:
    """Stand-in domain whose clip is the identity (raw consensus mean)."""

    @staticmethod
    def clip(x):
        return np.asarray(x, dtype=float)


_UNCLIPPED = _Unclipped()


def _total_value(nodes, x: np.ndarray) -> float:
    total = 0.0
    for node in nodes:
        values, _ = node.value_grad(x[list(node.vars)][None, :])
        total += float(values[0])
    return total
