"""Run configuration: YAML files with dotted command-line overrides.

Every knob has a default; unknown keys are rejected so typos fail fast.
Command-line values win over file values.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass

import numpy as np
import yaml

from .admm import AdmmParams
from .benchmarks import BENCHMARKS, get_benchmark
from .driver import (
    CampaignSettings,
    VARIANTS,
    Variant,
    validate_objective,
)
from .errors import IncompatibleVariant, ParseError, UnknownKey

DEFAULTS = {
    "benchmark": None,
    "variant": None,
    "budget": 110,
    "seeds": [0, 1, 2, 3, 4],
    "jobs": 1,
    "out": "runs",
    "init_points": 5,
    "objective.noise_std": 0.0,
    "kernel.family": "squared-exponential",
    "kernel.lengthscale": None,
    "kernel.signal_variance": None,
    "kernel.fit_every": 10,
    "kernel.fit_restarts": 3,
    "acquisition.delta": 0.1,
    "acquisition.effective_cardinality": 1e6,
    "acquisition.v_minus": None,
    "admm.eta": 1.0,
    "admm.max_iterations": 50,
    "admm.primal_tolerance": None,
    "admm.dual_tolerance": None,
    "admm.inner_steps": 100,
    "admm.inner_step_size": 0.05,
    "admm.restarts": 2,
    "admm.polish_steps": 25,
    "admm.mode": None,               # None -> follow the variant
    "admm.update_order": "jacobi",
    "mcmc.k": 5,
    "mcmc.steps_per_candidate": 10,
    "mcmc.seed": 0,
    "mcmc.weighted": False,
}

_INT_KEYS = {"budget", "jobs", "init_points", "kernel.fit_every",
             "kernel.fit_restarts", "admm.max_iterations", "admm.inner_steps",
             "admm.restarts", "admm.polish_steps", "mcmc.k",
             "mcmc.steps_per_candidate", "mcmc.seed"}
_FLOAT_KEYS = {"objective.noise_std", "acquisition.delta",
               "acquisition.effective_cardinality", "admm.eta",
               "admm.primal_tolerance", "admm.dual_tolerance",
               "admm.inner_step_size"}


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _coerce(key: str, value):
    if isinstance(value, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError:
            pass
    if key == "seeds":
        if isinstance(value, str):
            value = [int(tok) for tok in value.split(",") if tok.strip()]
        elif isinstance(value, (int, np.integer)):
            value = [int(value)]
        else:
            value = [int(v) for v in value]
        return value
    if value is None:
        return None
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def variant(self) -> Variant:
        name = self.values["variant"]
        if name not in VARIANTS:
            raise ParseError(
                f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}"
            )
        variant = VARIANTS[name]
        mode = self.values["admm.mode"]
        if mode is not None and mode != variant.admm_mode:
            variant = Variant(variant.decomposition_source, mode,
                              variant.output_mode)
        return variant

    def objective(self):
        ref = self.values["benchmark"]
        if ref is None:
            raise ParseError("no benchmark or objective reference configured")
        if ref in BENCHMARKS:
            return get_benchmark(ref)
        if ":" in ref:
            module_name, attr = ref.split(":", 1)
            target = getattr(importlib.import_module(module_name), attr)
            return target() if callable(target) else target
        raise ParseError(
            f"benchmark {ref!r} is neither a registry name nor module:attr"
        )

    def campaign_settings(self) -> CampaignSettings:
        v = self.values
        admm = AdmmParams(
            eta=v["admm.eta"],
            max_iterations=v["admm.max_iterations"],
            primal_tolerance=v["admm.primal_tolerance"],
            dual_tolerance=v["admm.dual_tolerance"],
            inner_steps=v["admm.inner_steps"],
            inner_step_size=v["admm.inner_step_size"],
            restarts=v["admm.restarts"],
            polish_steps=v["admm.polish_steps"],
            update_order=v["admm.update_order"],
        )
        return CampaignSettings(
            init_points=v["init_points"],
            noise_std=v["objective.noise_std"],
            delta=v["acquisition.delta"],
            effective_cardinality=v["acquisition.effective_cardinality"],
            v_minus=v["acquisition.v_minus"],
            kernel_family=v["kernel.family"],
            kernel_lengthscale=v["kernel.lengthscale"],
            kernel_signal_variance=v["kernel.signal_variance"],
            kernel_fit_every=v["kernel.fit_every"],
            kernel_fit_restarts=v["kernel.fit_restarts"],
            mcmc_k=v["mcmc.k"],
            mcmc_steps_per_candidate=v["mcmc.steps_per_candidate"],
            mcmc_seed=v["mcmc.seed"],
            mcmc_weighted=v["mcmc.weighted"],
            admm=admm,
        )

    def validate(self) -> "RunConfig":
        v = self.values
        if v["budget"] < 1:
            raise ParseError("budget must be at least 1")
        if not v["seeds"]:
            raise ParseError("seed list must be non-empty")
        if v["jobs"] < 1:
            raise ParseError("jobs must be at least 1")
        variant = self.variant()
        objective = self.objective()
        try:
            validate_objective(objective, variant)
        except IncompatibleVariant:
            raise
        if (variant.decomposition_source == "mcmc_inferred"
                and isinstance(v["acquisition.v_minus"], (list, tuple))):
            raise IncompatibleVariant(
                "per-factor variance floors need a known decomposition"
            )
        return self


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load defaults, then the YAML file, then dotted overrides."""
    values = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                tree = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ParseError(str(exc),
                             line=None if mark is None else mark.line + 1)
        if not isinstance(tree, dict):
            raise ParseError("config file must hold a mapping")
        for key, value in _flatten(tree).items():
            if key not in DEFAULTS:
                raise UnknownKey(key)
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise UnknownKey(key)
        values[key] = _coerce(key, value)
    return RunConfig(values).validate()
