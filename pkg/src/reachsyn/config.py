"""Run configuration: one TOML file drives the whole pipeline.

Every abstraction hyperparameter is explicit in the file; the only defaulted
values are solver knobs (tolerance, iteration cap) and harness sizes, all
listed in ``_DEFAULTS`` below.  The resolved configuration is embedded in the
run manifest, and re-running from that manifest reproduces the artifacts
bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from typing import List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import Box


_DEFAULTS = {
    "beta_mode": "transitions",
    "vi_tol": 1e-6,
    "vi_max_iter": 10000,
    "sim_runs": 2000,
    "sim_max_steps": 1000,
    "trajectories": 10,
    "threads": 0,
    "unsafe_outside_domain": True,
}


@dataclass
class RunConfig:
    benchmark: str
    domain_lower: List[float]
    domain_upper: List[float]
    cells_per_dim: List[int]
    states_per_cell: List[int]
    inputs_per_dim: List[int]
    voxels_per_dim: List[int]
    max_scaling: float
    noise_samples: int
    overall_risk: float
    initial_state: List[float]
    goal: List[List[List[float]]]
    unsafe: List[List[List[float]]]
    seed: int
    output_dir: str
    system_params: dict = field(default_factory=dict)
    horizon: float = math.inf
    beta_mode: str = _DEFAULTS["beta_mode"]
    vi_tol: float = _DEFAULTS["vi_tol"]
    vi_max_iter: int = _DEFAULTS["vi_max_iter"]
    sim_runs: int = _DEFAULTS["sim_runs"]
    sim_max_steps: int = _DEFAULTS["sim_max_steps"]
    trajectories: int = _DEFAULTS["trajectories"]
    threads: int = _DEFAULTS["threads"]
    unsafe_outside_domain: bool = _DEFAULTS["unsafe_outside_domain"]

    def __post_init__(self):
        for name in ("cells_per_dim", "states_per_cell", "inputs_per_dim", "voxels_per_dim"):
            if any(int(c) < 1 for c in getattr(self, name)):
                raise ValueError(f"{name} entries must be >= 1")
        if self.max_scaling <= 0:
            raise ValueError("max_scaling must be positive")
        if not 0.0 < self.overall_risk < 1.0:
            raise ValueError("overall_risk must lie in (0, 1)")

    @property
    def domain(self) -> Box:
        return Box(self.domain_lower, self.domain_upper)

    @property
    def goal_boxes(self) -> List[Box]:
        return [Box(lo, hi) for lo, hi in self.goal]

    @property
    def unsafe_boxes(self) -> List[Box]:
        return [Box(lo, hi) for lo, hi in self.unsafe]

    def to_dict(self) -> dict:
        d = {
            "system": {"benchmark": self.benchmark, **self.system_params},
            "partition": {
                "lower": list(self.domain_lower),
                "upper": list(self.domain_upper),
                "cells": [int(c) for c in self.cells_per_dim],
            },
            "sampling": {
                "states_per_cell": [int(c) for c in self.states_per_cell],
                "inputs": [int(c) for c in self.inputs_per_dim],
            },
            "actions": {
                "voxels": [int(c) for c in self.voxels_per_dim],
                "max_scaling": self.max_scaling,
            },
            "intervals": {
                "noise_samples": int(self.noise_samples),
                "overall_risk": self.overall_risk,
                "beta_mode": self.beta_mode,
            },
            "solver": {
                "horizon": "inf" if math.isinf(self.horizon) else int(self.horizon),
                "tolerance": self.vi_tol,
                "max_iterations": int(self.vi_max_iter),
            },
            "simulation": {
                "initial_state": list(self.initial_state),
                "runs": int(self.sim_runs),
                "max_steps": int(self.sim_max_steps),
                "trajectories": int(self.trajectories),
            },
            "spec": {
                "goal": self.goal,
                "unsafe": self.unsafe,
                "unsafe_outside_domain": self.unsafe_outside_domain,
            },
            "run": {
                "seed": int(self.seed),
                "output": self.output_dir,
                "threads": int(self.threads),
            },
        }
        return d

    def model_key(self) -> str:
        """Cache key covering everything the action table depends on."""
        payload = {
            "system": {"benchmark": self.benchmark, **self.system_params},
            "partition": self.to_dict()["partition"],
            "sampling": self.to_dict()["sampling"],
            "actions": self.to_dict()["actions"],
        }
        return _digest(payload)

    def noise_key(self) -> str:
        payload = {
            "system": {"benchmark": self.benchmark, **self.system_params},
            "noise_samples": int(self.noise_samples),
            "seed": int(self.seed),
        }
        return _digest(payload)


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def config_from_dict(d: dict, output_override: Optional[str] = None,
                     seed_override: Optional[int] = None) -> RunConfig:
    """Build a :class:`RunConfig` from nested TOML-shaped sections."""
    def need(section, key):
        try:
            return d[section][key]
        except KeyError:
            raise KeyError(f"config is missing [{section}] {key}") from None

    def opt(section, key, default):
        return d.get(section, {}).get(key, default)

    system = dict(d.get("system", {}))
    benchmark = system.pop("benchmark", None)
    if benchmark is None:
        raise KeyError("config is missing [system] benchmark")

    horizon_raw = opt("solver", "horizon", "inf")
    horizon = math.inf if str(horizon_raw) in ("inf", "infinite") else float(int(horizon_raw))

    return RunConfig(
        benchmark=benchmark,
        system_params=system,
        domain_lower=[float(x) for x in need("partition", "lower")],
        domain_upper=[float(x) for x in need("partition", "upper")],
        cells_per_dim=[int(c) for c in need("partition", "cells")],
        states_per_cell=[int(c) for c in need("sampling", "states_per_cell")],
        inputs_per_dim=[int(c) for c in need("sampling", "inputs")],
        voxels_per_dim=[int(c) for c in need("actions", "voxels")],
        max_scaling=float(need("actions", "max_scaling")),
        noise_samples=int(need("intervals", "noise_samples")),
        overall_risk=float(need("intervals", "overall_risk")),
        beta_mode=opt("intervals", "beta_mode", _DEFAULTS["beta_mode"]),
        horizon=horizon,
        vi_tol=float(opt("solver", "tolerance", _DEFAULTS["vi_tol"])),
        vi_max_iter=int(opt("solver", "max_iterations", _DEFAULTS["vi_max_iter"])),
        initial_state=[float(x) for x in need("simulation", "initial_state")],
        sim_runs=int(opt("simulation", "runs", _DEFAULTS["sim_runs"])),
        sim_max_steps=int(opt("simulation", "max_steps", _DEFAULTS["sim_max_steps"])),
        trajectories=int(opt("simulation", "trajectories", _DEFAULTS["trajectories"])),
        goal=[[list(map(float, lo)), list(map(float, hi))]
              for lo, hi in need("spec", "goal")],
        unsafe=[[list(map(float, lo)), list(map(float, hi))]
                for lo, hi in d.get("spec", {}).get("unsafe", [])],
        unsafe_outside_domain=bool(opt("spec", "unsafe_outside_domain",
                                       _DEFAULTS["unsafe_outside_domain"])),
        seed=int(seed_override if seed_override is not None else need("run", "seed")),
        output_dir=str(output_override if output_override is not None
                       else need("run", "output")),
        threads=int(opt("run", "threads", _DEFAULTS["threads"])),
    )


def load_config(path, output_override=None, seed_override=None) -> RunConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data, output_override, seed_override)
