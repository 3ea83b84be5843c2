"""End-to-end pipeline: dataset -> actions -> intervals -> IMDP -> scheduler
-> validation, with per-stage timing, artifact writing and caching.

The action table (the expensive stage) is cached inside the output directory
keyed by a hash of everything it depends on, which makes noise-count (N) and
scaling-cap (Lambda) sweeps cheap: scaling factors do not depend on either.
All artifacts are deterministic functions of (config, seed); the manifest
separates timing fields so the rest of it can be compared byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig
from .geometry import build_partition
from .imdp import (
    IntervalImdp,
    ReachAvoidSpec,
    assemble_imdp,
    export_prism,
    map_spec,
    robust_value_iteration,
)
from .kernels import BACKEND
from .reachability import ActionTable, compute_enabled_actions
from .synthesis import (
    RefinedPolicy,
    monte_carlo_validate,
    simulate,
    trajectory_csv,
    value_heatmap,
    values_csv,
)
from .systems import generate_dataset, make_benchmark, sample_noise

log = logging.getLogger("reachsyn")


def save_action_table(table: ActionTable, path) -> None:
    pairs = np.array(sorted(table.lam), dtype=np.int64).reshape(-1, 2)
    lam = np.array([table.lam[(i, j)] for i, j in pairs], dtype=np.float64)
    ctrl_rows, ctrl_u, ctrl_idx = [], [], []
    for r, (i, j) in enumerate(map(tuple, pairs)):
        if (i, j) in table.controls:
            u, idx = table.controls[(i, j)]
            ctrl_rows.append(r)
            ctrl_u.append(u)
            ctrl_idx.append(idx)
    np.savez_compressed(
        path,
        pairs=pairs, lam=lam,
        ctrl_rows=np.array(ctrl_rows, dtype=np.int64),
        ctrl_u=np.array(ctrl_u, dtype=np.float64),
        ctrl_idx=np.array(ctrl_idx, dtype=np.int64),
        Lambda=np.array([table.Lambda]),
        voxels_per_dim=np.array(table.voxels_per_dim, dtype=np.int64),
        num_cells=table.num_cells,
        degenerate_skipped=table.degenerate_skipped,
    )


def load_action_table(path) -> ActionTable:
    z = np.load(path)
    table = ActionTable(
        Lambda=float(z["Lambda"][0]),
        voxels_per_dim=tuple(int(c) for c in z["voxels_per_dim"]),
        num_cells=int(z["num_cells"]),
        degenerate_skipped=int(z["degenerate_skipped"]),
    )
    pairs = z["pairs"]
    lam = z["lam"]
    for r in range(pairs.shape[0]):
        table.lam[(int(pairs[r, 0]), int(pairs[r, 1]))] = float(lam[r])
    ctrl_rows = z["ctrl_rows"]
    if ctrl_rows.size:
        ctrl_u = z["ctrl_u"]
        ctrl_idx = z["ctrl_idx"]
        for k, r in enumerate(ctrl_rows):
            key = (int(pairs[r, 0]), int(pairs[r, 1]))
            table.controls[key] = (ctrl_u[k], ctrl_idx[k])
    return table


class Pipeline:
    """Stage runner bound to one config and one output directory."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = self.out / "cache"
        self.cache.mkdir(exist_ok=True)
        self.model = make_benchmark(cfg.benchmark, **cfg.system_params)
        self.partition = build_partition(cfg.domain, cfg.cells_per_dim)
        self.timings: dict = {}
        self._noise: Optional[np.ndarray] = None

    # -- manifest -----------------------------------------------------------

    def _manifest_path(self) -> Path:
        return self.out / "manifest.json"

    def read_manifest(self) -> dict:
        path = self._manifest_path()
        if path.exists():
            return json.loads(path.read_text())
        return {
            "schema": 1,
            "package_version": __version__,
            "kernel_backend": BACKEND,
            "config": self.cfg.to_dict(),
            "stages": {},
            "artifacts": {},
            "timings_sec": {},
        }

    def update_manifest(self, **sections) -> dict:
        manifest = self.read_manifest()
        manifest["config"] = self.cfg.to_dict()
        manifest["kernel_backend"] = BACKEND
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(manifest.get(key), dict):
                manifest[key].update(value)
            else:
                manifest[key] = value
        manifest["timings_sec"] = {**manifest.get("timings_sec", {}),
                                   **{k: round(v, 3) for k, v in self.timings.items()}}
        self._manifest_path().write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest

    def _timed(self, name: str, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            # abort with the failing stage named; earlier artifacts stay on
            # disk for debugging
            raise RuntimeError(f"stage '{name}' failed: {exc}") from exc
        dt = time.perf_counter() - t0
        self.timings[name] = dt
        log.info("stage %-10s %8.2f s", name, dt)
        return result

    # -- stages -------------------------------------------------------------

    def dataset(self):
        return generate_dataset(self.model, self.partition, self.cfg.states_per_cell,
                                self.cfg.inputs_per_dim, lazy=True)

    def actions(self, force: bool = False) -> ActionTable:
        cached = self.cache / f"actions_{self.cfg.model_key()}.npz"
        if cached.exists() and not force:
            log.info("actions: cache hit (%s)", cached.name)
            return load_action_table(cached)
        dataset = self.dataset()
        table = self._timed("actions", lambda: compute_enabled_actions(
            dataset, self.partition, self.model, self.cfg.voxels_per_dim,
            self.cfg.max_scaling))
        save_action_table(table, cached)
        return table

    def noise(self) -> np.ndarray:
        if self._noise is not None:
            return self._noise
        cached = self.cache / f"noise_{self.cfg.noise_key()}.npy"
        if cached.exists():
            self._noise = np.load(cached)
        else:
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence(self.cfg.seed).spawn(3)[0]))
            self._noise = sample_noise(self.model, rng, self.cfg.noise_samples)
            np.save(cached, self._noise)
        return self._noise

    def spec(self) -> ReachAvoidSpec:
        return map_spec(self.partition, self.cfg.goal_boxes, self.cfg.unsafe_boxes,
                        self.cfg.unsafe_outside_domain, self.cfg.horizon)

    def abstract(self, Lambda: Optional[float] = None):
        """dataset + actions + intervals + IMDP assembly; writes artifacts."""
        table = self.actions()
        noise = self.noise()
        imdp, stats = self._timed("intervals", lambda: assemble_imdp(
            self.partition, table, noise, self.cfg.overall_risk,
            self.cfg.initial_state, self.cfg.beta_mode, Lambda=Lambda))
        spec = self.spec()
        imdp.save(self.out / "imdp.npz", spec)
        table.dump_jsonl(self.out / "actions.jsonl")
        dataset = self.dataset()
        self.update_manifest(
            stages={
                "dataset": {
                    "triples": dataset.num_triples,
                    "triples_per_cell": dataset.block_size,
                },
                "actions": {
                    "enabled": table.num_enabled(Lambda),
                    "pairs_computed": len(table.lam),
                    "degenerate_skipped": table.degenerate_skipped,
                    "Lambda": Lambda if Lambda is not None else self.cfg.max_scaling,
                },
                "intervals": stats,
            },
            imdp={
                "states": stats["states"],
                "actions": stats["actions"],
                "transitions": stats["transitions"],
                "beta": stats["beta"],
                "initial_state_id": imdp.initial,
            },
            artifacts={"imdp": "imdp.npz", "actions_diagnostics": "actions.jsonl"},
        )
        return imdp, spec, table

    def synthesize(self, imdp: Optional[IntervalImdp] = None,
                   spec: Optional[ReachAvoidSpec] = None):
        if imdp is None:
            imdp, spec = IntervalImdp.load(self.out / "imdp.npz")
        scheduler = self._timed("synthesis", lambda: robust_value_iteration(
            imdp, spec, self.cfg.vi_tol, self.cfg.vi_max_iter))
        scheduler.save(self.out / "scheduler.npz")
        values_csv(scheduler, self.partition, self.out / "values.csv")
        value_heatmap(scheduler, self.partition, self.out / "heatmap.csv")
        initial_value = float(scheduler.values[imdp.initial])
        self.update_manifest(
            stages={"synthesis": {
                "iterations": scheduler.iterations,
                "residual": scheduler.residual,
                "converged": scheduler.converged,
            }},
            imdp={"initial_value": initial_value},
            artifacts={"scheduler": "scheduler.npz", "values": "values.csv",
                       "heatmap": "heatmap.csv"},
        )
        return imdp, spec, scheduler

    def simulate_stage(self, imdp=None, spec=None, scheduler=None, table=None,
                       runs: Optional[int] = None):
        from .imdp import Scheduler  # local to avoid confusion with variable

        if imdp is None:
            imdp, spec = IntervalImdp.load(self.out / "imdp.npz")
        if scheduler is None:
            scheduler = Scheduler.load(self.out / "scheduler.npz")
        if table is None:
            table = self.actions()
        policy = RefinedPolicy(scheduler, table, self.partition, self.model.input_dim)
        seeds = np.random.SeedSequence(self.cfg.seed).spawn(3)
        mc_rng = np.random.Generator(np.random.PCG64(seeds[1]))
        bound = float(scheduler.values[imdp.initial])
        result = self._timed("simulation", lambda: monte_carlo_validate(
            self.model, policy, self.cfg.goal_boxes, self.cfg.unsafe_boxes,
            self.cfg.initial_state, runs or self.cfg.sim_runs,
            self.cfg.sim_max_steps, mc_rng, bound,
            self.cfg.unsafe_outside_domain))
        (self.out / "validation.json").write_text(
            json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")

        traj_dir = self.out / "trajectories"
        traj_dir.mkdir(exist_ok=True)
        traj_rng = np.random.Generator(np.random.PCG64(seeds[2]))
        for t in range(self.cfg.trajectories):
            rec = simulate(self.model, policy, self.cfg.goal_boxes,
                           self.cfg.unsafe_boxes, self.cfg.initial_state,
                           self.cfg.sim_max_steps, traj_rng,
                           self.cfg.unsafe_outside_domain)
            trajectory_csv(rec, traj_dir / f"traj_{t:03d}.csv")
        self.update_manifest(
            stages={"simulation": result.to_dict()},
            artifacts={"validation": "validation.json",
                       "trajectories": f"trajectories/traj_000.csv "
                                       f"... ({self.cfg.trajectories} files)"},
        )
        return result

    def export(self, imdp=None, spec=None):
        if imdp is None:
            imdp, spec = IntervalImdp.load(self.out / "imdp.npz")
        tra, lab = export_prism(imdp, spec, self.out / "imdp")
        self.update_manifest(artifacts={"transitions": Path(tra).name,
                                        "labels": Path(lab).name})
        return tra, lab

    def sweep(self, lambdas) -> dict:
        """Re-run enable check and downstream stages for several Lambda caps.

        Scaling factors are cap-independent, so the cached action table is
        reused; only counting, bounds and value iteration are redone.  Caps
        above the table's build value would need controls that were never
        stored and are rejected.
        """
        table = self.actions()
        summary = {}
        for lam in lambdas:
            if lam > table.Lambda:
                raise ValueError(
                    f"sweep Lambda {lam} exceeds the build value {table.Lambda}; "
                    "rebuild the action table with a larger max_scaling first")
            if table.num_enabled(lam) == 0:
                log.warning("Lambda=%g enables no actions; value is 0 by definition", lam)
                summary[f"{lam:g}"] = {"enabled_actions": 0, "transitions": 0,
                                       "initial_value": 0.0}
                continue
            imdp, spec, _ = self.abstract(Lambda=lam)
            imdp, spec, scheduler = self.synthesize(imdp, spec)
            tag = f"{lam:g}".replace(".", "p")
            values_csv(scheduler, self.partition, self.out / f"values_lambda{tag}.csv")
            value_heatmap(scheduler, self.partition, self.out / f"heatmap_lambda{tag}.csv")
            summary[f"{lam:g}"] = {
                "enabled_actions": table.num_enabled(lam),
                "transitions": imdp.num_transitions,
                "initial_value": float(scheduler.values[imdp.initial]),
            }
        (self.out / "sweep.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return summary

    def run(self) -> dict:
        """Full pipeline; returns the final manifest."""
        imdp, spec, table = self.abstract()
        imdp, spec, scheduler = self.synthesize(imdp, spec)
        self.export(imdp, spec)
        self.simulate_stage(imdp, spec, scheduler, table)
        return self.read_manifest()


def run_pipeline(cfg: RunConfig) -> dict:
    return Pipeline(cfg).run()
