"""Scenario loading, seeded trial execution, Monte Carlo batches, and the
five-number summaries emitted by the CLI."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields

import numpy as np

from .behavior import BehaviorParams
from .connectivity import ConnectivityParams, evaluate_field
from .dynamics import BodyParams
from .sim import RunResult, Simulation
from .world import ObstacleSet, OccupancyGrid, SensingParams, rasterize


@dataclass
class TrialMetrics:
    completion_time: float
    mean_explorer_distance: float
    max_stretch: float
    mean_lambda2: float
    min_lambda2: float
    min_interrobot_dist: float
    min_obstacle_clearance: float
    completed: bool

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def row(self):
        return [getattr(self, name) for name in self.field_names()]


@dataclass
class Scenario:
    name: str
    obstacles: ObstacleSet
    grid: OccupancyGrid
    bounds: tuple
    sensing: SensingParams
    conn: ConnectivityParams
    behavior: BehaviorParams
    body: BodyParams
    robots: list  # (position, [(target, dwell), ...]) per robot
    timeout: float
    dt: float


class ScenarioError(ValueError):
    pass


def _sample_targets(cfg, obstacles, grid, bounds, sensing, rng):
    """Rejection-sample one target list per explorer.

    A sample is accepted when it lies in the target region, its grid cell is
    free, it keeps R_o_outer clearance from obstacles, and it stays at least
    target_min_separation (default R_c_outer) away from every previously
    accepted target.
    """
    counts = cfg["explorer_target_counts"]
    min_sep = float(cfg.get("target_min_separation", sensing.R_c_outer))
    min_sep = max(min_sep, sensing.R_c_outer)
    region = cfg.get("target_region")
    if region is None:
        lo = np.asarray(bounds[0], dtype=float) + 1.0
        hi = np.asarray(bounds[1], dtype=float) - 1.0
    else:
        lo = np.asarray(region["min"], dtype=float)
        hi = np.asarray(region["max"], dtype=float)
    # sequential rejection can corner itself near the packing limit, so a
    # failed set is discarded and resampled from the same stream
    for _restart in range(50):
        accepted = []
        per_robot = []
        for c in counts:
            lst = []
            for _ in range(c):
                for _attempt in range(2000):
                    z = lo + rng.random(3) * (hi - lo)
                    if obstacles.clearance(z) < sensing.R_o_outer:
                        continue
                    cell = grid.cell_of(z)
                    if not grid.is_free(cell):
                        continue
                    if accepted and min(np.linalg.norm(z - a) for a in accepted) < min_sep:
                        continue
                    accepted.append(z)
                    lst.append(z)
                    break
                else:
                    per_robot = None
                    break
            if per_robot is None:
                break
            per_robot.append(lst)
        if per_robot is not None:
            return per_robot
    raise ScenarioError("target sampling failed: region too constrained")


def load_scenario(path, seed=None, connectors=None) -> Scenario:
    """Build a Scenario from a JSON file.

    Concrete files list robots explicitly; template files carry spawn points
    and explorer target counts, and require a seed for target randomization.
    The same seed yields the same targets for every connector count.
    """
    with open(path) as fh:
        cfg = json.load(fh)
    bounds = (cfg["bounds"]["min"], cfg["bounds"]["max"])
    obst_cfg = cfg.get("obstacles", {})
    obstacles = ObstacleSet.from_primitives(
        points=obst_cfg.get("points"), boxes=obst_cfg.get("boxes", ())
    )
    sensing = SensingParams(**cfg["sensing"])
    conn = ConnectivityParams(**cfg.get("connectivity", {}))
    behavior = BehaviorParams(**cfg.get("behavior", {}))
    body = BodyParams(**cfg.get("body", {}))
    grid = rasterize(obstacles, bounds, cfg.get("grid_cell", 0.75))

    if "robots" in cfg:
        robots = [
            (
                np.asarray(r["position"], dtype=float),
                [(np.asarray(tg["z"], dtype=float), tg["dwell"]) for tg in r.get("targets", [])],
            )
            for r in cfg["robots"]
        ]
    else:
        if seed is None:
            raise ScenarioError("template scenario requires a seed")
        rng = np.random.default_rng(int(seed))
        per_robot = _sample_targets(cfg, obstacles, grid, bounds, sensing, rng)
        dwell = float(cfg.get("dwell", 3.0))
        spawn = [np.asarray(p, dtype=float) for p in cfg["spawn_points"]]
        n_exp = len(per_robot)
        n_con = int(cfg.get("connectors", 0) if connectors is None else connectors)
        if n_exp + n_con > len(spawn):
            raise ScenarioError("not enough spawn points for requested team size")
        robots = [(spawn[i], [(z, dwell) for z in per_robot[i]]) for i in range(n_exp)]
        robots += [(spawn[n_exp + j], []) for j in range(n_con)]

    positions = np.array([r[0] for r in robots])
    if len(positions) >= 2:
        state = evaluate_field(positions, obstacles, sensing, conn)
        if state.lambda2 <= conn.lambda2_min:
            raise ScenarioError(
                f"initial graph not connected: lambda2={state.lambda2:.6g}"
            )
    return Scenario(
        name=cfg.get("name", str(path)),
        obstacles=obstacles,
        grid=grid,
        bounds=bounds,
        sensing=sensing,
        conn=conn,
        behavior=behavior,
        body=body,
        robots=robots,
        timeout=float(cfg.get("timeout", 300.0)),
        dt=float(cfg.get("dt", 1e-3)),
    )


def run_trial(scenario: Scenario, trace_dir=None, use_filter=False) -> tuple:
    """Run one deterministic trial; returns (TrialMetrics, RunResult)."""
    simu = Simulation(
        obstacles=scenario.obstacles,
        grid=scenario.grid,
        sensing=scenario.sensing,
        conn=scenario.conn,
        bp=scenario.behavior,
        body=scenario.body,
        robots=scenario.robots,
        timeout=scenario.timeout,
        dt=scenario.dt,
        trace_dir=trace_dir,
        use_filter=use_filter,
    )
    result = simu.run()
    mask = result.explorer_mask
    mean_dist = float(result.traveled[mask].mean()) if mask.any() else 0.0
    metrics = TrialMetrics(
        completion_time=result.completion_time,
        mean_explorer_distance=mean_dist,
        max_stretch=result.max_stretch,
        mean_lambda2=result.mean_lambda2,
        min_lambda2=result.min_lambda2,
        min_interrobot_dist=result.min_interrobot_dist,
        min_obstacle_clearance=result.min_obstacle_clearance,
        completed=result.completed and result.fault is None,
    )
    return metrics, result


ID_COLUMNS = ["scenario", "connectors", "seed"]


def run_montecarlo(batch_path, out_csv=None):
    """Run a seeded batch; returns (rows, faults, timeouts).

    Rows are ordered by (connector count, seed); each row is the three id
    columns followed by the TrialMetrics fields.  Identical seeds reuse
    identical target configurations across connector counts.
    """
    with open(batch_path) as fh:
        batch = json.load(fh)
    scenario_path = batch["scenario"]
    connector_counts = batch["connectors"]
    seeds = batch["seeds"]
    rows = []
    faults = 0
    timeouts = 0
    for n_con in connector_counts:
        for seed in seeds:
            scenario = load_scenario(scenario_path, seed=seed, connectors=n_con)
            metrics, result = run_trial(scenario)
            if result.fault is not None:
                faults += 1
            elif not result.completed:
                timeouts += 1
            rows.append([scenario.name, n_con, seed, *metrics.row()])
    if out_csv:
        write_rows(out_csv, rows)
    return rows, faults, timeouts


def write_rows(out_csv, rows):
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ID_COLUMNS + TrialMetrics.field_names())
        w.writerows(rows)


def read_rows(in_csv):
    with open(in_csv) as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def summarize(rows):
    """Five-number summary per (scenario, connector count) per metric.

    Accepts rows shaped as run_montecarlo emits them; returns a dict
    {(scenario, connectors): {metric: (min, p25, p50, p75, max)}}.
    """
    names = TrialMetrics.field_names()
    groups = {}
    for row in rows:
        key = (row[0], int(row[1]))
        groups.setdefault(key, []).append([float(x) for x in row[3 : 3 + len(names) - 1]])
    out = {}
    for key, vals in groups.items():
        arr = np.asarray(vals)
        table = {}
        for j, name in enumerate(names[:-1]):
            col = arr[:, j]
            table[name] = tuple(
                float(np.percentile(col, p)) for p in (0, 25, 50, 75, 100)
            )
        out[key] = table
    return out


def format_summary(summary) -> str:
    lines = []
    for (scen, ncon), table in sorted(summary.items()):
        lines.append(f"scenario={scen} connectors={ncon}")
        lines.append(f"  {'metric':<24}{'min':>10}{'p25':>10}{'p50':>10}{'p75':>10}{'max':>10}")
        for name, vals in table.items():
            lines.append(
                f"  {name:<24}" + "".join(f"{v:>10.3f}" for v in vals)
            )
    return "\n".join(lines)
