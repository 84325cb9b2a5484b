"""Deterministic two-rate simulation loop tying world, connectivity, planner,
dynamics, netsim, and behavior together for one trial.

Rates: control at 1 kHz, connectivity field held zero-order at 100 Hz,
planning / message rounds at 10 Hz.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import netsim
from .behavior import (
    ANCHOR,
    CONNECTOR,
    PRIME,
    ROLE_CODES,
    SECONDARY,
    AnchorViolation,
    BehaviorParams,
    PlanContext,
    RobotAgent,
    adaptive_gain,
    anchor_force,
    ramp,
    run_flooding_election,
)
from .connectivity import ConnectivityParams, ConnectivityViolation, evaluate_field
from .dynamics import BodyParams, ReferenceFilter, SimulationFault
from .planner import NoPath, OccupiedEndpoint, SmoothPath, astar
from .world import ObstacleSet, OccupancyGrid, SensingParams, adjacency


@dataclass
class Monitors:
    """Per-run invariant observations used by the acceptance suite."""

    max_prime_count: int = 0
    max_primeless_rounds: int = 0
    degenerate_ticks: int = 0
    targets_planned: int = 0
    targets_done: int = 0
    replans: int = 0


@dataclass
class RunResult:
    completed: bool
    completion_time: float
    fault: str | None
    traveled: np.ndarray
    explorer_mask: np.ndarray
    max_stretch: float
    mean_lambda2: float
    min_lambda2: float
    min_interrobot_dist: float
    min_obstacle_clearance: float
    monitors: Monitors
    events: list = field(default_factory=list)


class Simulation:
    """One deterministic run of the full team on a static world."""

    FIELD_EVERY = 10  # control ticks per connectivity evaluation
    PLAN_EVERY = 100  # control ticks per planning / message round

    def __init__(
        self,
        obstacles: ObstacleSet,
        grid: OccupancyGrid,
        sensing: SensingParams,
        conn: ConnectivityParams,
        bp: BehaviorParams,
        body: BodyParams,
        robots,
        timeout: float,
        dt: float = 1e-3,
        trace_dir: str | None = None,
        use_filter: bool = False,
    ):
        self.obstacles = obstacles
        self.grid = grid
        self.sensing = sensing
        self.conn = conn
        self.bp = bp
        self.body = body
        self.timeout = float(timeout)
        self.dt = float(dt)
        self.trace_dir = trace_dir
        self.use_filter = use_filter

        self.n = len(robots)
        self.q = np.array([r[0] for r in robots], dtype=float).reshape(self.n, 3)
        self.v = np.zeros((self.n, 3))
        self.agents = [RobotAgent(i, robots[i][1], bp) for i in range(self.n)]
        self.lam_hat = np.zeros(self.n)
        self.net = netsim.Network(self.n, trace=[] if trace_dir else None)
        self.events = []
        self.t = 0.0
        self.round = 0
        self.mon = Monitors()
        self._primeless_streak = 0
        self._path_dumps = []
        self._robot_rows = []
        self._conn_rows = []
        self._iu = np.triu_indices(self.n, 1)
        self._frame_cache = {}
        self._filters = None
        if use_filter:
            self._filters = [ReferenceFilter(initial_position=self.q[i]) for i in range(self.n)]

    # -- planning helpers -----------------------------------------------------

    def _plan(self, start, goal):
        """Grid A* plus spline smoothing; None when no path exists."""
        sc = self.grid.nearest_free_cell(start)
        gc = self.grid.nearest_free_cell(goal)
        if sc is None or gc is None:
            return None
        try:
            gp = astar(self.grid, self.grid.center(sc), self.grid.center(gc))
        except (NoPath, OccupiedEndpoint):
            return None
        wp = [np.asarray(start, dtype=float)]
        wp.extend(gp.waypoints)
        wp.append(np.asarray(goal, dtype=float))
        path = SmoothPath(wp, sample_step=0.05)
        if self.trace_dir:
            self._path_dumps.append(path)
        return path

    def _log_event(self, robot: int, event: str, detail: str):
        self.events.append((self.t, robot, event, detail))

    # -- startup ----------------------------------------------------------------

    def startup(self):
        """Initial planning and the first election, hosted by robot 0."""
        adj = adjacency(self.q, self.obstacles, self.sensing)
        self._adj_f = adj.astype(float)
        candidacies = {}
        self.mon.targets_planned = sum(len(a.queue) for a in self.agents)
        for i, ag in enumerate(self.agents):
            d = ag.startup_plan(self.q[i], self._plan, lambda e, det, i=i: self._log_event(i, e, det))
            if d is not None:
                candidacies[i] = d
        winner = None
        if candidacies:
            winner, _ = run_flooding_election(adj, host=0, candidacies=candidacies)
        for ag in self.agents:
            ag.assume_startup_role(winner)
        if winner is not None:
            self._log_event(winner, "winner", "startup election")

    # -- main loop ---------------------------------------------------------------

    def run(self) -> RunResult:
        self.startup()
        n = self.n
        dt = self.dt
        bp = self.bp
        body = self.body
        traveled = np.zeros(n)
        explorer = np.array([a.is_explorer for a in self.agents])

        lam2_sum = 0.0
        lam2_n = 0
        min_lam2 = np.inf
        min_rr = np.inf
        min_clear = np.inf
        max_stretch = 0.0
        fault = None
        completed = False
        completion_time = self.timeout

        field_state = None
        adj = None
        f_lambda = np.zeros((n, 3))
        prev_grad = None

        if self._all_done():
            completed = True
            completion_time = 0.0
            field_state = evaluate_field(self.q, self.obstacles, self.sensing, self.conn)
            lam2_sum, lam2_n = field_state.lambda2, 1
            min_lam2 = field_state.lambda2
            min_rr = self._min_pairwise()
            min_clear = self._min_clearance()
            max_stretch = self._stretch(explorer)

        tick = 0
        max_ticks = int(round(self.timeout / dt))
        try:
            while not completed and tick < max_ticks:
                if tick % self.FIELD_EVERY == 0:
                    field_state = evaluate_field(
                        self.q, self.obstacles, self.sensing, self.conn, prev_grad
                    )
                    prev_grad = field_state.grad
                    f_lambda = field_state.forces
                    # consensus couples robots with nonzero edge weight; the
                    # full neighbor test runs only at message rounds
                    self._adj_f = (field_state.W > 0.0).astype(float)
                    lam2_sum += field_state.lambda2
                    lam2_n += 1
                    min_lam2 = min(min_lam2, field_state.lambda2)
                    min_clear = min(min_clear, self._min_clearance())
                    max_stretch = max(max_stretch, self._stretch(explorer))
                    if field_state.degenerate:
                        self.mon.degenerate_ticks += 1
                    if self._conn_rows is not None and self.trace_dir:
                        self._conn_rows.append(
                            (
                                self.t,
                                field_state.lambda2,
                                int((field_state.W > 0).sum() // 2),
                                self._min_pairwise(),
                                self._min_clearance(),
                            )
                        )

                if tick % self.PLAN_EVERY == 0:
                    adj = adjacency(self.q, self.obstacles, self.sensing)
                    self._plan_round(adj)
                    if self._all_done():
                        completed = True
                        completion_time = self.t
                        break

                # inline semi-implicit Euler (matches dynamics.integrate_step;
                # travel forces are already saturated per robot)
                f_travel = self._control_forces(f_lambda, tick)
                f_total = f_travel + f_lambda
                self.v = (self.v + (dt / body.mass) * f_total) / (
                    1.0 + dt * body.damping / body.mass
                )
                dq = dt * self.v
                self.q = self.q + dq
                if tick % self.FIELD_EVERY == 0 and not np.all(np.isfinite(self.q)):
                    raise SimulationFault("non-finite state")
                traveled += np.sqrt((dq * dq).sum(axis=1))
                min_rr = min(min_rr, self._min_pairwise())
                for ag in self.agents:
                    if ag.role == ANCHOR:
                        ag.dwell_elapsed += dt
                self.t += dt
                tick += 1
                if self.trace_dir:
                    self._trace_tick()
        except (ConnectivityViolation, AnchorViolation, SimulationFault) as exc:
            fault = f"{type(exc).__name__}: {exc}"
            self._log_event(-1, "fault", fault)

        self.mon.targets_done = sum(a.targets_done for a in self.agents)
        if self.trace_dir:
            self._write_traces()
        return RunResult(
            completed=completed,
            completion_time=completion_time if completed else self.timeout,
            fault=fault,
            traveled=traveled,
            explorer_mask=explorer,
            max_stretch=float(max_stretch),
            mean_lambda2=float(lam2_sum / max(1, lam2_n)),
            min_lambda2=float(min_lam2),
            min_interrobot_dist=float(min_rr),
            min_obstacle_clearance=float(min_clear),
            monitors=self.mon,
            events=self.events,
        )

    # -- per-round / per-tick pieces ------------------------------------------

    def _plan_round(self, adj):
        inboxes = self.net.deliver_round(adj)
        for i, ag in enumerate(self.agents):
            ctx = PlanContext(
                round=self.round,
                n=self.n,
                q=self.q[i],
                inbox=inboxes[i],
                send=lambda kind, payload, i=i: self.net.send(i, kind, payload),
                plan=self._plan,
                log_event=lambda e, det, i=i: self._log_event(i, e, det),
            )
            before = ag.role
            ag.plan_tick(ctx)
            if ag.role != before and ag.role in (PRIME, SECONDARY):
                self._log_event(i, "role_change", ag.role)
        self.round += 1
        primes = sum(a.role == PRIME for a in self.agents)
        self.mon.max_prime_count = max(self.mon.max_prime_count, primes)
        secondaries = any(a.role == SECONDARY for a in self.agents)
        if primes == 0 and secondaries:
            self._primeless_streak += 1
            self.mon.max_primeless_rounds = max(
                self.mon.max_primeless_rounds, self._primeless_streak
            )
        else:
            self._primeless_streak = 0

    def _control_forces(self, f_lambda, tick=0):
        n = self.n
        bp = self.bp
        f = np.zeros((n, 3))
        # consensus over the current neighbor graph, then prime pinning
        adj_f = self._adj_f
        lam = self.lam_hat
        lam = lam + bp.k_consensus * self.dt * (adj_f @ lam - adj_f.sum(axis=1) * lam)
        np.clip(lam, 0.0, 1.0, out=lam)
        for i, ag in enumerate(self.agents):
            role = ag.role
            if role == CONNECTOR:
                continue
            if role == ANCHOR or (role == PRIME and ag.path is None and ag.z is not None):
                f[i] = anchor_force(self.q[i], ag.z, bp.R_z, bp.k_z)
                if role == PRIME:
                    lam[i] = 1.0  # hosting at the target: report full efficiency
                continue
            path = ag.path
            if path is None or path.degenerate:
                continue
            # refresh the tracked path frame at 250 Hz and hold it in between;
            # feedback terms below still use the current q and v every tick
            cache = self._frame_cache.get(i)
            if cache is None or cache[0] is not path or tick % 4 == 0:
                p, s, v_g, a_g = path.track_frame(
                    self.q[i], ag.s_track, 0.25, bp.v_cruise, bp.R_z
                )
                ag.s_track = s
                self._frame_cache[i] = (path, p, v_g, a_g)
            else:
                _, p, v_g, a_g = cache
            dv = v_g - self.v[i]
            dq = p - self.q[i]
            ft = a_g + bp.k_v * dv + bp.k_p * dq
            nf = np.sqrt(ft @ ft)
            if nf > self.body.f_max:
                ft = ft * (self.body.f_max / nf)
            if role == PRIME:
                e = (1.0 - bp.alpha) * np.sqrt(dv @ dv) + bp.alpha * np.sqrt(dq @ dq)
                lam[i] = ramp(e, bp.x_c, bp.x_M)
                f[i] = ft
            else:
                fl = f_lambda[i]
                na = np.sqrt(fl @ fl)
                nb = np.sqrt(ft @ ft)
                if na == 0.0 or nb == 0.0:
                    theta = 1.0
                else:
                    c = (fl @ ft) / (na * nb)
                    theta = 0.5 * (1.0 + max(-1.0, min(1.0, c)))
                f[i] = adaptive_gain(theta, lam[i], bp.sigma) * ft
        self.lam_hat = lam
        return f

    # -- monitors ----------------------------------------------------------------

    def _min_pairwise(self) -> float:
        if self.n < 2:
            return np.inf
        diff = self.q[self._iu[0]] - self.q[self._iu[1]]
        return float(np.sqrt((diff * diff).sum(axis=1).min()))

    def _min_clearance(self) -> float:
        if self.obstacles.empty:
            return np.inf
        return float(self.obstacles.clearances(self.q).min())

    def _stretch(self, explorer_mask) -> float:
        qs = self.q[explorer_mask]
        if len(qs) < 2:
            return 0.0
        diff = qs[:, None, :] - qs[None, :, :]
        return float(np.sqrt((diff * diff).sum(axis=2)).max())

    def _all_done(self) -> bool:
        for a in self.agents:
            if a.queue or a.z is not None or a.pending is not None or a.hosting is not None:
                return False
            if a.role != CONNECTOR:
                return False
        return True

    # -- tracing -------------------------------------------------------------------

    def _trace_tick(self):
        for i in range(self.n):
            row = [self.t, i, *self.q[i], *self.v[i], ROLE_CODES[self.agents[i].role]]
            if self._filters is not None:
                qf, qdf, _ = self._filters[i].step(self.q[i], self.dt)
                row.extend([*qf, *qdf])
            self._robot_rows.append(row)

    def _write_traces(self):
        os.makedirs(self.trace_dir, exist_ok=True)
        head = ["t", "robot_id", "x", "y", "z", "vx", "vy", "vz", "role_code"]
        if self._filters is not None:
            head += ["xf", "yf", "zf", "vxf", "vyf", "vzf"]
        with open(os.path.join(self.trace_dir, "robots.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            w.writerows(self._robot_rows)
        with open(os.path.join(self.trace_dir, "connectivity.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "lambda2", "num_edges", "min_interrobot_dist", "min_obstacle_clearance"])
            w.writerows(self._conn_rows)
        with open(os.path.join(self.trace_dir, "events.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "robot_id", "event", "detail"])
            w.writerows(self.events)
        if self.net.trace is not None:
            with open(os.path.join(self.trace_dir, "messages.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["round", "src", "dst", "kind", "ttl"])
                w.writerows(self.net.trace)
        for k, path in enumerate(self._path_dumps):
            fn = os.path.join(self.trace_dir, f"path_{k:03d}.csv")
            with open(fn, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["s", "x", "y", "z"])
                for s, p in zip(path._s, path._samples):
                    w.writerow([s, *p])
