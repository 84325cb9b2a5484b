"""Per-robot roles: planning state machine, motion controller, election,
traveling-efficiency consensus, and the adaptive downscaling gain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import netsim
from .dynamics import saturate
from .planner import SmoothPath, path_kinematics

CONNECTOR = "connector"
PRIME = "prime_traveler"
SECONDARY = "secondary_traveler"
ANCHOR = "anchor"

ROLE_CODES = {PRIME: 1, SECONDARY: 2, ANCHOR: 3, CONNECTOR: 4}


class AnchorViolation(Exception):
    """An anchored robot left its target ball."""


@dataclass
class BehaviorParams:
    R_z: float = 1.0
    v_cruise: float = 1.0
    x_c: float = 0.1
    x_M: float = 0.6
    R_gamma: float | None = None
    alpha: float = 0.5
    sigma: float = 3.0
    k_p: float = 2.0
    k_v: float = 4.0
    k_z: float = 2.0
    k_consensus: float = 1.0
    # travelers anchor at arrival_frac * R_z; entering with this margin leaves
    # runway for the confinement barrier, which is too stiff to integrate when
    # engaged right at the R_z boundary
    arrival_frac: float = 0.8

    def __post_init__(self):
        if self.R_gamma is None:
            self.R_gamma = self.R_z
        if not (0.0 <= self.x_c < self.x_M):
            raise ValueError("need 0 <= x_c < x_M")
        if self.sigma < 1.0:
            raise ValueError("sigma must be >= 1")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if not (0.0 < self.arrival_frac <= 1.0):
            raise ValueError("arrival_frac must lie in (0, 1]")
        for g in (self.k_p, self.k_v, self.k_z, self.k_consensus, self.R_z, self.v_cruise):
            if g <= 0:
                raise ValueError("gains and radii must be positive")


# -- scalar machinery --------------------------------------------------------


def direction_alignment(x, y) -> float:
    """(1 + cos angle)/2 between two vectors; 1 if either is zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 1.0
    c = float(x @ y) / (nx * ny)
    return 0.5 * (1.0 + max(-1.0, min(1.0, c)))


def ramp(x: float, x_c: float, x_M: float) -> float:
    """1 for x <= x_c, cosine descent to 0 at x_M, 0 beyond."""
    if x <= x_c:
        return 1.0
    if x >= x_M:
        return 0.0
    return 0.5 + 0.5 * np.cos((x - x_c) / (x_M - x_c) * np.pi)


def traveling_efficiency(q, v, path: SmoothPath, bp: BehaviorParams, s=None, taper_len=0.0):
    """Tracking quality in [0, 1] from blended position/velocity error."""
    if path is None:
        raise ValueError("traveling efficiency requires a path")
    if s is None:
        q_gamma, s = path.closest_point(q)
    else:
        q_gamma = path.point_at(s)
    v_gamma, _ = path_kinematics(path, s, bp.v_cruise, taper_len)
    e = (1.0 - bp.alpha) * float(np.linalg.norm(v_gamma - np.asarray(v, dtype=float)))
    e += bp.alpha * float(np.linalg.norm(q_gamma - np.asarray(q, dtype=float)))
    return ramp(e, bp.x_c, bp.x_M)


def adaptive_gain(theta: float, lam_hat: float, sigma: float) -> float:
    """Blend of force alignment and estimated leader efficiency, in [0, 1]."""
    return (1.0 - theta) * lam_hat**sigma + theta * (1.0 - (1.0 - lam_hat) ** sigma)


def consensus_step(own: float, neighbor_values, k: float, dt: float) -> float:
    """One Euler step of the disagreement law, clamped to [0, 1]."""
    nv = np.asarray(list(neighbor_values), dtype=float)
    new = own + k * dt * float((nv - own).sum())
    return min(1.0, max(0.0, new))


def travel_force(q, v, path: SmoothPath, bp: BehaviorParams, f_max=np.inf, s=None, taper_len=None):
    """PD + feedforward tracking force along the path, norm-saturated."""
    if path is None or path.degenerate:
        return np.zeros(3)
    if taper_len is None:
        taper_len = bp.R_z
    if s is None:
        q_gamma, s = path.closest_point(q)
    else:
        q_gamma = path.point_at(s)
    v_gamma, a_gamma = path_kinematics(path, s, bp.v_cruise, taper_len)
    f = a_gamma + bp.k_v * (v_gamma - np.asarray(v, dtype=float))
    f += bp.k_p * (q_gamma - np.asarray(q, dtype=float))
    return saturate(f, f_max)


def anchor_force(q, z, R_z: float, k_z: float):
    """Barrier force confining q inside the R_z ball around z."""
    q = np.asarray(q, dtype=float)
    z = np.asarray(z, dtype=float)
    ell = float(np.linalg.norm(q - z))
    if ell >= R_z:
        raise AnchorViolation(f"distance {ell:.6g} >= R_z {R_z:.6g}")
    if ell == 0.0:
        return np.zeros(3)
    return -k_z * np.tan(ell * np.pi / (2.0 * R_z)) * (q - z) / ell


def elect_winner(candidates):
    """Shortest remaining path wins; ties break to the lower index."""
    best = None
    for idx, d in candidates:
        key = (d, idx)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


# -- flooding protocols (static-graph runners used at startup and in tests) --


def run_flooding_election(adj, host: int, candidacies: dict):
    """Full flooding election on a static connected graph.

    The host floods the election opening, candidates flood their (distance,
    index) replies, and the host decides at the end of the 2(N-1)-round
    collection window.  Returns (winner or None, rounds_used).
    """
    adj = np.asarray(adj, dtype=bool)
    n = adj.shape[0]
    window = 2 * (n - 1)
    net = netsim.Network(n)
    net.send(host, netsim.ELECTION_OPEN, (window,))
    collected = {}
    replied = set()
    if host in candidacies:
        collected[host] = candidacies[host]
        replied.add(host)
    for _ in range(window):
        inboxes = net.deliver_round(adj)
        for i in range(n):
            for m in inboxes[i]:
                if m.kind == netsim.ELECTION_OPEN and i in candidacies and i not in replied:
                    replied.add(i)
                    net.send(i, netsim.CANDIDACY, (candidacies[i], i))
                elif m.kind == netsim.CANDIDACY and i == host:
                    d, idx = m.payload
                    collected[int(idx)] = float(d)
    return elect_winner(collected.items()), window


def presence_flood(adj, is_prime):
    """Answer 'does a prime traveler exist' at every robot via query/reply
    flooding, within 2(N-1) rounds."""
    adj = np.asarray(adj, dtype=bool)
    n = adj.shape[0]
    net = netsim.Network(n)
    for i in range(n):
        net.send(i, netsim.PRESENCE_QUERY, (i,))
    answer = [bool(is_prime[i]) for i in range(n)]
    replied = set()
    for _ in range(2 * (n - 1)):
        inboxes = net.deliver_round(adj)
        for i in range(n):
            for m in inboxes[i]:
                if m.kind == netsim.PRESENCE_QUERY and is_prime[i] and m.payload[0] not in replied:
                    replied.add(m.payload[0])
                    net.send(i, netsim.PRESENCE_REPLY, (m.payload[0],))
                elif m.kind == netsim.PRESENCE_REPLY and m.payload[0] == i:
                    answer[i] = True
    return {i: answer[i] for i in range(n)}


# -- per-robot planning state machine ----------------------------------------


@dataclass
class PlanContext:
    """Everything one robot may legally touch during a planning tick."""

    round: int
    n: int
    q: np.ndarray
    inbox: list
    send: callable  # (kind, payload) -> None
    plan: callable  # (start, goal) -> SmoothPath or None
    log_event: callable  # (event, detail) -> None


class RobotAgent:
    """Discrete behavior of one robot: target queue, role transitions, and
    the flooding election / presence protocol."""

    def __init__(self, index: int, targets, bp: BehaviorParams):
        self.index = index
        self.bp = bp
        self.queue = [(np.asarray(z, dtype=float), float(dw)) for z, dw in targets]
        self.is_explorer = bool(self.queue)
        self.role = CONNECTOR
        self.z = None
        self.dwell_required = 0.0
        self.dwell_elapsed = 0.0
        self.path: SmoothPath | None = None
        self.s_track = 0.0
        self.lam_hat = 0.0
        self.hosting = None
        self.open_window_end = -1
        self.busy_until = -1
        self.candidacy_sent = set()
        self.pending = None
        self.targets_done = 0
        self.last_f_lambda = np.zeros(3)

    # startup ---------------------------------------------------------------

    def startup_plan(self, q, plan, log_event):
        """Pop the first target and plan; returns remaining path length or None."""
        if not self.queue:
            return None
        z, dw = self.queue.pop(0)
        path = plan(q, z)
        if path is None:
            log_event("fault", "unreachable first target")
            return None
        self.z = z
        self.dwell_required = dw
        self.path = path
        self.s_track = 0.0
        return path.total_length

    def assume_startup_role(self, winner):
        if self.z is None:
            self.role = CONNECTOR
        elif winner == self.index:
            self.role = PRIME
        else:
            self.role = SECONDARY
        self.lam_hat = 0.0

    # planning tick -----------------------------------------------------------

    def plan_tick(self, ctx: PlanContext):
        for msg in ctx.inbox:
            self._handle_message(msg, ctx)
        handler = {
            CONNECTOR: self._plan_connector,
            PRIME: self._plan_prime,
            SECONDARY: self._plan_secondary,
            ANCHOR: self._plan_anchor,
        }[self.role]
        handler(ctx)

    def _handle_message(self, msg, ctx: PlanContext):
        kind = msg.kind
        if kind == netsim.ELECTION_OPEN:
            eid = (msg.src, msg.seq)
            window_end = msg.payload[0]
            self.open_window_end = max(self.open_window_end, window_end)
            self.busy_until = max(self.busy_until, window_end + (ctx.n - 1))
            if eid not in self.candidacy_sent:
                d = None
                if self.role == SECONDARY and self.path is not None:
                    _, s = self.path.closest_point(ctx.q)
                    d = self.path.remaining_length(s)
                elif self.pending is not None:
                    d = self.pending["path"].total_length
                if d is not None:
                    self.candidacy_sent.add(eid)
                    ctx.send(netsim.CANDIDACY, (eid[0], eid[1], d, self.index))
                    ctx.log_event("candidacy", f"d_gamma={d:.3f}")
        elif kind == netsim.CANDIDACY:
            if self.hosting is not None:
                src, seq, d, idx = msg.payload
                if (src, seq) == self.hosting["id"]:
                    self.hosting["candidates"][int(idx)] = float(d)
        elif kind == netsim.WINNER_ANNOUNCE:
            winner = int(msg.payload[-1])
            self.open_window_end = -1
            if winner == self.index:
                self._become_prime_on_win(ctx)
            elif winner >= 0 and self.pending is not None:
                self._pending_to_secondary(ctx)
        elif kind == netsim.PRESENCE_QUERY:
            src = int(msg.payload[0])
            if self.role == PRIME:
                ctx.send(netsim.PRESENCE_REPLY, (src,))
            if self.pending is not None and src < self.index:
                self.pending["defer"] = True
        elif kind == netsim.PRESENCE_REPLY:
            if self.pending is not None and int(msg.payload[0]) == self.index:
                self._pending_to_secondary(ctx)

    def _pending_to_secondary(self, ctx: PlanContext):
        p = self.pending
        self.pending = None
        self.z = p["z"]
        self.dwell_required = p["dwell"]
        self.path = p["path"]
        self.s_track = 0.0
        self.role = SECONDARY
        ctx.log_event("role_change", SECONDARY)

    def _become_prime_on_win(self, ctx: PlanContext):
        if self.pending is not None:
            p = self.pending
            self.pending = None
            self.z = p["z"]
            self.dwell_required = p["dwell"]
            self.path = p["path"]
            self.s_track = 0.0
        if self.z is None:
            # won a stale election after clearing all targets
            if self.queue:
                self.z, self.dwell_required = self.queue.pop(0)
                self.path = None
            else:
                self.role = CONNECTOR
                ctx.log_event("role_change", "stale winner -> connector")
                return
        self.role = PRIME
        ctx.log_event("winner", f"robot {self.index}")

    def _plan_connector(self, ctx: PlanContext):
        if self.pending is not None:
            if ctx.round >= self.pending["wait_until"]:
                if self.pending["defer"]:
                    # a lower-index robot is also querying; let it decide first
                    self.pending["defer"] = False
                    self.pending["wait_until"] = ctx.round + 2 * (ctx.n - 1)
                else:
                    p = self.pending
                    self.pending = None
                    self.z = p["z"]
                    self.dwell_required = p["dwell"]
                    self.path = p["path"]
                    self.s_track = 0.0
                    self.role = PRIME
                    ctx.send(netsim.WINNER_ANNOUNCE, (self.index,))
                    ctx.log_event("winner", "self-promotion (no prime present)")
            return
        if not self.queue:
            return
        if ctx.round < self.busy_until or ctx.round < self.open_window_end:
            return
        z, dw = self.queue.pop(0)
        path = ctx.plan(ctx.q, z)
        if path is None:
            ctx.log_event("fault", "unreachable target dropped")
            return
        self.pending = {
            "z": z,
            "dwell": dw,
            "path": path,
            "wait_until": ctx.round + 2 * (ctx.n - 1),
            "defer": False,
        }
        ctx.send(netsim.PRESENCE_QUERY, (self.index,))
        ctx.log_event("election_open", "presence query")

    def _plan_prime(self, ctx: PlanContext):
        if self.hosting is not None:
            if ctx.round >= self.hosting["window_end"]:
                winner = elect_winner(self.hosting["candidates"].items())
                eid = self.hosting["id"]
                ctx.send(
                    netsim.WINNER_ANNOUNCE,
                    (eid[0], eid[1], -1 if winner is None else winner),
                )
                self.hosting = None
                self.open_window_end = -1
                self.role = ANCHOR
                self.dwell_elapsed = 0.0
                ctx.log_event("role_change", ANCHOR)
            return
        if (
            self.z is not None
            and float(np.linalg.norm(ctx.q - self.z)) < self.bp.arrival_frac * self.bp.R_z
        ):
            self.path = None
            window_end = ctx.round + 2 * (ctx.n - 1)
            msg_seq_placeholder = ctx.send(netsim.ELECTION_OPEN, (window_end,))
            eid = (self.index, msg_seq_placeholder.seq)
            self.hosting = {"id": eid, "window_end": window_end, "candidates": {}}
            self.open_window_end = window_end
            self.busy_until = max(self.busy_until, window_end + (ctx.n - 1))
            ctx.log_event("target_reached", f"target {self.targets_done}")
            return
        if self.path is None and self.z is not None:
            self.path = ctx.plan(ctx.q, self.z)
            self.s_track = 0.0
            if self.path is None:
                ctx.log_event("replan", "failed; retry next tick")

    def _plan_secondary(self, ctx: PlanContext):
        if self.z is None:
            self.role = CONNECTOR
            return
        if self.path is not None:
            q_gamma, s = self.path.closest_point(ctx.q)
            if float(np.linalg.norm(ctx.q - q_gamma)) > self.bp.R_gamma:
                new_path = ctx.plan(ctx.q, self.z)
                if new_path is not None:
                    self.path = new_path
                    self.s_track = 0.0
                    ctx.log_event("replan", "dragged off path")
                else:
                    ctx.log_event("replan", "failed; retry next tick")
        else:
            self.path = ctx.plan(ctx.q, self.z)
            self.s_track = 0.0
        if float(np.linalg.norm(ctx.q - self.z)) < self.bp.arrival_frac * self.bp.R_z:
            self.path = None
            self.role = ANCHOR
            self.dwell_elapsed = 0.0
            ctx.log_event("target_reached", f"target {self.targets_done}")
            ctx.log_event("role_change", ANCHOR)

    def _plan_anchor(self, ctx: PlanContext):
        if self.dwell_elapsed >= self.dwell_required:
            self.targets_done += 1
            self.z = None
            self.path = None
            self.role = CONNECTOR
            ctx.log_event("dwell_done", f"total {self.targets_done}")
