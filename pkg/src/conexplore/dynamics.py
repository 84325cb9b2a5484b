"""Second-order point-robot integration and the fourth-order reference filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm


class SimulationFault(Exception):
    """Non-finite force or state encountered during integration."""


@dataclass(frozen=True)
class BodyParams:
    mass: float = 1.0
    damping: float = 4.0
    f_max: float = 10.0

    def __post_init__(self):
        if self.mass <= 0 or self.damping <= 0 or self.f_max <= 0:
            raise ValueError("mass, damping, f_max must be positive")


def saturate(f, f_max: float):
    """Norm-saturate a force vector (or batch of row vectors)."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        n = np.linalg.norm(f)
        return f if n <= f_max else f * (f_max / n)
    n = np.linalg.norm(f, axis=1, keepdims=True)
    scale = np.where(n > f_max, f_max / np.where(n == 0, 1.0, n), 1.0)
    return f * scale


def integrate_step(q, v, f_travel, f_lambda, bp: BodyParams, dt: float):
    """Semi-implicit Euler step of m v' = sat(f_travel) + f_lambda - b v.

    Damping is treated implicitly for unconditional stability; position is
    advanced with the updated velocity.  Works on single vectors or (N, 3)
    batches.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = saturate(f_travel, bp.f_max) + np.asarray(f_lambda, dtype=float)
    if not np.all(np.isfinite(f)):
        raise SimulationFault("non-finite force input")
    v_new = (np.asarray(v, dtype=float) + dt * f / bp.mass) / (1.0 + dt * bp.damping / bp.mass)
    q_new = np.asarray(q, dtype=float) + dt * v_new
    return q_new, v_new


PAPER_FILTER_GAINS = (44.0, 707.0, 5090.0, 13692.0)


class ReferenceFilter:
    """Fourth-order linear tracker producing a C4 reference from q samples.

    State holds position through jerk per axis; each step applies the exact
    zero-order-hold discretization of the linear system for the given dt.
    """

    def __init__(self, gains=PAPER_FILTER_GAINS, initial_position=(0.0, 0.0, 0.0)):
        k1, k2, k3, k4 = gains
        self.gains = (k1, k2, k3, k4)
        A = np.array(
            [
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [-k4, -k3, -k2, -k1],
            ]
        )
        poles = np.linalg.eigvals(A)
        if np.any(poles.real >= 0):
            raise ValueError("filter gains are not Hurwitz")
        self._A = A
        self._B = np.array([0.0, 0.0, 0.0, k4])
        self.state = np.zeros((4, 3))
        self.state[0] = np.asarray(initial_position, dtype=float)
        self._cache_dt = None
        self._Ad = None
        self._Bd = None

    def _discretize(self, dt: float):
        if dt != self._cache_dt:
            self._Ad = expm(self._A * dt)
            self._Bd = np.linalg.solve(self._A, (self._Ad - np.eye(4))) @ self._B
            self._cache_dt = dt
        return self._Ad, self._Bd

    def step(self, q_cmd, dt: float):
        """Advance one step toward q_cmd; returns (q_f, qd_f, qdd_f)."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        Ad, Bd = self._discretize(dt)
        cmd = np.asarray(q_cmd, dtype=float)
        self.state = Ad @ self.state + np.outer(Bd, cmd)
        return self.state[0].copy(), self.state[1].copy(), self.state[2].copy()


def filter_step(rf: ReferenceFilter, q_cmd, dt: float):
    return rf.step(q_cmd, dt)
