"""Direct integration of the swing equation and rotation-number extraction.

The ODE is xddot = alpha + f(x, t) with f = D_x V and
V(x, t) = -sum_ij beta_ij(omega t) (1 - cos(lam_i x_i + lam_j x_j)).
Positions are kept unwrapped (covering space) so rotation numbers are
well-defined; reduction mod 2*pi happens only at output time behind a flag.
This is the one place where alpha != 0 is allowed: the ODE is well-posed even
though the corresponding torus Hamiltonian is multivalued.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import PERIOD
from .hamiltonians import SwingParams
from .oracle1d import Potential1D

__all__ = [
    "SwingTrajectory",
    "NonFiniteStateError",
    "integrate_swing",
    "rotation_number",
    "compare_with_homogenization",
]


class NonFiniteStateError(RuntimeError):
    """Integration produced a non-finite state; carries the last valid index."""

    def __init__(self, index: int):
        super().__init__(f"non-finite state; last valid sample index {index}")
        self.index = index


@dataclass(frozen=True)
class SwingTrajectory:
    times: np.ndarray        # (S,)
    x: np.ndarray            # (S, n) unwrapped positions
    y: np.ndarray            # (S, n) velocities
    energy: np.ndarray | None   # (S,) total energy; autonomous case only
    rotation_estimate: np.ndarray  # (n,) = (x(T) - x(0)) / T

    def wrapped_x(self) -> np.ndarray:
        return np.mod(self.x, PERIOD)


def _acceleration(p: SwingParams, x: np.ndarray, t: float) -> np.ndarray:
    acc = p.alpha.copy()
    phi = (p.omega * t).reshape(p.m, 1) if p.m else np.zeros((0, 1))
    for i in range(p.n):
        for j in range(p.n):
            bij = p.beta[i][j]
            if bij.is_zero():
                continue
            s = float(bij(phi)[0]) * np.sin(p.lam[i] * x[i] + p.lam[j] * x[j])
            acc[i] -= p.lam[i] * s
            acc[j] -= p.lam[j] * s
    return acc


def _energy(p: SwingParams, x: np.ndarray, y: np.ndarray) -> float:
    """Total energy on the covering space; meaningful when autonomous (m=0)."""
    h = 0.5 * float(np.dot(y, y)) - float(np.dot(p.alpha, x))
    phi = np.zeros((0, 1))
    for i in range(p.n):
        for j in range(p.n):
            bij = p.beta[i][j]
            if not bij.is_zero():
                h += float(bij(phi)[0]) * (
                    1.0 - np.cos(p.lam[i] * x[i] + p.lam[j] * x[j]))
    return h


def integrate_swing(p: SwingParams, x0, y0, T: float, dt: float,
                    record_every: int = 1) -> SwingTrajectory:
    """Kick-drift-kick integration with the force clock held at midstep.

    Both half-kicks of a step evaluate beta at t + dt/2, which keeps the map
    symmetric (hence 2nd order) in the quasi-periodic case and reduces to
    classic velocity Verlet when autonomous.  Deterministic; raises
    NonFiniteStateError if the state blows up.
    """
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    if x.shape != (p.n,) or y.shape != (p.n,):
        raise ValueError(f"x0 and y0 must have shape ({p.n},)")

    n_steps = int(round(T / dt))
    autonomous = p.m == 0
    times, xs, ys, es = [0.0], [x.copy()], [y.copy()], []
    if autonomous:
        es.append(_energy(p, x, y))
    for step in range(n_steps):
        t_half = (step + 0.5) * dt
        y = y + 0.5 * dt * _acceleration(p, x, t_half)
        x = x + dt * y
        y = y + 0.5 * dt * _acceleration(p, x, t_half)
        if (step + 1) % record_every == 0:
            e = _energy(p, x, y) if autonomous else 0.0
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))
                    and np.isfinite(e)):
                raise NonFiniteStateError(len(times) - 1)
            times.append((step + 1) * dt)
            xs.append(x.copy())
            ys.append(y.copy())
            if autonomous:
                es.append(e)

    times = np.asarray(times)
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    rotation = (xs[-1] - xs[0]) / times[-1]
    return SwingTrajectory(times=times, x=xs, y=ys,
                           energy=np.asarray(es) if autonomous else None,
                           rotation_estimate=rotation)


def rotation_number(traj: SwingTrajectory, burn_in: float = 0.0) -> np.ndarray:
    """Least-squares slope of unwrapped x against t after the burn-in window."""
    if not 0.0 <= burn_in <= 0.9:
        raise ValueError("burn_in must lie in [0, 0.9]")
    start = int(np.ceil(burn_in * (len(traj.times) - 1)))
    t = traj.times[start:]
    if t.size < 10:
        raise ValueError("post-burn-in window shorter than 10 samples")
    return np.array([np.polyfit(t, traj.x[start:, i], 1)[0]
                     for i in range(traj.x.shape[1])])


def _autonomous_potential(p: SwingParams) -> Potential1D:
    if p.n != 1 or p.m != 0 or p.tilted:
        raise ValueError("homogenization comparison needs n=1, m=0, alpha=0")

    def V(x: float) -> float:
        total = 0.0
        for i in range(p.n):
            for j in range(p.n):
                b = p.beta[i][j]
                if not b.is_zero():
                    total += float(b(np.zeros((0, 1)))[0]) * (
                        1.0 - np.cos(p.lam[i] * x + p.lam[j] * x))
        return total

    return Potential1D.from_callable(V)


def compare_with_homogenization(p: SwingParams, hbar_table, samples: int,
                                T: float = 200.0, dt: float = 1e-3,
                                burn_in: float = 0.1) -> list[dict]:
    """Rotation of trajectories vs the slope of the effective Hamiltonian.

    For each sampled momentum P the launched orbit sits on the energy level
    Hbar(P): rotating (above the potential ceiling) when the table slope is
    nonzero there, a trapped librating orbit inside the flat piece.  Each row
    reports (P, rotation measured, centered-difference slope of the table,
    absolute gap).
    """
    table = np.asarray(sorted((float(pp), float(h)) for pp, h in hbar_table))
    if table.shape[0] < 3:
        raise ValueError("table needs at least 3 rows for centered differences")
    pot = _autonomous_potential(p)
    x0 = np.zeros(1)
    v_x0 = float(pot.v(0.0))

    idx = np.unique(np.linspace(1, table.shape[0] - 2, samples).round().astype(int))
    rows = []
    for i in idx:
        P, E = table[i]
        predicted = (table[i + 1, 1] - table[i - 1, 1]) / (table[i + 1, 0] - table[i - 1, 0])
        if E > pot.v_max + 1e-9:
            y0 = np.array([np.sign(P) * np.sqrt(2.0 * (E - v_x0))])
        else:
            # flat piece: any librating orbit has rotation 0, matching slope 0
            e_trap = 0.5 * (pot.v_min + pot.v_max)
            y0 = np.array([np.sqrt(max(2.0 * (e_trap - v_x0), 0.0))])
        traj = integrate_swing(p, x0, y0, T, dt, record_every=10)
        measured = float(rotation_number(traj, burn_in)[0])
        rows.append({
            "P": float(P),
            "rotation_measured": measured,
            "rotation_predicted": float(predicted),
            "gap": abs(measured - float(predicted)),
        })
    return rows
