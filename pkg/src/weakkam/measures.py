"""Gibbs densities, rotation vectors and minimal-measure diagnostics.

The density sigma = exp(k (H(x, D_x u, phi) - Hbar_k)) is a probability
density w.r.t. the normalized grid measure.  Lifted averages (rotation
vector, kinetic tails) never materialize a measure on momentum space: every
integral reduces to a sigma-weighted grid integral through the velocity field
beta = D_y H(x, D_x u, phi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import CellProblem, CellSolution, _el_residual, _evaluate
from .fields import ScalarField

__all__ = [
    "GibbsMeasure",
    "MeasureStats",
    "EffectiveLagrangian",
    "gibbs_measure",
    "rotation_vector",
    "closedness_residual",
    "energy_statistics",
    "tail_mass",
    "effective_lagrangian",
    "measure_stats",
]


@dataclass(frozen=True)
class GibbsMeasure:
    sigma: ScalarField          # nonnegative, integrates to 1
    k: float
    Hbar_k: float
    renorm_factor: float        # raw mass before renormalization; ~1

    def __post_init__(self):
        if np.any(self.sigma.values < 0):
            raise ValueError("density must be nonnegative")


@dataclass(frozen=True)
class MeasureStats:
    Q: np.ndarray
    energy_mean: float
    energy_var: float
    closedness: float
    tail_mass: float
    tail_threshold: float
    Lbar_Q: float | None = None
    duality_gap: float | None = None

    def __post_init__(self):
        if self.energy_var < 0:
            raise ValueError("variance must be nonnegative")
        if not 0.0 <= self.tail_mass <= 1.0:
            raise ValueError("tail mass must lie in [0, 1]")


@dataclass(frozen=True)
class EffectiveLagrangian:
    value: float
    P_argmax: np.ndarray
    at_boundary: bool           # supremum attained at the table edge: unreliable


def _solution_fields(solution: CellSolution, problem: CellProblem):
    value, _, ev, _ = _evaluate(problem, solution.v.values)
    return value, ev


def gibbs_measure(solution: CellSolution, problem: CellProblem) -> GibbsMeasure:
    """Normalized density exp(k (H - Hbar_k)); underflow clamps to zero.

    The raw mass must come out within 1e-4 of 1 (it is 1 up to round-off when
    solution and problem are consistent); the residual factor is divided out
    so the returned density integrates to 1 exactly.
    """
    if not solution.converged:
        raise ValueError("gibbs_measure needs a converged solution")
    _, ev = _solution_fields(solution, problem)
    with np.errstate(under="ignore"):
        raw = np.exp(problem.k * (ev.h - solution.Hbar_k))
    mass = float(np.mean(raw))
    if not 1.0 - 1e-4 <= mass <= 1.0 + 1e-4:
        raise ValueError(
            f"inconsistent (solution, problem) pair: raw gibbs mass {mass!r}")
    sigma = ScalarField(problem.grid, raw / mass)
    return GibbsMeasure(sigma=sigma, k=problem.k, Hbar_k=solution.Hbar_k,
                        renorm_factor=mass)


def rotation_vector(measure: GibbsMeasure, solution: CellSolution,
                    problem: CellProblem) -> np.ndarray:
    """Q_i = integrate(sigma * D_yH_i(x, P + D_xv, phi))."""
    _, ev = _solution_fields(solution, problem)
    return np.array([
        float(np.mean(measure.sigma.values * ev.dy[i])) for i in range(problem.grid.n)
    ])


def closedness_residual(measure: GibbsMeasure, solution: CellSolution,
                        problem: CellProblem, test_modes: int = 8) -> float:
    """Max over trig test fields w of |integrate(sigma * D_yH . grad_x w)|.

    At a converged solution this equals the solver's weak stationarity
    residual by construction.
    """
    _, ev = _solution_fields(solution, problem)
    return _el_residual(problem, measure.sigma.values, ev.dy, test_modes)


def energy_statistics(measure: GibbsMeasure, solution: CellSolution,
                      problem: CellProblem) -> tuple[float, float]:
    """Mean and variance of H(x, D_x u, phi) under sigma."""
    _, ev = _solution_fields(solution, problem)
    s = measure.sigma.values
    mean = float(np.mean(s * ev.h))
    var = float(np.mean(s * (ev.h - mean) ** 2))
    return mean, var


def tail_mass(measure: GibbsMeasure, solution: CellSolution,
              problem: CellProblem, M: float) -> float:
    """sigma-mass of the region where the velocity |D_yH| is at least M.

    M = 0 returns 1 exactly (speeds are nonnegative)."""
    if M < 0:
        raise ValueError("threshold M must be nonnegative")
    _, ev = _solution_fields(solution, problem)
    speed = np.sqrt(np.einsum("i...,i...->...", ev.dy, ev.dy))
    return float(np.mean(measure.sigma.values * (speed >= M)))


def effective_lagrangian(hbar_table, Q) -> EffectiveLagrangian:
    """Dual transform of a sampled effective Hamiltonian:
    max over table rows of (P . Q - Hbar(P)).

    The table must sample a neighborhood of the supremum; attainment at the
    table edge is flagged as unreliable.  Sampling error for a convex table
    with spacing dP is bounded by max|Hbar''| * dP^2 / 2.
    """
    rows = [(np.atleast_1d(np.asarray(p, dtype=float)), float(h)) for p, h in hbar_table]
    if not rows:
        raise ValueError("empty table")
    Q = np.atleast_1d(np.asarray(Q, dtype=float))
    values = [float(np.dot(p, Q)) - h for p, h in rows]
    best = int(np.argmax(values))
    P_star = rows[best][0]
    lo = np.min([p for p, _ in rows], axis=0)
    hi = np.max([p for p, _ in rows], axis=0)
    at_boundary = bool(np.any(np.isclose(P_star, lo)) or np.any(np.isclose(P_star, hi)))
    return EffectiveLagrangian(values[best], P_star, at_boundary)


def default_speed_threshold(solution: CellSolution, problem: CellProblem) -> float:
    """1 + the classical speed ceiling at energy Hbar_k.

    For kinetic-plus-potential models that ceiling is sqrt(2 (Hbar_k -
    min V)); otherwise fall back to the largest velocity on the grid.
    """
    if problem.model.mechanical:
        v_min = float(np.min(problem.ham.potential(problem.x_mesh, problem.phi_mesh)))
        return 1.0 + float(np.sqrt(max(2.0 * (solution.Hbar_k - v_min), 0.0)))
    _, ev = _solution_fields(solution, problem)
    speed = np.sqrt(np.einsum("i...,i...->...", ev.dy, ev.dy))
    return 1.0 + float(speed.max())


def measure_stats(measure: GibbsMeasure, solution: CellSolution,
                  problem: CellProblem, speed_threshold: float,
                  hbar_table=None, test_modes: int = 8) -> MeasureStats:
    """Assemble the full diagnostics row for one converged solve."""
    Q = rotation_vector(measure, solution, problem)
    mean, var = energy_statistics(measure, solution, problem)
    closed = closedness_residual(measure, solution, problem, test_modes)
    tail = tail_mass(measure, solution, problem, speed_threshold)
    lbar = gap = None
    if hbar_table is not None:
        eff = effective_lagrangian(hbar_table, Q)
        lbar = eff.value
        gap = lbar + solution.Hbar_k - float(np.dot(solution.P, Q))
    return MeasureStats(Q=Q, energy_mean=mean, energy_var=var, closedness=closed,
                        tail_mass=tail, tail_threshold=float(speed_threshold),
                        Lbar_Q=lbar, duality_gap=gap)
