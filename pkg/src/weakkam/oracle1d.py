"""Ground truth for one-dimensional mechanical Hamiltonians H = y^2/2 + V(x).

For this class the effective Hamiltonian has a classical characterization:
the averaged momentum at energy E is p(E) = (1/2pi) * int sqrt(2(E - V)) dx,
and Hbar(P) is V_max on the flat piece |P| <= p(V_max) and otherwise the
unique energy with p(E) = |P|.  Everything here is quadrature plus root
finding, fully independent of the variational solver it validates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate as _si
from scipy import optimize as _so

from .fields import PERIOD
from .hamiltonians import HamiltonianModel

__all__ = [
    "Potential1D",
    "momentum_of_energy",
    "effective_hamiltonian_1d",
    "potential_from_model",
    "oracle_table",
]


@dataclass(frozen=True)
class Potential1D:
    v: callable
    v_max: float
    v_min: float
    x_max: tuple      # locations of the maximum (quadrature split points)

    @classmethod
    def from_callable(cls, V, samples: int = 4096) -> "Potential1D":
        if abs(float(V(0.0)) - float(V(PERIOD))) > 1e-12:
            raise ValueError("potential is not 2*pi periodic")
        xs = np.linspace(0.0, PERIOD, samples, endpoint=False)
        vals = np.array([float(V(x)) for x in xs])
        if not np.all(np.isfinite(vals)):
            raise ValueError("potential non-finite on the sampling grid")
        v_max, x_stars = _refine_extrema(V, xs, vals, sign=+1.0)
        v_min, _ = _refine_extrema(V, xs, vals, sign=-1.0)
        return cls(v=V, v_max=v_max, v_min=v_min, x_max=tuple(x_stars))


def _refine_extrema(V, xs, vals, sign):
    """Locate extrema by dense sampling plus bounded local refinement."""
    f = lambda x: -sign * float(V(x))
    target = sign * vals
    best = float(np.max(target))
    h = xs[1] - xs[0]
    locations, value = [], -np.inf
    for i in np.flatnonzero(target >= best - 1e-9):
        res = _so.minimize_scalar(f, bounds=(xs[i] - h, xs[i] + h), method="bounded",
                                  options={"xatol": 1e-12})
        value = max(value, -res.fun)
        locations.append(float(res.x) % PERIOD)
    # deduplicate refined locations that collapsed to the same point
    locations = sorted(locations)
    kept = []
    for x in locations:
        if not kept or x - kept[-1] > 10 * h:
            kept.append(x)
    return sign * value, kept


def momentum_of_energy(pot: Potential1D, E: float) -> float:
    """(1/2pi) * int_0^2pi sqrt(2 (E - V(x))) dx; strictly increasing in E.

    The integrand has a square-root singularity when E = V_max; adaptive
    quadrature with the maximum locations as split points keeps the absolute
    error at the 1e-10 target.
    """
    if E < pot.v_max - 1e-12:
        raise ValueError(f"energy {E!r} below the potential maximum {pot.v_max!r}")
    f = lambda x: np.sqrt(max(2.0 * (E - float(pot.v(x))), 0.0))
    points = [x for x in pot.x_max if 0.0 < x < PERIOD] or None
    val, _ = _si.quad(f, 0.0, PERIOD, points=points, limit=400,
                      epsabs=1e-12, epsrel=1e-12)
    return val / PERIOD


def effective_hamiltonian_1d(pot: Potential1D, P: float) -> float:
    """Hbar(P): flat equal to V_max for |P| <= p(V_max), else p(E) = |P| root.

    Even in P and convex; the root is bracketed and solved to 1e-12.
    """
    P = abs(float(P))
    p_star = momentum_of_energy(pot, pot.v_max)
    if P <= p_star:
        return pot.v_max
    lo = pot.v_max
    hi = pot.v_max + max(1.0, P)
    cap = pot.v_max + 10.0 * (1.0 + P * P)
    while momentum_of_energy(pot, hi) < P:
        hi = pot.v_max + 2.0 * (hi - pot.v_max)
        if hi > cap:
            raise ValueError("root bracket not found; potential looks pathological")
    return float(_so.brentq(lambda E: momentum_of_energy(pot, E) - P, lo, hi,
                            xtol=1e-12, rtol=8.9e-16))


def potential_from_model(model: HamiltonianModel, samples: int = 64) -> Potential1D:
    """Extract V from a 1-D autonomous mechanical model; refuse cross terms."""
    if model.n != 1 or model.m != 0:
        raise ValueError("oracle supports n=1, m=0 models only")
    rng = np.random.default_rng(12345)
    xs = rng.uniform(0.0, PERIOD, samples)
    ys = rng.normal(0.0, 2.0, samples)
    x = xs[None, :]
    y = ys[None, :]
    phi = np.zeros((0, samples))
    ev = model.evaluate(x, y, phi)
    if np.max(np.abs(ev.dyy - 1.0)) > 1e-10:
        raise ValueError("kinetic cross terms detected; oracle refuses this model")
    v0 = model.evaluate(x, np.zeros_like(y), phi).h
    if np.max(np.abs(ev.h - 0.5 * ys**2 - v0)) > 1e-10:
        raise ValueError("Hamiltonian is not kinetic-plus-potential; oracle refuses")

    def V(xx: float) -> float:
        return float(model.evaluate(np.array([[xx]]), np.zeros((1, 1)),
                                    np.zeros((0, 1))).h[0])

    return Potential1D.from_callable(V)


def oracle_table(pot: Potential1D, P_values) -> np.ndarray:
    """Rows (P, Hbar(P)) for the CLI table and for dual-transform checks."""
    P_values = np.asarray(P_values, dtype=float)
    return np.column_stack([P_values,
                            [effective_hamiltonian_1d(pot, p) for p in P_values]])
