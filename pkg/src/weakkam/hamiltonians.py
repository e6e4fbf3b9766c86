"""Hamiltonian evaluator bundles: integrable, pendulum and coupled-swing models.

Every model evaluates ``H(x, y, phi)`` together with its first derivatives in
``x`` and ``y`` and the second derivative in ``y``; all models here have a
quadratic kinetic term ``|y|^2 / 2``, so the y-Hessian is the identity and the
uniform-convexity constant is 1.  The Legendre transform (``lagrangian``) is
closed-form for those models and falls back to a damped Newton ascent for
anything else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "TrigPoly",
    "SwingParams",
    "HamEval",
    "HamiltonianModel",
    "make_integrable",
    "make_pendulum",
    "make_swing",
    "lagrangian",
]


@dataclass(frozen=True)
class TrigPoly:
    """Finite Fourier series c0 + sum_l a_l cos(k_l . phi) + b_l sin(k_l . phi).

    ``modes`` is a tuple of (kvec, cos_coef, sin_coef) with integer kvec of
    length m, so values are exact at any phi and 2*pi periodic per component.
    """

    const: float = 0.0
    modes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "const", float(self.const))
        norm = tuple(
            (tuple(int(k) for k in kvec), float(a), float(b)) for kvec, a, b in self.modes
        )
        object.__setattr__(self, "modes", norm)
        if not np.isfinite(self.const) or any(
            not (np.isfinite(a) and np.isfinite(b)) for _, a, b in norm
        ):
            raise ValueError("trig polynomial coefficients must be finite")

    def __call__(self, phi: np.ndarray) -> np.ndarray:
        """Evaluate at phi of shape (m, ...); returns shape (...)."""
        phi = np.asarray(phi, dtype=float)
        out = np.full(phi.shape[1:], self.const)
        for kvec, a, b in self.modes:
            arg = np.tensordot(np.asarray(kvec, dtype=float), phi, axes=(0, 0))
            out = out + a * np.cos(arg) + b * np.sin(arg)
        return out

    def bound(self) -> float:
        """Upper bound for |value| over the torus."""
        return abs(self.const) + sum(abs(a) + abs(b) for _, a, b in self.modes)

    def is_zero(self) -> bool:
        return self.const == 0.0 and all(a == 0.0 and b == 0.0 for _, a, b in self.modes)

    def to_dict(self) -> dict:
        return {"const": self.const, "modes": [[list(k), a, b] for k, a, b in self.modes]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrigPoly":
        return cls(d.get("const", 0.0), tuple((tuple(k), a, b) for k, a, b in d.get("modes", [])))


@dataclass(frozen=True)
class SwingParams:
    """Parameters of the coupled swing model.

    alpha: mechanical power input per rotor (nonnegative); lam: coupling
    wavenumbers; beta: n x n table of TrigPoly coefficient functions of the
    fiber angle; omega: rationally independent drive frequencies (length m).
    """

    alpha: np.ndarray
    beta: tuple            # n x n nested tuple of TrigPoly
    lam: np.ndarray
    omega: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float)) if np.size(self.omega) else np.zeros(0)
        n = alpha.size
        beta = tuple(tuple(row) for row in self.beta)
        if lam.size != n or len(beta) != n or any(len(row) != n for row in beta):
            raise ValueError("alpha, lam and beta must agree on the dimension n")
        if np.any(alpha < 0):
            raise ValueError("alpha entries must be nonnegative")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(lam)) and np.all(np.isfinite(omega))):
            raise ValueError("swing parameters must be finite")
        for row in beta:
            for b in row:
                if not isinstance(b, TrigPoly):
                    raise TypeError("beta entries must be TrigPoly")
                if any(len(kvec) != omega.size for kvec, _, _ in b.modes):
                    raise ValueError(
                        "beta mode wave-vectors must have length m = len(omega)")
        for arr in (alpha, lam, omega):
            arr.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "omega", omega)

    @property
    def n(self) -> int:
        return self.alpha.size

    @property
    def m(self) -> int:
        return self.omega.size

    @property
    def tilted(self) -> bool:
        """True when alpha != 0; the torus Hamiltonian is then multivalued."""
        return bool(np.any(self.alpha != 0.0))


class HamEval(NamedTuple):
    h: np.ndarray      # (...,)
    dx: np.ndarray     # (n, ...)
    dy: np.ndarray     # (n, ...)
    dyy: np.ndarray    # (n, n, ...)


def _identity_dyy(n: int, batch_shape: tuple) -> np.ndarray:
    eye = np.eye(n).reshape((n, n) + (1,) * len(batch_shape))
    return np.broadcast_to(eye, (n, n) + batch_shape)


class HamiltonianModel:
    """Base evaluator; concrete models fill in ``evaluate``.

    Evaluators are immutable and pure: concurrent use is safe.  ``x`` and
    ``y`` must have shape (n, ...) and ``phi`` shape (m, ...); all batch
    shapes must agree.
    """

    n: int
    m: int
    gamma: float
    mechanical: bool = False   # H == |y|^2/2 + potential(x, phi)
    descriptor: dict

    def evaluate(self, x: np.ndarray, y: np.ndarray, phi: np.ndarray) -> HamEval:
        raise NotImplementedError

    def potential(self, x: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """H(x, 0, phi); for mechanical models this is the potential energy."""
        y0 = np.zeros_like(np.asarray(x, dtype=float))
        return self.evaluate(x, y0, phi).h

    def x_periodic(self) -> bool:
        """Whether H is 2*pi periodic in every spatial component."""
        return True


class IntegrableModel(HamiltonianModel):
    """H = |y|^2 / 2: no spatial forces, identity y-Hessian."""

    mechanical = True

    def __init__(self, n: int, m: int = 0):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n, self.m = int(n), int(m)
        self.gamma = 1.0
        self.descriptor = {"name": "integrable", "n": self.n, "m": self.m}

    def evaluate(self, x, y, phi) -> HamEval:
        y = np.asarray(y, dtype=float)
        h = 0.5 * np.einsum("i...,i...->...", y, y)
        return HamEval(h, np.zeros_like(y), y, _identity_dyy(self.n, y.shape[1:]))


class PendulumModel(HamiltonianModel):
    """H = y^2/2 + a (1 - cos x): the canonical one-rotor verification model."""

    mechanical = True

    def __init__(self, a: float):
        if a <= 0:
            raise ValueError("pendulum amplitude must be positive")
        self.a = float(a)
        self.n, self.m = 1, 0
        self.gamma = 1.0
        self.descriptor = {"name": "pendulum", "a": self.a}

    def evaluate(self, x, y, phi) -> HamEval:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        h = 0.5 * y[0] ** 2 + self.a * (1.0 - np.cos(x[0]))
        dx = self.a * np.sin(x)
        return HamEval(h, dx, y.astype(float), _identity_dyy(1, y.shape[1:]))


class SwingModel(HamiltonianModel):
    """H = |y|^2/2 - <alpha, x> + sum_ij beta_ij(phi) (1 - cos(lam_i x_i + lam_j x_j)).

    The double sum runs over both (i, j) and (j, i); the spatial force picks
    up both occurrences of x_i, giving
    dH/dx_i = -alpha_i + lam_i * sum_j (beta_ij + beta_ji)(phi) sin(lam_i x_i + lam_j x_j).
    """

    mechanical = True

    def __init__(self, params: SwingParams):
        self.params = params
        self.n, self.m = params.n, params.m
        self.gamma = 1.0
        self.descriptor = {
            "name": "swing",
            "n": self.n,
            "m": self.m,
            "alpha": params.alpha.tolist(),
            "lam": params.lam.tolist(),
            "omega": params.omega.tolist(),
            "beta": [[b.to_dict() for b in row] for row in params.beta],
        }

    @property
    def tilted(self) -> bool:
        return self.params.tilted

    def x_periodic(self, tol: float = 1e-12) -> bool:
        """Check 2*pi periodicity structurally from the coupling wavenumbers.

        The (i, j) term needs lam_i and lam_j integral when i != j; a diagonal
        term only needs 2*lam_i integral (half-integers allowed).  Terms with
        identically zero beta are ignored.  A tilted model is never periodic.
        """
        if self.tilted:
            return False
        lam = self.params.lam
        for i in range(self.n):
            for j in range(self.n):
                if self.params.beta[i][j].is_zero():
                    continue
                if i == j:
                    if abs(2.0 * lam[i] - round(2.0 * lam[i])) > tol:
                        return False
                else:
                    if abs(lam[i] - round(lam[i])) > tol or abs(lam[j] - round(lam[j])) > tol:
                        return False
        return True

    def evaluate(self, x, y, phi) -> HamEval:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        p = self.params
        batch = x.shape[1:]
        h = 0.5 * np.einsum("i...,i...->...", y, y)
        if p.tilted:
            h = h - np.tensordot(p.alpha, x, axes=(0, 0))
        dx = np.zeros((self.n,) + batch)
        dx -= p.alpha.reshape((self.n,) + (1,) * len(batch))
        for i in range(self.n):
            for j in range(self.n):
                bij = p.beta[i][j]
                if bij.is_zero():
                    continue
                bv = bij(phi)
                arg = p.lam[i] * x[i] + p.lam[j] * x[j]
                h = h + bv * (1.0 - np.cos(arg))
                s = bv * np.sin(arg)
                dx[i] += p.lam[i] * s
                dx[j] += p.lam[j] * s
        return HamEval(h, dx, y.astype(float), _identity_dyy(self.n, batch))


def make_integrable(n: int, m: int = 0) -> HamiltonianModel:
    return IntegrableModel(n, m)


def make_pendulum(a: float) -> HamiltonianModel:
    return PendulumModel(a)


def make_swing(params: SwingParams) -> HamiltonianModel:
    return SwingModel(params)


def pendulum_as_swing(a: float) -> HamiltonianModel:
    """The swing-model realization of the pendulum: beta11 = a, lam = 1/2."""
    return make_swing(SwingParams(alpha=[0.0], beta=((TrigPoly(a),),), lam=[0.5]))


def lagrangian(model: HamiltonianModel, x, vel, phi=None, method: str = "auto") -> float:
    """Legendre transform L(x, vel, phi) = sup_y (vel . y - H(x, y, phi)).

    Mechanical models admit the closed form |vel|^2/2 - H(x, 0, phi); otherwise
    a damped Newton ascent on the strictly concave inner problem is used
    (method="newton" forces that path).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(model.n, -1)
    vel = np.atleast_1d(np.asarray(vel, dtype=float)).reshape(model.n, -1)
    if model.m == 0:
        phi = np.zeros((0, x.shape[1]))
    else:
        if phi is None:
            raise ValueError("phi required when the model has fiber angles")
        phi = np.atleast_1d(np.asarray(phi, dtype=float)).reshape(model.m, -1)

    if method == "auto" and model.mechanical:
        v0 = model.evaluate(x, np.zeros_like(vel), phi).h
        out = 0.5 * np.einsum("i...,i...->...", vel, vel) - v0
        return float(out[0]) if out.size == 1 else out
    if method not in ("auto", "newton"):
        raise ValueError(f"unknown method {method!r}")

    if x.shape[1] != 1:
        raise ValueError("Newton path evaluates one point at a time")
    y = vel.copy()
    target = lambda yy: float(np.dot(vel[:, 0], yy[:, 0]) - model.evaluate(x, yy, phi).h[0])
    val = target(y)
    for _ in range(100):
        ev = model.evaluate(x, y, phi)
        g = vel[:, 0] - ev.dy[:, 0]
        if np.linalg.norm(g) <= 1e-12 * (1.0 + np.linalg.norm(vel)):
            return val
        step = np.linalg.solve(ev.dyy[..., 0], g)
        t = 1.0
        while t > 1e-14:
            y_new = y + t * step[:, None]
            v_new = target(y_new)
            if v_new >= val + 0.25 * t * float(np.dot(g, step)):
                y, val = y_new, v_new
                break
            t *= 0.5
        else:
            raise RuntimeError("Legendre transform: line search stalled")
    raise RuntimeError("Legendre transform: Newton did not converge in 100 iterations")
