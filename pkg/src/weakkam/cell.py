"""Variational solver for the corrector problem on the torus.

Minimizes F_k[v] = (1/k) log mean(exp(k * H(x, P + D_x v, phi))) over periodic
mean-zero v.  F_k is convex (strictly, in D_x v), so the mean-zero minimizer
is unique; its stationarity condition is the divergence equation
div_x(sigma * D_y H) = 0 with sigma the normalized Gibbs weight.  Working
with (1/k) log of the exponential functional keeps every quantity bounded:
no k cap is needed.

Two optimizers share one contract: a limited-memory quasi-Newton descent and
a damped Newton iteration whose linear systems use the symmetric elliptic
operator w -> -div_x(sigma (D2_yy + k D_yH D_yH^T) D_x w), solved by
preconditioned conjugate gradients.  The default ("auto") runs quasi-Newton
steps while they pay off and escalates to Newton on the stiff stages where
the Gibbs weight spans many orders of magnitude.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .fields import (
    ScalarField,
    TorusGrid,
    div_values,
    grad_values,
    log_mean_exp_values,
)
from .hamiltonians import HamEval, HamiltonianModel

__all__ = [
    "SolverOptions",
    "CellProblem",
    "CellSolution",
    "ContinuationError",
    "HomotopyModel",
    "objective",
    "solve_cell",
    "continuation_solve",
    "fiber_decomposed_solve",
    "aronsson_residual",
    "fiber_jump",
]


@dataclass(frozen=True)
class SolverOptions:
    gtol: float = 1e-8          # grid norm of the objective gradient
    rtol: float = 1e-6          # weak stationarity residual over trig test fields
    max_iter: int = 2000
    method: str = "auto"        # "auto" | "lbfgs" | "newton"
    memory: int = 10
    test_modes: int = 8
    cg_max_iter: int = 200
    auto_switch: int = 300      # "auto": quasi-Newton budget before Newton takes over

    def __post_init__(self):
        if self.gtol <= 0 or self.rtol <= 0 or self.max_iter < 1:
            raise ValueError("tolerances must be positive and max_iter >= 1")
        if self.method not in ("auto", "lbfgs", "newton"):
            raise ValueError(f"unknown method {self.method!r}")


class HomotopyModel(HamiltonianModel):
    """H_tau = tau * H + (1 - tau) * |y|^2 / 2, the deformation toward the
    integrable endpoint used for continuation."""

    def __init__(self, base: HamiltonianModel, tau: float):
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        self.base = base
        self.tau = float(tau)
        self.n, self.m = base.n, base.m
        self.gamma = self.tau * base.gamma + (1.0 - self.tau)
        self.mechanical = base.mechanical
        self.descriptor = {"name": "homotopy", "tau": self.tau, "base": base.descriptor}

    def evaluate(self, x, y, phi) -> HamEval:
        ev = self.base.evaluate(x, y, phi)
        t, s = self.tau, 1.0 - self.tau
        y = np.asarray(y, dtype=float)
        kin = 0.5 * np.einsum("i...,i...->...", y, y)
        eye = np.eye(self.n).reshape((self.n, self.n) + (1,) * (y.ndim - 1))
        return HamEval(t * ev.h + s * kin, t * ev.dx, t * ev.dy + s * y,
                       t * ev.dyy + s * eye)

    def x_periodic(self) -> bool:
        return self.base.x_periodic()


class CellProblem:
    """One corrector problem: (model, P, k, grid, tau)."""

    def __init__(self, model: HamiltonianModel, P, k: float, grid: TorusGrid,
                 tau: float = 1.0):
        P = np.atleast_1d(np.asarray(P, dtype=float))
        if k <= 0:
            raise ValueError("k must be positive")
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if P.shape != (model.n,):
            raise ValueError(f"P must have shape ({model.n},)")
        if grid.n != model.n or grid.m != model.m:
            raise ValueError("grid dimensions must match the model")
        if getattr(model, "tilted", False):
            raise ValueError(
                "tilted model: simulator-only (alpha != 0 makes the torus "
                "Hamiltonian multivalued; the exponential functional is undefined)"
            )
        if not model.x_periodic():
            raise ValueError("model is not 2*pi periodic in x; grid sampling is invalid")
        self.model = model
        self.P = P
        self.k = float(k)
        self.grid = grid
        self.tau = float(tau)
        self.ham = model if tau == 1.0 else HomotopyModel(model, tau)
        self.x_mesh, self.phi_mesh = grid.meshes()
        self._P_bcast = P.reshape((model.n,) + (1,) * len(grid.shape))

    def momentum_field(self, v_values: np.ndarray) -> np.ndarray:
        """D_x u = P + D_x v at every node, shape (n, *grid.shape)."""
        return self._P_bcast + grad_values(v_values, self.grid)


@dataclass(frozen=True)
class CellSolution:
    v: ScalarField
    Hbar_k: float
    grad_norm: float
    el_residual: float
    fiber_values: np.ndarray
    iterations: int
    sup_Dxu: float
    converged: bool
    status: str
    P: np.ndarray
    k: float
    tau: float
    objective_history: tuple = field(repr=False, default=())
    warnings: tuple = ()
    wall_time_s: float = 0.0


class ContinuationError(RuntimeError):
    """A stage of the homotopy/k continuation failed to converge.

    Carries the partial list of completed solutions and the failing stage.
    """

    def __init__(self, message: str, partial: list, tau: float, k: float):
        super().__init__(message)
        self.partial = partial
        self.tau = tau
        self.k = k


def _grid_norm(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values * values)))


def _grid_inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(a * b))


def _evaluate(problem: CellProblem, v_values: np.ndarray):
    """Objective value, gradient and the node fields they were built from."""
    y = problem.momentum_field(v_values)
    ev = problem.ham.evaluate(problem.x_mesh, y, problem.phi_mesh)
    if not np.all(np.isfinite(ev.h)):
        raise FloatingPointError("Hamiltonian non-finite on the grid")
    value = log_mean_exp_values(ev.h, problem.k)
    with np.errstate(under="ignore"):
        sigma = np.exp(problem.k * (ev.h - value))
    grad = -div_values(sigma * ev.dy, problem.grid)
    grad -= grad.mean()
    return value, grad, ev, sigma


def objective(problem: CellProblem, v: ScalarField):
    """Value and gradient of F_k at v.  v must be mean zero on problem.grid.

    The gradient is the field -div_x(sigma * D_y H_tau) with sigma the
    normalized Gibbs weight, so inner(gradient, w) is the directional
    derivative of the value along any mean-zero w.
    """
    if v.grid != problem.grid:
        raise ValueError("field lives on a different grid")
    if abs(float(np.mean(v.values))) > 1e-8 * (1.0 + float(np.max(np.abs(v.values)))):
        raise ValueError("v must have zero mean")
    value, grad, _, _ = _evaluate(problem, v.values)
    return value, ScalarField(problem.grid, grad)


def _el_residual(problem: CellProblem, sigma: np.ndarray, dy: np.ndarray,
                 test_modes: int) -> float:
    """Weak stationarity: max_w |mean(sigma * D_yH . grad w)| over trig fields
    w = sin(q x_a), cos(q x_a), q = 1..test_modes, per spatial axis."""
    grid = problem.grid
    modes = min(test_modes, grid.N_x // 2 - 1)
    worst = 0.0
    for a in range(grid.n):
        xa = problem.x_mesh[a]
        for q in range(1, modes + 1):
            for w in (np.sin(q * xa), np.cos(q * xa)):
                gw = grad_values(w, grid)
                r = abs(float(np.mean(sigma * np.einsum("i...,i...->...", dy, gw))))
                worst = max(worst, r)
    return worst


def _fiber_values(problem: CellProblem, h: np.ndarray) -> np.ndarray:
    """Per-fiber free energies (1/k) log mean_x exp(k H), shape = phi grid."""
    grid, k = problem.grid, problem.k
    flat = h.reshape(grid.N_x ** grid.n, -1)
    M = flat.max(axis=0)
    with np.errstate(under="ignore"):
        vals = M + np.log(np.mean(np.exp(k * (flat - M)), axis=0)) / k
    return vals.reshape(grid.shape[grid.n:])


def _finish(problem: CellProblem, v_values: np.ndarray, iterations: int,
            status: str, history: list, opts: SolverOptions,
            t0: float) -> CellSolution:
    grid = problem.grid
    v_values = v_values - v_values.mean()
    value, grad, ev, sigma = _evaluate(problem, v_values)
    hbar = log_mean_exp_values(ev.h, problem.k)   # == value; reported via the field op
    gnorm = _grid_norm(grad)
    el = _el_residual(problem, sigma, ev.dy, opts.test_modes)
    dxu = problem.momentum_field(v_values)
    sup_dxu = float(np.max(np.sqrt(np.einsum("i...,i...->...", dxu, dxu))))
    warnings = []
    max_force = float(np.max(np.abs(ev.dx))) if ev.dx.size else 0.0
    if problem.k * grid.dx * max_force > 50.0:
        warnings.append(
            "gibbs weight may concentrate below grid resolution "
            f"(k*dx*max|D_xH| = {problem.k * grid.dx * max_force:.1f} > 50)"
        )
    converged = status == "converged" and gnorm <= opts.gtol and el <= opts.rtol
    return CellSolution(
        v=ScalarField(grid, v_values),
        Hbar_k=hbar,
        grad_norm=gnorm,
        el_residual=el,
        fiber_values=_fiber_values(problem, ev.h),
        iterations=iterations,
        sup_Dxu=sup_dxu,
        converged=converged,
        status=status,
        P=problem.P.copy(),
        k=problem.k,
        tau=problem.tau,
        objective_history=tuple(history),
        warnings=tuple(warnings),
        wall_time_s=time.perf_counter() - t0,
    )


def _two_loop(g, S, Y, rho):
    q = g.copy()
    alphas = []
    for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
        a = r * _grid_inner(s, q)
        alphas.append(a)
        q -= a * y
    if S:
        q *= _grid_inner(S[-1], Y[-1]) / _grid_inner(Y[-1], Y[-1])
    for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
        b = r * _grid_inner(y, q)
        q += (a - b) * s
    return q


def _spectral_multiplier(grid: TorusGrid, power: float):
    """Apply (1 + |q|^2)^power over the spatial axes (q = 0 stays fixed)."""
    axes = tuple(range(grid.n))
    qs = []
    for a in axes:
        if a == grid.n - 1:
            q = np.arange(grid.N_x // 2 + 1, dtype=float)
        else:
            q = np.fft.fftfreq(grid.N_x) * grid.N_x
        shape = [1] * (grid.n + grid.m)
        shape[a] = -1
        qs.append(q.reshape(shape))
    mult = (1.0 + sum(q * q for q in qs)) ** power

    def apply(r: np.ndarray) -> np.ndarray:
        hat = np.fft.rfftn(r, axes=axes)
        return np.fft.irfftn(hat * mult, s=(grid.N_x,) * grid.n, axes=axes)

    return apply


def _line_search(problem, v, f, g, d, slope, gnorm):
    """Backtracking Armijo with a rounding-floor polish rule.

    Near the optimum the per-step decrease of f drops below double-precision
    resolution while descent directions are still sound; a step is then
    accepted when f does not increase beyond the rounding floor and the true
    gradient norm strictly drops.
    """
    t = 1.0
    floor = 1e-13 * max(1.0, abs(f))
    for _ in range(60):
        v_new = v + t * d
        f_new, g_new, _, _ = _evaluate(problem, v_new)
        if f_new <= f + 1e-4 * t * slope:
            return t, v_new, f_new, g_new
        if f_new <= f + floor and _grid_norm(g_new) < 0.999 * gnorm:
            return t, v_new, f_new, g_new
        t *= 0.5
    return None


def _minimize_lbfgs(problem, v, opts, budget):
    """Limited-memory quasi-Newton in the smoothed variable w = (1-Lap)^(1/2) v.

    The substitution v = K w with K = (1 - Laplacian_x)^(-1/2) bounds the
    Hessian spectrum independently of the grid size, which keeps the
    iteration count flat under refinement; convergence is still measured on
    the true gradient of F_k.
    """
    smooth = _spectral_multiplier(problem.grid, -0.5)
    sharpen = _spectral_multiplier(problem.grid, +0.5)

    w = sharpen(v)
    f, gv, _, _ = _evaluate(problem, smooth(w))
    gw = smooth(gv)
    history = [f]
    S, Y, rho = [], [], []
    for it in range(budget):
        gnorm = _grid_norm(gv)
        if gnorm <= opts.gtol:
            return smooth(w), it, "converged", history
        d = -_two_loop(gw, S, Y, rho)
        slope = _grid_inner(d, gw)
        if slope >= 0:           # stale curvature; fall back to steepest descent
            d, slope = -gw, -_grid_inner(gw, gw)
        if not S:
            d = d * min(1.0, 1.0 / max(_grid_norm(d), 1e-30))
            slope = _grid_inner(d, gw)
        hit = _lbfgs_search(problem, smooth, w, f, d, slope, gnorm)
        if hit is None:
            return smooth(w), it, "line_search", history
        t, w_new, f_new, gv_new, gw_new = hit
        s, yk = t * d, gw_new - gw
        sy = _grid_inner(s, yk)
        if sy > 1e-12 * np.sqrt(_grid_inner(s, s) * _grid_inner(yk, yk)):
            S.append(s), Y.append(yk), rho.append(1.0 / sy)
            if len(S) > opts.memory:
                S.pop(0), Y.pop(0), rho.pop(0)
        w, f, gv, gw = w_new - w_new.mean(), f_new, gv_new, gw_new
        history.append(f)
    return smooth(w), budget, "max_iter", history


def _lbfgs_search(problem, smooth, w, f, d, slope, gnorm):
    t = 1.0
    floor = 1e-13 * max(1.0, abs(f))
    for _ in range(60):
        w_new = w + t * d
        f_new, gv_new, _, _ = _evaluate(problem, smooth(w_new))
        if f_new <= f + 1e-4 * t * slope:
            return t, w_new, f_new, gv_new, smooth(gv_new)
        if f_new <= f + floor and _grid_norm(gv_new) < 0.999 * gnorm:
            return t, w_new, f_new, gv_new, smooth(gv_new)
        t *= 0.5
    return None


def _laplace_preconditioner(grid: TorusGrid):
    """Spectral (1 - Laplacian_x)^-1; smooths CG residuals per fiber."""
    return _spectral_multiplier(grid, -1.0)


def _fd_preconditioner(grid: TorusGrid, coeffs: np.ndarray, shift: np.ndarray):
    """Cyclic finite-difference factorization of -div_x(c grad_x .) + shift.

    Assembles the 2nd-order flux-form stencil with the exact (nonnegative)
    coefficients ``coeffs[a]`` per spatial axis plus a nodewise diagonal
    shift, then LU-factorizes; the result is spectrally close to the Newton
    operator even when the Gibbs weight spans many orders of magnitude.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.linalg import splu

    idx = np.arange(grid.size).reshape(grid.shape)
    h2 = grid.dx ** 2
    rows, cols, vals = [], [], []
    diag = np.zeros(grid.shape)
    for a in range(grid.n):
        c_half = 0.5 * (coeffs[a] + np.roll(coeffs[a], -1, axis=a)) / h2
        up = np.roll(idx, -1, axis=a)
        rows += [idx.ravel(), up.ravel()]
        cols += [up.ravel(), idx.ravel()]
        vals += [-c_half.ravel(), -c_half.ravel()]
        diag += c_half + np.roll(c_half, 1, axis=a)
    # positive floor scaled per fiber: a global floor would swamp the blocks
    # whose Gibbs mass (hence coefficient scale) is many orders smaller
    fiber_max = diag.max(axis=tuple(range(grid.n)), keepdims=True)
    eps = 1e-12 * fiber_max + 1e-40 * float(diag.max()) + 1e-290
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append((diag + shift + np.broadcast_to(eps, grid.shape)).ravel())
    mat = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size)).tocsc()
    lu = splu(mat)

    def solve(r: np.ndarray) -> np.ndarray:
        z = lu.solve(r.ravel()).reshape(grid.shape)
        return z - z.mean()

    return solve


def _minimize_newton(problem, v, opts, budget):
    """Damped Newton on the divergence-form linearization.

    The Levenberg shift lam is scaled by each fiber's own curvature ceiling,
    which tames the near-null directions outside the Gibbs support without
    drowning low-mass fibers; lam relaxes toward 0 as full steps succeed, so
    the tail is plain Newton.
    """
    grid, k = problem.grid, problem.k
    h2 = grid.dx ** 2
    x_axes = tuple(range(grid.n))
    f, g, ev, sigma = _evaluate(problem, v)
    history = [f]
    lam = 1e-3
    for it in range(budget):
        gnorm = _grid_norm(g)
        if gnorm <= opts.gtol:
            return v, it, "converged", history

        dy, dyy = ev.dy, ev.dyy
        coeffs = np.stack([sigma * (dyy[a, a] + k * dy[a] ** 2)
                           for a in range(grid.n)])
        fiber_scale = np.broadcast_to(
            coeffs.sum(axis=0).max(axis=x_axes, keepdims=True) / h2, grid.shape)
        shift = lam * fiber_scale

        def apply_A(w: np.ndarray) -> np.ndarray:
            gw = grad_values(w, grid)
            mgw = np.einsum("ij...,j...->i...", dyy, gw)
            mgw += k * dy * np.einsum("i...,i...->...", dy, gw)
            out = -div_values(sigma * mgw, grid) + shift * w
            return out - out.mean()

        precond = _fd_preconditioner(grid, coeffs, shift)
        d = _pcg(apply_A, -g, rtol=min(0.5, np.sqrt(gnorm)),
                 max_iter=opts.cg_max_iter, precond=precond,
                 atol=0.25 * opts.gtol)
        slope = _grid_inner(d, g)
        if slope >= 0:
            d, slope = -g, -_grid_inner(g, g)
        hit = _line_search(problem, v, f, g, d, slope, gnorm)
        if hit is None:
            return v, it, "line_search", history
        t, v, f_new, _ = hit
        # gain ratio against the damped quadratic model (pred ~ -slope/2)
        ratio = (f - f_new) / max(-0.5 * t * slope, 1e-300)
        if ratio > 0.75 and t >= 1.0:
            lam = max(lam / 3.0, 1e-12)
        elif ratio < 0.25 or t < 0.1:
            lam = min(lam * 2.0, 1e6)
        v = v - v.mean()
        f, g, ev, sigma = _evaluate(problem, v)
        history.append(f)
    return v, budget, "max_iter", history


def _minimize_auto(problem, v, opts, budget):
    """Quasi-Newton steps while they pay off, Newton-CG when they stall.

    Flat-piece stages at intermediate k make the Gibbs weight span many
    orders of magnitude; no fixed quasi-Newton metric tracks that, so after
    ``auto_switch`` iterations the remaining budget goes to Newton."""
    head = min(opts.auto_switch, budget)
    v, it1, status, hist1 = _minimize_lbfgs(problem, v, opts, head)
    if status == "converged" or it1 >= budget:
        return v, it1, status, hist1
    v, it2, status, hist2 = _minimize_newton(problem, v, opts, budget - it1)
    return v, it1 + it2, status, hist1 + hist2[1:]


def _pcg(apply_A, b, rtol, max_iter, precond, atol=0.0):
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = _grid_norm(b)
    if bnorm == 0.0:
        return x
    target = max(rtol * bnorm, atol)
    z = precond(r)
    p = z.copy()
    rz = _grid_inner(r, z)
    for _ in range(max_iter):
        Ap = apply_A(p)
        pAp = _grid_inner(p, Ap)
        if pAp <= 0:
            break
        a = rz / pAp
        x += a * p
        r -= a * Ap
        if _grid_norm(r) <= target:
            break
        z = precond(r)
        rz_new = _grid_inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def solve_cell(problem: CellProblem, init: ScalarField | None = None,
               opts: SolverOptions | None = None) -> CellSolution:
    """Minimize F_k; returns the corrector and its diagnostics.

    Deterministic given (problem, init, opts).  If the iteration cap is hit
    or the line search stalls, the best iterate is returned with
    ``converged=False`` and the reason in ``status``.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    if init is None:
        v = np.zeros(problem.grid.shape)
    else:
        if init.grid != problem.grid:
            raise ValueError("init lives on a different grid")
        if abs(float(np.mean(init.values))) > 1e-8 * (1.0 + float(np.max(np.abs(init.values)))):
            raise ValueError("init must have zero mean")
        v = init.values - init.values.mean()
    minimize = {"auto": _minimize_auto, "lbfgs": _minimize_lbfgs,
                "newton": _minimize_newton}[opts.method]
    v, iters, status, history = minimize(problem, v, opts, opts.max_iter)
    return _finish(problem, v, iters, status, history, opts, t0)


def continuation_solve(model: HamiltonianModel, P, k_schedule, tau_steps: int,
                       grid: TorusGrid, opts: SolverOptions | None = None) -> list:
    """Homotopy in tau at the first k, then warm-started continuation in k.

    Starts from the integrable endpoint tau=0 where v=0 is exact, walks tau to
    1 in ``tau_steps`` uniform steps at k_schedule[0], then re-solves at each
    larger k initializing from the previous solution.  Returns one solution
    per k; their Hbar_k values are checked to be nondecreasing (slack 1e-8).
    """
    opts = opts or SolverOptions()
    k_schedule = [float(k) for k in k_schedule]
    if any(b <= a for a, b in zip(k_schedule, k_schedule[1:])) or not k_schedule:
        raise ValueError("k_schedule must be non-empty and strictly increasing")
    if tau_steps < 1:
        raise ValueError("tau_steps must be >= 1")

    results: list[CellSolution] = []
    init = None
    for i in range(1, tau_steps + 1):
        tau = i / tau_steps
        sol = solve_cell(CellProblem(model, P, k_schedule[0], grid, tau), init, opts)
        if not sol.converged:
            raise ContinuationError(
                f"stage (tau={tau:g}, k={k_schedule[0]:g}) did not converge "
                f"({sol.status})", results, tau, k_schedule[0])
        init = sol.v
    results.append(sol)

    for k in k_schedule[1:]:
        sol = solve_cell(CellProblem(model, P, k, grid, 1.0), init, opts)
        if not sol.converged:
            raise ContinuationError(
                f"stage (tau=1, k={k:g}) did not converge ({sol.status})",
                results, 1.0, k)
        results.append(sol)
        init = sol.v

    hbars = [s.Hbar_k for s in results]
    for a, b in zip(hbars, hbars[1:]):
        if b < a - 1e-8:
            raise ContinuationError(
                f"Hbar_k not monotone along the schedule: {a!r} -> {b!r}",
                results, 1.0, results[-1].k)
    return results


class _FixedFiberModel(HamiltonianModel):
    """The n-dimensional model obtained by freezing the fiber angle."""

    def __init__(self, base: HamiltonianModel, phi_value: np.ndarray):
        self.base = base
        self.phi_value = np.asarray(phi_value, dtype=float)
        self.n, self.m = base.n, 0
        self.gamma = base.gamma
        self.mechanical = base.mechanical
        self.descriptor = {"name": "fiber", "phi": self.phi_value.tolist(),
                           "base": base.descriptor}

    def evaluate(self, x, y, phi) -> HamEval:
        batch = np.asarray(x).shape[1:]
        phi_b = np.broadcast_to(
            self.phi_value.reshape((self.base.m,) + (1,) * len(batch)),
            (self.base.m,) + batch)
        return self.base.evaluate(x, y, phi_b)

    def x_periodic(self) -> bool:
        return self.base.x_periodic()


def fiber_decomposed_solve(problem: CellProblem,
                           opts: SolverOptions | None = None) -> CellSolution:
    """Solve each phi-fiber independently and assemble the joint solution.

    The functional integrates fiber by fiber and the divergence acts only in
    x, so fibers decouple exactly; the joint value is the log-mean-exp of the
    fiber free energies.  The joint gradient weighs each fiber's gradient by
    its share of the Gibbs mass, so after a first pass at the base tolerance
    the fibers that dominate the mass are polished to gtol over their weight,
    which keeps the assembled joint gradient at the requested level without
    asking low-mass fibers for precision below the round-off floor.
    """
    if problem.grid.m < 1:
        raise ValueError("fiber decomposition needs m >= 1")
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    grid = problem.grid
    grid_x = TorusGrid(n=grid.n, m=0, N_x=grid.N_x, diff_mode=grid.diff_mode)
    phi_axis = grid.phi_axis()

    fibers = []
    iters = 0
    for idx in np.ndindex(*(grid.N_phi,) * grid.m):
        phi_val = np.array([phi_axis[i] for i in idx])
        sub = CellProblem(_FixedFiberModel(problem.model, phi_val), problem.P,
                          problem.k, grid_x, problem.tau)
        sol = solve_cell(sub, None, opts)
        iters += sol.iterations
        if not sol.converged:
            raise ContinuationError(
                f"fiber {idx} did not converge ({sol.status})", [], problem.tau,
                problem.k)
        fibers.append((idx, sub, sol))

    values = np.array([sol.Hbar_k for _, _, sol in fibers])
    hbar = log_mean_exp_values(values, problem.k)
    v_joint = np.zeros(grid.shape)
    for (idx, sub, sol), hval in zip(fibers, values):
        weight = np.exp(problem.k * (hval - hbar))
        target = opts.gtol / weight
        if weight > 1.0 and sol.grad_norm > target:
            polish = replace(opts, gtol=max(target, 1e-12))
            again = solve_cell(sub, sol.v, polish)
            iters += again.iterations
            if again.grad_norm < sol.grad_norm:
                sol = again
        v_joint[(Ellipsis,) + idx] = sol.v.values

    return _finish(problem, v_joint, iters, "converged", [], opts, t0)


def aronsson_residual(solution: CellSolution, problem: CellProblem) -> ScalarField:
    """Pointwise residual of sum_ij H_yi H_yj u_xixj + sum_i H_xi H_yi at
    u = P.x + v, with discrete second derivatives.  Diagnostic only."""
    grid = problem.grid
    v = solution.v.values
    gv = grad_values(v, grid)
    y = problem.momentum_field(v)
    ev = problem.ham.evaluate(problem.x_mesh, y, problem.phi_mesh)
    res = np.zeros(grid.shape)
    for i in range(grid.n):
        d2 = grad_values(gv[i], grid)   # row i of the Hessian of v
        for j in range(grid.n):
            res += ev.dy[i] * ev.dy[j] * d2[j]
        res += ev.dx[i] * ev.dy[i]
    return ScalarField(grid, res)


def fiber_jump(fiber_values: np.ndarray) -> float:
    """Max absolute difference between cyclically adjacent fiber values."""
    fv = np.asarray(fiber_values, dtype=float)
    if fv.ndim == 0:
        return 0.0
    return max(
        float(np.max(np.abs(np.roll(fv, -1, axis=a) - fv))) for a in range(fv.ndim)
    )
