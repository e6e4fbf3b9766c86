import numpy as np
import pytest

from weakkam.cell import CellProblem, solve_cell
from weakkam.fields import TorusGrid, integrate
from weakkam.hamiltonians import make_integrable
from weakkam.measures import (
    closedness_residual,
    effective_lagrangian,
    energy_statistics,
    gibbs_measure,
    measure_stats,
    rotation_vector,
    tail_mass,
)


@pytest.fixture(scope="module")
def integrable_pieces():
    grid = TorusGrid(n=1, m=0, N_x=64)
    model = make_integrable(1)
    prob = CellProblem(model, [0.7], 8.0, grid)
    sol = solve_cell(prob)
    return prob, sol, gibbs_measure(sol, prob)


def _solution_at(pendulum, sweep, P, k):
    sol = next(s for s in sweep["solutions"][P] if s.k == k)
    prob = CellProblem(pendulum, sol.P, k, sol.v.grid)
    return prob, sol, gibbs_measure(sol, prob)


def test_gibbs_integrable_uniform(integrable_pieces):
    _, _, mu = integrable_pieces
    assert np.max(np.abs(mu.sigma.values - 1.0)) <= 1e-12
    assert integrate(mu.sigma) == pytest.approx(1.0, abs=1e-12)


def test_gibbs_normalization_everywhere(pendulum, pendulum_sweep):
    for P in (0.0, 1.5, 2.5):
        for k in (8.0, 64.0):
            _, _, mu = _solution_at(pendulum, pendulum_sweep, P, k)
            assert integrate(mu.sigma) == pytest.approx(1.0, abs=1e-10)
            assert abs(mu.renorm_factor - 1.0) <= 1e-8
            assert np.min(mu.sigma.values) >= 0.0


def test_gibbs_density_identity(pendulum, pendulum_sweep):
    prob, sol, mu = _solution_at(pendulum, pendulum_sweep, 1.5, 64.0)
    from weakkam.cell import _evaluate
    h = _evaluate(prob, sol.v.values)[2].h
    dens = mu.sigma.values * mu.renorm_factor
    live = dens > 1e-300
    defect = np.max(np.abs(np.log(dens[live]) - sol.k * (h[live] - sol.Hbar_k)))
    assert defect <= 1e-10


def test_gibbs_concentrates_at_potential_max(pendulum, pendulum_sweep):
    # P=0 corrector vanishes, so sigma(pi)/sigma(0) = exp(k (V(pi) - V(0)))
    prob, sol, mu = _solution_at(pendulum, pendulum_sweep, 0.0, 64.0)
    i_pi = sol.v.grid.N_x // 2
    ratio = mu.sigma.values[i_pi] / mu.sigma.values[0]
    assert ratio >= np.exp(64.0 * 1.9)


def test_gibbs_requires_consistency(pendulum, pendulum_sweep, grid256):
    sol = pendulum_sweep["solutions"][2.0][-1]
    wrong = CellProblem(pendulum, [0.0], sol.k, grid256)   # different P
    with pytest.raises(ValueError, match="inconsistent"):
        gibbs_measure(sol, wrong)


def test_gibbs_requires_converged(pendulum, grid256):
    from weakkam.cell import SolverOptions
    bad = solve_cell(CellProblem(pendulum, [1.5], 64.0, grid256),
                     opts=SolverOptions(max_iter=3))
    with pytest.raises(ValueError, match="converged"):
        gibbs_measure(bad, CellProblem(pendulum, [1.5], 64.0, grid256))


def test_rotation_integrable(integrable_pieces):
    prob, sol, mu = integrable_pieces
    assert rotation_vector(mu, sol, prob)[0] == pytest.approx(0.7, abs=1e-12)


def test_rotation_pendulum_symmetry(pendulum, pendulum_sweep):
    prob, sol, mu = _solution_at(pendulum, pendulum_sweep, 0.0, 64.0)
    assert abs(rotation_vector(mu, sol, prob)[0]) <= 1e-8


def test_rotation_matches_slope(pendulum, pendulum_sweep, hbar64_table):
    prob, sol, mu = _solution_at(pendulum, pendulum_sweep, 2.0, 64.0)
    q = rotation_vector(mu, sol, prob)[0]
    table = dict(hbar64_table)
    fd = (table[2.05] - table[1.95]) / 0.1
    assert abs(q - fd) <= 0.05 * abs(fd)


def test_closedness_integrable_zero(integrable_pieces):
    prob, sol, mu = integrable_pieces
    assert closedness_residual(mu, sol, prob) <= 1e-14


def test_closedness_below_tolerance(pendulum, pendulum_sweep):
    for P in (0.5, 1.5, 2.5):
        prob, sol, mu = _solution_at(pendulum, pendulum_sweep, P, 64.0)
        assert closedness_residual(mu, sol, prob) <= 1e-6


def test_energy_statistics_integrable(integrable_pieces):
    prob, sol, mu = integrable_pieces
    mean, var = energy_statistics(mu, sol, prob)
    assert mean == pytest.approx(0.5 * 0.49, abs=1e-12)
    assert var <= 1e-20


def test_energy_mean_envelope(pendulum, pendulum_sweep):
    # Hbar_k <= mean energy <= Hbar_k + A log(k)/k with A frozen at 1.0
    for k in (8.0, 16.0, 32.0, 64.0):
        prob, sol, mu = _solution_at(pendulum, pendulum_sweep, 0.0, k)
        mean, _ = energy_statistics(mu, sol, prob)
        assert mean >= sol.Hbar_k - 1e-10
        assert mean <= sol.Hbar_k + 1.0 * np.log(k) / k


def test_energy_variance_concentrates(pendulum, pendulum_sweep):
    _, s8, mu8 = _solution_at(pendulum, pendulum_sweep, 0.0, 8.0)
    prob8 = CellProblem(pendulum, s8.P, 8.0, s8.v.grid)
    _, s64, mu64 = _solution_at(pendulum, pendulum_sweep, 0.0, 64.0)
    prob64 = CellProblem(pendulum, s64.P, 64.0, s64.v.grid)
    var8 = energy_statistics(mu8, s8, prob8)[1]
    var64 = energy_statistics(mu64, s64, prob64)[1]
    assert var64 < var8


def test_tail_mass_bounds(pendulum, pendulum_sweep):
    prob, sol, mu = _solution_at(pendulum, pendulum_sweep, 2.0, 64.0)
    assert tail_mass(mu, sol, prob, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert tail_mass(mu, sol, prob, 100.0) == 0.0
    with pytest.raises(ValueError):
        tail_mass(mu, sol, prob, -1.0)


def test_tail_mass_decreases_with_k(pendulum, pendulum_sweep):
    # flat-piece corrector: velocity mass above 1 dies off as k grows
    tails = []
    for k in (8.0, 16.0, 32.0, 64.0):
        prob, sol, mu = _solution_at(pendulum, pendulum_sweep, 0.5, k)
        tails.append(tail_mass(mu, sol, prob, 1.0))
    assert all(b <= a + 1e-12 for a, b in zip(tails, tails[1:]))
    assert tails[-1] < tails[0]


def test_tail_mass_above_energy_ceiling(pendulum, pendulum_sweep):
    # threshold 1 + max classical speed at the attained energy: mass vanishes
    for k in (8.0, 16.0, 32.0, 64.0):
        prob, sol, mu = _solution_at(pendulum, pendulum_sweep, 0.0, k)
        M = 1.0 + np.sqrt(2.0 * max(sol.Hbar_k, 0.0))
        assert tail_mass(mu, sol, prob, M) == 0.0


def test_effective_lagrangian_quadratic_table():
    ps = np.round(np.arange(-3.0, 3.0001, 0.1), 10)
    table = [(p, 0.5 * p * p) for p in ps]
    eff = effective_lagrangian(table, 1.0)
    assert eff.value == pytest.approx(0.5, abs=0.005)
    assert not eff.at_boundary


def test_effective_lagrangian_pendulum_rest(hbar64_table, pendulum_pot):
    # L(0) = -min Hbar = -Hbar(0); the oracle flat value is 2
    eff = effective_lagrangian(hbar64_table, 0.0)
    assert eff.value == pytest.approx(-2.0, abs=0.15)


def test_effective_lagrangian_flags_boundary():
    table = [(p, 0.5 * p * p) for p in np.arange(-1.0, 1.001, 0.1)]
    eff = effective_lagrangian(table, 5.0)      # supremum escapes the window
    assert eff.at_boundary
    with pytest.raises(ValueError):
        effective_lagrangian([], 1.0)


def test_duality_gap_nonnegative(pendulum, pendulum_sweep, hbar64_table):
    prob, sol, mu = _solution_at(pendulum, pendulum_sweep, 2.0, 64.0)
    stats = measure_stats(mu, sol, prob, speed_threshold=1.0,
                          hbar_table=hbar64_table)
    assert stats.duality_gap >= -1e-8
    assert stats.Lbar_Q is not None


def test_measure_stats_row(integrable_pieces):
    prob, sol, mu = integrable_pieces
    stats = measure_stats(mu, sol, prob, speed_threshold=2.0)
    assert stats.energy_var >= 0.0
    assert 0.0 <= stats.tail_mass <= 1.0
    assert stats.Lbar_Q is None and stats.duality_gap is None
