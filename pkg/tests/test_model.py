import numpy as np
import pytest

from hypokinetic.errors import ConvergenceError, InadmissibleStepError
from hypokinetic.model import (
    CauchyProblem,
    Coefficient,
    ModelParams,
    _diffuse,
    admissible_steps,
    check_residual,
    coefficient_stats,
    decay_exponent,
    duhamel_oracle,
    lattice_shift,
    manufactured_rhs,
    sample_source,
    sampled_source,
    solve_cauchy,
    step_strang,
)
from hypokinetic.spectral import (
    FREQUENCY,
    eval_symbol,
    make_grid,
    norm,
    physical_field,
    to_physical,
    to_rep,
    zeros,
)

TWO_PI = 2 * np.pi


def _mode(grid, k, xi, has_time=False):
    x = grid.coords("x")[:, np.newaxis]
    v = grid.coords("v")[np.newaxis, :]
    data = np.exp(1j * (k * x + xi * v))
    if has_time:
        data = np.broadcast_to(data, grid.shape(True))
    return physical_field(data, grid, has_time)


def _gaussian_packet(grid, sigma=2.0):
    x = grid.coords("x")[:, np.newaxis]
    v = grid.coords("v")[np.newaxis, :]
    return physical_field(np.exp(1j * x) * np.exp(-(v**2) / (2 * sigma**2)), grid, has_time=False)


def _weighted(f, a):
    data = to_physical(f).data
    return np.sqrt(f.grid.cell_volume(False) * np.sum(np.abs(data) ** 2 / a))


class TestModelParams:
    def test_beta_range(self):
        with pytest.raises(ValueError):
            ModelParams(beta=0.0)
        with pytest.raises(ValueError):
            ModelParams(beta=1.5)

    def test_symbol(self):
        assert ModelParams(beta=0.5).symbol.kind == "frac_v"


class TestCoefficient:
    def test_floor_must_be_positive(self):
        with pytest.raises(ValueError):
            Coefficient(a_minus=0.0)

    def test_bump_minimum_and_support(self, grid):
        coefficient = Coefficient.bump(grid, a_minus=0.1)
        a = coefficient.sample(grid)
        assert a.min() >= 0.1
        # The first velocity sample sits on the box edge, outside the support of chi.
        assert np.all(a[..., 0] == 0.1)

    def test_linear_form(self, grid):
        squared = Coefficient.bump(grid, form="squared").sample(grid, t=0.0)
        linear = Coefficient.bump(grid, form="linear").sample(grid, t=0.0)
        assert not np.allclose(squared, linear)

    def test_constant(self, grid):
        coefficient = Coefficient.constant(2.0)
        assert coefficient.constant_value == 2.0
        assert np.all(coefficient.sample(grid) == 2.0)

    def test_stats(self, grid):
        stats = coefficient_stats(Coefficient.bump(grid, a_minus=0.2), grid)
        assert stats["min_a"] >= 0.2
        assert stats["bchi_sobolev_norm"] > 0
        assert stats["sobolev_order"] == 2.5


class TestManufacturedRhs:
    def test_zero(self, grid):
        g = manufactured_rhs(zeros(grid), ModelParams(beta=0.75))
        assert np.all(g.data == 0)

    def test_pure_mode(self):
        grid = make_grid(1, 16, 16, 16, TWO_PI, TWO_PI, TWO_PI)
        tau, k, xi, beta = 2.0, 3.0, 4.0, 0.75
        t = grid.coords("t")[:, None, None]
        x = grid.coords("x")[None, :, None]
        v = grid.coords("v")[None, None, :]
        f = physical_field(np.exp(1j * (tau * t + k * x + xi * v)), grid)
        g = manufactured_rhs(f, ModelParams(beta=beta))
        expected = (1j * (tau + k * v) + xi ** (2 * beta)) * f.data
        assert np.allclose(g.data, expected, atol=1e-10)

    def test_residual_vanishes(self, model_case):
        f, g = model_case
        assert check_residual(f, g, ModelParams(beta=1.0)) < 1e-12

    def test_aliasing_flag(self):
        grid = make_grid(1, 8, 8, 8, TWO_PI, TWO_PI, TWO_PI)
        v = grid.coords("v")
        f = physical_field(np.broadcast_to(np.exp(3j * v), grid.shape()), grid)
        assert "aliasing-risk" in manufactured_rhs(f, ModelParams(beta=1.0)).flags

    def test_variable_coefficient(self, grid):
        params = ModelParams(beta=0.5, coefficient=Coefficient.bump(grid))
        f = manufactured_rhs(zeros(grid), params)
        assert np.all(f.data == 0)


class TestDecay:
    def test_zero_transport(self):
        assert decay_exponent(2.0, 0.0, 0.5, 1.0) == pytest.approx(0.5 * 4.0)

    def test_closed_form_against_quadrature(self):
        xi = np.array([-1.5, 0.0, 0.7, 2.0])
        k = np.array([1.0, -2.0, 3.0, 0.5])
        one_d = decay_exponent(xi, k, 0.3, 0.75)
        two_d = decay_exponent([xi, np.zeros(4)], [k, np.zeros(4)], 0.3, 0.75)
        assert np.allclose(one_d, two_d, atol=1e-9)

    def test_sign_change(self):
        """The integrand passes through zero when xi and k have opposite signs."""
        value = decay_exponent(-1.0, 1.0, 2.0, 1.0)
        assert value == pytest.approx(2.0 / 3.0)


class TestAdmissibleSteps:
    def test_lattice_shift(self):
        grid = make_grid(1, 4, 4, 64, 1.0, TWO_PI, 16 * np.pi)
        assert lattice_shift(grid, 0.125) == 1
        assert lattice_shift(grid, 0.25) == 2
        assert admissible_steps(grid, 2) == pytest.approx([0.125, 0.25])

    def test_inadmissible(self):
        grid = make_grid(1, 4, 4, 64, 1.0, TWO_PI, 16 * np.pi)
        with pytest.raises(InadmissibleStepError, match="admissible steps"):
            lattice_shift(grid, 0.1)


class TestDuhamelOracle:
    def test_heat_mode_exact(self):
        """At k = 0 the oracle is the exact exponential decay."""
        grid = make_grid(1, 16, 4, 64, 2.0, TWO_PI, 16 * np.pi)
        f0 = _mode(grid, 0.0, 1.0)
        f = duhamel_oracle(zeros(grid), 1.0, f0=f0)
        for j, t in enumerate(grid.coords("t")):
            expected = np.exp(-t) * f0.data
            assert np.linalg.norm(f.data[j] - expected) <= 1e-12 * np.linalg.norm(f0.data)

    def test_interval_residual_second_order(self):
        residuals = []
        for N_t, L_t in ((16, 2.0), (32, 2.0)):
            grid = make_grid(1, N_t, 4, 64, L_t, TWO_PI, 32 * np.pi)
            f = duhamel_oracle(zeros(grid), 1.0, f0=_mode(grid, 0.0, 1.0))
            residuals.append(check_residual(f, zeros(grid), ModelParams(1.0), time_axis="interval"))
        order = np.log2(residuals[0] / residuals[1])
        assert 1.6 <= order <= 2.4

    def test_grid_mismatch(self, grid):
        other = make_grid(1, 16, 16, 64, 1.0, TWO_PI, 16 * np.pi)
        with pytest.raises(ValueError):
            duhamel_oracle(zeros(grid), 1.0, grid=other)

    def test_inadmissible_step(self):
        grid = make_grid(1, 16, 4, 64, 1.0, TWO_PI, 16 * np.pi)
        with pytest.raises(InadmissibleStepError):
            duhamel_oracle(zeros(grid), 1.0)

    def test_zero_source_zero_datum(self):
        grid = make_grid(1, 8, 4, 64, 1.0, TWO_PI, 16 * np.pi)
        assert norm(duhamel_oracle(zeros(grid), 0.5)) == 0.0


class TestStrang:
    def test_single_step_defect(self):
        """One Strang step differs from the exact flow by exp(h^3 k^2 / 12) for beta = 1."""
        h, k = 0.125, 1.0
        grid = make_grid(1, 4, 8, 64, 4 * h, TWO_PI, 32 * np.pi)
        f0 = _mode(grid, k, 1.0)
        stepped = step_strang(f0, h, ModelParams(1.0))
        exact = physical_field(duhamel_oracle(zeros(grid), 1.0, f0=f0).data[1], grid, has_time=False)
        ratio = norm(stepped) / norm(exact)
        assert ratio == pytest.approx(np.exp(h**3 * k**2 / 12), rel=1e-10)
        assert np.linalg.norm(stepped.data - ratio * exact.data) <= 1e-10 * np.linalg.norm(stepped.data)

    def test_second_order_against_oracle(self):
        grid = make_grid(1, 18, 4, 1024, 18 / 8, TWO_PI, 64 * np.pi)
        f0 = _gaussian_packet(grid)
        oracle = physical_field(duhamel_oracle(zeros(grid), 1.0, f0=f0).data[16], grid, has_time=False)
        errors = []
        for dt in (1 / 8, 1 / 16):
            final = solve_cauchy(CauchyProblem(f0, 2.0, dt), ModelParams(1.0)).final
            errors.append(np.linalg.norm(final.data - oracle.data) / np.linalg.norm(oracle.data))
        assert errors[0] == pytest.approx(np.expm1(2.0 / 8**2 / 12), rel=0.01)
        assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.1)

    def test_fine_step_accuracy(self):
        grid = make_grid(1, 18, 4, 1024, 18 / 8, TWO_PI, 64 * np.pi)
        f0 = _gaussian_packet(grid)
        oracle = physical_field(duhamel_oracle(zeros(grid), 1.0, f0=f0).data[16], grid, has_time=False)
        final = solve_cauchy(CauchyProblem(f0, 2.0, 2.0 / 1024), ModelParams(1.0)).final
        assert np.linalg.norm(final.data - oracle.data) <= 1e-3 * np.linalg.norm(oracle.data)

    def test_constant_valued_coefficient_is_one_implicit_step(self):
        grid = make_grid(1, 4, 8, 32, 1.0, TWO_PI, 8 * np.pi)
        coefficient = Coefficient(a_minus=0.5, b=lambda t, xs, vs: np.ones_like(xs[0]))
        params = ModelParams(1.0, coefficient=coefficient)
        f = _gaussian_packet(grid)
        dt = 0.1
        result = _diffuse(f, dt, params, 0.0)
        q = eval_symbol(params.symbol, grid)
        spectrum = to_rep(f, v=FREQUENCY)
        expected = to_physical(spectrum.replace(data=spectrum.data / (1 + 1.5 * dt * q)))
        assert np.linalg.norm(result.data - expected.data) <= 1e-10 * np.linalg.norm(expected.data)

    def test_iteration_limit(self, grid):
        params = ModelParams(1.0, coefficient=Coefficient.bump(grid), max_iterations=1)
        f0 = _gaussian_packet(grid)
        with pytest.raises(ConvergenceError):
            step_strang(f0, 0.1, params)

    def test_x_only_coefficient_dissipative(self, grid):
        coefficient = Coefficient(a_minus=0.1, b=lambda t, xs, vs: 1.0 + 0.5 * np.sin(xs[0]))
        params = ModelParams(0.5, coefficient=coefficient)
        f = _gaussian_packet(grid)
        for _ in range(4):
            g = step_strang(f, 0.1, params)
            assert norm(g) <= norm(f) * (1 + 1e-12)
            f = g

    def test_velocity_coefficient_dissipative(self, grid):
        # a = a(v) is constant along characteristics, so the a^-1 weighted norm decays.
        coefficient = Coefficient(a_minus=0.1, b=lambda t, xs, vs: 1.0 + 0.5 * np.cos(vs[0] / 4))
        params = ModelParams(0.75, coefficient=coefficient)
        a = coefficient.sample(grid, 0.0)
        f = _gaussian_packet(grid)
        for j in range(4):
            g = step_strang(f, 0.1, params, t=0.1 * j)
            assert _weighted(g, a) <= _weighted(f, a) * (1 + 1e-9)
            f = g
        assert _weighted(f, a) < _weighted(_gaussian_packet(grid), a)

    def test_bump_diffusion_dissipative(self, grid):
        params = ModelParams(1.0, coefficient=Coefficient.bump(grid))
        a = params.coefficient.sample(grid, 0.05)
        f = _gaussian_packet(grid)
        g = _diffuse(f, 0.1, params, 0.0)
        assert _weighted(g, a) <= _weighted(f, a) * (1 + 1e-9)

    def test_bump_coefficient_converges(self, grid):
        params = ModelParams(0.75, coefficient=Coefficient.bump(grid))
        stepped = step_strang(_gaussian_packet(grid), 0.05, params)
        assert np.all(np.isfinite(stepped.data))


class TestCauchy:
    def test_dt_must_divide(self, grid):
        with pytest.raises(ValueError):
            CauchyProblem(zeros(grid, has_time=False), 1.0, 0.3)

    def test_trajectory_layout(self):
        grid = make_grid(1, 4, 4, 64, 1.0, TWO_PI, 16 * np.pi)
        trajectory = solve_cauchy(CauchyProblem(_gaussian_packet(grid), 1.0, 0.25), ModelParams(1.0))
        assert trajectory.field.grid.N_t == 4
        assert trajectory.times == pytest.approx([0.0, 0.25, 0.5, 0.75])
        norms = trajectory.norms()
        assert np.all(np.diff(norms) <= 1e-12)

    @pytest.mark.parametrize("T", [0.125, 0.25, 0.375])
    def test_short_and_odd_step_counts(self, T):
        grid = make_grid(1, 4, 4, 64, 1.0, TWO_PI, 16 * np.pi)
        f0 = _gaussian_packet(grid)
        trajectory = solve_cauchy(CauchyProblem(f0, T, 0.125), ModelParams(1.0))
        steps = round(T / 0.125)
        assert trajectory.times == pytest.approx(0.125 * np.arange(steps))
        assert trajectory.field.grid.N_t == 4
        assert trajectory.field.grid.L_t == pytest.approx(0.5)
        assert np.all(trajectory.field.data[steps:] == 0)
        assert np.array_equal(trajectory.field.data[0], f0.data)

    def test_odd_step_count_against_oracle(self):
        grid = make_grid(1, 4, 4, 64, 0.5, TWO_PI, 16 * np.pi)
        f0 = _gaussian_packet(grid)
        final = solve_cauchy(CauchyProblem(f0, 0.375, 0.125), ModelParams(1.0)).final
        exact = duhamel_oracle(zeros(grid), 1.0, f0=f0).data[3]
        assert np.linalg.norm(final.data - exact) <= 2e-3 * np.linalg.norm(exact)

    def test_source_drives_zero_datum(self):
        grid = make_grid(1, 4, 4, 64, 1.0, TWO_PI, 16 * np.pi)
        packet = _gaussian_packet(grid)
        trajectory = solve_cauchy(CauchyProblem(zeros(grid, has_time=False), 1.0, 0.25, lambda t: packet),
                                  ModelParams(1.0))
        assert norm(trajectory.final) > 0


class TestSources:
    def test_sampled_source_round_trip(self):
        grid = make_grid(1, 8, 4, 16, TWO_PI, TWO_PI, TWO_PI)
        rng = np.random.default_rng(0)
        g = physical_field(rng.standard_normal(grid.shape()), grid)
        back = sample_source(sampled_source(g), grid)
        assert np.allclose(back.data, g.data, atol=1e-12)
