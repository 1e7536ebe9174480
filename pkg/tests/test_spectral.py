import numpy as np
import pytest

from hypokinetic.errors import GridError, RepresentationError
from hypokinetic.spectral import (
    FREQUENCY,
    PHYSICAL,
    MultiplierSpec,
    apply_multiplier,
    coordinate,
    dealias,
    eval_symbol,
    high_band_fraction,
    inner,
    make_grid,
    norm,
    physical_field,
    sobolev_norm,
    to_frequency,
    to_physical,
    to_rep,
    transform,
    transport,
    weighted_norm,
)

TWO_PI = 2 * np.pi


def _random(grid, seed=0, has_time=True):
    rng = np.random.default_rng(seed)
    shape = grid.shape(has_time)
    return physical_field(rng.standard_normal(shape) + 1j * rng.standard_normal(shape), grid, has_time)


class TestMakeGrid:
    def test_integer_frequencies(self):
        """A 2 pi box gives integer frequencies."""
        grid = make_grid(1, 4, 4, 4, TWO_PI, TWO_PI, TWO_PI)
        assert sorted(grid.freq("x")) == [-2, -1, 0, 1]

    def test_nyquist(self):
        grid = make_grid(1, 64, 64, 64, TWO_PI, TWO_PI, TWO_PI)
        assert np.max(np.abs(grid.freq("x"))) == 32
        assert grid.shape() == (64, 64, 64)

    def test_odd_points_rejected(self):
        with pytest.raises(GridError):
            make_grid(1, 5, 4, 4, 1, 1, 1)

    def test_undersized_rejected(self):
        with pytest.raises(GridError):
            make_grid(1, 2, 4, 4, 1, 1, 1)

    def test_memory_budget(self):
        with pytest.raises(GridError, match="memory budget"):
            make_grid(1, 64, 64, 64, 1, 1, 1, memory_budget=1000)

    def test_centered_velocities(self):
        grid = make_grid(1, 4, 4, 8, 1.0, 1.0, 8.0)
        assert grid.coords("v")[0] == -4.0
        assert grid.coords("x")[0] == 0.0


class TestTransform:
    def test_constant_field_is_dc(self):
        grid = make_grid(1, 4, 8, 8, TWO_PI, TWO_PI, TWO_PI)
        f = physical_field(np.ones(grid.shape()), grid)
        spectrum = transform(f, "v", "forward").data
        assert np.allclose(spectrum[..., 1:], 0, atol=1e-14)
        assert np.allclose(spectrum[..., 0], np.sqrt(8))

    def test_round_trip(self):
        grid = make_grid(1, 8, 16, 16, TWO_PI, TWO_PI, TWO_PI)
        f = _random(grid)
        back = transform(transform(f, ("x", "v"), "forward"), ("x", "v"), "inverse")
        assert back.rep == (PHYSICAL,) * 3
        assert np.linalg.norm(back.data - f.data) <= 1e-12 * np.linalg.norm(f.data)

    def test_plancherel(self):
        grid = make_grid(1, 8, 16, 16, TWO_PI, TWO_PI, 4 * TWO_PI)
        f = _random(grid, seed=1)
        assert norm(to_frequency(f)) == pytest.approx(norm(f), rel=1e-10)

    def test_axis_already_transformed(self):
        grid = make_grid(1, 4, 4, 4, TWO_PI, TWO_PI, TWO_PI)
        f = transform(_random(grid), "v", "forward")
        with pytest.raises(RepresentationError):
            transform(f, "v", "forward")

    def test_to_rep_transforms_only_pending_axes(self):
        grid = make_grid(2, 4, 4, 4, TWO_PI, TWO_PI, TWO_PI)
        f = to_rep(_random(grid), x=FREQUENCY)
        assert f.rep == (PHYSICAL, FREQUENCY, FREQUENCY, PHYSICAL, PHYSICAL)
        assert to_physical(f).rep == (PHYSICAL,) * 5


class TestSymbols:
    @pytest.fixture
    def grid(self):
        return make_grid(1, 4, 8, 16, TWO_PI, TWO_PI, TWO_PI)

    def test_frac_v_value(self, grid):
        values = eval_symbol(MultiplierSpec("frac_v", 0.5), grid)
        assert values[0, 3] == pytest.approx(3.0)

    def test_frac_v_origin(self, grid):
        for beta in (0.25, 0.5, 1.0):
            assert eval_symbol(MultiplierSpec("frac_v", beta), grid)[:, 0].max() == 0.0

    def test_aniso_reduces_to_laplacian(self, grid):
        values = eval_symbol(MultiplierSpec("aniso", 1.0), grid)
        assert values[0, 2] == pytest.approx(4.0)

    def test_bracket_floor(self, grid):
        spec = MultiplierSpec("bracket_aniso", 0.75, delta=0.3)
        assert eval_symbol(spec, grid).min() >= 0.3**0.75

    def test_symbols_real_nonnegative(self, grid):
        for kind in ("frac_v", "aniso", "bracket_aniso"):
            values = eval_symbol(MultiplierSpec(kind, 0.75, 0.1), grid)
            assert np.isrealobj(values)
            assert values.min() >= 0

    def test_invalid_beta(self):
        with pytest.raises(ValueError):
            MultiplierSpec("frac_v", 0.0)


class TestApplyMultiplier:
    @pytest.fixture
    def grid(self):
        return make_grid(1, 4, 4, 64, TWO_PI, TWO_PI, TWO_PI)

    def test_pure_mode_eigenfunction(self, grid):
        v = grid.coords("v")
        f = physical_field(np.broadcast_to(np.exp(3j * v), grid.shape()), grid)
        result = to_physical(apply_multiplier(to_frequency(f), MultiplierSpec("frac_v", 0.5)))
        assert np.allclose(result.data, 3 * f.data, atol=1e-12)

    def test_constant_annihilated(self, grid):
        f = to_frequency(physical_field(np.ones(grid.shape()), grid))
        result = apply_multiplier(f, MultiplierSpec("frac_v", 0.7))
        assert np.abs(result.data).max() < 1e-12

    def test_finite_difference_laplacian(self, grid):
        """beta = 1 against the centered second difference; the relative gap is h^2/3 for sin(2v)."""
        v = grid.coords("v")
        h = grid.spacing("v")
        f = physical_field(np.broadcast_to(np.sin(2 * v), grid.shape()), grid)
        spectral = to_physical(apply_multiplier(to_frequency(f), MultiplierSpec("frac_v", 1.0))).data
        data = f.data
        fd = -(np.roll(data, -1, axis=-1) - 2 * data + np.roll(data, 1, axis=-1)) / h**2
        gap = np.linalg.norm(fd - spectral) / np.linalg.norm(spectral)
        assert gap == pytest.approx(h**2 / 3, rel=0.02)

    def test_physical_axis_rejected(self, grid):
        with pytest.raises(RepresentationError):
            apply_multiplier(_random(grid), MultiplierSpec("frac_v", 1.0))

    def test_composition(self, grid):
        f = to_frequency(_random(grid, seed=2))
        twice = apply_multiplier(apply_multiplier(f, MultiplierSpec("frac_v", 0.3)), MultiplierSpec("frac_v", 0.5))
        once = apply_multiplier(f, MultiplierSpec("frac_v", 0.8))
        assert np.linalg.norm(twice.data - once.data) <= 1e-12 * np.linalg.norm(once.data)


class TestInner:
    @pytest.fixture
    def grid(self):
        return make_grid(1, 4, 8, 16, TWO_PI, TWO_PI, 2 * TWO_PI)

    def test_norm_squared(self, grid):
        f = _random(grid)
        value = inner(f, f)
        assert value.imag == pytest.approx(0.0, abs=1e-10)
        assert value.real == pytest.approx(norm(f) ** 2)

    def test_hermitian(self, grid):
        f, g = _random(grid, 0), _random(grid, 1)
        assert inner(f, g) == pytest.approx(np.conj(inner(g, f)))

    def test_disjoint_modes(self, grid):
        v = grid.coords("v")
        f = physical_field(np.broadcast_to(np.exp(1j * v / 2), grid.shape()), grid)
        g = physical_field(np.broadcast_to(np.exp(1j * v), grid.shape()), grid)
        assert abs(inner(f, g)) < 1e-12

    def test_grid_mismatch(self, grid):
        other = make_grid(1, 4, 8, 16, TWO_PI, TWO_PI, TWO_PI)
        with pytest.raises(RepresentationError):
            inner(_random(grid), _random(other))


class TestOperatorProperties:
    @pytest.fixture
    def grid(self):
        return make_grid(1, 8, 16, 32, TWO_PI, TWO_PI, 4 * TWO_PI)

    @pytest.mark.parametrize("kind", ["frac_v", "aniso", "bracket_aniso"])
    def test_self_adjoint_and_nonnegative(self, grid, kind):
        spec = MultiplierSpec(kind, 0.75, 0.2)
        f, g = to_frequency(_random(grid, 0)), to_frequency(_random(grid, 1))
        scale = norm(f) * norm(g)
        gap = abs(inner(apply_multiplier(f, spec), g) - inner(f, apply_multiplier(g, spec)))
        assert gap <= 1e-10 * scale
        assert inner(apply_multiplier(f, spec), f).real >= -1e-10 * norm(f) ** 2

    def test_transport_skew(self, grid):
        f = to_rep(_random(grid), x=FREQUENCY)
        tf = transport(f)
        assert abs(inner(tf, f).real) <= 1e-10 * norm(f) * norm(tf)

    def test_transport_is_ikv(self, grid):
        f = to_rep(_random(grid), x=FREQUENCY)
        k = grid.freq("x")[np.newaxis, :, np.newaxis]
        expected = 1j * k * coordinate(f, "v0") * f.data
        assert np.allclose(transport(f).data, expected)

    def test_transport_needs_mixed_rep(self, grid):
        with pytest.raises(RepresentationError):
            transport(_random(grid))


class TestBandLimit:
    def test_dealias_clears_top_third(self):
        grid = make_grid(1, 8, 16, 16, TWO_PI, TWO_PI, TWO_PI)
        f = _random(grid)
        assert high_band_fraction(f) > 0.1
        assert high_band_fraction(dealias(f)) < 1e-20
        assert dealias(f).rep == f.rep

    def test_random_field_not_flagged(self, field):
        assert "aliasing-risk" not in field.flags


class TestNorms:
    def test_weighted_norm_needs_frequency(self):
        grid = make_grid(1, 4, 8, 8, TWO_PI, TWO_PI, TWO_PI)
        with pytest.raises(RepresentationError):
            weighted_norm(_random(grid), {"v": 1.0})

    def test_sobolev_norm_of_constant(self):
        grid = make_grid(1, 4, 8, 8, TWO_PI, TWO_PI, 2 * TWO_PI)
        f = physical_field(np.ones(grid.shape(False)), grid, has_time=False)
        assert sobolev_norm(f, 2.5) == pytest.approx(np.sqrt(grid.L_x * grid.L_v))

    def test_weighted_norm_pure_mode(self):
        grid = make_grid(1, 4, 8, 8, TWO_PI, TWO_PI, TWO_PI)
        v = grid.coords("v")
        f = physical_field(np.broadcast_to(np.exp(2j * v), grid.shape()), grid)
        assert weighted_norm(to_frequency(f), {"v": 1.5}) == pytest.approx(2**1.5 * norm(f))
