"""
The fractional kinetic model d_t f + v.grad_x f + a |D_v|^(2 beta) f = g.

Two solvers are provided. `duhamel_oracle` integrates the constant-coefficient
equation (a = 1) along the Fourier-side characteristics xi -> xi + dt k and is
exact up to the trapezoid rule on the source. `solve_cauchy` advances the general
equation with the Strang splitting T(dt/2) D(dt) T(dt/2), where the transport T is
an exact phase in the mixed representation and D is the diffusion step.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.fft
from scipy.integrate import quad_vec
from scipy.sparse.linalg import LinearOperator, cg

from hypokinetic.errors import ConvergenceError, InadmissibleStepError
from hypokinetic.spectral import (
    FREQUENCY,
    PHYSICAL,
    Field,
    MultiplierSpec,
    coordinate,
    dealias,
    eval_symbol,
    flag_band_limit,
    make_grid,
    norm,
    physical_field,
    sobolev_norm,
    time_derivative,
    to_physical,
    to_rep,
    transport,
)

logger = logging.getLogger(__name__)

COEFFICIENT_FORMS = ("squared", "linear")


def smooth_bump(r):
    """C-infinity bump exp(1 - 1/(1 - r^2)) on |r| < 1, zero outside, 1 at the origin."""
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < 1
    out = np.zeros_like(r)
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


def grid_coordinates(grid, has_time=True):
    """Broadcastable coordinate arrays (t, xs, vs) over the lattice."""
    ndim = 2 * grid.n + (1 if has_time else 0)
    offset = 1 if has_time else 0

    def along(values, axis):
        shape = [1] * ndim
        shape[axis] = values.size
        return values.reshape(shape)

    t = along(grid.coords("t"), 0) if has_time else None
    xs = [along(grid.coords("x"), offset + i) for i in range(grid.n)]
    vs = [along(grid.coords("v"), offset + grid.n + i) for i in range(grid.n)]
    return t, xs, vs


@dataclass(frozen=True)
class Coefficient:
    """
    Diffusion coefficient a = (b chi)^2 + a_minus (or b^2 chi + a_minus).

    Attributes:
        a_minus: Strictly positive floor.
        b: Callable b(t, xs, vs) returning a nonnegative array, or None for a = a_minus.
        chi: Callable chi(xs, vs) with compact support inside the box, or None for chi = 1.
        form: "squared" or "linear".
    """
    a_minus: float
    b: Optional[Callable] = None
    chi: Optional[Callable] = None
    form: str = "squared"

    def __post_init__(self):
        if not self.a_minus > 0:
            raise ValueError(f"a_minus must be strictly positive, got {self.a_minus}")
        if self.form not in COEFFICIENT_FORMS:
            raise ValueError(f"form must be one of {COEFFICIENT_FORMS}, got {self.form!r}")

    @property
    def constant_value(self):
        """a_minus when the coefficient is constant, otherwise None."""
        return self.a_minus if self.b is None else None

    def _chi(self, xs, vs):
        if self.chi is None:
            return 1.0
        return self.chi(xs, vs)

    def modifier(self, t=0.0):
        """The product b chi at a fixed time, as a callable (xs, vs) -> array."""
        if self.b is None:
            return lambda xs, vs: np.zeros(np.broadcast(*xs, *vs).shape)
        return lambda xs, vs: self.b(t, xs, vs) * self._chi(xs, vs)

    def _compose(self, t, xs, vs):
        b = self.b(t, xs, vs)
        chi = self._chi(xs, vs)
        if self.form == "squared":
            return (b * chi) ** 2 + self.a_minus
        return b**2 * chi + self.a_minus

    def sample(self, grid, t=None):
        """a over (t, x, v) when t is None, otherwise over (x, v) at time t."""
        if t is None:
            tt, xs, vs = grid_coordinates(grid, has_time=True)
            shape = grid.shape(True)
        else:
            _, xs, vs = grid_coordinates(grid, has_time=False)
            tt = t
            shape = grid.shape(False)
        if self.b is None:
            return np.full(shape, self.a_minus)
        return np.broadcast_to(self._compose(tt, xs, vs), shape)

    @classmethod
    def constant(cls, value):
        return cls(a_minus=value)

    @classmethod
    def bump(cls, grid, a_minus=0.1, amplitude=1.0, margin=0.1, form="squared"):
        """
        Default recipe: b smooth and positive, periodic in t and x with the grid's
        periods; chi a product of C-infinity bumps vanishing within `margin` of every
        box edge.
        """
        if not 0 < margin < 0.5:
            raise ValueError(f"margin must lie in (0, 1/2), got {margin}")
        L_t, L_x, L_v = grid.L_t, grid.L_x, grid.L_v
        radius_x = (0.5 - margin) * L_x
        radius_v = (0.5 - margin) * L_v

        def b(t, xs, vs):
            phase = sum(2 * np.pi * x / L_x for x in xs)
            return amplitude * (1.0 + 0.5 * np.sin(phase)) * (1.0 + 0.25 * np.cos(2 * np.pi * t / L_t))

        def chi(xs, vs):
            out = 1.0
            for x in xs:
                out = out * smooth_bump((x - L_x / 2) / radius_x)
            for v in vs:
                out = out * smooth_bump(v / radius_v)
            return out

        return cls(a_minus=a_minus, b=b, chi=chi, form=form)


@dataclass(frozen=True)
class ModelParams:
    """
    Model parameters.

    Attributes:
        beta: Order in (0, 1].
        coefficient: Coefficient, or None for a = 1.
        diffusion: Switches the diffusion term off when False (transport-only equation).
        dealias: Apply the 2/3 filter to the product a |D_v|^(2 beta) f.
        solver_tol, max_iterations: Inner iteration control of the implicit diffusion step.
    """
    beta: float
    coefficient: Optional[Coefficient] = None
    diffusion: bool = True
    dealias: bool = False
    solver_tol: float = 1e-10
    max_iterations: int = 200

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")

    @property
    def symbol(self):
        return MultiplierSpec("frac_v", self.beta)


@dataclass(frozen=True)
class CauchyProblem:
    """
    Initial value problem on [0, T].

    Attributes:
        f0: Initial datum, a Field over (x, v).
        T: Horizon.
        dt: Step; T / dt must be an integer.
        source: Callable t -> Field over (x, v), or None.
    """
    f0: Field
    T: float
    dt: float
    source: Optional[Callable] = None

    def __post_init__(self):
        if self.f0.has_time:
            raise ValueError("the initial datum must be a field over (x, v)")
        if not (self.T > 0 and self.dt > 0):
            raise ValueError(f"T and dt must be positive, got T={self.T}, dt={self.dt}")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")

    @property
    def steps(self):
        return int(round(self.T / self.dt))


@dataclass(frozen=True)
class Trajectory:
    """Snapshots at t_j = j dt (j < N) over (x, v), plus the state at T."""
    snapshots: np.ndarray
    final: Field
    dt: float

    @property
    def steps(self):
        return self.snapshots.shape[0]

    @property
    def times(self):
        return self.dt * np.arange(self.steps)

    @property
    def field(self):
        """
        The snapshots as one field over (t, x, v).

        The time axis has the smallest even length >= max(N, 4) at spacing dt;
        slots j >= N hold zeros.
        """
        base = self.final.grid
        N_t = max(4, self.steps + self.steps % 2)
        grid = make_grid(base.n, N_t, base.N_x, base.N_v, N_t * self.dt, base.L_x, base.L_v,
                         memory_budget=np.inf, workers=base.workers)
        data = np.zeros(grid.shape(True), dtype=complex)
        data[:self.steps] = self.snapshots
        return physical_field(data, grid)

    def norms(self):
        volume = self.final.grid.cell_volume(False)
        return np.sqrt(volume) * np.linalg.norm(self.snapshots.reshape(self.steps, -1), axis=1)


def _components(value):
    if isinstance(value, (tuple, list)):
        return [np.asarray(c, dtype=float) for c in value]
    return [np.asarray(value, dtype=float)]


def decay_exponent(xi, k, tau, beta):
    """
    Integral of |xi + u k|^(2 beta) over u in [0, tau].

    In one dimension the antiderivative sign(y)|y|^(2 beta + 1) / ((2 beta + 1) k)
    gives a closed form; in two dimensions `xi` and `k` are component pairs and the
    integral is computed by adaptive quadrature to 1e-10 absolute.
    """
    xi_c = _components(xi)
    k_c = _components(k)
    p = 2 * beta
    if len(xi_c) == 1:
        xi0, k0 = np.broadcast_arrays(xi_c[0], k_c[0])
        moving = k0 != 0
        safe_k = np.where(moving, k0, 1.0)

        def antiderivative(y):
            return np.sign(y) * np.abs(y) ** (p + 1) / (p + 1)

        ramp = (antiderivative(xi0 + tau * k0) - antiderivative(xi0)) / safe_k
        return np.where(moving, ramp, tau * np.abs(xi0) ** p)

    arrays = np.broadcast_arrays(*xi_c, *k_c)
    n = len(xi_c)
    xi_b, k_b = arrays[:n], arrays[n:]

    def integrand(u):
        return np.sqrt(sum((x + u * q) ** 2 for x, q in zip(xi_b, k_b))) ** p

    value, _ = quad_vec(integrand, 0.0, tau, epsabs=1e-10, epsrel=1e-12)
    return value


def admissible_steps(grid, count=6):
    """The first `count` steps p L_x / L_v that shift the xi-lattice onto itself."""
    return [p * grid.L_x / grid.L_v for p in range(1, count + 1)]


def lattice_shift(grid, dt):
    """
    Integer xi-index shift per unit x-frequency index for a step dt.

    Raises:
        InadmissibleStepError: If dt k does not map the xi-lattice onto itself.
    """
    p = dt * grid.L_v / grid.L_x
    if p < 0.5 or abs(p - round(p)) > 1e-9 * max(1.0, p):
        steps = ", ".join(f"{s:.6g}" for s in admissible_steps(grid))
        raise InadmissibleStepError(
            f"dt={dt:.6g} does not shift the velocity-frequency lattice onto itself; "
            f"admissible steps are p*L_x/L_v for p = 1, 2, ...: {steps}, ..."
        )
    return int(round(p))


def _x_index(grid):
    """Signed x-frequency indices in scipy.fft order."""
    return np.rint(scipy.fft.fftfreq(grid.N_x, d=1.0 / grid.N_x)).astype(int)


def _shear(spectrum, grid, dt):
    """
    F(xi) -> e^(-i dt k.v0) F(xi + dt k) on every x-frequency fiber of an (x, v)
    spectrum. Content leaving the xi-lattice is dropped.
    """
    n = grid.n
    p = lattice_shift(grid, dt)
    m = _x_index(grid)
    out = scipy.fft.fftshift(spectrum, axes=tuple(range(n, 2 * n)))
    v0 = -grid.L_v / 2
    phase = np.ones(1)
    for i in range(n):
        axis = n + i
        shape = [1] * (2 * n)
        shape[i] = grid.N_x
        shift = (p * m).reshape(shape)
        vshape = [1] * (2 * n)
        vshape[axis] = grid.N_v
        source = np.arange(grid.N_v).reshape(vshape) + shift
        valid = (source >= 0) & (source < grid.N_v)
        index = np.broadcast_to(np.clip(source, 0, grid.N_v - 1), out.shape)
        out = np.take_along_axis(out, index, axis=axis) * np.broadcast_to(valid, out.shape)
        k = (2 * np.pi / grid.L_x * m).reshape(shape)
        phase = phase * np.exp(-1j * dt * k * v0)
    out = out * phase
    return scipy.fft.ifftshift(out, axes=tuple(range(n, 2 * n)))


def _lattice_xk(grid):
    """k and xi components on the (x, v) frequency lattice."""
    n = grid.n
    ndim = 2 * n
    k_c, xi_c = [], []
    for i in range(n):
        shape = [1] * ndim
        shape[i] = grid.N_x
        k_c.append(grid.freq("x").reshape(shape))
        shape = [1] * ndim
        shape[n + i] = grid.N_v
        xi_c.append(grid.freq("v").reshape(shape))
    return k_c, xi_c


def step_decay(grid, dt, beta):
    """exp(-integral_0^dt |xi + u k|^(2 beta) du) on the (x, v) frequency lattice."""
    k_c, xi_c = _lattice_xk(grid)
    if grid.n == 1:
        exponent = decay_exponent(xi_c[0], k_c[0], dt, beta)
    else:
        exponent = decay_exponent(xi_c, k_c, dt, beta)
    return np.broadcast_to(np.exp(-exponent), grid.shape(False))


def duhamel_oracle(g, beta, grid=None, f0=None):
    """
    Constant-coefficient solution (a = 1) on the time samples of `g`.

    The time step is h = L_t / N_t and must be admissible. With F the (x, v)
    spectrum, each step applies
        F_{j+1}(xi) = E(xi) [F_j(xi + h k) + h/2 G_j(xi + h k)] + h/2 G_{j+1}(xi)
    where E is the exact characteristic decay over one step.

    Args:
        g (Field): Source over (t, x, v).
        beta (float): Order in (0, 1].
        grid (GridSpec): Optional; must equal g.grid when given.
        f0 (Field): Initial datum over (x, v); zero when None.

    Returns:
        Field: f over (t, x, v) in the physical representation.
    """
    if grid is not None and grid != g.grid:
        raise ValueError("grid does not match the source grid")
    grid = g.grid
    h = grid.L_t / grid.N_t
    lattice_shift(grid, h)
    G = to_rep(g, t=PHYSICAL, x=FREQUENCY, v=FREQUENCY).data
    decay = step_decay(grid, h, beta)
    F = np.empty(grid.shape(True), dtype=complex)
    F[0] = 0.0 if f0 is None else to_rep(f0, x=FREQUENCY, v=FREQUENCY).data
    for j in range(grid.N_t - 1):
        F[j + 1] = decay * _shear(F[j] + 0.5 * h * G[j], grid, h) + 0.5 * h * G[j + 1]
    result = Field(F, grid, (PHYSICAL,) + (FREQUENCY,) * (2 * grid.n), True)
    return to_physical(result)


def _apply_operator(f, params, time_axis="periodic"):
    """d_t f + v.grad_x f + a |D_v|^(2 beta) f in the physical representation."""
    grid = f.grid
    if time_axis == "periodic":
        dtf = to_physical(time_derivative(to_rep(f, t=FREQUENCY)))
    elif time_axis == "interval":
        data = to_physical(f).data
        h = grid.L_t / grid.N_t
        dtf = physical_field(np.gradient(data, h, axis=0, edge_order=2), grid)
    else:
        raise ValueError(f"time_axis must be 'periodic' or 'interval', got {time_axis!r}")
    mixed = to_rep(f, t=PHYSICAL, x=FREQUENCY, v=PHYSICAL)
    total = dtf.data + to_physical(transport(mixed)).data
    if params.diffusion:
        qf = to_physical(_multiply_v(to_physical(f), params.symbol))
        if params.coefficient is None:
            product = qf
        else:
            product = qf.replace(data=params.coefficient.sample(grid) * qf.data)
        if params.dealias:
            product = dealias(product)
        total = total + product.data
    return physical_field(total, grid)


def _multiply_v(field, spec):
    moved = to_rep(field, v=FREQUENCY)
    symbol = np.broadcast_to(eval_symbol(spec, field.grid), field.grid.shape(False))
    # The frac_v symbol does not depend on k, so it applies in any x representation.
    data = moved.data * (symbol[np.newaxis] if field.has_time else symbol)
    return to_rep(moved.replace(data=data), v=PHYSICAL)


def manufactured_rhs(f, params):
    """
    g = d_t f + v.grad_x f + a |D_v|^(2 beta) f with spectral derivatives and a
    periodic time axis.

    The result is physical. It carries the "aliasing-risk" flag when f puts more than
    1e-8 of its energy in the top third of any frequency axis.
    """
    if not f.has_time:
        raise ValueError("manufactured_rhs needs a field over (t, x, v)")
    g = _apply_operator(f, params)
    return flag_band_limit(g, reference=f)


def check_residual(f, g, params, time_axis="periodic"):
    """
    Relative residual |d_t f + v.grad_x f + a Q f - g| / max(|g|, |f|).

    Args:
        time_axis (str): "periodic" for the spectral d_t, "interval" for second
            order finite differences on initial-value trajectories.
    """
    lhs = _apply_operator(f, params, time_axis)
    residual = lhs.data - to_physical(g).data
    scale = max(norm(g), norm(f))
    if scale == 0:
        return 0.0
    return float(np.sqrt(f.grid.cell_volume(True)) * np.linalg.norm(residual) / scale)


def _transport_half(field, dt):
    """Exact transport over dt: multiplication by exp(-i k.v dt) in the mixed representation."""
    mixed = to_rep(field, x=FREQUENCY, v=PHYSICAL)
    phase = 0.0
    for i in range(field.grid.n):
        axis = field.axis_names.index(f"x{i}")
        shape = [1] * field.data.ndim
        shape[axis] = field.grid.N_x
        k = field.grid.freq("x").reshape(shape)
        phase = phase + k * coordinate(field, f"v{i}")
    return mixed.replace(data=np.exp(-1j * dt * phase) * mixed.data)


def _diffuse(field, dt, params, t):
    """Diffusion over dt: exact for constant a, implicit Euler otherwise."""
    if not params.diffusion:
        return field
    grid = field.grid
    q = eval_symbol(params.symbol, grid)
    coefficient = params.coefficient
    constant = 1.0 if coefficient is None else coefficient.constant_value
    if constant is not None:
        spectrum = to_rep(field, v=FREQUENCY)
        return spectrum.replace(data=np.exp(-constant * dt * q) * spectrum.data)

    a = coefficient.sample(grid, t + dt / 2)
    inv_a = np.broadcast_to(1.0 / a, field.data.shape)
    v_axes = tuple(range(grid.n, 2 * grid.n))
    c = 0.5 * (inv_a.max(axis=v_axes, keepdims=True) + inv_a.min(axis=v_axes, keepdims=True))
    shape = inv_a.shape
    rhs = (inv_a * to_rep(field, x=PHYSICAL, v=PHYSICAL).data).ravel()
    if not np.any(rhs):
        return field.replace(data=np.zeros(shape, dtype=complex), rep=(PHYSICAL,) * (2 * grid.n))

    def v_multiply(u, symbol):
        u_hat = scipy.fft.fftn(u.reshape(shape), axes=v_axes, norm="ortho", workers=grid.workers)
        return scipy.fft.ifftn(symbol * u_hat, axes=v_axes, norm="ortho", workers=grid.workers)

    def matvec(u):
        return (inv_a * u.reshape(shape) + dt * v_multiply(u, q)).ravel()

    def precondition(r):
        return v_multiply(r, 1.0 / (c + dt * q)).ravel()

    size = rhs.size
    operator = LinearOperator((size, size), matvec=matvec, dtype=complex)
    preconditioner = LinearOperator((size, size), matvec=precondition, dtype=complex)
    iterations = [0]

    def count(_):
        iterations[0] += 1

    u, info = cg(operator, rhs, x0=precondition(rhs), rtol=params.solver_tol, atol=0.0,
                 maxiter=params.max_iterations, M=preconditioner, callback=count)
    if info != 0:
        relative = np.linalg.norm(matvec(u) - rhs) / np.linalg.norm(rhs)
        raise ConvergenceError(
            f"implicit diffusion did not reach {params.solver_tol:.1e} in "
            f"{params.max_iterations} iterations (last relative residual {relative:.3e})"
        )
    logger.debug("implicit diffusion converged in %d iterations", iterations[0])
    return field.replace(data=u.reshape(shape), rep=(PHYSICAL,) * (2 * grid.n))


def step_strang(f, dt, params, t=0.0, source=None):
    """
    One Strang step T(dt/2) D(dt) T(dt/2) from time t.

    The source enters by the midpoint rule: dt/2 g(t + dt/2) is added on both
    sides of the diffusion step. The variable coefficient is frozen at t + dt/2.

    Args:
        f (Field): State over (x, v).
        source: Callable t -> Field over (x, v), or None.

    Returns:
        Field: New state in the physical representation.
    """
    if f.has_time:
        raise ValueError("step_strang advances a field over (x, v)")
    u = _transport_half(f, dt / 2)
    g_mid = None
    if source is not None:
        g_mid = to_rep(source(t + dt / 2), x=FREQUENCY, v=PHYSICAL).data
        u = u.replace(data=u.data + 0.5 * dt * g_mid)
    u = _diffuse(u, dt, params, t)
    if g_mid is not None:
        u = to_rep(u, x=FREQUENCY, v=PHYSICAL)
        u = u.replace(data=u.data + 0.5 * dt * g_mid)
    u = _transport_half(u, dt / 2)
    return to_physical(u)


def solve_cauchy(problem, params):
    """
    Advance the initial value problem to T with Strang steps.

    Returns:
        Trajectory: Snapshots at t_j = j dt for j < N = T / dt and the state at T.
    """
    state = to_physical(problem.f0)
    steps = problem.steps
    snapshots = np.empty((steps,) + state.data.shape, dtype=complex)
    for j in range(steps):
        snapshots[j] = state.data
        state = step_strang(state, problem.dt, params, t=j * problem.dt, source=problem.source)
    logger.info("advanced %d steps of size %.3g to T=%.3g", steps, problem.dt, problem.T)
    return Trajectory(snapshots=snapshots, final=state, dt=problem.dt)


def sample_source(source, grid):
    """Stack a time-sliced source t -> Field(x, v) into a field over (t, x, v)."""
    slices = [to_physical(source(t)).data for t in grid.coords("t")]
    return physical_field(np.stack(slices), grid)


def sampled_source(g):
    """
    Time-sliced view of a field over (t, x, v), evaluated off the samples by
    trigonometric interpolation on the periodic time axis.
    """
    grid = g.grid
    spectrum = to_rep(g, t=FREQUENCY, x=PHYSICAL, v=PHYSICAL).data
    tau = grid.freq("t")
    # Split the Nyquist mode so interpolation of real data stays real.
    weights = np.ones(grid.N_t)
    weights[grid.N_t // 2] = 0.5
    def source(t):
        phases = weights * np.exp(1j * tau * t) / np.sqrt(grid.N_t)
        values = np.tensordot(phases, spectrum, axes=(0, 0))
        nyquist = spectrum[grid.N_t // 2] * 0.5 * np.exp(-1j * tau[grid.N_t // 2] * t) / np.sqrt(grid.N_t)
        return physical_field(values + nyquist, grid, has_time=False)

    return source


def coefficient_stats(coefficient, grid, delta=0.5):
    """
    Minimum of a over the (t, x, v) lattice and the H^(n+1+delta) norm of b chi at t = 0.
    """
    if coefficient is None:
        return {"min_a": 1.0, "bchi_sobolev_norm": 0.0, "sobolev_order": grid.n + 1 + delta}
    a = coefficient.sample(grid)
    _, xs, vs = grid_coordinates(grid, has_time=False)
    bchi = np.broadcast_to(coefficient.modifier(0.0)(xs, vs), grid.shape(False))
    field = physical_field(bchi, grid, has_time=False)
    order = grid.n + 1 + delta
    return {
        "min_a": float(np.min(a)),
        "bchi_sobolev_norm": sobolev_norm(field, order),
        "sobolev_order": order,
    }
