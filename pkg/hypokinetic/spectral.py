"""
Periodic lattices, unitary Fourier transforms and frequency multipliers.

A field lives on the lattice (t, x_1..x_n, v_1..v_n) or, without the time axis,
on (x_1..x_n, v_1..v_n). Each axis is either in the physical or in the frequency
representation; transforms flip the flag of the requested axes. Transforms are
unitary (`norm="ortho"`) and norms are weighted by the physical cell volume, so
Plancherel is an equality and norms of band-limited data do not depend on the
resolution.
"""
import logging
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.fft

from hypokinetic.errors import GridError, RepresentationError

logger = logging.getLogger(__name__)

PHYSICAL = "physical"
FREQUENCY = "frequency"

# Default memory budget for one complex field, in bytes.
DEFAULT_MEMORY_BUDGET = 2 * 1024**3

# Fraction of the energy allowed in the top third of the spectrum before a field is
# flagged as an aliasing risk.
BAND_LIMIT_TOL = 1e-8

MULTIPLIER_KINDS = ("frac_v", "aniso", "bracket_aniso")


@dataclass(frozen=True)
class GridSpec:
    """
    Periodic lattice with box lengths and frequency lattices.

    Attributes:
        n: Number of space (and velocity) dimensions, 1 or 2.
        N_t, N_x, N_v: Points per axis.
        L_t, L_x, L_v: Box lengths.
        workers: Threads handed to scipy.fft; results do not depend on it.
    """
    n: int
    N_t: int
    N_x: int
    N_v: int
    L_t: float
    L_x: float
    L_v: float
    workers: int = 1

    def points(self, letter):
        return {"t": self.N_t, "x": self.N_x, "v": self.N_v}[letter]

    def length(self, letter):
        return {"t": self.L_t, "x": self.L_x, "v": self.L_v}[letter]

    def spacing(self, letter):
        return self.length(letter) / self.points(letter)

    def freq(self, letter):
        """Angular frequencies of one axis, in scipy.fft ordering."""
        N = self.points(letter)
        return 2 * np.pi * scipy.fft.fftfreq(N, d=self.length(letter) / N)

    def coords(self, letter):
        """Physical coordinates of one axis; velocities are centered on 0."""
        N = self.points(letter)
        h = self.length(letter) / N
        start = -self.length(letter) / 2 if letter == "v" else 0.0
        return start + h * np.arange(N)

    def axis_names(self, has_time=True):
        names = [f"x{i}" for i in range(self.n)] + [f"v{i}" for i in range(self.n)]
        return (("t",) if has_time else ()) + tuple(names)

    def shape(self, has_time=True):
        return tuple(self.points(name[0]) for name in self.axis_names(has_time))

    def cell_volume(self, has_time=True):
        return float(np.prod([self.spacing(name[0]) for name in self.axis_names(has_time)]))

    def with_points(self, **points):
        """Copy of the grid with some of N_t, N_x, N_v replaced."""
        values = {k: getattr(self, k) for k in ("n", "N_t", "N_x", "N_v", "L_t", "L_x", "L_v")}
        values.update(points)
        return make_grid(**values, workers=self.workers)

    def refined(self):
        """Grid with every resolution doubled and the same box."""
        return self.with_points(N_t=2 * self.N_t, N_x=2 * self.N_x, N_v=2 * self.N_v)


def make_grid(n, N_t, N_x, N_v, L_t, L_x, L_v, memory_budget=DEFAULT_MEMORY_BUDGET, workers=1):
    """
    Validate lattice parameters and build a GridSpec.

    Raises:
        GridError: On odd or undersized N, non-positive L, unsupported n,
            or a (t,x,v) lattice larger than the memory budget.
    """
    if n not in (1, 2):
        raise GridError(f"n must be 1 or 2, got {n}")
    for name, N in (("N_t", N_t), ("N_x", N_x), ("N_v", N_v)):
        if int(N) != N or N < 4 or N % 2 != 0:
            raise GridError(f"{name} must be an even integer >= 4, got {N}")
    for name, L in (("L_t", L_t), ("L_x", L_x), ("L_v", L_v)):
        if not L > 0:
            raise GridError(f"{name} must be positive, got {L}")
    nbytes = 16 * N_t * N_x**n * N_v**n
    if nbytes > memory_budget:
        raise GridError(
            f"grid needs {nbytes} bytes per field, over the memory budget of {memory_budget} bytes"
        )
    return GridSpec(int(n), int(N_t), int(N_x), int(N_v), float(L_t), float(L_x), float(L_v), workers)


@dataclass(frozen=True)
class Field:
    """
    Complex samples on a grid with a representation flag per axis.

    The data array is made read-only; operations return new fields.
    """
    data: np.ndarray
    grid: GridSpec
    rep: tuple
    has_time: bool = True
    flags: frozenset = dataclass_field(default_factory=frozenset)

    def __post_init__(self):
        if self.data.shape != self.grid.shape(self.has_time):
            raise RepresentationError(
                f"data shape {self.data.shape} does not match grid shape {self.grid.shape(self.has_time)}"
            )
        if len(self.rep) != self.data.ndim or any(r not in (PHYSICAL, FREQUENCY) for r in self.rep):
            raise RepresentationError(f"invalid representation flags {self.rep}")
        self.data.setflags(write=False)

    @property
    def axis_names(self):
        return self.grid.axis_names(self.has_time)

    def axes_of(self, letters):
        """Indices of the axes whose names start with one of the letters."""
        return tuple(i for i, name in enumerate(self.axis_names) if name[0] in letters)

    def rep_of(self, letters):
        return {self.rep[i] for i in self.axes_of(letters)}

    def replace(self, data=None, rep=None, flags=None):
        return Field(
            np.asarray(self.data if data is None else data, dtype=complex),
            self.grid,
            tuple(self.rep if rep is None else rep),
            self.has_time,
            self.flags if flags is None else frozenset(flags),
        )

    def with_flag(self, flag):
        return self.replace(flags=self.flags | {flag})


def physical_field(data, grid, has_time=True):
    """Wrap a sampled array as a field in the physical representation."""
    data = np.array(data, dtype=complex)
    return Field(data, grid, (PHYSICAL,) * data.ndim, has_time)


def zeros(grid, has_time=True):
    return physical_field(np.zeros(grid.shape(has_time)), grid, has_time)


def _resolve_axes(field, axes):
    """Turn axis names or group letters ("t", "x", "v") into axis indices."""
    if isinstance(axes, str):
        axes = (axes,)
    names = field.axis_names
    indices = []
    for axis in axes:
        if axis in names:
            indices.append(names.index(axis))
        elif axis in ("t", "x", "v"):
            found = field.axes_of(axis)
            if not found:
                raise RepresentationError(f"field has no {axis} axis")
            indices.extend(found)
        else:
            raise RepresentationError(f"unknown axis {axis!r}")
    return tuple(sorted(set(indices)))


def transform(field, axes, direction):
    """
    Forward or inverse unitary FFT over the given axes.

    Args:
        field (Field): Input field.
        axes: Axis names ("x0", "v1", ...) or group letters ("t", "x", "v").
        direction (str): "forward" (physical -> frequency) or "inverse".

    Raises:
        RepresentationError: If an axis already is in the target representation.
    """
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    indices = _resolve_axes(field, axes)
    source, target = (PHYSICAL, FREQUENCY) if direction == "forward" else (FREQUENCY, PHYSICAL)
    for i in indices:
        if field.rep[i] != source:
            raise RepresentationError(f"axis {field.axis_names[i]} is already in the {target} representation")
    fft = scipy.fft.fftn if direction == "forward" else scipy.fft.ifftn
    data = fft(field.data, axes=indices, norm="ortho", workers=field.grid.workers)
    rep = list(field.rep)
    for i in indices:
        rep[i] = target
    return field.replace(data=data, rep=rep)


def to_rep(field, **reps):
    """
    Bring axis groups into a representation, transforming only where needed.

    Example:
        to_rep(f, t=FREQUENCY, x=FREQUENCY, v=PHYSICAL)
    """
    for letter, target in reps.items():
        if letter == "t" and not field.has_time:
            continue
        pending = [field.axis_names[i] for i in field.axes_of(letter) if field.rep[i] != target]
        if pending:
            field = transform(field, pending, "forward" if target == FREQUENCY else "inverse")
    return field


def to_physical(field):
    return to_rep(field, t=PHYSICAL, x=PHYSICAL, v=PHYSICAL)


def to_frequency(field):
    return to_rep(field, t=FREQUENCY, x=FREQUENCY, v=FREQUENCY)


def _broadcast(values, axis, ndim):
    shape = [1] * ndim
    shape[axis] = values.size
    return values.reshape(shape)


def freq_magnitude(field, letter):
    """|frequency| over the axes of one group, broadcastable against field.data."""
    total = 0.0
    for i in field.axes_of(letter):
        total = total + _broadcast(field.grid.freq(letter), i, field.data.ndim) ** 2
    return np.sqrt(total)


def coordinate(field, axis_name):
    i = field.axis_names.index(axis_name)
    return _broadcast(field.grid.coords(axis_name[0]), i, field.data.ndim)


def frequency(field, axis_name):
    i = field.axis_names.index(axis_name)
    return _broadcast(field.grid.freq(axis_name[0]), i, field.data.ndim)


@dataclass(frozen=True)
class MultiplierSpec:
    """
    A nonnegative frequency symbol.

    kind:
        frac_v:        |xi|^(2 beta)
        aniso:         (|xi|^2 + |k|^(2/(1+2 beta)))^beta
        bracket_aniso: (delta + |xi|^2 + <k>^(2/(1+2 beta)))^beta
    """
    kind: str
    beta: float
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in MULTIPLIER_KINDS:
            raise ValueError(f"unknown multiplier kind {self.kind!r}, expected one of {MULTIPLIER_KINDS}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")

    @property
    def axes(self):
        return ("v",) if self.kind == "frac_v" else ("x", "v")

    def symbol(self, k_abs, xi_abs):
        """Symbol value at |k| and |xi| (arrays broadcast together)."""
        b = self.beta
        if self.kind == "frac_v":
            return np.broadcast_to(xi_abs ** (2 * b), np.broadcast(k_abs, xi_abs).shape)
        if self.kind == "aniso":
            return (xi_abs**2 + k_abs ** (2 / (1 + 2 * b))) ** b
        bracket = np.sqrt(1 + k_abs**2)
        return (self.delta + xi_abs**2 + bracket ** (2 / (1 + 2 * b))) ** b


def lattice_magnitudes(grid):
    """|k| and |xi| on the (x, v) lattice, broadcastable to grid.shape(False)."""
    ndim = 2 * grid.n
    k2, xi2 = 0.0, 0.0
    for i in range(grid.n):
        k2 = k2 + _broadcast(grid.freq("x"), i, ndim) ** 2
        xi2 = xi2 + _broadcast(grid.freq("v"), grid.n + i, ndim) ** 2
    return np.sqrt(k2), np.sqrt(xi2)


def eval_symbol(spec, grid):
    """Symbol values sampled on the (x, v) frequency lattice."""
    k_abs, xi_abs = lattice_magnitudes(grid)
    values = spec.symbol(k_abs, xi_abs)
    return np.broadcast_to(values, grid.shape(False))


def apply_multiplier(field, spec):
    """
    Pointwise product with the symbol; the representation is unchanged.

    Raises:
        RepresentationError: If an axis read by the symbol is physical.
    """
    for letter in spec.axes:
        if field.rep_of(letter) != {FREQUENCY}:
            raise RepresentationError(f"multiplier {spec.kind} needs the {letter} axes in frequency representation")
    symbol = eval_symbol(spec, field.grid)
    if field.has_time:
        symbol = symbol[np.newaxis]
    return field.replace(data=field.data * symbol)


def multiply_symbol(field, spec):
    """Apply a multiplier from any representation, returning the input representation."""
    moved = to_rep(field, **{letter: FREQUENCY for letter in spec.axes})
    result = apply_multiplier(moved, spec)
    return to_rep(result, **_reps_by_letter(field))


def _reps_by_letter(field):
    reps = {}
    for letter in ("t", "x", "v"):
        found = field.rep_of(letter)
        if len(found) == 1:
            reps[letter] = found.pop()
    return reps


def _check_compatible(a, b):
    if a.grid != b.grid or a.has_time != b.has_time:
        raise RepresentationError("fields live on different grids")
    if a.rep != b.rep:
        raise RepresentationError(f"representation mismatch: {a.rep} vs {b.rep}")


def inner(a, b):
    """Discrete L2 inner product, conjugate-linear in the second argument."""
    _check_compatible(a, b)
    return a.grid.cell_volume(a.has_time) * np.vdot(b.data, a.data)


def norm(field):
    return float(np.sqrt(field.grid.cell_volume(field.has_time)) * np.linalg.norm(field.data))


def weighted_norm(field, exponents):
    """
    L2 norm of prod |freq_axis|^s f_hat over the whole grid.

    Args:
        exponents (dict): Group letter -> exponent s >= 0, e.g. {"v": 0.5, "x": 0.25}.
    """
    weight = 1.0
    for letter, s in exponents.items():
        if s < 0:
            raise ValueError(f"exponent must be >= 0, got {s}")
        if s == 0:
            continue
        if field.rep_of(letter) != {FREQUENCY}:
            raise RepresentationError(f"the {letter} axes must be in frequency representation")
        weight = weight * freq_magnitude(field, letter) ** s
    return float(np.sqrt(field.grid.cell_volume(field.has_time)) * np.linalg.norm(field.data * weight))


def transport(field):
    """
    v . grad_x applied as the multiplication by i k.v in the mixed representation.

    Requires the x axes in frequency and the v axes in physical representation.
    """
    if field.rep_of("x") != {FREQUENCY} or field.rep_of("v") != {PHYSICAL}:
        raise RepresentationError("transport needs x in frequency and v in physical representation")
    phase = 0.0
    for i in range(field.grid.n):
        phase = phase + frequency(field, f"x{i}") * coordinate(field, f"v{i}")
    return field.replace(data=1j * phase * field.data)


def time_derivative(field):
    if not field.has_time or field.rep_of("t") != {FREQUENCY}:
        raise RepresentationError("time derivative needs the t axis in frequency representation")
    return field.replace(data=1j * frequency(field, "t") * field.data)


def _top_third_mask(field):
    mask = np.zeros(field.data.shape, dtype=bool)
    for i, name in enumerate(field.axis_names):
        f = np.abs(field.grid.freq(name[0]))
        cut = (2.0 / 3.0) * f.max()
        mask |= _broadcast(f > cut, i, field.data.ndim)
    return mask


def high_band_fraction(field):
    """Fraction of the energy carried by the top third of any frequency axis."""
    spectrum = to_frequency(field).data
    total = np.sum(np.abs(spectrum) ** 2)
    if total == 0:
        return 0.0
    return float(np.sum(np.abs(spectrum[_top_third_mask(field)]) ** 2) / total)


def flag_band_limit(field, reference=None):
    """Add the aliasing-risk flag when the top third carries too much energy."""
    fraction = high_band_fraction(field if reference is None else reference)
    if fraction > BAND_LIMIT_TOL:
        logger.warning("top third of the spectrum carries %.3e of the energy; aliasing risk", fraction)
        return field.with_flag("aliasing-risk")
    return field


def dealias(field):
    """2/3-rule filter on every axis; returns the input representation."""
    spectral = to_frequency(field)
    data = np.where(_top_third_mask(spectral), 0.0, spectral.data)
    return to_rep(spectral.replace(data=data), **_reps_by_letter(field))


def sobolev_norm(field, order):
    """L2 norm of <(k, xi)>^order f_hat over the x and v axes."""
    moved = to_rep(field, x=FREQUENCY, v=FREQUENCY)
    radius2 = freq_magnitude(moved, "x") ** 2 + freq_magnitude(moved, "v") ** 2
    weight = (1.0 + radius2) ** (order / 2)
    return float(np.sqrt(moved.grid.cell_volume(moved.has_time)) * np.linalg.norm(moved.data * weight))
