"""
Mechanics of the averaging and hypoellipticity arguments, evaluated on lattice data.

The frequency split of a fixed x-frequency fiber into |xi| >= D and |xi| < D,
its lambda-balanced bound, the Hoelder aggregation over fibers, the step-4
pairing of the equation with the anisotropic multiplier, and the small-frequency
term of the initial value problem.
"""
import logging
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import pandas as pd
import sympy

from hypokinetic.estimates import EstimateReport, _row, frac_norm, gain_exponent, mixed_norm
from hypokinetic.model import ModelParams, check_residual
from hypokinetic.spectral import (
    FREQUENCY,
    PHYSICAL,
    MultiplierSpec,
    apply_multiplier,
    inner,
    norm,
    to_frequency,
    to_rep,
    transport,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitParams:
    """
    Frequency split D = lam |k|^(r/m).

    Attributes:
        r: x-frequency weight exponent, >= 0.
        m: velocity-frequency moment exponent, > 0.
        lam: Rescaling of the cut, > 0.
    """
    r: float
    m: float
    lam: float = 1.0

    def __post_init__(self):
        if self.r < 0 or self.m <= 0 or self.lam <= 0:
            raise ValueError(f"need r >= 0, m > 0, lam > 0; got r={self.r}, m={self.m}, lam={self.lam}")

    @classmethod
    def balanced(cls, alpha, lam=1.0):
        """m = 2 alpha and r = 2m/(m+2), the exponents of the averaging estimate."""
        m = 2 * alpha
        return cls(r=2 * m / (m + 2), m=m, lam=lam)

    def cut(self, k_abs):
        return self.lam * np.asarray(k_abs, dtype=float) ** (self.r / self.m)


@dataclass(frozen=True)
class SplitResult:
    A: float
    B: float
    U: float
    V: float
    W: float
    D: float
    k_abs: float
    a_bound: float
    b_ratio: float
    skipped: bool = False

    @property
    def a_ratio(self):
        return self.A / self.a_bound if self.a_bound > 0 else 0.0


def _fiber_layout(field):
    """Move the x axes first: returns data of shape (N_x^n, rest) and |k| per fiber."""
    x_axes = field.axes_of("x")
    rest = tuple(i for i in range(field.data.ndim) if i not in x_axes)
    data = np.transpose(field.data, x_axes + rest)
    n_fibers = int(np.prod([field.data.shape[i] for i in x_axes]))
    data = data.reshape(n_fibers, -1)
    k = field.grid.freq("x")
    mesh = np.meshgrid(*([k] * field.grid.n), indexing="ij")
    k_abs = np.sqrt(sum(c**2 for c in mesh)).ravel()
    return data, k_abs


def _xi_layout(field):
    """|xi| on the non-x axes, flattened in the order of _fiber_layout."""
    shape = [field.data.shape[i] for i in range(field.data.ndim) if field.axis_names[i][0] != "x"]
    names = [name for name in field.axis_names if name[0] != "x"]
    xi2 = 0.0
    for axis, name in enumerate(names):
        if name[0] == "v":
            s = [1] * len(shape)
            s[axis] = shape[axis]
            xi2 = xi2 + field.grid.freq("v").reshape(s) ** 2
    return np.broadcast_to(np.sqrt(xi2), shape).ravel()


def _fiber_index(field, k_index):
    """Flat fiber position of a tuple of signed x-frequency indices."""
    k_index = (k_index,) if np.isscalar(k_index) else tuple(k_index)
    if len(k_index) != field.grid.n:
        raise ValueError(f"k-slice needs {field.grid.n} indices, got {k_index}")
    N = field.grid.N_x
    return int(np.ravel_multi_index(tuple(i % N for i in k_index), (N,) * field.grid.n))


def _spectral(field):
    return to_frequency(field)


def split_AB(fhat, ghat, params, k_index):
    """
    Split the weighted energy of one x-frequency fiber at |xi| = D.

    U = sum |k|^r |f|^2, V = sum |xi|^m |f|^2, W = sum |g|^2 over the fiber, with
    A the part of U over |xi| >= D and B the part over |xi| < D. A is bounded by
    D^(-m) |k|^r V = lam^(-m) V; B is reported against lam U^1/2 W^1/2.
    The k = 0 fiber is skipped.
    """
    fhat, ghat = _spectral(fhat), _spectral(ghat)
    volume = fhat.grid.cell_volume(fhat.has_time)
    f_data, k_abs = _fiber_layout(fhat)
    g_data, _ = _fiber_layout(ghat)
    position = _fiber_index(fhat, k_index)
    k = float(k_abs[position])
    if k == 0:
        logger.warning("split_AB: k = 0 fiber skipped")
        return SplitResult(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, skipped=True)
    xi = _xi_layout(fhat)
    energy = volume * np.abs(f_data[position]) ** 2
    D = float(params.cut(k))
    U = float(k**params.r * energy.sum())
    V = float(np.sum(xi**params.m * energy))
    W = float(volume * np.sum(np.abs(g_data[position]) ** 2))
    high = xi >= D
    A = float(k**params.r * energy[high].sum())
    B = float(k**params.r * energy[~high].sum())
    a_bound = D ** (-params.m) * k**params.r * V
    scale = params.lam * np.sqrt(U * W)
    b_ratio = B / scale if scale > 0 else (0.0 if B == 0 else np.inf)
    return SplitResult(A, B, U, V, W, D, k, float(a_bound), float(b_ratio))


def fiber_moments(fhat, ghat, r, m):
    """Per-fiber moments U, V, W over every x-frequency fiber, k = 0 included."""
    fhat, ghat = _spectral(fhat), _spectral(ghat)
    volume = fhat.grid.cell_volume(fhat.has_time)
    f_data, k_abs = _fiber_layout(fhat)
    g_data, _ = _fiber_layout(ghat)
    xi = _xi_layout(fhat)
    energy = volume * np.abs(f_data) ** 2
    return pd.DataFrame({
        "fiber": np.arange(len(k_abs)),
        "k_abs": k_abs,
        "U": k_abs**r * energy.sum(axis=1),
        "V": (xi**m * energy).sum(axis=1),
        "W": volume * (np.abs(g_data) ** 2).sum(axis=1),
    })


@dataclass(frozen=True)
class BalanceResult:
    lam: float
    bound: float
    phi_balanced: float
    lam_min: float
    phi_min: float
    grid_min: float
    within_tolerance: bool

    @property
    def gap(self):
        """phi at the balancing lambda over the true minimum of phi."""
        return self.phi_balanced / self.phi_min if self.phi_min > 0 else 1.0


def balance_lambda(U, V, W, m, grid_points=4001, tolerance=0.05):
    """
    Balance phi(lam) = lam U^1/2 W^1/2 + lam^(-m) V.

    The two terms are equal at lam^(m+1) = V / (U^1/2 W^1/2), which yields the
    bound U <= V^(2/(m+2)) W^(m/(m+2)) up to a constant. The exact minimizer is
    lam_min^(m+1) = m V / (U^1/2 W^1/2) with phi_min = U^1/2 W^1/2 lam_min (1 + 1/m);
    a grid search over [lam/100, 100 lam] must come within `tolerance` of phi_min.
    """
    if min(U, V, W) < 0 or m <= 0:
        raise ValueError("need U, V, W >= 0 and m > 0")
    bound = V ** (2 / (m + 2)) * W ** (m / (m + 2))
    a = np.sqrt(U * W)
    if V == 0 or a == 0:
        lam = 0.0 if V == 0 else np.inf
        phi = 0.0 if V == 0 else np.nan
        return BalanceResult(lam, bound, phi, lam, phi, phi, True)

    lam = (V / a) ** (1 / (m + 1))
    lam_min = (m * V / a) ** (1 / (m + 1))

    def phi(x):
        return x * a + x ** (-m) * V

    phi_min = a * lam_min * (1 + 1 / m)
    samples = np.geomspace(lam / 100, 100 * lam, grid_points)
    grid_min = float(np.min(phi(samples)))
    within = bool(phi_min * (1 - 1e-12) <= grid_min <= phi_min * (1 + tolerance))
    if not within:
        logger.warning("balance_lambda: grid minimum %.6g vs closed form %.6g", grid_min, phi_min)
    return BalanceResult(float(lam), float(bound), float(phi(lam)), float(lam_min), float(phi_min), grid_min, within)


def holder_aggregate(per_k, m):
    """
    Hoelder aggregation of fiber moments: ratio
    [sum U / ((sum V)^(2/(m+2)) (sum W)^(m/(m+2)))]^1/2.

    Args:
        per_k: DataFrame with U, V, W columns or a list of (U, V, W) tuples.
    """
    frame = per_k if isinstance(per_k, pd.DataFrame) else pd.DataFrame(list(per_k), columns=["U", "V", "W"])
    if frame.empty:
        raise ValueError("holder_aggregate needs at least one fiber")
    U, V, W = (float(frame[c].sum()) for c in ("U", "V", "W"))
    lhs = np.sqrt(U)
    rhs = np.sqrt(V ** (2 / (m + 2)) * W ** (m / (m + 2)))
    return EstimateReport.from_rows("holder-aggregate", [_row(lhs, rhs, 0.0, m=m, fibers=len(frame))])


@dataclass
class Step4Terms:
    lhs_pos: float
    I: float
    I_symbol: float
    II: float
    I_bound: float
    II_bound: float
    residual: float
    flags: list = dataclass_field(default_factory=list)

    @property
    def closure(self):
        """|LHS - (I + II)| relative to |I| + |II| + |LHS|."""
        scale = abs(self.lhs_pos) + abs(self.I) + abs(self.II)
        return abs(self.lhs_pos - self.I - self.II) / scale if scale > 0 else 0.0

    @property
    def symbol_discrepancy(self):
        scale = max(abs(self.I), abs(self.I_symbol))
        return abs(self.I - self.I_symbol) / scale if scale > 0 else 0.0

    @property
    def I_ratio(self):
        return abs(self.I) / self.I_bound if self.I_bound > 0 else 0.0

    @property
    def II_ratio(self):
        return abs(self.II) / self.II_bound if self.II_bound > 0 else 0.0


def step4_terms(f, g, beta, variant="aniso", delta=0.0):
    """
    Pair the constant-coefficient equation with P f, P the anisotropic multiplier.

    Re(Q f, P f) = I + II with I = -Re(T f, P f) the transport pairing, evaluated
    directly, and II = Re(g, P f). The symbol form
    I = -beta sum (k.xi) (base)^(beta-1) |f_hat|^2 is reported next to it; the
    zero (k, xi) mode is excluded there when the base vanishes.
    """
    residual = check_residual(f, g, ModelParams(beta))
    p_spec = MultiplierSpec(variant, beta, delta)
    q_spec = MultiplierSpec("frac_v", beta)
    fhat = to_frequency(f)
    ghat = to_frequency(g)
    grid = f.grid
    pf = apply_multiplier(fhat, p_spec)
    qf = apply_multiplier(fhat, q_spec)
    mixed = to_rep(f, t=PHYSICAL, x=FREQUENCY, v=PHYSICAL)
    tf = to_frequency(transport(mixed))
    lhs_pos = float(np.real(inner(qf, pf)))
    I = float(-np.real(inner(tf, pf)))
    II = float(np.real(inner(ghat, pf)))

    flags = []
    k_dot_xi, base = _step4_symbol_parts(grid, beta, variant, delta)
    energy = np.abs(fhat.data) ** 2
    zero = base == 0
    weight = np.where(zero, 0.0, k_dot_xi * np.where(zero, 1.0, base) ** (beta - 1))
    if np.any(zero) and float(np.sum(energy * zero[np.newaxis])) > 0:
        flags.append("zero-mode-excluded")
        logger.warning("step4_terms: zero (k, xi) mode excluded from the symbol sum")
    volume = grid.cell_volume(True)
    I_symbol = float(-beta * volume * np.sum(weight[np.newaxis] * energy))

    s = gain_exponent(beta)
    gain = frac_norm(f, s, "x")
    I_bound = mixed_norm(f, beta, beta / (1 + 2 * beta)) * gain
    II_bound = (frac_norm(f, 2 * beta, "v") + gain) * norm(g)
    return Step4Terms(lhs_pos, I, I_symbol, II, float(I_bound), float(II_bound), residual, flags)


def _step4_symbol_parts(grid, beta, variant, delta):
    """k.xi and the base of the pairing symbol on the (x, v) lattice."""
    n = grid.n
    ndim = 2 * n
    k_dot_xi = 0.0
    k2 = 0.0
    xi2 = 0.0
    for i in range(n):
        shape_k = [1] * ndim
        shape_k[i] = grid.N_x
        shape_v = [1] * ndim
        shape_v[n + i] = grid.N_v
        k = grid.freq("x").reshape(shape_k)
        xi = grid.freq("v").reshape(shape_v)
        k_dot_xi = k_dot_xi + k * xi
        k2 = k2 + k**2
        xi2 = xi2 + xi**2
    exponent = 2 / (1 + 2 * beta)
    if variant == "aniso":
        base = xi2 + np.sqrt(k2) ** exponent
    elif variant == "bracket_aniso":
        base = delta + xi2 + np.sqrt(1 + k2) ** exponent
    else:
        raise ValueError(f"step-4 pairing needs an anisotropic symbol, got {variant!r}")
    shape = grid.shape(False)
    return np.broadcast_to(k_dot_xi, shape), np.broadcast_to(base, shape)


@dataclass(frozen=True)
class IvpTermResult:
    iii: float
    iii_relaxed: float
    bound: float
    k_abs: float
    D: float
    skipped: bool = False

    @property
    def ratio(self):
        return self.iii / self.bound if self.bound > 0 else 0.0


def _time_measure(eta, k_vec, D):
    """Length of {t >= 0 : |eta - t k| <= D} for eta of shape (..., n)."""
    k2 = float(np.dot(k_vec, k_vec))
    ek = eta @ k_vec
    disc = ek**2 - k2 * (np.sum(eta**2, axis=-1) - D**2)
    root = np.sqrt(np.clip(disc, 0.0, None))
    lo = (ek - root) / k2
    hi = (ek + root) / k2
    return np.where(disc > 0, np.clip(hi, 0.0, None) - np.clip(lo, 0.0, None), 0.0)


def _relaxed_measure(eta, k_abs, D):
    """Length of {t >= 0 : |t - |eta|/|k|| <= D/|k|}."""
    center = np.sqrt(np.sum(eta**2, axis=-1)) / k_abs
    half = D / k_abs
    return np.clip(center + half, 0.0, None) - np.clip(center - half, 0.0, None)


def check_ivp_term(f0, params, k_index):
    """
    Small-frequency term of the initial value problem on one x-frequency fiber.

    For free transport from f0, the time integral of |k|^r |f_hat|^2 over
    |xi| <= D equals |k|^r sum |F0(eta)|^2 |{t >= 0 : |eta - t k| <= D}|. It is
    compared with |k|^(r-1) D sum |F0|^2; the ratio never exceeds 2. The relaxed
    set {|t - |eta|/|k|| <= D/|k|} is evaluated alongside.
    """
    if f0.has_time:
        raise ValueError("check_ivp_term needs an initial datum over (x, v)")
    fhat = to_frequency(f0)
    grid = f0.grid
    position = _fiber_index(fhat, k_index)
    f_data, k_abs_all = _fiber_layout(fhat)
    k_abs = float(k_abs_all[position])
    if k_abs == 0:
        logger.warning("check_ivp_term: k = 0 fiber skipped")
        return IvpTermResult(0.0, 0.0, 0.0, 0.0, 0.0, skipped=True)
    k_index = (k_index,) if np.isscalar(k_index) else tuple(k_index)
    k_vec = np.array([2 * np.pi / grid.L_x * i for i in k_index], dtype=float)
    xi = grid.freq("v")
    mesh = np.meshgrid(*([xi] * grid.n), indexing="ij")
    eta = np.stack([c.ravel() for c in mesh], axis=-1)
    energy = grid.cell_volume(False) * np.abs(f_data[position]) ** 2
    D = float(params.cut(k_abs))
    weight = k_abs**params.r
    iii = float(weight * np.sum(energy * _time_measure(eta, k_vec, D)))
    iii_relaxed = float(weight * np.sum(energy * _relaxed_measure(eta, k_abs, D)))
    bound = float(k_abs ** (params.r - 1) * D * energy.sum())
    return IvpTermResult(iii, iii_relaxed, bound, k_abs, D)


def exponent_identity(params, grid):
    """
    Check |k|^(2(r-1)) D^2 = |k|^r for D = |k|^(r/m): symbolically for r = 2m/(m+2),
    and numerically on every nonzero lattice |k| with the given exponents.
    """
    m = sympy.symbols("m", positive=True)
    r = 2 * m / (m + 2)
    symbolic = sympy.simplify(2 * (r - 1) + 2 * r / m - r) == 0

    k = grid.freq("x")
    mesh = np.meshgrid(*([k] * grid.n), indexing="ij")
    k_abs = np.sqrt(sum(c**2 for c in mesh)).ravel()
    k_abs = k_abs[k_abs > 0]
    D = k_abs ** (params.r / params.m)
    lhs = k_abs ** (2 * (params.r - 1)) * D**2
    rhs = k_abs**params.r
    max_error = float(np.max(np.abs(lhs - rhs) / rhs))
    return {"symbolic": bool(symbolic), "max_relative_error": max_error, "holds": bool(symbolic and max_error <= 1e-12)}
