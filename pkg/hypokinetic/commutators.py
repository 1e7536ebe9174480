"""
Commutators [b chi, M] of a smooth modifier with a frequency multiplier.

The commutator is applied spectrally on the (x, v) lattice. In one dimension and
for beta < 1/2 it is cross-checked against the singular-integral form of
|D_v|^(2 beta) with the periodized kernel. Operator norms are estimated from a
random corpus and by power iteration, and bounded from above by the Schur test
on the exact discrete kernel.
"""
import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.fft
from scipy.integrate import quad
from scipy.signal import resample
from scipy.special import roots_legendre, zeta

from hypokinetic.corpus import random_field
from hypokinetic.estimates import EstimateReport, _row
from hypokinetic.model import grid_coordinates, smooth_bump
from hypokinetic.spectral import (
    GridSpec,
    MultiplierSpec,
    eval_symbol,
    flag_band_limit,
    physical_field,
    sobolev_norm as field_sobolev_norm,
    to_physical,
)

logger = logging.getLogger(__name__)

WEIGHT_ORDERS = ("principal", "literal")


@dataclass(frozen=True)
class CommutatorSpec:
    """
    A multiplier, a modifier b chi and the lattice they are sampled on.

    Attributes:
        multiplier: The symbol M.
        modifier: Real callable (xs, vs) -> array.
        grid: Lattice; only the (x, v) part is used.
        weight_order: "principal" weights the large-beta regime with |xi|^max(2 beta - 1, 0),
            "literal" with |xi|^max(beta - 1/2, 0).
        h0: Near-field radius of the kernel quadrature; L_v/16 when None.
        nodes: Gauss-Legendre nodes per quadrature panel.
    """
    multiplier: MultiplierSpec
    modifier: Callable
    grid: GridSpec
    weight_order: str = "principal"
    corpus_size: int = 8
    seed: int = 0
    max_iterations: int = 100
    rel_tol: float = 1e-6
    h0: Optional[float] = None
    nodes: int = 8

    def __post_init__(self):
        if self.weight_order not in WEIGHT_ORDERS:
            raise ValueError(f"weight_order must be one of {WEIGHT_ORDERS}, got {self.weight_order!r}")

    @property
    def beta(self):
        return self.multiplier.beta

    @property
    def regime(self):
        """Weight the lemma is stated with: "plain" for beta <= 1/2, "shifted" above."""
        return "plain" if self.beta <= 0.5 else "shifted"

    @property
    def shift_order(self):
        if self.weight_order == "principal":
            return max(2 * self.beta - 1, 0.0)
        return max(self.beta - 0.5, 0.0)

    def with_grid(self, grid):
        return dataclasses.replace(self, grid=grid)

    def sample(self, grid=None):
        """Modifier values over (x, v)."""
        grid = self.grid if grid is None else grid
        _, xs, vs = grid_coordinates(grid, has_time=False)
        values = np.real(np.asarray(self.modifier(xs, vs)))
        return np.array(np.broadcast_to(values, grid.shape(False)), dtype=float)


def _axes(grid):
    return tuple(range(2 * grid.n))


def _apply_symbol(data, symbol, grid):
    axes = _axes(grid)
    spectrum = scipy.fft.fftn(data, axes=axes, norm="ortho", workers=grid.workers)
    return scipy.fft.ifftn(symbol * spectrum, axes=axes, norm="ortho", workers=grid.workers)


def _commutator_array(u, f, symbol, grid):
    """M(u f) - u M(f) on (x, v) arrays; exactly zero for a constant u."""
    if np.ptp(u) == 0:
        return np.zeros(f.shape, dtype=complex)
    return _apply_symbol(u * f, symbol, grid) - u * _apply_symbol(f, symbol, grid)


def commutator_apply(spec, f):
    """
    [b chi, M] f = M(b chi f) - b chi M f, returned in the physical representation.

    Fields over (t, x, v) are handled slice by slice in time. The result carries the
    "aliasing-risk" flag when b chi f puts more than 1e-8 of its energy in the top third.
    """
    grid = f.grid
    u = spec.sample(grid)
    symbol = eval_symbol(spec.multiplier, grid)
    data = to_physical(f).data
    if f.has_time:
        out = np.stack([_commutator_array(u, slice_, symbol, grid) for slice_ in data])
        product = u[np.newaxis] * data
    else:
        out = _commutator_array(u, data, symbol, grid)
        product = u * data
    result = physical_field(out, grid, f.has_time)
    return flag_band_limit(result, reference=physical_field(product, grid, f.has_time))


def periodic_kernel(h, beta, L):
    """sum_j |h + j L|^-(1 + 2 beta) for 0 < h < L, via the Hurwitz zeta function."""
    s = 1 + 2 * beta
    h = np.asarray(h, dtype=float)
    return L ** (-s) * (zeta(s, h / L) + zeta(s, 1 - h / L))


def kernel_constant(beta, L):
    """c with c int_{-L/2}^{L/2} (1 - cos(xi_1 h)) K(h) dh = |xi_1|^(2 beta), xi_1 = 2 pi / L."""
    xi1 = 2 * np.pi / L
    integral, _ = quad(
        lambda h: (1 - np.cos(xi1 * h)) * periodic_kernel(h, beta, L),
        0.0, L / 2, limit=200, epsabs=0.0, epsrel=1e-12,
    )
    return xi1 ** (2 * beta) / (2 * integral)


def _panels(edges, nodes):
    """Gauss-Legendre nodes and weights over consecutive panels."""
    x, w = roots_legendre(nodes)
    points, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        points.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(points), np.concatenate(weights)


def _shift(data, xi, h):
    """Values at v + h for every h, by spectral translation along the last axis."""
    spectrum = scipy.fft.fft(data, axis=-1, norm="ortho")
    phases = np.exp(1j * np.multiply.outer(h, xi))
    return scipy.fft.ifft(spectrum[np.newaxis] * phases[:, np.newaxis, :], axis=-1, norm="ortho")


def _derivative(data, xi, order):
    spectrum = scipy.fft.fft(data, axis=-1, norm="ortho")
    return scipy.fft.ifft((1j * xi) ** order * spectrum, axis=-1, norm="ortho")


def kernel_commutator_1d(spec, f, h0=None, nodes=None, near_levels=30):
    """
    [b chi, |D_v|^(2 beta)] f from the singular integral, n = 1 and beta < 1/2.

    With K the periodized kernel and u = b chi,
        [u, Q] f (v) = -c int_0^{L/2} pair(h) K(h) dh,
        pair(h) = [u(v+h) - u(v)] f(v+h) + [u(v-h) - u(v)] f(v-h),
    c calibrated on the first lattice mode. On [0, h0] the leading Taylor term
    h^2 (2 u' f' + u'' f) of pair is integrated exactly against h^-(1+2 beta) and the
    remainder by Gauss-Legendre on geometric panels; the far field uses uniform
    panels of about four cells.

    Raises:
        ValueError: Outside n = 1, the frac_v symbol and beta < 1/2.
    """
    grid = f.grid
    beta = spec.beta
    if grid.n != 1 or spec.multiplier.kind != "frac_v" or not beta < 0.5:
        raise ValueError("kernel_commutator_1d supports n = 1, the frac_v symbol and beta < 1/2 only")
    if f.has_time:
        raise ValueError("kernel_commutator_1d needs a field over (x, v)")
    nodes = spec.nodes if nodes is None else nodes
    L = grid.L_v
    dv = grid.spacing("v")
    h0 = (spec.h0 if spec.h0 is not None else L / 16) if h0 is None else h0
    s = 1 + 2 * beta
    xi = grid.freq("v")
    c = kernel_constant(beta, L)

    u = spec.sample(grid).astype(complex)
    data = to_physical(f).data
    u_d1, u_d2 = _derivative(u, xi, 1), _derivative(u, xi, 2)
    f_d1 = _derivative(data, xi, 1)
    taylor = 2 * u_d1 * f_d1 + u_d2 * data

    def pair(h):
        u_plus, u_minus = _shift(u, xi, h), _shift(u, xi, -h)
        f_plus, f_minus = _shift(data, xi, h), _shift(data, xi, -h)
        return (u_plus - u[np.newaxis]) * f_plus + (u_minus - u[np.newaxis]) * f_minus

    near_edges = h0 * 2.0 ** -np.arange(near_levels, -1, -1)
    h_near, w_near = _panels(near_edges, nodes)
    near = pair(h_near) * periodic_kernel(h_near, beta, L)[:, None, None]
    near = near - taylor[np.newaxis] * (h_near ** (2 - s))[:, None, None]
    near_sum = np.tensordot(w_near, near, axes=(0, 0)) + taylor * h0 ** (3 - s) / (3 - s)

    count = max(1, int(np.ceil((L / 2 - h0) / (4 * dv))))
    far_edges = np.linspace(h0, L / 2, count + 1)
    h_far, w_far = _panels(far_edges, nodes)
    far = pair(h_far) * periodic_kernel(h_far, beta, L)[:, None, None]
    far_sum = np.tensordot(w_far, far, axes=(0, 0))

    result = -c * (near_sum + far_sum)
    return physical_field(result, grid, has_time=False)


def kernel_bound_check(spec):
    """
    Sampled kernel of [b chi, Q] against min(|(b chi)'| |h|, 2 |b chi|) K(h).

    The kernel is -c [u(z) - u(v)] K(z - v) with K periodized; h is the periodic
    distance. Also reports the constant C with K(h) <= C |h|^-(1+2 beta) on the lattice.
    """
    grid = spec.grid
    beta = spec.beta
    if grid.n != 1:
        raise ValueError("kernel_bound_check samples the one-dimensional kernel")
    L = grid.L_v
    s = 1 + 2 * beta
    c = kernel_constant(beta, L)
    u = spec.sample(grid)
    xi = grid.freq("v")
    slope = np.real(_derivative(u.astype(complex), xi, 1))
    # sampled on an 8x finer lattice so the sup bounds every chord slope
    lipschitz = float(np.max(np.abs(resample(slope, 8 * grid.N_v, axis=-1))))
    sup = float(np.max(np.abs(u)))
    j = np.arange(grid.N_v)
    offset = (j[np.newaxis, :] - j[:, np.newaxis]) % grid.N_v
    nonzero = offset != 0
    h = np.where(nonzero, offset, 1) * grid.spacing("v")
    distance = np.minimum(h, L - h)
    kernel = periodic_kernel(np.where(nonzero, h, L / 2), beta, L)
    worst = 0.0
    for row in u:
        values = c * np.abs(row[np.newaxis, :] - row[:, np.newaxis]) * kernel
        bound = c * np.minimum(lipschitz * distance, 2 * sup) * kernel
        ratio = np.where(nonzero & (bound > 0), values / np.where(bound > 0, bound, 1.0), 0.0)
        worst = max(worst, float(ratio.max()))
    power_constant = float(np.max(kernel[nonzero] * distance[nonzero] ** s))
    return {"max_ratio": worst, "holds": worst <= 1 + 1e-9, "power_constant": power_constant}


def _weight(spec, grid, weight):
    if weight == "plain":
        return np.ones(grid.shape(False))
    if weight != "shifted":
        raise ValueError(f"weight must be 'plain' or 'shifted', got {weight!r}")
    xi_spec = MultiplierSpec("frac_v", 0.5)
    xi_abs = eval_symbol(xi_spec, grid)
    return xi_abs**spec.shift_order + 1.0


def _band_mask(grid):
    mask = np.ones(grid.shape(False), dtype=bool)
    ndim = 2 * grid.n
    for axis in range(ndim):
        letter = "x" if axis < grid.n else "v"
        f = np.abs(grid.freq(letter))
        shape = [1] * ndim
        shape[axis] = f.size
        mask &= (f <= (2.0 / 3.0) * f.max()).reshape(shape)
    return mask


@dataclass(frozen=True)
class OpNormResult:
    estimate: float
    corpus_max: float
    power_value: float
    iterations: int
    converged: bool
    seed: int
    weight: str


def op_norm_estimate(spec, weight="plain"):
    """
    sup |[b chi, M] f| / |f|_weight, the larger of a corpus maximum and power iteration.

    The shifted weight norm is ||D_v|^w f| + |f|; power iteration runs on B*B with
    B = A W^-1 and W = |xi|^w + 1, restricted to the 2/3 band, with A* = -A.
    """
    grid = spec.grid
    u = spec.sample(grid)
    symbol = eval_symbol(spec.multiplier, grid)
    w = _weight(spec, grid, weight)
    axes = _axes(grid)

    def forward(x):
        return scipy.fft.fftn(x, axes=axes, norm="ortho", workers=grid.workers)

    def inverse(x):
        return scipy.fft.ifftn(x, axes=axes, norm="ortho", workers=grid.workers)

    corpus_max = 0.0
    for i in range(spec.corpus_size):
        f = random_field(grid, spec.seed + i, has_time=False)
        data = f.data
        spectrum = forward(data)
        denominator = np.linalg.norm(spectrum)
        if weight == "shifted":
            denominator = np.linalg.norm((w - 1.0) * spectrum) + denominator
        value = np.linalg.norm(_commutator_array(u, data, symbol, grid)) / denominator
        corpus_max = max(corpus_max, float(value))

    mask = _band_mask(grid)

    def apply_b(x_hat):
        y = _commutator_array(u, inverse(mask * x_hat / w), symbol, grid)
        return mask * forward(y)

    def apply_b_adjoint(y_hat):
        z = -_commutator_array(u, inverse(mask * y_hat), symbol, grid)
        return mask * forward(z) / w

    rng = np.random.default_rng(spec.seed)
    x = mask * (rng.standard_normal(grid.shape(False)) + 1j * rng.standard_normal(grid.shape(False)))
    x = x / np.linalg.norm(x)
    mu = 0.0
    converged = False
    iterations = 0
    for iterations in range(1, spec.max_iterations + 1):
        bx = apply_b(x)
        new_mu = float(np.linalg.norm(bx) ** 2)
        if new_mu == 0:
            mu, converged = 0.0, True
            break
        y = apply_b_adjoint(bx)
        x = y / np.linalg.norm(y)
        if mu > 0 and abs(new_mu - mu) <= spec.rel_tol * new_mu:
            mu, converged = new_mu, True
            break
        mu = new_mu
    if not converged:
        logger.warning("power iteration stopped after %d iterations without converging", iterations)
    power_value = float(np.sqrt(mu))
    return OpNormResult(
        estimate=max(corpus_max, power_value),
        corpus_max=corpus_max,
        power_value=power_value,
        iterations=iterations,
        converged=converged,
        seed=spec.seed,
        weight=weight,
    )


@dataclass(frozen=True)
class SchurResult:
    row_sup: float
    col_sup: float
    k1_bound: float
    k2_bound: float
    remainder: float

    @property
    def bound(self):
        return float(np.sqrt(self.row_sup * self.col_sup))


def _schur_sums(p_from, p_to, coefficients, shifts, w):
    """Row and column sums of |p(l) - p(l - d)| |u_d| / w(l - d) over significant shifts d."""
    rows = np.zeros(w.shape)
    cols = np.zeros(w.shape)
    axes = tuple(range(w.ndim))
    for d, size in zip(shifts, coefficients):
        rows += np.abs(p_to - np.roll(p_from, d, axis=axes)) * size / np.roll(w, d, axis=axes)
        cols += np.abs(np.roll(p_to, tuple(-i for i in d), axis=axes) - p_from) * size / w
    return rows, cols


def schur_row_bounds(spec, weight=None, threshold=1e-14):
    """
    Schur test on the discrete kernel [p(l) - p(l')] u_hat(l - l') / sqrt(N) / w(l').

    The kernel is the exact lattice commutator (cyclic in every axis). Shifts with
    |u_hat| below threshold * max |u_hat| are bounded together by
    2 max p / min w times their total size. The K1 part carries the difference in k
    at fixed xi, the K2 part the difference in xi.
    """
    grid = spec.grid
    weight = spec.regime if weight is None else weight
    u = spec.sample(grid)
    w = _weight(spec, grid, weight)
    if np.ptp(u) == 0:
        return SchurResult(0.0, 0.0, 0.0, 0.0, 0.0)
    axes = _axes(grid)
    scale = np.sqrt(np.prod(grid.shape(False)))
    u_hat = np.abs(scipy.fft.fftn(u, axes=axes, norm="ortho")) / scale
    p = np.asarray(eval_symbol(spec.multiplier, grid), dtype=float)
    significant = u_hat > threshold * u_hat.max()
    shifts = [tuple(int(i) for i in idx) for idx in np.argwhere(significant)]
    coefficients = u_hat[significant]
    remainder = float(2 * p.max() / w.min() * u_hat[~significant].sum())

    rows, cols = _schur_sums(p, p, coefficients, shifts, w)

    # K1: p(k, xi) - p(k', xi); K2: p(k', xi) - p(k', xi').
    k1_rows = np.zeros(w.shape)
    k1_cols = np.zeros(w.shape)
    k2_rows = np.zeros(w.shape)
    k2_cols = np.zeros(w.shape)
    n = grid.n
    for d, size in zip(shifts, coefficients):
        d_x = d[:n] + (0,) * n
        d_v = (0,) * n + d[n:]
        w_shift = np.roll(w, d, axis=axes)
        p_k = np.roll(p, d_x, axis=axes)
        k1_rows += np.abs(p - p_k) * size / w_shift
        k2_rows += np.abs(p_k - np.roll(p, d, axis=axes)) * size / w_shift
        minus = tuple(-i for i in d)
        p_back = np.roll(p, minus, axis=axes)
        p_back_k = np.roll(p_back, d_v, axis=axes)
        k1_cols += np.abs(p_back - p_back_k) * size / w
        k2_cols += np.abs(p_back_k - p) * size / w

    return SchurResult(
        row_sup=float(rows.max() + remainder),
        col_sup=float(cols.max() + remainder),
        k1_bound=float(np.sqrt((k1_rows.max() + remainder) * (k1_cols.max() + remainder))),
        k2_bound=float(np.sqrt((k2_rows.max() + remainder) * (k2_cols.max() + remainder))),
        remainder=remainder,
    )


def sobolev_norm(modifier, grid, order):
    """|<(k, xi)>^order u_hat| for a modifier callable sampled on the grid."""
    _, xs, vs = grid_coordinates(grid, has_time=False)
    values = np.broadcast_to(np.asarray(modifier(xs, vs)), grid.shape(False))
    return field_sobolev_norm(physical_field(values, grid, has_time=False), order)


def modifier_family(grid, count=4, amplitude=1.0, margin=0.1):
    """
    Modifiers chi(x, v) (1 + cos(2^j xi_1 v) / 2), j < count, with chi a smooth
    bump; derivative norms grow geometrically in j.
    """
    xi1 = 2 * np.pi / grid.L_v
    radius_x = (0.5 - margin) * grid.L_x
    radius_v = (0.5 - margin) * grid.L_v

    def make(j):
        def modifier(xs, vs):
            out = amplitude
            for x in xs:
                out = out * smooth_bump((x - grid.L_x / 2) / radius_x)
            for v in vs:
                out = out * smooth_bump(v / radius_v) * (1.0 + 0.5 * np.cos(2**j * xi1 * v))
            return out
        return modifier

    return [make(j) for j in range(count)]


def check_lemma(spec, family=None, delta=0.5, refine=True, refinement_tol=0.1):
    """
    Bundle the commutator estimates of one multiplier into a report.

    Each modifier of the family (only ``spec.modifier`` when None) yields one row:
    the operator-norm estimate in the regime's weight as LHS and the
    H^(n+1+delta) norm of the modifier as RHS. The Schur bound is recorded per row;
    the refinement delta is the relative change of the first estimate when N_v doubles,
    and the report fails when it exceeds `refinement_tol`.
    """
    grid = spec.grid
    modifiers = [spec.modifier] if family is None else list(family)
    weight = spec.regime
    order = grid.n + 1 + delta
    rows = []
    for index, modifier in enumerate(modifiers):
        member = dataclasses.replace(spec, modifier=modifier)
        estimate = op_norm_estimate(member, weight)
        schur = schur_row_bounds(member, weight)
        rows.append(_row(
            estimate.estimate,
            sobolev_norm(modifier, grid, order),
            0.0,
            member=index,
            schur_bound=schur.bound,
            k1_bound=schur.k1_bound,
            k2_bound=schur.k2_bound,
            power_value=estimate.power_value,
            corpus_max=estimate.corpus_max,
            converged=estimate.converged,
            dominated=bool(schur.bound >= estimate.estimate * (1 - 1e-9)),
        ))
    name = "lemma-q" if spec.multiplier.kind == "frac_v" else "lemma-p"
    report = EstimateReport.from_rows(name, rows)
    report.extra.update({"weight": weight, "weight_order": spec.weight_order, "sobolev_order": order})
    if not report.cases["dominated"].all():
        report.passed = False
        report.flags.append("schur-below-estimate")
    if refine:
        fine = dataclasses.replace(spec, modifier=modifiers[0], grid=grid.with_points(N_v=2 * grid.N_v))
        coarse_value = report.cases["lhs"].iloc[0]
        fine_value = op_norm_estimate(fine, weight).estimate
        if coarse_value == 0:
            report.refinement_delta = 0.0 if fine_value == 0 else float("inf")
        else:
            report.refinement_delta = float(abs(fine_value - coarse_value) / coarse_value)
        report.gate_refinement(refinement_tol)
    return report
