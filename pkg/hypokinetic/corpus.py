"""
Random test data for the estimate checks.

Fields are band-limited trigonometric polynomials in (t, x) multiplied by a bank
of Gaussian wave packets in v. Their coefficients come from a seeded generator
and do not depend on the resolution, so norms are determined by the data and
not by the lattice.
"""
import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from hypokinetic.model import ModelParams, duhamel_oracle, grid_coordinates, manufactured_rhs
from hypokinetic.spectral import flag_band_limit, make_grid, physical_field

logger = logging.getLogger(__name__)

BAND = 3
PACKETS = 4


def random_field(grid, seed, q=None, band=BAND, packets=PACKETS, has_time=True):
    """
    Gaussian-random field sum_j A_j(t, x) P_j(v).

    A_j has integer modes |m| <= min(band, N/2 - 1) on every (t, x) axis with
    complex Gaussian coefficients of size (1 + |m|^2)^(-q/2); P_j is a Gaussian
    packet of width L_v/16 centered within L_v/32 of the origin, with a lattice
    carrier of at most one inverse width.

    Args:
        grid (GridSpec): Target lattice.
        seed (int): Generator seed.
        q (float): Spectral decay; defaults to n + 2.
        has_time (bool): Build a field over (t, x, v) or over (x, v).
    """
    q = grid.n + 2 if q is None else q
    rng = np.random.default_rng(seed)
    t, xs, vs = grid_coordinates(grid, has_time)
    shape = grid.shape(has_time)
    modes = np.arange(-band, band + 1)
    n_axes = grid.n + (1 if has_time else 0)
    sigma = grid.L_v / 16
    dxi = 2 * np.pi / grid.L_v
    carrier_max = int(np.floor(1.0 / (sigma * dxi)))

    mesh = np.meshgrid(*([modes] * n_axes), indexing="ij")
    size2 = sum(m.astype(float) ** 2 for m in mesh)
    amplitude = (1.0 + size2) ** (-q / 2)

    axes = ([t] if has_time else []) + xs
    periods = ([grid.L_t] if has_time else []) + [grid.L_x] * grid.n
    sizes = ([grid.N_t] if has_time else []) + [grid.N_x] * grid.n
    # Clipping masks the waves, not the draws: coefficients are lattice independent.
    kept = [np.abs(modes) <= min(band, N // 2 - 1) for N in sizes]
    if not all(k.all() for k in kept):
        logger.debug("random field band %d clipped on a %s lattice", band, sizes)
    waves = [
        np.exp(2j * np.pi * np.multiply.outer(modes, axis) / L) * keep.reshape((-1,) + (1,) * axis.ndim)
        for axis, L, keep in zip(axes, periods, kept)
    ]
    letters = "abcd"[:n_axes]
    subscripts = letters + "," + ",".join(f"{c}..." for c in letters) + "->..."

    data = np.zeros(shape, dtype=complex)
    for _ in range(packets):
        coeffs = amplitude * (rng.standard_normal(size2.shape) + 1j * rng.standard_normal(size2.shape)) / np.sqrt(2)
        centers = rng.uniform(-grid.L_v / 32, grid.L_v / 32, size=grid.n)
        carriers = rng.integers(-carrier_max, carrier_max + 1, size=grid.n) * dxi

        slow = np.einsum(subscripts, coeffs, *waves)

        packet = 1.0
        for v, c, xi in zip(vs, centers, carriers):
            packet = packet * np.exp(-((v - c) ** 2) / (2 * sigma**2)) * np.exp(1j * xi * v)
        data = data + slow * packet

    field = physical_field(np.broadcast_to(data, shape), grid, has_time)
    return flag_band_limit(field)


def transport_pair(grid, seed, q=None):
    """(f, g) with g = d_t f + v.grad_x f."""
    f = random_field(grid, seed, q)
    g = manufactured_rhs(f, ModelParams(beta=1.0, diffusion=False))
    return f, g


def model_pair(grid, seed, params, q=None):
    """(f, g) with g = d_t f + v.grad_x f + a |D_v|^(2 beta) f."""
    f = random_field(grid, seed, q)
    return f, manufactured_rhs(f, params)


def build_corpus(maker, size, seed, n_jobs=1):
    """
    Evaluate maker(seed + i) for i < size with joblib.

    The case order of the result does not depend on n_jobs.
    """
    if size < 1:
        raise ValueError(f"corpus size must be >= 1, got {size}")
    return Parallel(n_jobs=n_jobs)(delayed(maker)(seed + i) for i in range(size))


@dataclass(frozen=True)
class ScalingMember:
    scale: float
    f: object
    g: object


def scaling_member(beta, scale, gamma=None, N_v=512, N_t=256):
    """
    One member of the self-similar forcing family.

    The source is steady, e^(i scale x) times a Gaussian in v whose spectrum has
    width w = scale^gamma. The lattice follows the member: L_x = 2 pi / scale
    (one x-mode), xi-spacing w/8 and dt = (w/8)/scale, which shifts the velocity
    spectrum by one cell per step. f starts from 0 and is computed by the oracle.
    """
    gamma = 1.0 / (1.0 + 2 * beta) if gamma is None else gamma
    width = scale**gamma
    dxi = width / 8
    L_x = 2 * np.pi / scale
    L_v = 2 * np.pi / dxi
    dt = dxi / scale
    grid = make_grid(1, N_t, 4, N_v, N_t * dt, L_x, L_v)
    t, xs, vs = grid_coordinates(grid)
    source = np.exp(1j * scale * xs[0]) * np.exp(-(width * vs[0]) ** 2 / 2) * np.ones_like(t)
    g = physical_field(np.broadcast_to(source, grid.shape()), grid)
    f = duhamel_oracle(g, beta)
    return ScalingMember(scale=scale, f=f, g=g)


def scaling_family(beta, scale_min=1.0, scale_max=1000.0, count=7, gamma=None, N_v=512, N_t=256, n_jobs=1):
    """Members at geometrically spaced scales, in increasing order."""
    scales = np.geomspace(scale_min, scale_max, count)
    logger.info("building scaling family of %d members for beta=%.3g", count, beta)
    return Parallel(n_jobs=n_jobs)(
        delayed(scaling_member)(beta, float(s), gamma, N_v, N_t) for s in scales
    )
