"""
Fractional norms and the inequality checks of the estimate catalogue.

Every check turns one (f, g) pair into a row with LHS, RHS and their ratio; the
ratio is 0-homogeneous in (f, g). A corpus report takes the running maximum of
the ratios as the empirical constant.
"""
import logging
from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from hypokinetic.model import ModelParams, check_residual
from hypokinetic.spectral import FREQUENCY, freq_magnitude, norm, to_frequency, to_rep, weighted_norm

logger = logging.getLogger(__name__)

RESIDUAL_GATE = 1e-8


@dataclass(frozen=True)
class CorpusSpec:
    size: int = 50
    seed: int = 0
    q: Optional[float] = None


@dataclass(frozen=True)
class EstimateSpec:
    """
    Check selection and parameters.

    Attributes:
        name: Catalogue entry, e.g. "prop-bouchut", "step1", "thm1".
        beta: Model order in (0, 1].
        alpha: Velocity regularity exponent of the averaging estimate, >= 0.
        symbol: Pairing multiplier for the step-4 terms, "aniso" or "bracket_aniso".
        delta: Regularization of the bracket symbol.
        max_ratio: A corpus constant above this fails the check.
    """
    name: str
    beta: float = 1.0
    alpha: float = 1.0
    symbol: str = "aniso"
    delta: float = 0.0
    corpus: CorpusSpec = dataclass_field(default_factory=CorpusSpec)
    max_ratio: float = 1e6

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


@dataclass
class EstimateReport:
    """
    Outcome of one check over one or more cases.

    `cases` holds one row per case with at least lhs, rhs, ratio, valid and vacuous
    columns, plus the running maximum of the ratio.
    """
    name: str
    cases: pd.DataFrame
    constant: float
    median: float
    passed: bool
    refinement_delta: Optional[float] = None
    exponent: Optional[float] = None
    half_width: Optional[float] = None
    flags: list = dataclass_field(default_factory=list)
    extra: dict = dataclass_field(default_factory=dict)

    @classmethod
    def from_rows(cls, name, rows, max_ratio=np.inf, **extra):
        cases = pd.DataFrame(rows)
        cases.insert(0, "case", np.arange(len(cases)))
        ratios = cases["ratio"].astype(float)
        cases["running_max"] = ratios.cummax()
        flags = []
        if ratios.isna().any():
            flags.append("nan-ratio")
        if not cases["valid"].all():
            flags.append("residual-gate")
        if cases["vacuous"].all():
            flags.append("vacuous")
        finite = ratios[np.isfinite(ratios)]
        constant = float(finite.max()) if len(finite) else float("nan")
        median = float(finite.median()) if len(finite) else float("nan")
        passed = (
            not ratios.isna().any()
            and bool(np.isfinite(ratios).all())
            and bool(cases["valid"].all())
            and (np.isnan(constant) or constant <= max_ratio)
        )
        return cls(name=name, cases=cases, constant=constant, median=median, passed=passed,
                   flags=flags, extra=extra)

    def gate_refinement(self, tol):
        """Fail the report when the measured refinement delta exceeds tol."""
        if self.refinement_delta is not None and self.refinement_delta > tol:
            self.passed = False
            self.flags.append("refinement-unstable")
        return self

    def summary(self):
        return {
            "check": self.name,
            "cases": int(len(self.cases)),
            "constant": self.constant,
            "median": self.median,
            "refinement_delta": self.refinement_delta,
            "exponent": self.exponent,
            "half_width": self.half_width,
            "passed": bool(self.passed),
            "flags": list(self.flags),
        }


def frac_norm(field, s, axis):
    """
    L2 norm of |freq|^s f_hat over the whole grid, frequency taken on one axis group.

    At s = 0 this is the plain norm of the field as given.
    """
    if s < 0:
        raise ValueError(f"exponent must be >= 0, got {s}")
    if axis not in ("t", "x", "v"):
        raise ValueError(f"axis must be one of t, x, v, got {axis!r}")
    if s == 0:
        return norm(field)
    return weighted_norm(to_rep(field, **{axis: FREQUENCY}), {axis: s})


def mixed_norm(field, s_v, s_x):
    """L2 norm of |xi|^s_v |k|^s_x f_hat."""
    return weighted_norm(to_frequency(field), {"v": s_v, "x": s_x})


def gain_exponent(beta):
    """Hypoelliptic x-regularity gain 2 beta / (1 + 2 beta)."""
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    return 2 * beta / (1 + 2 * beta)


def _row(lhs, rhs, residual, **extra):
    """Case row; a zero LHS over a zero RHS is the vacuous case with ratio 0."""
    vacuous = lhs == 0 and rhs == 0
    if vacuous:
        ratio = 0.0
    elif rhs == 0:
        ratio = np.inf
    else:
        ratio = lhs / rhs
    if vacuous:
        logger.warning("vacuous case: both sides vanish")
    return {
        "lhs": float(lhs),
        "rhs": float(rhs),
        "ratio": float(ratio),
        "residual": float(residual),
        "valid": bool(residual <= RESIDUAL_GATE),
        "vacuous": bool(vacuous),
        **extra,
    }


def _report(name, row, **extra):
    report = EstimateReport.from_rows(name, [row], **extra)
    if not row["valid"]:
        logger.warning("%s: residual %.3e above the gate %.1e", name, row["residual"], RESIDUAL_GATE)
    return report


def case_prop_bouchut(f, g, alpha):
    residual = check_residual(f, g, ModelParams(beta=1.0, diffusion=False))
    theta = alpha / (1 + alpha)
    lhs = frac_norm(f, theta, "x")
    rhs = norm(g) ** theta * frac_norm(f, alpha, "v") ** (1 / (1 + alpha))
    return _row(lhs, rhs, residual, alpha=alpha)


def check_prop_bouchut(f, g, alpha):
    """
    Averaging estimate |D_x|^(a/(1+a)) f <= |g|^(a/(1+a)) ||D_v|^a f|^(1/(1+a))
    for solutions of the free transport equation d_t f + v.grad_x f = g.
    """
    return _report("prop-bouchut", case_prop_bouchut(f, g, alpha))


def case_step1(f, g, beta):
    residual = check_residual(f, g, ModelParams(beta))
    lhs = frac_norm(f, beta, "v")
    rhs = np.sqrt(norm(g) * norm(f))
    return _row(lhs, rhs, residual, beta=beta)


def check_step1(f, g, beta):
    """Velocity regularity from the energy identity: ||D_v|^beta f| <= |g|^1/2 |f|^1/2."""
    return _report("step1", case_step1(f, g, beta))


def case_step2(f, g, beta):
    residual = check_residual(f, g, ModelParams(beta))
    s = gain_exponent(beta)
    q_norm = frac_norm(f, 2 * beta, "v")
    lhs = frac_norm(f, s, "x")
    rhs = q_norm + q_norm ** (1 / (1 + 2 * beta)) * norm(g) ** s
    return _row(lhs, rhs, residual, beta=beta)


def check_step2(f, g, beta):
    return _report("step2", case_step2(f, g, beta))


def case_step3(f, g, beta):
    residual = check_residual(f, g, ModelParams(beta))
    lhs = mixed_norm(f, beta, beta / (1 + 2 * beta))
    rhs = np.sqrt(frac_norm(f, gain_exponent(beta), "x") * norm(g))
    return _row(lhs, rhs, residual, beta=beta)


def check_step3(f, g, beta):
    """Mixed estimate ||D_v|^beta |D_x|^(beta/(1+2 beta)) f| <= ||D_x|^s f|^1/2 |g|^1/2."""
    return _report("step3", case_step3(f, g, beta))


def case_theorem(f, g, params):
    residual = check_residual(f, g, params)
    q_norm = frac_norm(f, 2 * params.beta, "v")
    gain_norm = frac_norm(f, gain_exponent(params.beta), "x")
    if params.coefficient is None:
        rhs = norm(g)
    else:
        rhs = norm(g) + norm(f)
    return _row(q_norm + gain_norm, rhs, residual, beta=params.beta, q_norm=q_norm, gain_norm=gain_norm)


def check_theorem(f, g, params):
    """
    Maximal regularity: (||D_v|^(2 beta) f| + ||D_x|^s f|) over |g| for a = 1 ("thm1"),
    over |g| + |f| for a variable coefficient ("thm2").
    """
    name = "thm1" if params.coefficient is None else "thm2"
    return _report(name, case_theorem(f, g, params))


CASE_FUNCTIONS = {
    "prop-bouchut": case_prop_bouchut,
    "step1": case_step1,
    "step2": case_step2,
    "step3": case_step3,
    "thm1": case_theorem,
    "thm2": case_theorem,
}


def evaluate_corpus(name, pairs, parameter, max_ratio=np.inf, n_jobs=1):
    """
    Run one check on every (f, g) pair and reduce to a corpus report.

    Args:
        name (str): Key of CASE_FUNCTIONS.
        pairs (list): (f, g) tuples.
        parameter: alpha, beta or ModelParams, as the check expects.
    """
    case = CASE_FUNCTIONS[name]
    rows = Parallel(n_jobs=n_jobs)(delayed(case)(f, g, parameter) for f, g in pairs)
    report = EstimateReport.from_rows(name, rows, max_ratio=max_ratio)
    logger.info("%s: %d cases, constant %.6g", name, len(rows), report.constant)
    return report


def refinement_delta(run, grid):
    """
    Relative change of the corpus constant when every resolution doubles.

    Args:
        run: Callable grid -> EstimateReport.
        grid (GridSpec): Base lattice.

    Returns:
        tuple: (delta, coarse report, fine report); the coarse report gets the delta.
    """
    coarse = run(grid)
    fine = run(grid.refined())
    if coarse.constant == 0 or not np.isfinite(coarse.constant):
        delta = 0.0 if coarse.constant == fine.constant else np.inf
    else:
        delta = abs(fine.constant - coarse.constant) / coarse.constant
    coarse.refinement_delta = float(delta)
    return float(delta), coarse, fine


def axis_spectrum(field, axis):
    """Energy of the field per |frequency| on one axis group, as (magnitudes, energies)."""
    moved = to_rep(field, **{axis: FREQUENCY})
    magnitude = np.broadcast_to(freq_magnitude(moved, axis), moved.data.shape)
    energy = moved.grid.cell_volume(moved.has_time) * np.abs(moved.data) ** 2
    values, inverse = np.unique(np.round(magnitude.ravel(), 12), return_inverse=True)
    return values, np.bincount(inverse.ravel(), weights=energy.ravel())


def _family_profiles(family, axis):
    return [(axis_spectrum(m.f, axis), norm(m.g)) for m in family]


def _ratios(profiles, s):
    return np.array([np.sqrt(np.sum(values ** (2 * s) * energy)) / g_norm for (values, energy), g_norm in profiles])


def _slope(scales, ratios):
    slope, _ = np.polyfit(np.log(scales), np.log(ratios), 1)
    return float(slope)


def scaling_slope(family, s, axis="x"):
    """Least-squares log-log slope of ||D_axis|^s f| / |g| against the family scale."""
    scales = np.array([m.scale for m in family])
    return _slope(scales, _ratios(_family_profiles(family, axis), s))


def sharpness_growth(family, s, axis="x"):
    """Ratio at the largest scale over the ratio at the smallest."""
    ratios = _ratios(_family_profiles(family, axis), s)
    return float(ratios[-1] / ratios[0])


def fit_scaling_exponent(family, axis="x", s_grid=None, slope_tol=0.02, min_scales=5):
    """
    Largest s on the candidate grid whose ratio sequence has log-log slope <= slope_tol.

    The half-width of the estimate is the grid spacing.

    Raises:
        ValueError: If the family has fewer than `min_scales` members.
    """
    if len(family) < min_scales:
        raise ValueError(f"scaling family needs at least {min_scales} scales, got {len(family)}")
    if s_grid is None:
        s_grid = np.round(np.arange(0.0, 1.5 + 1e-9, 0.01), 2)
    s_grid = np.asarray(s_grid, dtype=float)
    scales = np.array([m.scale for m in family])
    profiles = _family_profiles(family, axis)
    rows = []
    for s in s_grid:
        ratios = _ratios(profiles, s)
        rows.append({
            "lhs": ratios[-1], "rhs": ratios[0], "ratio": ratios[-1] / ratios[0],
            "valid": True, "vacuous": False, "s": s, "slope": _slope(scales, ratios),
        })
    report = EstimateReport.from_rows("exponent-fit", rows)
    slopes = report.cases["slope"].to_numpy()
    bounded = s_grid[slopes <= slope_tol]
    report.exponent = float(bounded.max()) if bounded.size else float("nan")
    report.half_width = float(np.min(np.diff(s_grid))) if s_grid.size > 1 else 0.0
    report.passed = bool(np.isfinite(report.exponent))
    report.extra.update({"scales": scales.tolist(), "slope_tol": slope_tol})
    logger.info("fitted exponent %.3f over scales %.3g..%.3g", report.exponent, scales[0], scales[-1])
    return report
