"""
Experiment orchestration: solve, verify and sweep runs with their manifests.

Every run writes into its own directory under the output root and returns a
RunManifest listing the config hash, stage timings, per-check outcomes and every
file written.
"""
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field as dataclass_field
from functools import partial

import numpy as np
import pandas as pd

from hypokinetic import __version__
from hypokinetic.commutators import (
    CommutatorSpec,
    check_lemma,
    commutator_apply,
    kernel_commutator_1d,
)
from hypokinetic.config import CHECKS, SWEEP_PARAMETERS, sweep_update
from hypokinetic.corpus import build_corpus, model_pair, random_field, scaling_family, transport_pair
from hypokinetic.diagnostics import (
    SplitParams,
    balance_lambda,
    check_ivp_term,
    exponent_identity,
    fiber_moments,
    holder_aggregate,
    split_AB,
    step4_terms,
)
from hypokinetic.errors import ConfigError
from hypokinetic.estimates import (
    EstimateReport,
    _row,
    case_prop_bouchut,
    evaluate_corpus,
    fit_scaling_exponent,
    gain_exponent,
    refinement_delta,
    sharpness_growth,
)
from hypokinetic.io_utils import write_json, write_report, write_snapshot
from hypokinetic.model import CauchyProblem, duhamel_oracle, sample_source, solve_cauchy
from hypokinetic.spectral import MultiplierSpec, make_grid, norm, physical_field, zeros

logger = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-10
CLOSURE_TOL = 1e-8
PARTITION_TOL = 1e-12


@dataclass
class RunManifest:
    """Provenance of one run."""
    command: str
    config_hash: str
    version: str = __version__
    seed: int = 0
    stages: dict = dataclass_field(default_factory=dict)
    checks: dict = dataclass_field(default_factory=dict)
    files: list = dataclass_field(default_factory=list)
    results: dict = dataclass_field(default_factory=dict)

    @property
    def passed(self):
        return all(self.checks.values())

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = time.perf_counter() - start

    def add_files(self, *paths):
        self.files.extend(str(p) for p in paths)

    def to_dict(self):
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "version": self.version,
            "seed": self.seed,
            "stages": dict(self.stages),
            "checks": dict(self.checks),
            "passed": self.passed,
            "results": dict(self.results),
            "files": list(self.files),
        }

    def write(self, directory):
        path = directory / "manifest.json"
        self.files.append(str(path))
        write_json(self.to_dict(), path)
        return path


def _run_dir(config, label):
    directory = config.output_root() / f"{label}-{config.hash[:12]}"
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _new_manifest(config, command):
    return RunManifest(command=command, config_hash=config.hash, seed=config.corpus.seed)


# Solve


def _initial_datum(config, grid):
    if config.solve.initial == "zero":
        return zeros(grid, has_time=False)
    return random_field(grid, config.corpus.seed, config.corpus.q, has_time=False)


def _steady_source(config, grid):
    if config.solve.source == "zero":
        return None
    g = random_field(grid, config.corpus.seed + 1, config.corpus.q, has_time=False)
    return lambda t: g


def _relative(a, b):
    scale = norm(b)
    if scale == 0:
        return 0.0 if norm(a) == 0 else float("inf")
    return float(norm(a) / scale)


def cmd_solve(config):
    """
    Solve the configured Cauchy problem with the Strang stepper.

    For a constant coefficient the Duhamel oracle is run on the same time samples
    and its final state is compared with the stepper's.
    """
    manifest = _new_manifest(config, "solve")
    directory = _run_dir(config, "solve")
    with manifest.stage("setup"):
        grid = config.grid.build()
        params = config.model.params(grid)
        f0 = _initial_datum(config, grid)
        source = _steady_source(config, grid)
        problem = CauchyProblem(f0, config.solve.T, config.solve.dt, source)
    with manifest.stage("stepper"):
        trajectory = solve_cauchy(problem, params)
    manifest.add_files(
        write_snapshot(trajectory.field, directory / "trajectory.hypo"),
        write_snapshot(trajectory.final, directory / "final.hypo"),
    )
    manifest.results.update({
        "steps": problem.steps,
        "final_norm": norm(trajectory.final),
        "initial_norm": norm(f0),
    })
    manifest.checks["solve"] = bool(np.all(np.isfinite(trajectory.norms())))

    if params.coefficient is None and config.solve.compare_oracle:
        with manifest.stage("oracle"):
            steps = problem.steps
            N_t = max(4, steps + 2 - steps % 2)
            oracle_grid = make_grid(grid.n, N_t, grid.N_x, grid.N_v, N_t * problem.dt, grid.L_x, grid.L_v,
                                    memory_budget=config.grid.memory_budget, workers=grid.workers)
            if source is None:
                g = zeros(oracle_grid)
            else:
                g = sample_source(lambda t: physical_field(source(t).data, oracle_grid, has_time=False), oracle_grid)
            start = physical_field(f0.data, oracle_grid, has_time=False)
            oracle = duhamel_oracle(g, config.model.beta, f0=start)
            oracle_final = physical_field(oracle.data[steps], grid, has_time=False)
        discrepancy = _relative(trajectory.final.replace(data=trajectory.final.data - oracle_final.data), oracle_final)
        manifest.add_files(write_snapshot(oracle, directory / "oracle.hypo"))
        manifest.results["oracle_discrepancy"] = discrepancy
        manifest.checks["oracle-agreement"] = bool(discrepancy <= config.solve.tolerance)
        print(f"Stepper vs oracle relative L2 discrepancy: {discrepancy:.3e}")

    manifest.add_files(write_json(manifest.results, directory / "solve.json"))
    manifest.write(directory)
    print(f"Saved solve run to {directory}")
    return manifest


# Verify


def _transport_corpus(config, grid):
    maker = partial(transport_pair, grid, q=config.corpus.q)
    return build_corpus(maker, config.corpus.size, config.corpus.seed, config.corpus.n_jobs)


def _model_corpus(config, grid, params):
    maker = partial(model_pair, grid, params=params, q=config.corpus.q)
    return build_corpus(maker, config.corpus.size, config.corpus.seed, config.corpus.n_jobs)


def _corpus_check(config, name, grid):
    beta = config.model.beta
    max_ratio = config.check.max_ratio
    n_jobs = config.corpus.n_jobs
    if name == "prop-bouchut":
        return evaluate_corpus(name, _transport_corpus(config, grid), config.check.alpha, max_ratio, n_jobs)
    if name in ("step1", "step2", "step3"):
        params = config.model.params(grid, coefficient=False)
        return evaluate_corpus(name, _model_corpus(config, grid, params), beta, max_ratio, n_jobs)
    if name == "thm1":
        params = config.model.params(grid, coefficient=False)
        return evaluate_corpus(name, _model_corpus(config, grid, params), params, max_ratio, n_jobs)
    # thm2 uses the bump coefficient whatever the configured recipe.
    model = config.model.model_copy(update={"coefficient": "bump"})
    params = model.params(grid)
    return evaluate_corpus(name, _model_corpus(config, grid, params), params, max_ratio, n_jobs)


def _split_alpha(config, name):
    alpha = config.check.alpha
    if alpha <= 0:
        raise ConfigError(f"check.alpha: {name} needs alpha > 0, got {alpha}")
    return alpha


def _split_check(config, grid):
    params = SplitParams.balanced(_split_alpha(config, "split-ab"))
    rows = []
    for f, g in _transport_corpus(config, grid):
        split = split_AB(f, g, params, config.check.k_index)
        error = abs(split.A + split.B - split.U) / split.U if split.U > 0 else 0.0
        rows.append(_row(split.A, split.a_bound, 0.0, B=split.B, U=split.U, partition_error=error,
                         b_ratio=split.b_ratio, skipped=split.skipped))
    report = EstimateReport.from_rows("split-ab", rows)
    identity = exponent_identity(params, grid)
    report.extra.update({"r": params.r, "m": params.m, "exponent_identity": identity})
    partition_ok = bool((report.cases["partition_error"] <= PARTITION_TOL).all())
    a_ok = bool((report.cases["ratio"] <= 1 + 1e-12).all())
    report.passed = report.passed and partition_ok and a_ok and identity["holds"]
    return report


def _balance_check(config, grid):
    alpha = _split_alpha(config, "balance")
    params = SplitParams.balanced(alpha)
    rows = []
    for f, g in _transport_corpus(config, grid):
        moments = fiber_moments(f, g, params.r, params.m)
        aggregate = holder_aggregate(moments, params.m)
        direct = case_prop_bouchut(f, g, alpha)
        holder_ratio = float(aggregate.cases["ratio"].iloc[0])
        fiber = moments[moments["k_abs"] > 0].iloc[0]
        balance = balance_lambda(fiber["U"], fiber["V"], fiber["W"], params.m)
        rows.append(_row(
            fiber["U"], balance.phi_min, direct["residual"],
            lam=balance.lam, bound=balance.bound, gap=balance.gap,
            within_tolerance=balance.within_tolerance,
            holder_ratio=holder_ratio,
            holder_discrepancy=abs(holder_ratio - direct["ratio"]) / max(direct["ratio"], 1e-300),
        ))
    report = EstimateReport.from_rows("balance", rows)
    within = bool(report.cases["within_tolerance"].all())
    agree = bool((report.cases["holder_discrepancy"] <= 1e-10).all())
    report.passed = report.passed and within and agree
    return report


def _step4_check(config, grid):
    beta = config.model.beta
    params = config.model.params(grid, coefficient=False)
    rows = []
    for f, g in _model_corpus(config, grid, params):
        terms = step4_terms(f, g, beta, config.check.symbol, config.check.delta)
        rows.append(_row(
            abs(terms.I) + abs(terms.II), terms.I_bound + terms.II_bound, terms.residual,
            lhs_pos=terms.lhs_pos, I=terms.I, II=terms.II, I_symbol=terms.I_symbol,
            closure=terms.closure, I_ratio=terms.I_ratio, II_ratio=terms.II_ratio,
            symbol=config.check.symbol,
        ))
    report = EstimateReport.from_rows("step4", rows, max_ratio=config.check.max_ratio)
    cases = report.cases
    scale = cases["lhs_pos"].abs() + cases["I"].abs() + cases["II"].abs()
    positive = bool((cases["lhs_pos"] >= -POSITIVITY_TOL * scale).all())
    closed = bool((cases["closure"] <= CLOSURE_TOL).all())
    report.passed = report.passed and positive and closed
    return report


def _ivp_check(config, grid):
    params = SplitParams.balanced(_split_alpha(config, "ivp-term"))
    rows = []
    for i in range(config.corpus.size):
        f0 = random_field(grid, config.corpus.seed + i, config.corpus.q, has_time=False)
        result = check_ivp_term(f0, params, config.check.k_index)
        rows.append(_row(result.iii, result.bound, 0.0, relaxed=result.iii_relaxed, D=result.D,
                         k_abs=result.k_abs, skipped=result.skipped))
    return EstimateReport.from_rows("ivp-term", rows, max_ratio=2.0)


def _commutator_spec(config, grid, name):
    coefficient = config.model.coefficient_for(grid)
    if coefficient is None:
        modifier = lambda xs, vs: np.zeros(np.broadcast(*xs, *vs).shape)
    else:
        modifier = coefficient.modifier(0.0)
    if name == "lemma-q":
        multiplier = MultiplierSpec("frac_v", config.model.beta)
    else:
        multiplier = MultiplierSpec(config.check.symbol, config.model.beta, config.check.delta)
    quadrature = config.quadrature
    return CommutatorSpec(
        multiplier=multiplier,
        modifier=modifier,
        grid=grid,
        weight_order=quadrature.weight_order,
        corpus_size=quadrature.commutator_corpus,
        seed=config.corpus.seed,
        max_iterations=quadrature.power_iterations,
        rel_tol=quadrature.power_tol,
        h0=quadrature.h0,
        nodes=quadrature.nodes,
    )


def _lemma_check(config, grid, name):
    spec = _commutator_spec(config, grid, name)
    report = check_lemma(spec, refine=config.check.refine, refinement_tol=config.check.refinement_tol)
    if name == "lemma-q" and grid.n == 1 and spec.beta < 0.5:
        f = random_field(grid, config.corpus.seed, config.corpus.q, has_time=False)
        spectral = commutator_apply(spec, f)
        quadrature = kernel_commutator_1d(spec, f)
        difference = spectral.replace(data=spectral.data - quadrature.data)
        discrepancy = _relative(difference, spectral)
        report.extra["kernel_discrepancy"] = discrepancy
        if discrepancy > config.quadrature.kernel_tol:
            report.passed = False
            report.flags.append("kernel-mismatch")
    return report


def _exponent_check(config):
    beta = config.model.beta
    scaling = config.scaling
    family = scaling_family(beta, scaling.scale_min, scaling.scale_max, scaling.count,
                            N_v=scaling.N_v, N_t=scaling.N_t, n_jobs=config.corpus.n_jobs)
    s_grid = np.round(np.arange(0.0, scaling.s_max + 1e-9, scaling.s_step), 6)
    report = fit_scaling_exponent(family, "x", s_grid, scaling.slope_tol)
    target = gain_exponent(beta)
    growth = sharpness_growth(family, target + scaling.sharpness_offset)
    report.extra.update({"target": target, "sharpness_growth": growth})
    report.passed = bool(
        report.passed
        and abs(report.exponent - target) <= scaling.tolerance
        and growth >= scaling.min_growth
    )
    return report


def run_check(config, name):
    """Build the corpus for one catalogue check and evaluate it on the configured grid."""
    if name not in CHECKS:
        raise ConfigError(f"unknown check {name!r}; the catalogue is: {', '.join(CHECKS)}")
    if name == "exponent-fit":
        return _exponent_check(config)
    grid = config.grid.build()
    if name in ("prop-bouchut", "step1", "step2", "step3", "thm1", "thm2"):
        if config.check.refine:
            _, report, _ = refinement_delta(lambda g: _corpus_check(config, name, g), grid)
            return report.gate_refinement(config.check.refinement_tol)
        return _corpus_check(config, name, grid)
    if name == "split-ab":
        return _split_check(config, grid)
    if name == "balance":
        return _balance_check(config, grid)
    if name == "step4":
        return _step4_check(config, grid)
    if name == "ivp-term":
        return _ivp_check(config, grid)
    return _lemma_check(config, grid, name)


def _summary(report):
    summary = report.summary()
    summary.update({k: v for k, v in report.extra.items() if np.isscalar(v) or isinstance(v, (list, dict))})
    return summary


def cmd_verify(config, check):
    """Run one catalogue check, write its report and return the manifest."""
    if check not in CHECKS:
        raise ConfigError(f"unknown check {check!r}; the catalogue is: {', '.join(CHECKS)}")
    manifest = _new_manifest(config, f"verify {check}")
    directory = _run_dir(config, check)
    with manifest.stage(check):
        report = run_check(config, check)
    summary = _summary(report)
    manifest.add_files(*write_report(report.cases, directory / f"{check}.jsonl", summary))
    manifest.checks[check] = bool(report.passed)
    manifest.results[check] = summary
    manifest.write(directory)
    status = "passed" if report.passed else "FAILED"
    print(f"{check}: constant {report.constant:.6g}, {status}")
    print(f"Saved report to {directory}")
    return manifest


def cmd_sweep(config, check, parameter, values):
    """
    Repeat one check across values of a parameter and write sweep.csv.

    Raises:
        ConfigError: On an unknown parameter or an empty value list.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; choose from {', '.join(SWEEP_PARAMETERS)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    if check not in CHECKS:
        raise ConfigError(f"unknown check {check!r}; the catalogue is: {', '.join(CHECKS)}")
    manifest = _new_manifest(config, f"sweep {check} {parameter}")
    directory = _run_dir(config, f"sweep-{check}-{parameter}")
    rows = []
    for value in values:
        point = sweep_update(config, parameter, value)
        label = f"{check}[{parameter}={value}]"
        with manifest.stage(label):
            report = run_check(point, check)
        summary = _summary(report)
        manifest.add_files(*write_report(report.cases, directory / f"{check}-{parameter}-{value}.jsonl", summary))
        manifest.checks[label] = bool(report.passed)
        rows.append({
            "parameter": parameter,
            "value": value,
            "check": check,
            "constant": report.constant,
            "median": report.median,
            "refinement_delta": report.refinement_delta,
            "exponent": report.exponent,
            "target": report.extra.get("target"),
            "passed": bool(report.passed),
        })
    sweep = pd.DataFrame(rows)
    sweep_path = directory / "sweep.csv"
    sweep.to_csv(sweep_path, index=False)
    manifest.add_files(sweep_path)
    manifest.results["sweep"] = rows
    manifest.write(directory)
    print(f"Saved sweep of {len(rows)} points to {sweep_path}")
    return manifest
