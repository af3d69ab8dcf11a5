"""
Boosted Decay Lab - Laboratory
Runs one subcommand against a validated RunConfig and gathers its results,
acceptance checks and amplitude series into an ExperimentReport
"""

import math
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import scipy

from .boost import (
    BoostGenerator,
    ConvergenceStudy,
    algebra_residuals,
    bch_series,
    build_boost_generator,
    build_interaction_boost_stencil,
    free_algebra_convergence,
    smooth_probe,
    solve_coefficient_ode,
    span_decomposition,
    verify_boost_identity,
)
from .errors import ConfigurationError, LabError
from .evolution import (
    EXPLICIT_BOOST,
    amplitude_V,
    boosted_moments,
    boosted_survival,
    check_dilation,
    default_t_grid,
    fit_decay,
    fit_row,
    golden_rule_width,
    make_phi0,
    mixture_amplitudes,
    mixture_experiment,
    survival_A,
)
from .kinematics import BoostParams, compose_velocities
from .logbook import LOGBOOK, StageLogger
from .operators import HermitianOperator, LeeModel, conjugate_by_boost, dump_operator_csv, spectral
from .schemas import CheckResult, ExperimentReport, RunConfig


COMMANDS = (
    "check-algebra",
    "boost-identity",
    "speedup",
    "dilation",
    "moments",
    "mixture",
    "appendix",
    "scan",
)

# Acceptance tolerances
EXACT_TOLERANCE = 1e-10
MOMENT_TOLERANCE = 1e-12
ODE_TOLERANCE = 1e-9
MIRROR_TOLERANCE = 1e-12
MONOTONE_SLACK = 1e-3
SPAN_N_TOLERANCE = 1e-6
CONVERGENCE_BAND = (3.2, 4.8)
BCH_DROP = 10.0
BCH_ORDER8_TOLERANCE = 1e-9

# The structured free-theory pair stays desk-sized on fine decay grids
CONVERGENCE_MIN_DK = 0.25
CONVERGENCE_MIN_KMAX = 2.5


def package_versions() -> Dict[str, str]:
    from . import __version__
    return {"boosted_decay_lab": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


class DecayLab:
    """
    One laboratory session: the model, a lazily built boost generator, and
    the results, checks and series the chosen subcommand produces.
    """

    def __init__(self, config: RunConfig, logger: Optional[StageLogger] = None):
        self.config = config
        self.logger = logger or LOGBOOK
        self.model = LeeModel.from_grid(config.grid.n_modes, config.grid.dk, config.model, config.dense_limit)
        self.results: Dict[str, Any] = {}
        self.checks: Dict[str, CheckResult] = {}
        self.series: List[Any] = []
        self._generator: Optional[BoostGenerator] = None

    def _log(self, stage: str, message: str):
        self.logger.log(stage, message)

    # ============================================
    # Shared pieces
    # ============================================

    @property
    def boostgen(self) -> BoostGenerator:
        if self._generator is None:
            boost = self.config.boost
            with self.logger.stage("boost"):
                self._generator = build_boost_generator(self.model, refine=boost.use_refined,
                                                        probe_width=boost.probe_width,
                                                        max_iterations=boost.lsq_max_iterations)
        return self._generator

    @cached_property
    def probe(self):
        return smooth_probe(self.model.basis, self.config.boost.probe_width)

    @cached_property
    def t_grid(self) -> np.ndarray:
        settings = self.config.t_grid
        grid = default_t_grid(self.model, settings.samples, settings.t_max)
        self._log("setup", f"time grid: {grid.size} samples on [0, {grid[-1]:.6g}]")
        return grid

    @cached_property
    def convergence(self) -> ConvergenceStudy:
        grid = self.model.grid
        dk = max(grid.dk, CONVERGENCE_MIN_DK)
        k_max = max(grid.k_max, CONVERGENCE_MIN_KMAX)
        with self.logger.stage("convergence"):
            return free_algebra_convergence(self.model.params, k_max, dk, self.config.boost.probe_width)

    def _check(self, name: str, value: Optional[float], tolerance: Optional[float],
               passed: Optional[bool] = None):
        if passed is None:
            passed = value is not None and value <= tolerance
        self.checks[name] = CheckResult(value=value, tolerance=tolerance, passed=bool(passed))
        if not passed:
            self._log("check", f"{name} FAILED: value {value} against tolerance {tolerance}")

    def _fit_summary(self, rows: List[Dict[str, Any]]):
        self.results.setdefault("fit_summary", []).extend(rows)

    # ============================================
    # Subcommands
    # ============================================

    def _run_check_algebra(self):
        study = self.convergence
        self.results["convergence"] = {"resolutions": study.resolutions, "ratios": study.ratios,
                                       "rapidity_sign": study.rapidity_sign}
        lo, hi = CONVERGENCE_BAND
        for key in ("probe_r_NH", "probe_r_NP"):
            ratio = study.ratios[key]
            self._check(f"free_{key}_ratio", ratio, hi, passed=lo <= ratio <= hi)

        if not self.model.is_dense_capable:
            self._log("algebra", f"basis of {self.model.basis.size} states above dense_limit; "
                                 "interacting residuals skipped")
            self.results["seed"] = None
            return
        gen = self.boostgen
        model = self.model
        H, P = model.hamiltonian, model.momentum
        stencil = build_interaction_boost_stencil(model.basis, model.params, sign=gen.stencil_sign)
        seed = HermitianOperator(model.free_boost.entries + stencil.entries, label="N")
        seed_residuals = algebra_residuals(H, P, seed, self.probe)
        self.results["seed"] = seed_residuals.model_dump()
        self.results["sign_evidence"] = {
            name: {f"{sign:+d}": value for sign, value in evidence.items()}
            for name, evidence in gen.evidence.items()
        }
        self._check("r_HP", seed_residuals.r_HP, EXACT_TOLERANCE)
        if gen.refinement is not None:
            lsq = gen.refinement
            self.results["refined"] = algebra_residuals(H, P, gen.operator, self.probe).model_dump()
            self.results["objective"] = {"seed": lsq.objective_seed, "refined": lsq.objective_final,
                                         "unknowns": lsq.unknowns}
            self._check("refined_objective", lsq.objective_final, lsq.objective_seed)

    def _run_boost_identity(self):
        self.model.require_dense("boost-identity sweep")
        gen = self.boostgen
        H, P, N = self.model.hamiltonian, self.model.momentum, gen.operator
        rows = []
        for beta in self.logger.progress(sorted(self.config.boost.beta_sweep), desc="beta sweep"):
            errors = verify_boost_identity(H, P, N, math.tanh(beta), gen.rapidity_sign, gen.spectrum, self.probe)
            rows.append({"beta": beta, **errors.as_dict()})
        self.results["sweep"] = rows

        rest = verify_boost_identity(H, P, N, 0.0, gen.rapidity_sign, gen.spectrum, self.probe)
        self._check("identity_at_rest", max(rest.e_H, rest.e_P), 0.0)
        e_H = [row["e_H"] for row in rows]
        worst_drop = max([0.0] + [a - b for a, b in zip(e_H, e_H[1:])])
        self._check("e_H_monotone", worst_drop, MONOTONE_SLACK)

        v1, v2 = 0.3, 0.4
        phi0 = make_phi0(self.model.basis)
        twice = gen.boost(gen.boost(phi0, v1), v2).amplitudes
        once = gen.boost(phi0, compose_velocities(v1, v2)).amplitudes
        self._check("group_composition", float(np.max(np.abs(twice - once))), EXACT_TOLERANCE)

        study = self.convergence
        self.results["free_refinement"] = {"resolutions": study.resolutions, "ratios": study.ratios}
        self._check("free_e_H_probe_refines", study.ratios["e_H_probe"], 1.0,
                    passed=study.ratios["e_H_probe"] > 1.0)

    def _run_speedup(self):
        t, width = self.t_grid, self.config.packet_width
        rows = []
        for v in self.logger.progress(self.config.velocities, desc="speedup"):
            boost = BoostParams.from_velocity(v)
            moving = amplitude_V(self.model, None, v, width, t)
            rest = amplitude_V(self.model, None, 0.0, width, boost.gamma * t)
            amplitude_gap = float(np.max(np.abs(moving.values - rest.values)))
            probability_gap = float(np.max(np.abs(moving.abs2 - rest.abs2)))
            self._check(f"speedup_v{v:g}", amplitude_gap, EXACT_TOLERANCE)
            self._check(f"probability_v{v:g}", probability_gap, EXACT_TOLERANCE)

            survival = boosted_survival(self.model, None, v, t)
            dilated = survival_A(self.model, 0.0, boost.gamma * t)
            survival_gap = float(np.max(np.abs(survival.values - dilated.values)))
            self._check(f"survival_speedup_v{v:g}", survival_gap, EXACT_TOLERANCE)
            self.series.extend([moving, survival])

            explicit_gap = None
            if self.model.is_dense_capable:
                explicit = amplitude_V(self.model, self.boostgen, v, width, t, route=EXPLICIT_BOOST)
                explicit_gap = float(np.max(np.abs(explicit.values - moving.values)))
                self.series.append(explicit)
            else:
                self._log("speedup", f"v={v:g}: explicit route skipped above dense_limit")
            rows.append({"v": v, "gamma": boost.gamma, "speedup_gap": amplitude_gap,
                         "probability_gap": probability_gap, "survival_gap": survival_gap,
                         "explicit_gap": explicit_gap})
        self.results["speedup"] = rows

    def _run_dilation(self):
        fit = self.config.fit
        outcome = check_dilation(self.model, self.config.momenta, self.t_grid, fit)
        rows = [fit_row(outcome.rest_fit, "A_p0", 0.0)]
        for row, p_fit in zip(outcome.rows, outcome.fits):
            p = row["p"]
            self._check(f"dilation_p{p:g}", abs(row["ratio"] - 1.0), fit.dilation_tolerance)
            self._check(f"curve_p{p:g}", row["curve_deviation"], fit.curve_tolerance)
            if p != 0.0:
                rows.append(fit_row(p_fit, f"A_p{p:g}", p))
        golden = golden_rule_width(self.model.params, self.model.grid.dk)
        relative = abs(outcome.rest_fit.gamma_rate - golden) / golden if golden > 0 else math.inf
        self._check("golden_rule", relative, fit.golden_rule_tolerance)
        self.results["dilation"] = outcome.rows
        self.results["rest_fit"] = outcome.rest_fit.model_dump()
        self.results["golden_rule_width"] = golden
        self.results["mass"] = {"m_fit": outcome.m_fit, "m_a": self.model.params.m_a}
        self._fit_summary(rows)
        self.series.extend(outcome.series)

    def _run_moments(self):
        m_a = self.model.params.m_a
        rows = []
        for v in self.config.velocities:
            boost = BoostParams.from_velocity(v)
            closed = boosted_moments(self.model, None, v)
            scale = max(1.0, boost.gamma * m_a)
            self._check(f"energy_v{v:g}", abs(closed.avg_E - boost.gamma * m_a), MOMENT_TOLERANCE * scale)
            self._check(f"momentum_v{v:g}", abs(abs(closed.avg_P) - boost.gamma * abs(v) * m_a),
                        MOMENT_TOLERANCE * scale)
            self._check(f"velocity_ratio_v{v:g}", abs(closed.ratio - abs(v)), EXACT_TOLERANCE)
            row = {"v": v, "gamma": boost.gamma, "avg_P": closed.avg_P, "avg_E": closed.avg_E,
                   "ratio": closed.ratio, "explicit_avg_P": None, "explicit_avg_E": None}
            if self.model.is_dense_capable:
                explicit = boosted_moments(self.model, self.boostgen, v, route=EXPLICIT_BOOST)
                row.update(explicit_avg_P=explicit.avg_P, explicit_avg_E=explicit.avg_E)
            rows.append(row)
        self.results["moments"] = rows

    def _run_mixture(self):
        settings = self.config.mixture
        rows = []
        for v in self.config.velocities:
            outcome = mixture_experiment(self.model, v, settings.weights, self.t_grid,
                                         self.config.packet_width, self.config.fit)
            if outcome.rate_ratio is None:
                self._log("mixture", f"v={v:g}: one component has zero weight, no rate ratio")
            else:
                self._check(f"mixture_v{v:g}", abs(outcome.rate_ratio / outcome.gamma_squared - 1.0),
                            settings.tolerance)
            row = {"v": v, "p": outcome.p, "rate_ratio": outcome.rate_ratio,
                   "gamma_squared": outcome.gamma_squared, "gamma_gamma_m": outcome.gamma_gamma_m,
                   "explicit_combined_gap": None}
            self._fit_summary(outcome.fit_rows)
            self.series.extend([outcome.fast, outcome.slow, outcome.combined])
            if self.model.is_dense_capable:
                explicit = mixture_amplitudes(self.model, v, settings.weights, self.t_grid,
                                              self.config.packet_width, self.boostgen, route=EXPLICIT_BOOST)
                # cross terms only; reported, not checked
                row["explicit_combined_gap"] = float(np.max(np.abs(explicit.combined.values
                                                                   - outcome.combined.values)))
                self.series.append(explicit.combined)
            rows.append(row)
        self.results["mixture"] = rows

    def _run_appendix(self):
        settings = self.config.appendix
        forward = solve_coefficient_ode(settings.ode_beta_max, settings.ode_step)
        backward = solve_coefficient_ode(settings.ode_beta_max, settings.ode_step, backward=True)
        mirror = float(max(np.max(np.abs(backward.h_values[::-1] - forward.h_values)),
                           np.max(np.abs(backward.p_values[::-1] + forward.p_values))))
        self._check("ode_closed_form", forward.closed_form_error(), ODE_TOLERANCE)
        self._check("ode_invariant", forward.invariant_error(), ODE_TOLERANCE)
        self._check("ode_backward_mirror", mirror, MIRROR_TOLERANCE)
        self.results["ode"] = {"steps": int(forward.beta_grid.size - 1),
                               "closed_form_error": forward.closed_form_error(),
                               "invariant_error": forward.invariant_error(),
                               "backward_invariant_error": backward.invariant_error()}

        if not self.model.is_dense_capable:
            self._log("appendix", "BCH series and span decomposition skipped above dense_limit")
            self.results["bch"] = self.results["span"] = None
            return
        self._bch_orders()
        self._span_checks()

    def _bch_orders(self):
        settings = self.config.appendix
        gen = self.boostgen
        H = self.model.hamiltonian
        exact = conjugate_by_boost(H, gen.operator, settings.bch_beta, gen.spectrum).entries
        errors = []
        for order in range(settings.bch_max_order + 1):
            partial = bch_series(H, gen.operator, settings.bch_beta, order)
            errors.append(float(np.linalg.norm(partial - exact) / H.frobenius_norm))
        self.results["bch"] = {"beta": settings.bch_beta, "errors": errors}
        if settings.bch_max_order >= 4:
            drop = errors[2] / errors[4] if errors[4] > 0 else math.inf
            self._check("bch_order_2_to_4_drop", drop, BCH_DROP, passed=drop >= BCH_DROP)
        if settings.bch_max_order >= 8:
            self._check("bch_order_8", errors[8], BCH_ORDER8_TOLERANCE)

    def _span_checks(self):
        beta = self.config.appendix.span_beta
        free = self.model.free_variant()
        H0, P, N0 = free.hamiltonian, free.momentum, free.free_boost
        X = conjugate_by_boost(H0, N0, beta, spectral(N0))
        operators = {"h": H0, "p": P, "n": N0}
        frobenius = span_decomposition(X, operators)
        probed = span_decomposition(X, operators, probe=self.probe)
        self._check("span_n_coefficient", abs(frobenius.coefficients["n"]), SPAN_N_TOLERANCE)

        # coefficient error <= ||(X - K) psi|| / sqrt(smallest probe Gram eigenvalue)
        target = {"h": math.cosh(beta), "p": -math.sinh(beta), "n": 0.0}
        K = target["h"] * H0.entries + target["p"] * P.entries
        gap = float(np.linalg.norm((X.entries - K) @ self.probe.amplitudes))
        bound = gap / math.sqrt(probed.gram_min_eigenvalue)
        distance = math.sqrt(sum((probed.coefficients[name] - target[name]) ** 2 for name in target))
        self._check("span_probe_coefficients", distance, bound * (1.0 + 1e-9) + 1e-12)
        self.results["span"] = {
            "beta": beta,
            "expected": target,
            "frobenius": {"coefficients": frobenius.coefficients, "residual": frobenius.residual,
                          "gram_condition": frobenius.gram_condition},
            "probe": {"coefficients": probed.coefficients, "residual": probed.residual,
                      "gram_condition": probed.gram_condition, "tolerance": bound},
        }

    def _run_scan(self):
        t, width, fit = self.t_grid, self.config.packet_width, self.config.fit
        velocities, momenta = self.config.velocities, self.config.momenta

        def attempt(build):
            try:
                return fit_decay(build(), fit.abs2_lo, fit.abs2_hi, fit.min_samples)
            except LabError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            v_fits = list(self.logger.progress(
                pool.map(lambda v: attempt(lambda: amplitude_V(self.model, None, v, width, t)), velocities),
                desc="scan V", total=len(velocities)))
            p_fits = list(self.logger.progress(
                pool.map(lambda p: attempt(lambda: survival_A(self.model, p, t)), momenta),
                desc="scan A", total=len(momenta)))

        rows = []
        for v, v_fit in zip(velocities, v_fits):
            gamma = BoostParams.from_velocity(v).gamma
            for p, p_fit in zip(momenta, p_fits):
                m_a = self.model.params.m_a
                gamma_m = math.hypot(p, m_a) / m_a
                failures = [str(item) for item in (v_fit, p_fit) if isinstance(item, LabError)]
                row = {"v": v, "p": p, "gamma": gamma, "gamma_m": gamma_m,
                       "gamma_squared": gamma ** 2, "gamma_gamma_m": gamma * gamma_m, "gamma_V": None, "gamma_A": None,
                       "measured_ratio": None, "status": "; ".join(failures) or "ok"}
                if not failures:
                    row.update(gamma_V=v_fit.gamma_rate, gamma_A=p_fit.gamma_rate,
                               measured_ratio=v_fit.gamma_rate / p_fit.gamma_rate if p_fit.gamma_rate > 0 else None)
                rows.append(row)
        failed = sum(row["status"] != "ok" for row in rows)
        self._log("scan", f"{len(rows)} cells, {failed} with failed fits")
        self.results["scan"] = rows

    # ============================================
    # Entry points
    # ============================================

    def run(self, command: str) -> ExperimentReport:
        """Run one subcommand and return its self-contained report."""
        if command not in COMMANDS:
            raise ConfigurationError(f"unknown subcommand {command!r}; expected one of {COMMANDS}")
        basis = self.model.basis
        self.results["setup"] = {"basis_size": basis.size, "n_modes": basis.grid.n_modes,
                                 "k_max": basis.grid.k_max, "dense": self.model.is_dense_capable}
        self._log("setup", f"{command}: {basis.size} states, dense={self.model.is_dense_capable}")

        handler = getattr(self, "_run_" + command.replace("-", "_"))
        with self.logger.stage(command):
            handler()

        residuals = sign_convention = lsq_converged = lsq_iterations = None
        if self.model.is_dense_capable:
            gen = self.boostgen
            with self.logger.stage("residuals"):
                residuals = algebra_residuals(self.model.hamiltonian, self.model.momentum,
                                              gen.operator, self.probe)
            sign_convention = gen.sign_convention
            if gen.refinement is not None:
                lsq_converged, lsq_iterations = gen.refinement.converged, gen.refinement.iterations

        failed = [name for name, check in self.checks.items() if not check.passed]
        self._log(command, f"{len(self.checks)} checks, {len(failed)} failed" + (f": {failed}" if failed else ""))
        return ExperimentReport(
            command=command,
            config_echo=self.config.model_dump(mode="json"),
            residuals=residuals,
            lsq_converged=lsq_converged,
            lsq_iterations=lsq_iterations,
            sign_convention=sign_convention,
            results=self.results,
            checks=self.checks,
            versions=package_versions(),
            timing=dict(self.logger.timings),
            series=self.series,
        )

    def dump_operators(self, out_dir: Union[str, Path]) -> List[Path]:
        """operator_<name>.csv for H0, H_int, P and N."""
        self.model.require_dense("operator dump")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        operators = {"H0": self.model.free_hamiltonian, "H_int": self.model.interaction,
                     "P": self.model.momentum, "N": self.boostgen.operator}
        return [dump_operator_csv(op, out / f"operator_{name}.csv") for name, op in operators.items()]
