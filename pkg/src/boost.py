"""
Boosted Decay Lab - Boost Solver
Interaction part of the boost generator, least-squares refinement against the
(N, H, P) commutator algebra, boosted-operator identities, BCH series, span
decomposition and the hyperbolic coefficient ODE
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, lsqr

from .errors import DomainError, IllConditionedError
from .kinematics import SectorBasis, BoostParams, build_grid, enumerate_basis, gamma_factor, rapidity_from_velocity
from .logbook import LOGBOOK
from .operators import (
    ArrayLike,
    HermitianOperator,
    LeeModel,
    ParticleBoost,
    SpectralDecomposition,
    StateVector,
    build_interaction,
    build_momentum,
    commutator,
    conjugate_by_boost,
    free_energies,
    interaction_kernel,
    spectral,
    _entries,
)
from .schemas import AlgebraResiduals, ModelParams


GRAM_CONDITION_LIMIT = 1e12
LSQ_TOLERANCE = 1e-10
LSQ_ROUND = 50
LSQ_STALL = 1e-6
SIGN_PROBE_BETA = 0.1


def _relative(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator > 0 else numerator


# ============================================================
# PROBE STATE
# ============================================================

def smooth_probe(basis: SectorBasis, width: float) -> StateVector:
    """Normalized Gaussian exp(-(k1^2 + k2^2)/(4 w^2)) over all A and BC states."""
    if not width > 0:
        raise DomainError(f"probe width {width!r} must be positive")
    dk = basis.grid.dk
    k1 = basis.tick1 * dk
    k2 = np.where(basis.is_pair, basis.tick2 * dk, 0.0)
    amplitudes = np.exp(-(k1 ** 2 + k2 ** 2) / (4.0 * width ** 2))
    return StateVector(amplitudes, label="probe").normalized()


def _probe_norm(matrix: np.ndarray, probe: StateVector) -> float:
    return float(np.linalg.norm(matrix @ probe.amplitudes))


# ============================================================
# INTERACTION STENCIL
# ============================================================

def _stencil(basis: SectorBasis, params: ModelParams, sign: int) -> HermitianOperator:
    half, dk = basis.grid.half_width, basis.grid.dk
    X = np.zeros((basis.size, basis.size), dtype=np.complex128)
    bc = np.flatnonzero(basis.is_pair)
    totals = basis.total_ticks[bc]
    G = interaction_kernel(params, basis.tick1[bc] * dk, basis.tick2[bc] * dk, dk)
    for shift in (+1, -1):
        target = totals + shift
        inside = np.abs(target) <= half
        a = target[inside] + half
        value = -shift * sign * 1j * G[inside] / (2.0 * dk)
        X[a, bc[inside]] = value
        X[bc[inside], a] = np.conj(value)
    return HermitianOperator(X, label="N_int")


def stencil_residual(basis: SectorBasis, params: ModelParams, sign: int,
                     probe: StateVector) -> float:
    """||([N_int, P] - i H_int) psi|| / ||H_int psi|| for one global sign."""
    H_int = build_interaction(basis, params)
    P = build_momentum(basis)
    N_int = _stencil(basis, params, sign)
    residual = commutator(N_int, P) - 1j * H_int.entries
    return _relative(_probe_norm(residual, probe), _probe_norm(H_int.entries, probe))


def select_stencil_sign(basis: SectorBasis, params: ModelParams,
                        probe_width: float = 0.35) -> Tuple[int, Dict[int, float]]:
    # Frobenius residuals of the two signs coincide (disjoint supports); the probe separates them
    probe = smooth_probe(basis, probe_width)
    residuals = {sign: stencil_residual(basis, params, sign, probe) for sign in (+1, -1)}
    sign = +1 if residuals[+1] <= residuals[-1] else -1
    return sign, residuals


def build_interaction_boost_stencil(basis: SectorBasis, params: ModelParams,
                                    sign: Optional[int] = None,
                                    probe_width: float = 0.35) -> HermitianOperator:
    """
    N_int entries <A(K +- dk)|N_int|BC(k1,k2)> = -+ i s G(k1,k2)/(2 dk), K = k1 + k2,
    with the global sign s chosen by the probe residual unless given.
    """
    if sign is None:
        sign, _ = select_stencil_sign(basis, params, probe_width)
    return _stencil(basis, params, sign)


# ============================================================
# RESIDUALS
# ============================================================

def algebra_residuals(H: HermitianOperator, P: HermitianOperator, N: HermitianOperator,
                      probe: Optional[StateVector] = None) -> AlgebraResiduals:
    C_NH = commutator(N, H) - 1j * P.entries
    C_NP = commutator(N, P) - 1j * H.entries
    values = {
        "r_NH": _relative(float(np.linalg.norm(C_NH)), P.frobenius_norm),
        "r_NP": _relative(float(np.linalg.norm(C_NP)), H.frobenius_norm),
        "r_HP": float(np.linalg.norm(commutator(H, P))),
    }
    if probe is not None:
        values["probe_r_NH"] = _relative(_probe_norm(C_NH, probe), _probe_norm(P.entries, probe))
        values["probe_r_NP"] = _relative(_probe_norm(C_NP, probe), _probe_norm(H.entries, probe))
    return AlgebraResiduals(**values)


def boost_objective(H: HermitianOperator, P: HermitianOperator, N: ArrayLike) -> float:
    """||[N,H] - iP||_F^2 + ||[N,P] - iH||_F^2"""
    first = commutator(N, H) - 1j * P.entries
    second = commutator(N, P) - 1j * H.entries
    return float(np.vdot(first, first).real + np.vdot(second, second).real)


# ============================================================
# LEAST-SQUARES REFINEMENT
# ============================================================

@dataclass
class LeastSquaresRefinement:
    operator: HermitianOperator
    converged: bool
    iterations: int
    unknowns: int
    objective_seed: float
    objective_final: float


def neighbor_block_pattern(basis: SectorBasis) -> np.ndarray:
    """Entries joining total momenta K and K +- dk."""
    totals = basis.total_ticks
    return np.abs(totals[:, None] - totals[None, :]) == 1


def _hermitian_parameterization(mask: np.ndarray):
    """Real coordinates of Hermitian matrices supported on mask: diagonal, Re and Im of the upper triangle."""
    rows, cols = np.nonzero(np.triu(mask, k=1))
    diag = np.flatnonzero(np.diagonal(mask))
    n = mask.shape[0]
    n_diag, n_off = diag.size, rows.size

    def to_matrix(theta: np.ndarray) -> np.ndarray:
        X = np.zeros((n, n), dtype=np.complex128)
        X[diag, diag] = theta[:n_diag]
        upper = theta[n_diag:n_diag + n_off] + 1j * theta[n_diag + n_off:]
        X[rows, cols] = upper
        X[cols, rows] = upper.conj()
        return X

    def from_matrix(Z: np.ndarray) -> np.ndarray:
        # adjoint of to_matrix under Re tr(A^H B)
        return np.concatenate([Z[diag, diag].real,
                               (Z[rows, cols] + Z[cols, rows]).real,
                               Z[rows, cols].imag - Z[cols, rows].imag])

    return n_diag + 2 * n_off, to_matrix, from_matrix


def _commutator_map(H: HermitianOperator, P: HermitianOperator, mask: np.ndarray):
    """X -> ([X,H], [X,P]) on the real coordinates, stacked as real vectors."""
    n = H.dim
    unknowns, to_matrix, from_matrix = _hermitian_parameterization(mask)

    def stack(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
        return np.concatenate([R1.real.ravel(), R1.imag.ravel(), R2.real.ravel(), R2.imag.ravel()])

    def matvec(theta):
        X = to_matrix(np.ravel(theta))
        return stack(commutator(X, H), commutator(X, P))

    def rmatvec(r):
        parts = np.ravel(r).reshape(4, n, n)
        R1, R2 = parts[0] + 1j * parts[1], parts[2] + 1j * parts[3]
        return from_matrix(commutator(R1, H) + commutator(R2, P))

    operator = LinearOperator((4 * n * n, unknowns), matvec=matvec, rmatvec=rmatvec, dtype=np.float64)
    return operator, stack, to_matrix


def refine_boost_least_squares(H: HermitianOperator, P: HermitianOperator,
                               N_seed: HermitianOperator, pattern: np.ndarray,
                               max_iterations: Optional[int] = None,
                               tolerance: float = LSQ_TOLERANCE) -> LeastSquaresRefinement:
    """
    Minimize the algebra objective over Hermitian N supported on pattern
    (plus the seed's support). LSQR on the real coordinates of the masked
    entries, restarted every LSQ_ROUND iterations; stops on convergence, on
    a round that lowers the objective by less than LSQ_STALL (relative), or
    at the iteration cap. The returned operator never has a larger
    objective than the seed.
    """
    mask = np.asarray(pattern, dtype=bool) | (N_seed.entries != 0)
    mask = mask | mask.T
    A, stack, to_matrix = _commutator_map(H, P, mask)
    unknowns = A.shape[1]
    cap = max_iterations or 10 * unknowns

    seed_objective = boost_objective(H, P, N_seed)
    b = stack(1j * P.entries - commutator(N_seed, H), 1j * H.entries - commutator(N_seed, P))
    threshold = tolerance * float(np.linalg.norm(A.rmatvec(stack(1j * P.entries, 1j * H.entries))))
    converged = float(np.linalg.norm(A.rmatvec(b))) <= threshold

    theta = np.zeros(unknowns)
    objective = float(b @ b)
    iterations, stalled = 0, False
    while not converged and iterations < cap:
        budget = min(LSQ_ROUND, cap - iterations)
        update, istop, itn = lsqr(A, b, atol=tolerance, btol=tolerance, iter_lim=budget, x0=theta)[:3]
        if not np.all(np.isfinite(update)):
            break
        theta = update
        iterations += itn
        residual = b - A.matvec(theta)
        current = float(residual @ residual)
        if istop in (0, 1, 2):
            converged = True
        elif itn == 0 or objective - current <= LSQ_STALL * objective:
            stalled = True
            break
        objective = current

    refined, final_objective = N_seed, seed_objective
    if iterations > 0:
        candidate = HermitianOperator(N_seed.entries + to_matrix(theta), label="N")
        candidate_objective = boost_objective(H, P, candidate)
        if candidate_objective <= seed_objective:
            refined, final_objective = candidate, candidate_objective
    status = "converged" if converged else ("stalled" if stalled else "stopped at the cap")
    LOGBOOK.log("boost", f"least squares: {iterations} iterations over {unknowns} unknowns, {status}, "
                         f"objective {seed_objective:.6e} -> {final_objective:.6e}")
    return LeastSquaresRefinement(operator=refined, converged=converged, iterations=iterations,
                                  unknowns=unknowns, objective_seed=seed_objective,
                                  objective_final=final_objective)


# ============================================================
# CLOSED-FORM TRANSFORMS AND IDENTITY CHECKS
# ============================================================

def boosted_hamiltonian_closed_form(H: HermitianOperator, P: HermitianOperator, v: float) -> HermitianOperator:
    """gamma H - gamma v P"""
    gamma = gamma_factor(v)
    return HermitianOperator(gamma * H.entries - (gamma * v) * P.entries, label="H_v")


def boosted_momentum_closed_form(H: HermitianOperator, P: HermitianOperator, v: float) -> HermitianOperator:
    """gamma P - gamma v H"""
    gamma = gamma_factor(v)
    return HermitianOperator(gamma * P.entries - (gamma * v) * H.entries, label="P_v")


def _conjugation_error(X: HermitianOperator, target: HermitianOperator, reference: HermitianOperator,
                       probe: Optional[StateVector]) -> Tuple[float, Optional[float]]:
    difference = X.entries - target.entries
    frobenius = _relative(float(np.linalg.norm(difference)), reference.frobenius_norm)
    if probe is None:
        return frobenius, None
    return frobenius, _relative(_probe_norm(difference, probe), _probe_norm(reference.entries, probe))


@dataclass
class BoostIdentityErrors:
    v: float
    e_H: float
    e_P: float
    e_H_probe: Optional[float] = None
    e_P_probe: Optional[float] = None

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {"v": self.v, "e_H": self.e_H, "e_P": self.e_P,
                "e_H_probe": self.e_H_probe, "e_P_probe": self.e_P_probe}


def select_rapidity_sign(H: HermitianOperator, P: HermitianOperator, N: HermitianOperator,
                         probe: StateVector, spectrum: Optional[SpectralDecomposition] = None,
                         beta: float = SIGN_PROBE_BETA) -> Tuple[int, Dict[int, float]]:
    """Sign s in L_v = exp(i s beta N) for which L_v^H H L_v tracks gamma H - gamma v P."""
    spectrum = spectrum or spectral(N)
    target = boosted_hamiltonian_closed_form(H, P, math.tanh(beta))
    errors = {}
    for sign in (+1, -1):
        conjugated = conjugate_by_boost(H, N, -sign * beta, spectrum)
        errors[sign] = _conjugation_error(conjugated, target, H, probe)[1]
    sign = +1 if errors[+1] <= errors[-1] else -1
    return sign, errors


def verify_boost_identity(H: HermitianOperator, P: HermitianOperator, N: HermitianOperator, v: float,
                          rapidity_sign: int = -1,
                          spectrum: Optional[SpectralDecomposition] = None,
                          probe: Optional[StateVector] = None) -> BoostIdentityErrors:
    """
    Compare L_v^H H L_v and L_v^H P L_v (L_v = exp(i s beta N)) with the
    closed forms; relative Frobenius errors plus optional probe errors.
    """
    beta = rapidity_from_velocity(v)
    if beta == 0.0:
        return BoostIdentityErrors(v=v, e_H=0.0, e_P=0.0,
                                   e_H_probe=0.0 if probe is not None else None,
                                   e_P_probe=0.0 if probe is not None else None)
    spectrum = spectrum or spectral(N)
    angle = -rapidity_sign * beta
    e_H, e_H_probe = _conjugation_error(conjugate_by_boost(H, N, angle, spectrum),
                                        boosted_hamiltonian_closed_form(H, P, v), H, probe)
    e_P, e_P_probe = _conjugation_error(conjugate_by_boost(P, N, angle, spectrum),
                                        boosted_momentum_closed_form(H, P, v), P, probe)
    return BoostIdentityErrors(v=v, e_H=e_H, e_P=e_P, e_H_probe=e_H_probe, e_P_probe=e_P_probe)


# ============================================================
# BOOST GENERATOR
# ============================================================

@dataclass(eq=False)
class BoostGenerator:
    """N = N0 + N_int (optionally refined) with its spectrum and sign convention."""
    operator: HermitianOperator
    spectrum: SpectralDecomposition
    stencil_sign: int
    rapidity_sign: int
    refinement: Optional[LeastSquaresRefinement] = None
    evidence: Dict[str, Dict[int, float]] = field(default_factory=dict)

    @property
    def sign_convention(self) -> str:
        direction = "+" if self.rapidity_sign > 0 else "-"
        return f"stencil={self.stencil_sign:+d}; L_v=exp({direction}i*beta*N)"

    def boost(self, state: StateVector, v: float) -> StateVector:
        """L_v applied to a state."""
        beta = rapidity_from_velocity(v)
        if beta == 0.0:
            return state
        amplitudes = self.spectrum.exp_apply(state.amplitudes, self.rapidity_sign * beta)
        return StateVector(amplitudes, label=f"L({v:g}){state.label}")


def build_boost_generator(model: LeeModel, refine: bool = False, probe_width: float = 0.35,
                          max_iterations: Optional[int] = None) -> BoostGenerator:
    model.require_dense("boost generator")
    basis, params = model.basis, model.params
    stencil_sign, stencil_evidence = select_stencil_sign(basis, params, probe_width)
    N = HermitianOperator(model.free_boost.entries + _stencil(basis, params, stencil_sign).entries, label="N")
    refinement = None
    if refine:
        refinement = refine_boost_least_squares(model.hamiltonian, model.momentum, N,
                                                neighbor_block_pattern(basis), max_iterations)
        N = refinement.operator
    spectrum = spectral(N)
    probe = smooth_probe(basis, probe_width)
    rapidity_sign, rapidity_evidence = select_rapidity_sign(model.hamiltonian, model.momentum, N, probe, spectrum)
    generator = BoostGenerator(operator=N, spectrum=spectrum, stencil_sign=stencil_sign,
                               rapidity_sign=rapidity_sign, refinement=refinement,
                               evidence={"stencil": stencil_evidence, "rapidity": rapidity_evidence})
    LOGBOOK.log("boost", f"generator ready on {basis.size} states: {generator.sign_convention}")
    return generator


# ============================================================
# FREE-THEORY CONVERGENCE
# ============================================================

@dataclass
class ConvergenceStudy:
    resolutions: List[Dict[str, float]]
    ratios: Dict[str, float]
    rapidity_sign: int


def _free_probe_errors(params: ModelParams, n_modes: int, dk: float, probe_width: float,
                       beta: float) -> Dict[str, object]:
    basis = enumerate_basis(build_grid(n_modes, dk))
    factors = ParticleBoost.from_params(basis.grid, params)
    psi = smooth_probe(basis, probe_width).amplitudes
    energies = free_energies(basis, params)
    momenta = basis.total_momenta
    N_psi = factors.apply(psi)
    r_NH = (factors.apply(energies * psi) - energies * N_psi - 1j * momenta * psi)
    r_NP = (factors.apply(momenta * psi) - momenta * N_psi - 1j * energies * psi)
    row = {
        "dk": dk,
        "n_modes": n_modes,
        "probe_r_NH": float(np.linalg.norm(r_NH) / np.linalg.norm(momenta * psi)),
        "probe_r_NP": float(np.linalg.norm(r_NP) / np.linalg.norm(energies * psi)),
    }
    boost = BoostParams.from_rapidity(beta)
    errors = {}
    for sign in (+1, -1):
        lifted = factors.exp_apply(psi, sign * beta)
        conj_H = factors.exp_apply(energies * lifted, -sign * beta)
        conj_P = factors.exp_apply(momenta * lifted, -sign * beta)
        target_H = boost.gamma * energies * psi - boost.gamma * boost.v * momenta * psi
        target_P = boost.gamma * momenta * psi - boost.gamma * boost.v * energies * psi
        errors[sign] = (float(np.linalg.norm(conj_H - target_H) / np.linalg.norm(energies * psi)),
                        float(np.linalg.norm(conj_P - target_P) / np.linalg.norm(momenta * psi)))
    return {"row": row, "errors": errors}


def free_algebra_convergence(params: ModelParams, k_max: float, dk: float,
                             probe_width: float = 0.35, beta: float = 0.5) -> ConvergenceStudy:
    """
    Free theory at dk and dk/2 with the same k_max, through factored
    one-particle generators (no pair-space matrix is formed).
    """
    free = params.model_copy(update={"g": 0.0})
    coarse_half = int(round(k_max / dk))
    runs = [_free_probe_errors(free, 2 * half + 1, spacing, probe_width, beta)
            for half, spacing in ((coarse_half, dk), (2 * coarse_half, dk / 2.0))]
    coarse_errors = runs[0]["errors"]
    sign = +1 if coarse_errors[+1][0] <= coarse_errors[-1][0] else -1
    resolutions = []
    for run in runs:
        row = dict(run["row"])
        row["e_H_probe"], row["e_P_probe"] = run["errors"][sign]
        resolutions.append(row)
    coarse, fine = resolutions
    ratios = {key: _relative(coarse[key], fine[key])
              for key in ("probe_r_NH", "probe_r_NP", "e_H_probe", "e_P_probe")}
    return ConvergenceStudy(resolutions=resolutions, ratios=ratios, rapidity_sign=sign)


# ============================================================
# BCH SERIES, SPAN DECOMPOSITION, COEFFICIENT ODE
# ============================================================

def bch_series(X: ArrayLike, N: HermitianOperator, beta: float, order: int) -> np.ndarray:
    """sum_{j <= order} (i beta)^j ad_N^j(X) / j!"""
    if order < 0:
        raise DomainError(f"order must be >= 0, got {order}")
    term = np.array(_entries(X), dtype=np.complex128)
    total = term.copy()
    for j in range(1, order + 1):
        term = (1j * beta / j) * commutator(N, term)
        total += term
    return total


@dataclass
class SpanDecomposition:
    coefficients: Dict[str, float]
    residual: float
    gram_condition: float
    gram_min_eigenvalue: float


def span_decomposition(X: ArrayLike, basis_ops: Mapping[str, ArrayLike],
                       probe: Optional[StateVector] = None) -> SpanDecomposition:
    """
    Least-squares projection of X onto span(basis_ops), real coefficients.
    Inner product: Re tr(A^H B), or Re sum <A psi, B psi> with a probe.
    """
    def vectorize(op):
        entries = _entries(op)
        return entries @ probe.amplitudes if probe is not None else entries.ravel()

    names = list(basis_ops)
    vectors = [vectorize(basis_ops[name]) for name in names]
    target = vectorize(X)
    gram = np.array([[np.vdot(a, b).real for b in vectors] for a in vectors])
    condition = float(np.linalg.cond(gram))
    if not condition <= GRAM_CONDITION_LIMIT:
        raise IllConditionedError(f"Gram matrix condition number {condition:.3e} above {GRAM_CONDITION_LIMIT:.0e}",
                                  dim=len(names))
    rhs = np.array([np.vdot(a, target).real for a in vectors])
    coefficients = np.linalg.solve(gram, rhs)
    projection = sum(c * vec for c, vec in zip(coefficients, vectors))
    residual = _relative(float(np.linalg.norm(target - projection)), float(np.linalg.norm(target)))
    return SpanDecomposition(coefficients={name: float(c) for name, c in zip(names, coefficients)},
                             residual=residual, gram_condition=condition,
                             gram_min_eigenvalue=float(np.linalg.eigvalsh(gram)[0]))


@dataclass
class CoefficientTrajectory:
    beta_grid: np.ndarray
    h_values: np.ndarray
    p_values: np.ndarray

    def invariant_error(self) -> float:
        return float(np.max(np.abs(self.h_values ** 2 - self.p_values ** 2 - 1.0)))

    def closed_form_error(self) -> float:
        return float(np.max(np.abs(self.h_values - np.cosh(self.beta_grid))
                            + np.abs(self.p_values + np.sinh(self.beta_grid))))


def solve_coefficient_ode(beta_max: float, step: float, backward: bool = False) -> CoefficientTrajectory:
    """Classical RK4 for dh/dbeta = -p, dp/dbeta = -h from (1, 0)."""
    if not beta_max > 0 or not step > 0:
        raise DomainError(f"beta_max and step must be positive, got {beta_max!r}, {step!r}")
    count = max(1, math.ceil(beta_max / step - 1e-9))
    grid = np.linspace(0.0, beta_max, count + 1)
    if backward:
        grid = -grid
    h_values = np.empty(count + 1)
    p_values = np.empty(count + 1)
    h, p = 1.0, 0.0
    h_values[0], p_values[0] = h, p
    for j in range(count):
        dt = grid[j + 1] - grid[j]
        k1h, k1p = -p, -h
        k2h, k2p = -(p + 0.5 * dt * k1p), -(h + 0.5 * dt * k1h)
        k3h, k3p = -(p + 0.5 * dt * k2p), -(h + 0.5 * dt * k2h)
        k4h, k4p = -(p + dt * k3p), -(h + dt * k3h)
        h = h + dt / 6.0 * (k1h + 2.0 * k2h + 2.0 * k3h + k4h)
        p = p + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        h_values[j + 1], p_values[j + 1] = h, p
    if backward:
        return CoefficientTrajectory(grid[::-1].copy(), h_values[::-1].copy(), p_values[::-1].copy())
    return CoefficientTrajectory(grid, h_values, p_values)
