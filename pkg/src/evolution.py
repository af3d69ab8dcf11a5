"""
Boosted Decay Lab - Evolution Lab
Rest, packet and momentum states; speed-up and survival amplitudes; decay fits;
dilation, moments and mixture experiments
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import linregress

from .boost import BoostGenerator, boosted_hamiltonian_closed_form, boosted_momentum_closed_form
from .errors import ConfigurationError, DomainError, FitError
from .kinematics import BoostParams, SectorBasis, dispersion
from .logbook import LOGBOOK
from .operators import LeeModel, SpectralDecomposition, StateVector, interaction_kernel, spectral
from .schemas import DecayFit, FitSettings, ModelParams


CLOSED_FORM = "closed_form"
EXPLICIT_BOOST = "explicit_boost"
ROUTES = (CLOSED_FORM, EXPLICIT_BOOST)


@dataclass(frozen=True, eq=False)
class AmplitudeSeries:
    """
    Complex amplitude sampled on a time grid. carrier is the reference
    frequency removed before phase unwrapping; recurrence_guard bounds fits.
    """
    t_grid: np.ndarray
    values: np.ndarray
    label: str
    recurrence_guard: float = math.inf
    carrier: float = 0.0

    @property
    def abs2(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def scaled(self, weight: float, label: str) -> "AmplitudeSeries":
        return AmplitudeSeries(self.t_grid, weight * self.values, label,
                               self.recurrence_guard, self.carrier)


def _check_route(route: str):
    if route not in ROUTES:
        raise DomainError(f"unknown route {route!r}; expected one of {ROUTES}")


# ============================================================
# STATES
# ============================================================

def make_psi_p(basis: SectorBasis, p: float) -> StateVector:
    """Bare a-particle with momentum p."""
    tick = basis.grid.require_tick(p)
    amplitudes = np.zeros(basis.size, dtype=np.complex128)
    amplitudes[basis.index_of_a(tick)] = 1.0
    return StateVector(amplitudes, label=f"psi({tick * basis.grid.dk:g})")


def make_phi0(basis: SectorBasis) -> StateVector:
    state = make_psi_p(basis, 0.0)
    return StateVector(state.amplitudes, label="phi0")


def make_packet_phi0(basis: SectorBasis, width: float) -> StateVector:
    """Gaussian a-particle packet with zero mean momentum."""
    if not width > 0:
        raise DomainError(f"packet width {width!r} must be positive")
    n = basis.grid.n_modes
    amplitudes = np.zeros(basis.size, dtype=np.complex128)
    amplitudes[:n] = np.exp(-basis.grid.modes ** 2 / (4.0 * width ** 2))
    return StateVector(amplitudes, label="Phi0").normalized()


# ============================================================
# AMPLITUDES
# ============================================================

def _block_series(model: LeeModel, bra: StateVector, ket: StateVector, t_grid: np.ndarray,
                  block_spectrum: Callable[[float], SpectralDecomposition]) -> np.ndarray:
    """Sum of per-block overlaps over the blocks both states occupy (ascending total momentum)."""
    values = np.zeros(len(t_grid), dtype=np.complex128)
    for total in model.support_blocks(bra, ket):
        idx = model.block_indices(total)
        values += block_spectrum(total).overlap_series(bra.amplitudes[idx], ket.amplitudes[idx], t_grid)
    return values


def _boosted_block_spectrum(model: LeeModel, v: float) -> Callable[[float], SpectralDecomposition]:
    def decompose(total: float) -> SpectralDecomposition:
        K = boosted_hamiltonian_closed_form(model.block_hamiltonian(total), model.block_momentum(total), v)
        return spectral(K)
    return decompose


def _boosted_pair_series(model: LeeModel, boostgen: Optional[BoostGenerator], v: float,
                         bra: StateVector, ket: StateVector, t_grid: np.ndarray, route: str) -> np.ndarray:
    _check_route(route)
    boost = BoostParams.from_velocity(v)
    t_grid = np.asarray(t_grid, dtype=float)
    if route == CLOSED_FORM:
        return _block_series(model, bra, ket, t_grid, _boosted_block_spectrum(model, boost.v))
    if boostgen is None:
        raise DomainError("explicit_boost route needs a boost generator")
    model.require_dense("explicit boost route")
    left, right = boostgen.boost(bra, boost.v), boostgen.boost(ket, boost.v)
    return model.spectrum.overlap_series(left.amplitudes, right.amplitudes, t_grid)


def amplitude_V(model: LeeModel, boostgen: Optional[BoostGenerator], v: float, width: float,
                t_grid: np.ndarray, route: str = CLOSED_FORM) -> AmplitudeSeries:
    """
    <phi0, exp(-i t (gamma H - gamma v P)) Phi0> (closed form), or
    <L_v phi0, exp(-i H t) L_v Phi0> with the generator (explicit boost).
    """
    boost = BoostParams.from_velocity(v)
    basis = model.basis
    values = _boosted_pair_series(model, boostgen, v, make_phi0(basis),
                                  make_packet_phi0(basis, width), t_grid, route)
    suffix = "" if route == CLOSED_FORM else "_explicit"
    return AmplitudeSeries(np.asarray(t_grid, dtype=float), values, f"V_v{v:g}{suffix}",
                           recurrence_guard=model.recurrence_guard(0.0) / boost.gamma,
                           carrier=boost.gamma * model.params.m_a)


def boosted_survival(model: LeeModel, boostgen: Optional[BoostGenerator], v: float,
                     t_grid: np.ndarray, route: str = CLOSED_FORM) -> AmplitudeSeries:
    """Survival amplitude of the boosted rest state, <L_v phi0, exp(-iHt) L_v phi0>."""
    boost = BoostParams.from_velocity(v)
    phi0 = make_phi0(model.basis)
    values = _boosted_pair_series(model, boostgen, v, phi0, phi0, t_grid, route)
    suffix = "" if route == CLOSED_FORM else "_explicit"
    return AmplitudeSeries(np.asarray(t_grid, dtype=float), values, f"W_v{v:g}{suffix}",
                           recurrence_guard=model.recurrence_guard(0.0) / boost.gamma,
                           carrier=boost.gamma * model.params.m_a)


def survival_A(model: LeeModel, p: float, t_grid: np.ndarray, dense: bool = False) -> AmplitudeSeries:
    """<psi_p, exp(-iHt) psi_p> inside the total-momentum block of p (or the full space)."""
    psi = make_psi_p(model.basis, p)
    t_grid = np.asarray(t_grid, dtype=float)
    total = float(np.real(psi.amplitudes @ model.basis.total_momenta))
    if dense:
        model.require_dense("full-space survival amplitude")
        values = model.spectrum.overlap_series(psi.amplitudes, psi.amplitudes, t_grid)
    else:
        values = _block_series(model, psi, psi, t_grid, model.block_spectrum)
    return AmplitudeSeries(t_grid, values, f"A_p{total:g}",
                           recurrence_guard=model.recurrence_guard(total),
                           carrier=float(dispersion(model.params.m_a, total)))


# ============================================================
# DECAY FITS
# ============================================================

def _longest_run(mask: np.ndarray) -> Tuple[int, int]:
    """[start, stop) of the longest run of True; first one on ties."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    if edges.size == 0:
        return 0, 0
    starts, stops = edges[0::2], edges[1::2]
    best = int(np.argmax(stops - starts))
    return int(starts[best]), int(stops[best])


def fit_decay(series: AmplitudeSeries, abs2_lo: float = 0.05, abs2_hi: float = 0.9,
              min_samples: int = 20) -> DecayFit:
    """
    Exponential-regime fit: window is the longest contiguous run with
    abs2_lo <= |A|^2/|A(t0)|^2 <= abs2_hi before the recurrence guard.
    Gamma from log|A|^2, m_eff from the carrier-demodulated unwrapped phase.
    """
    t, values = series.t_grid, series.values
    if t.size < min_samples:
        raise FitError(f"{series.label}: {t.size} samples, at least {min_samples} required")
    abs2 = np.abs(values) ** 2
    if abs2[0] == 0.0:
        raise FitError(f"{series.label}: amplitude vanishes at t0")
    relative = abs2 / abs2[0]
    admissible = (relative >= abs2_lo) & (relative <= abs2_hi) & (t <= series.recurrence_guard)
    start, stop = _longest_run(admissible)
    if stop - start < 3:
        raise FitError(
            f"{series.label}: no admissible decay window in [{abs2_lo}, {abs2_hi}] before "
            f"t={series.recurrence_guard:.4g} (min |A|^2 ratio {relative.min():.4g}); "
            "extend t_grid.t_max, refine the grid, or increase the coupling g"
        )
    window = slice(start, stop)
    tw = t[window]
    decay = linregress(tw, np.log(abs2[window]))
    gamma_rate = -float(decay.slope)
    if gamma_rate < 0:
        raise FitError(f"{series.label}: |A|^2 grows over the window (slope {decay.slope:.4g})")
    phase = np.unwrap(np.angle(values[window] * np.exp(1j * series.carrier * tw)))
    drift = linregress(tw, phase)
    return DecayFit(m_eff=series.carrier - float(drift.slope), gamma_rate=gamma_rate,
                    window=(float(tw[0]), float(tw[-1])),
                    r_squared=float(min(1.0, max(0.0, decay.rvalue ** 2))),
                    recurrence_guard=series.recurrence_guard, samples=stop - start)


def _fit_with(series: AmplitudeSeries, settings: FitSettings) -> DecayFit:
    return fit_decay(series, settings.abs2_lo, settings.abs2_hi, settings.min_samples)


def fit_row(fit: DecayFit, label: str, p_or_v: float) -> Dict[str, Any]:
    return {"label": label, "p_or_v": p_or_v, "m_eff": fit.m_eff, "gamma_rate": fit.gamma_rate,
            "t1": fit.window[0], "t2": fit.window[1], "r_squared": fit.r_squared}


# ============================================================
# ORACLES AND TIME GRIDS
# ============================================================

def golden_rule_width(params: ModelParams, dk: float, p: float = 0.0) -> float:
    """
    2 pi sum |G(k*, p - k*)|^2 / (|v_b - v_c| dk) over both resonant
    momenta of w_b(k) + w_c(p - k) = w_a(p).
    """
    energy = dispersion(params.m_a, p)

    def detuning(k):
        return dispersion(params.m_b, k) + dispersion(params.m_c, p - k) - energy

    # velocities match (and the pair energy is minimal) at k1/m_b = k2/m_c
    k_min = p * params.m_b / (params.m_b + params.m_c)
    if detuning(k_min) >= 0 or params.g == 0.0:
        return 0.0
    reach = 2.0 * (energy + abs(p)) + 1.0
    width = 0.0
    for lo, hi in ((k_min - reach, k_min), (k_min, k_min + reach)):
        k = brentq(detuning, lo, hi, xtol=1e-14, rtol=1e-14)
        velocity_gap = abs(k / dispersion(params.m_b, k) - (p - k) / dispersion(params.m_c, p - k))
        coupling = float(interaction_kernel(params, k, p - k, dk))
        width += 2.0 * math.pi * coupling ** 2 / (velocity_gap * dk)
    return width


def default_t_grid(model: LeeModel, samples: int = 400, t_max: Optional[float] = None) -> np.ndarray:
    """samples points on [0, min(20/Gamma_GR, recurrence guard of the rest block)]."""
    if t_max is None:
        width = golden_rule_width(model.params, model.grid.dk)
        horizon = 20.0 / width if width > 0 else math.inf
        t_max = min(horizon, model.recurrence_guard(0.0))
        if not math.isfinite(t_max):
            raise ConfigurationError("cannot derive t_max: no decay and no level spacing; set t_grid.t_max")
    return np.linspace(0.0, t_max, samples)


# ============================================================
# EXPERIMENTS
# ============================================================

@dataclass
class DilationResult:
    rest_fit: DecayFit
    m_fit: float
    rows: List[Dict[str, Any]]
    fits: List[DecayFit]
    series: List[AmplitudeSeries]


def check_dilation(model: LeeModel, p_list: Sequence[float], t_grid: np.ndarray,
                   settings: Optional[FitSettings] = None) -> DilationResult:
    """
    Gamma_p * gamma_m / Gamma_0 per momentum (input order), gamma_m from the
    fitted rest mass; the bare-mass variant and a direct curve check ride along.
    """
    settings = settings or FitSettings()
    rest_series = survival_A(model, 0.0, t_grid)
    rest_fit = _fit_with(rest_series, settings)
    _require_quality(rest_series, rest_fit, settings)
    m_fit, m_bare = rest_fit.m_eff, model.params.m_a
    rest_spectrum = model.block_spectrum(0.0)
    e0 = np.zeros(rest_spectrum.dim, dtype=np.complex128)
    e0[0] = 1.0
    rows, fits, series = [], [], [rest_series]
    for p in p_list:
        if model.grid.require_tick(p) == 0:
            p_series, p_fit = rest_series, rest_fit
        else:
            p_series = survival_A(model, p, t_grid)
            p_fit = _fit_with(p_series, settings)
            _require_quality(p_series, p_fit, settings)
            series.append(p_series)
        gamma_m = math.hypot(p, m_fit) / m_fit
        gamma_bare = math.hypot(p, m_bare) / m_bare
        inside = (p_series.t_grid >= p_fit.window[0]) & (p_series.t_grid <= p_fit.window[1])
        t_window = p_series.t_grid[inside]
        rest_dilated = np.abs(rest_spectrum.overlap_series(e0, e0, t_window / gamma_m)) ** 2
        rows.append({
            "p": p,
            "gamma_m": gamma_m,
            "gamma_m_bare": gamma_bare,
            "ratio": p_fit.gamma_rate * gamma_m / rest_fit.gamma_rate,
            "ratio_bare": p_fit.gamma_rate * gamma_bare / rest_fit.gamma_rate,
            "curve_deviation": float(np.max(np.abs(p_series.abs2[inside] - rest_dilated))),
        })
        fits.append(p_fit)
        LOGBOOK.log("dilation", f"p={p:g}: ratio {rows[-1]['ratio']:.6f}, r^2 {p_fit.r_squared:.6f}")
    return DilationResult(rest_fit=rest_fit, m_fit=m_fit, rows=rows, fits=fits, series=series)


def _require_quality(series: AmplitudeSeries, fit: DecayFit, settings: FitSettings):
    if fit.r_squared < settings.min_r_squared:
        raise FitError(f"{series.label}: r^2 {fit.r_squared:.6f} below {settings.min_r_squared}")


@dataclass
class Moments:
    v: float
    avg_P: float
    avg_E: float

    @property
    def ratio(self) -> float:
        return abs(self.avg_P) / self.avg_E


def boosted_moments(model: LeeModel, boostgen: Optional[BoostGenerator], v: float,
                    route: str = CLOSED_FORM) -> Moments:
    """Average momentum and energy of the boosted rest state."""
    _check_route(route)
    boost = BoostParams.from_velocity(v)
    phi0 = make_phi0(model.basis)
    if route == CLOSED_FORM:
        avg_P = avg_E = 0.0
        for total in model.support_blocks(phi0):
            idx = model.block_indices(total)
            local = StateVector(phi0.amplitudes[idx])
            H, P = model.block_hamiltonian(total), model.block_momentum(total)
            avg_P += boosted_momentum_closed_form(H, P, boost.v).expectation(local)
            avg_E += boosted_hamiltonian_closed_form(H, P, boost.v).expectation(local)
        return Moments(v=boost.v, avg_P=avg_P, avg_E=avg_E)
    if boostgen is None:
        raise DomainError("explicit_boost route needs a boost generator")
    model.require_dense("explicit boost moments")
    boosted = boostgen.boost(phi0, boost.v)
    return Moments(v=boost.v, avg_P=model.momentum.expectation(boosted),
                   avg_E=model.hamiltonian.expectation(boosted))


@dataclass
class MixtureAmplitudes:
    """Component and combined series of w1 L_v Phi0 + w2 psi_p."""
    p: float
    fast: AmplitudeSeries
    slow: AmplitudeSeries
    combined: AmplitudeSeries


@dataclass
class MixtureResult:
    v: float
    p: float
    fast: AmplitudeSeries
    slow: AmplitudeSeries
    combined: AmplitudeSeries
    fast_fit: Optional[DecayFit]
    slow_fit: Optional[DecayFit]
    rate_ratio: Optional[float]
    gamma_squared: float
    gamma_gamma_m: float
    fit_rows: List[Dict[str, Any]] = field(default_factory=list)


def mixture_momentum(model: LeeModel, v: float) -> float:
    """Grid mode nearest gamma v m_a."""
    boost = BoostParams.from_velocity(v)
    target = boost.gamma * boost.v * model.params.m_a
    tick = int(round(target / model.grid.dk))
    if abs(tick) > model.grid.half_width:
        raise DomainError(f"momentum {target:.6g} for v={v:g} lies beyond k_max={model.grid.k_max:g}")
    return tick * model.grid.dk


def _mixture_weights(weights: Sequence[float]) -> Tuple[float, float]:
    w_fast, w_slow = (float(w) for w in weights)
    if abs(w_fast ** 2 + w_slow ** 2 - 1.0) > 1e-9:
        raise DomainError(f"weights {tuple(weights)} are not normalized")
    return w_fast, w_slow


def mixture_amplitudes(model: LeeModel, v: float, weights: Sequence[float], t_grid: np.ndarray,
                       width: float, boostgen: Optional[BoostGenerator] = None,
                       route: str = CLOSED_FORM) -> MixtureAmplitudes:
    """
    Psi = w1 L_v Phi0 + w2 psi_p evolved under H and read out on
    w1 L_v phi0 + w2 psi_p. The components are w1^2 V(v, t) and w2^2 A_p(t).

    The closed form has no boosted states, so its combined series is the sum
    of the components and leaves out the cross terms
    w1 w2 (<L_v phi0, e^{-iHt} psi_p> + <psi_p, e^{-iHt} L_v Phi0>).
    The explicit route builds both superpositions with the generator and
    keeps them.
    """
    _check_route(route)
    w_fast, w_slow = _mixture_weights(weights)
    t_grid = np.asarray(t_grid, dtype=float)
    p = mixture_momentum(model, v)
    if route == CLOSED_FORM:
        fast = amplitude_V(model, None, v, width, t_grid).scaled(w_fast ** 2, f"mix_fast_v{v:g}")
        slow = survival_A(model, p, t_grid).scaled(w_slow ** 2, f"mix_slow_p{p:g}")
        combined = AmplitudeSeries(t_grid, fast.values + slow.values, f"mix_v{v:g}",
                                   recurrence_guard=min(fast.recurrence_guard, slow.recurrence_guard))
        return MixtureAmplitudes(p=p, fast=fast, slow=slow, combined=combined)

    if boostgen is None:
        raise DomainError("explicit_boost route needs a boost generator")
    model.require_dense("explicit mixture")
    basis = model.basis
    boosted_phi0 = boostgen.boost(make_phi0(basis), v).amplitudes
    boosted_packet = boostgen.boost(make_packet_phi0(basis, width), v).amplitudes
    psi = make_psi_p(basis, p).amplitudes
    bra = w_fast * boosted_phi0 + w_slow * psi
    ket = w_fast * boosted_packet + w_slow * psi
    spectrum = model.spectrum
    boost = BoostParams.from_velocity(v)
    fast = AmplitudeSeries(t_grid, w_fast ** 2 * spectrum.overlap_series(boosted_phi0, boosted_packet, t_grid),
                           f"mix_fast_v{v:g}_explicit", model.recurrence_guard(0.0) / boost.gamma,
                           boost.gamma * model.params.m_a)
    slow = AmplitudeSeries(t_grid, w_slow ** 2 * spectrum.overlap_series(psi, psi, t_grid),
                           f"mix_slow_p{p:g}_explicit", model.recurrence_guard(p),
                           float(dispersion(model.params.m_a, p)))
    combined = AmplitudeSeries(t_grid, spectrum.overlap_series(bra, ket, t_grid), f"mix_v{v:g}_explicit",
                               recurrence_guard=min(fast.recurrence_guard, slow.recurrence_guard))
    return MixtureAmplitudes(p=p, fast=fast, slow=slow, combined=combined)


def mixture_experiment(model: LeeModel, v: float, weights: Sequence[float], t_grid: np.ndarray,
                       width: float, settings: Optional[FitSettings] = None) -> MixtureResult:
    """
    w1 Phi_v + w2 psi_p evolved under H: the boosted-packet component decays
    at gamma Gamma, the momentum eigenstate at Gamma / gamma_m.
    """
    settings = settings or FitSettings()
    w_fast, w_slow = _mixture_weights(weights)
    boost = BoostParams.from_velocity(v)
    amplitudes = mixture_amplitudes(model, v, (w_fast, w_slow), t_grid, width)
    fast, slow, p = amplitudes.fast, amplitudes.slow, amplitudes.p
    fast_fit = _fit_with(fast, settings) if w_fast != 0.0 else None
    slow_fit = _fit_with(slow, settings) if w_slow != 0.0 else None
    ratio = None
    if fast_fit is not None and slow_fit is not None and slow_fit.gamma_rate > 0:
        ratio = fast_fit.gamma_rate / slow_fit.gamma_rate
    gamma_m = math.hypot(p, model.params.m_a) / model.params.m_a
    rows = []
    if fast_fit is not None:
        rows.append(fit_row(fast_fit, fast.label, v))
    if slow_fit is not None:
        rows.append(fit_row(slow_fit, slow.label, p))
    return MixtureResult(v=boost.v, p=p, fast=fast, slow=slow, combined=amplitudes.combined,
                         fast_fit=fast_fit, slow_fit=slow_fit, rate_ratio=ratio,
                         gamma_squared=boost.gamma ** 2, gamma_gamma_m=boost.gamma * gamma_m, fit_rows=rows)
