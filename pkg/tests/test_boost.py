import math
import re

import numpy as np
import pytest

from src.boost import (
    algebra_residuals,
    bch_series,
    boost_objective,
    boosted_hamiltonian_closed_form,
    boosted_momentum_closed_form,
    build_interaction_boost_stencil,
    free_algebra_convergence,
    neighbor_block_pattern,
    refine_boost_least_squares,
    select_stencil_sign,
    smooth_probe,
    solve_coefficient_ode,
    span_decomposition,
    stencil_residual,
    verify_boost_identity,
)
from src.errors import DomainError, IllConditionedError
from src.evolution import make_phi0
from src.kinematics import compose_velocities
from src.operators import HermitianOperator, LeeModel, conjugate_by_boost, spectral


# ============================================
# Probe and stencil
# ============================================

def test_smooth_probe_is_normalized_and_even(small_model):
    probe = smooth_probe(small_model.basis, 0.35)
    assert probe.norm == pytest.approx(1.0)
    basis = small_model.basis
    assert probe.amplitudes[basis.index_of_a(2)] == probe.amplitudes[basis.index_of_a(-2)]
    with pytest.raises(DomainError):
        smooth_probe(basis, 0.0)


def test_stencil_sign_is_decided_by_the_probe(small_model):
    sign, residuals = select_stencil_sign(small_model.basis, small_model.params)
    assert sign in (+1, -1)
    assert residuals[sign] < residuals[-sign]


def test_stencil_sign_ties_resolve_to_plus(small_free_model):
    sign, residuals = select_stencil_sign(small_free_model.basis, small_free_model.params)
    assert sign == +1
    assert residuals[+1] == residuals[-1] == 0.0


def test_stencil_links_neighbouring_total_momenta(small_model):
    stencil = build_interaction_boost_stencil(small_model.basis, small_model.params)
    totals = small_model.basis.total_ticks
    rows, cols = np.nonzero(stencil.entries)
    assert rows.size > 0
    assert np.all(np.abs(totals[rows] - totals[cols]) == 1)
    assert not stencil.is_real


def test_stencil_residual_shrinks_with_spacing(params):
    residuals = []
    for n_modes, dk in ((13, 0.25), (25, 0.125)):
        model = LeeModel.from_grid(n_modes, dk, params)
        sign, _ = select_stencil_sign(model.basis, params)
        residuals.append(stencil_residual(model.basis, params, sign, smooth_probe(model.basis, 0.35)))
    assert residuals[1] < residuals[0]


# ============================================
# Residuals and convergence
# ============================================

def test_algebra_residuals_fields(small_model, small_boost):
    probe = smooth_probe(small_model.basis, 0.35)
    residuals = algebra_residuals(small_model.hamiltonian, small_model.momentum, small_boost.operator, probe)
    assert residuals.r_HP == 0.0
    assert residuals.r_NH > 0 and residuals.r_NP > 0
    assert residuals.probe_r_NH is not None and residuals.probe_r_NP is not None
    bare = algebra_residuals(small_model.hamiltonian, small_model.momentum, small_boost.operator)
    assert bare.probe_r_NH is None
    assert bare.r_NH == residuals.r_NH


def test_free_theory_converges_at_second_order(free_params):
    study = free_algebra_convergence(free_params, k_max=2.5, dk=0.25)
    coarse, fine = study.resolutions
    assert (coarse["n_modes"], fine["n_modes"]) == (21, 41)
    assert fine["dk"] == 0.125
    for key in ("probe_r_NH", "probe_r_NP"):
        assert 3.2 <= study.ratios[key] <= 4.8
    assert study.ratios["e_H_probe"] > 1.0
    assert study.rapidity_sign == -1


# ============================================
# Least-squares refinement
# ============================================

def test_neighbor_pattern_is_symmetric_without_diagonal(small_model):
    pattern = neighbor_block_pattern(small_model.basis)
    np.testing.assert_array_equal(pattern, pattern.T)
    assert not np.any(np.diagonal(pattern))


def test_refinement_lowers_the_objective(small_model, small_boost):
    H, P = small_model.hamiltonian, small_model.momentum
    stencil = build_interaction_boost_stencil(small_model.basis, small_model.params, sign=small_boost.stencil_sign)
    seed = HermitianOperator(small_model.free_boost.entries + stencil.entries, label="N")
    outcome = refine_boost_least_squares(H, P, seed, neighbor_block_pattern(small_model.basis), max_iterations=30)
    assert outcome.objective_seed == pytest.approx(boost_objective(H, P, seed))
    assert outcome.objective_final < outcome.objective_seed
    assert outcome.objective_final == pytest.approx(boost_objective(H, P, outcome.operator))
    assert 1 <= outcome.iterations <= 30
    assert outcome.unknowns > 0


def test_stationary_seed_is_returned_unchanged(small_free_model):
    H, P = small_free_model.hamiltonian, small_free_model.momentum
    seed = HermitianOperator(np.zeros((H.dim, H.dim)), label="N")
    outcome = refine_boost_least_squares(H, P, seed, neighbor_block_pattern(small_free_model.basis))
    assert outcome.converged
    assert outcome.iterations == 0
    assert outcome.operator is seed
    assert outcome.objective_final == outcome.objective_seed


@pytest.mark.filterwarnings("error::RuntimeWarning")
def test_refinement_terminates_on_a_thirteen_mode_lattice(params):
    model = LeeModel.from_grid(13, 0.25, params)
    H, P = model.hamiltonian, model.momentum
    seed = HermitianOperator(model.free_boost.entries + build_interaction_boost_stencil(model.basis, model.params).entries,
                             label="N")
    outcome = refine_boost_least_squares(H, P, seed, neighbor_block_pattern(model.basis))
    assert math.isfinite(outcome.objective_final)
    assert np.all(np.isfinite(outcome.operator.entries))
    assert 1 <= outcome.iterations < 10 * outcome.unknowns
    assert outcome.objective_final < outcome.objective_seed


# ============================================
# Boost identities
# ============================================

def test_closed_forms_at_rest(small_model):
    H, P = small_model.hamiltonian, small_model.momentum
    np.testing.assert_array_equal(boosted_hamiltonian_closed_form(H, P, 0.0).entries, H.entries)
    np.testing.assert_array_equal(boosted_momentum_closed_form(H, P, 0.0).entries, P.entries)


def test_closed_form_maps_joint_eigenvectors(small_model):
    total, v = 0.5, 0.6
    block_H, block_P = small_model.block_hamiltonian(total), small_model.block_momentum(total)
    spectrum = small_model.block_spectrum(total)
    boosted = boosted_hamiltonian_closed_form(block_H, block_P, v)
    gamma = 1.0 / math.sqrt(1.0 - v ** 2)
    for energy, vector in zip(spectrum.eigenvalues, spectrum.eigenvectors.T):
        np.testing.assert_allclose(boosted.apply(vector), gamma * (energy - v * total) * vector, atol=1e-10)


def test_closed_form_inverse_and_casimir(small_model):
    H, P = small_model.hamiltonian, small_model.momentum
    H_v, P_v = boosted_hamiltonian_closed_form(H, P, 0.7), boosted_momentum_closed_form(H, P, 0.7)
    np.testing.assert_allclose(boosted_hamiltonian_closed_form(H_v, P_v, -0.7).entries, H.entries, atol=1e-12)
    np.testing.assert_allclose(boosted_momentum_closed_form(H_v, P_v, -0.7).entries, P.entries, atol=1e-12)
    casimir = np.linalg.eigvalsh(H.entries @ H.entries - P.entries @ P.entries)
    boosted = np.linalg.eigvalsh(H_v.entries @ H_v.entries - P_v.entries @ P_v.entries)
    np.testing.assert_allclose(boosted, casimir, atol=1e-10)


def test_closed_forms_compose_by_velocity_addition(small_model):
    H, P = small_model.hamiltonian, small_model.momentum
    v1, v2 = 0.3, 0.5
    H_2, P_2 = boosted_hamiltonian_closed_form(H, P, v2), boosted_momentum_closed_form(H, P, v2)
    v12 = compose_velocities(v1, v2)
    np.testing.assert_allclose(boosted_hamiltonian_closed_form(H_2, P_2, v1).entries,
                               boosted_hamiltonian_closed_form(H, P, v12).entries, atol=1e-10)
    np.testing.assert_allclose(boosted_momentum_closed_form(H_2, P_2, v1).entries,
                               boosted_momentum_closed_form(H, P, v12).entries, atol=1e-10)


def test_identity_is_exact_at_rest(small_model, small_boost):
    probe = smooth_probe(small_model.basis, 0.35)
    errors = verify_boost_identity(small_model.hamiltonian, small_model.momentum, small_boost.operator, 0.0,
                                   small_boost.rapidity_sign, small_boost.spectrum, probe)
    assert (errors.e_H, errors.e_P, errors.e_H_probe, errors.e_P_probe) == (0.0, 0.0, 0.0, 0.0)


def test_identity_error_grows_with_rapidity(small_model, small_boost):
    H, P, N = small_model.hamiltonian, small_model.momentum, small_boost.operator
    e_H = [verify_boost_identity(H, P, N, math.tanh(0.1 * j), small_boost.rapidity_sign, small_boost.spectrum).e_H
           for j in range(1, 11)]
    assert all(b >= a - 1e-3 for a, b in zip(e_H, e_H[1:]))


def test_sign_convention_is_recorded(small_boost):
    assert re.fullmatch(r"stencil=[+-]1; L_v=exp\([+-]i\*beta\*N\)", small_boost.sign_convention)
    assert small_boost.rapidity_sign == -1
    assert set(small_boost.evidence) == {"stencil", "rapidity"}


def test_boosts_are_unitary_and_compose(small_model, small_boost):
    phi0 = make_phi0(small_model.basis)
    assert small_boost.boost(phi0, 0.0) is phi0
    moved = small_boost.boost(phi0, 0.6)
    assert moved.norm == pytest.approx(1.0, abs=1e-12)
    twice = small_boost.boost(small_boost.boost(phi0, 0.3), 0.4)
    once = small_boost.boost(phi0, compose_velocities(0.3, 0.4))
    np.testing.assert_allclose(twice.amplitudes, once.amplitudes, atol=1e-10)


# ============================================
# BCH series
# ============================================

def test_bch_order_zero_is_the_operator(small_model, small_boost):
    H = small_model.hamiltonian
    np.testing.assert_array_equal(bch_series(H, small_boost.operator, 0.05, 0), H.entries)
    with pytest.raises(DomainError):
        bch_series(H, small_boost.operator, 0.05, -1)


def test_bch_converges_to_exact_conjugation(small_model, small_boost):
    H, N = small_model.hamiltonian, small_boost.operator

    def error(beta, order):
        exact = conjugate_by_boost(H, N, beta, small_boost.spectrum).entries
        return np.linalg.norm(bch_series(H, N, beta, order) - exact) / H.frobenius_norm

    assert error(0.01, 8) <= 1e-9
    assert error(0.02, 2) >= 10 * error(0.02, 4)


# ============================================
# Span decomposition
# ============================================

def test_span_recovers_exact_combination(small_model):
    H, P = small_model.hamiltonian, small_model.momentum
    X = HermitianOperator(2.0 * H.entries - 3.0 * P.entries)
    result = span_decomposition(X, {"h": H, "p": P})
    assert result.coefficients["h"] == pytest.approx(2.0, abs=1e-10)
    assert result.coefficients["p"] == pytest.approx(-3.0, abs=1e-10)
    assert result.residual < 1e-12


def test_span_rejects_dependent_basis(small_model):
    H = small_model.hamiltonian
    with pytest.raises(IllConditionedError):
        span_decomposition(H, {"a": H, "b": H})


def test_free_conjugation_has_no_boost_component(small_free_model):
    H0, P, N0 = small_free_model.hamiltonian, small_free_model.momentum, small_free_model.free_boost
    beta = 0.5
    X = conjugate_by_boost(H0, N0, beta, spectral(N0))
    operators = {"h": H0, "p": P, "n": N0}
    frobenius = span_decomposition(X, operators)
    assert abs(frobenius.coefficients["n"]) <= 1e-6
    assert frobenius.coefficients["h"] <= 1.0 + 1e-12

    probe = smooth_probe(small_free_model.basis, 0.35)
    probed = span_decomposition(X, operators, probe=probe)
    target = np.array([math.cosh(beta), -math.sinh(beta), 0.0])
    K = target[0] * H0.entries + target[1] * P.entries
    bound = np.linalg.norm((X.entries - K) @ probe.amplitudes) / math.sqrt(probed.gram_min_eigenvalue)
    found = np.array([probed.coefficients[name] for name in ("h", "p", "n")])
    assert np.linalg.norm(found - target) <= bound * (1 + 1e-9) + 1e-12


# ============================================
# Coefficient ODE
# ============================================

def test_ode_tracks_hyperbolic_functions():
    trajectory = solve_coefficient_ode(2.0, 1e-3)
    assert trajectory.beta_grid[-1] == 2.0
    assert trajectory.beta_grid.size == 2001
    assert trajectory.closed_form_error() <= 1e-9
    assert trajectory.invariant_error() <= 1e-9


def test_backward_integration_mirrors_forward():
    forward = solve_coefficient_ode(1.0, 1e-2)
    backward = solve_coefficient_ode(1.0, 1e-2, backward=True)
    assert np.all(np.diff(backward.beta_grid) > 0)
    np.testing.assert_array_equal(backward.h_values[::-1], forward.h_values)
    np.testing.assert_array_equal(backward.p_values[::-1], -forward.p_values)


def test_ode_rejects_bad_step():
    with pytest.raises(DomainError):
        solve_coefficient_ode(2.0, 0.0)
