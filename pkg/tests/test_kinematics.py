import math

import numpy as np
import pytest

from src.errors import ConfigurationError, DomainError
from src.kinematics import (
    BoostParams,
    build_grid,
    compose_velocities,
    dispersion,
    enumerate_basis,
    gamma_factor,
    rapidity_from_velocity,
    velocity_from_momentum,
)


# ============================================
# Velocity, rapidity, gamma
# ============================================

def test_gamma_factor_known_values():
    assert gamma_factor(0.0) == 1.0
    assert gamma_factor(0.6) == pytest.approx(1.25, rel=1e-15)
    assert gamma_factor(0.8) == pytest.approx(5.0 / 3.0, rel=1e-15)
    assert gamma_factor(-0.8) == gamma_factor(0.8)


def test_rapidity_inverts_tanh():
    for beta in (0.0, 0.1, 0.7, 2.5):
        assert rapidity_from_velocity(math.tanh(beta)) == pytest.approx(beta, abs=1e-12)


@pytest.mark.parametrize("v", [1.0, -1.0, 1.5])
def test_velocity_outside_light_cone_is_rejected(v):
    with pytest.raises(DomainError):
        gamma_factor(v)
    with pytest.raises(ValueError):
        rapidity_from_velocity(v)


def test_boost_params_agree_both_ways():
    from_v = BoostParams.from_velocity(0.5)
    from_beta = BoostParams.from_rapidity(from_v.beta)
    assert from_beta.v == pytest.approx(0.5, abs=1e-15)
    assert from_beta.gamma == pytest.approx(from_v.gamma, rel=1e-14)


def test_velocity_composition_adds_rapidities():
    assert compose_velocities(0.5, 0.5) == pytest.approx(0.8)
    assert compose_velocities(0.3, -0.3) == 0.0
    combined = compose_velocities(0.2, 0.6)
    assert rapidity_from_velocity(combined) == pytest.approx(
        rapidity_from_velocity(0.2) + rapidity_from_velocity(0.6), abs=1e-14)


def test_velocity_from_momentum_matches_energy_gamma():
    p, m = 1.0, 1.0
    assert gamma_factor(velocity_from_momentum(p, m)) == pytest.approx(math.hypot(p, m) / m, rel=1e-14)


def test_dispersion_scalar_and_array():
    assert dispersion(1.0, 0.0) == 1.0
    assert isinstance(dispersion(0.4, 0.3), float)
    assert dispersion(0.4, 0.3) == pytest.approx(0.5)
    values = dispersion(0.3, np.array([0.0, 0.4]))
    np.testing.assert_allclose(values, [0.3, 0.5])


def test_dispersion_rejects_nonpositive_mass():
    with pytest.raises(DomainError):
        dispersion(0.0, 1.0)


# ============================================
# Grid
# ============================================

def test_reference_grid_layout():
    grid = build_grid(41, 0.25)
    assert grid.k_max == 5.0
    assert grid.modes[20] == 0.0
    assert grid.modes[0] == -5.0 and grid.modes[-1] == 5.0
    np.testing.assert_allclose(np.diff(grid.modes), 0.25)


@pytest.mark.parametrize("n_modes, dk", [(40, 0.25), (0, 0.25), (9, 0.0), (9, -1.0)])
def test_invalid_grid_is_a_configuration_error(n_modes, dk):
    with pytest.raises(ConfigurationError) as info:
        build_grid(n_modes, dk)
    assert info.value.exit_code == 2


def test_single_mode_grid_is_allowed():
    grid = build_grid(1, 0.1)
    assert grid.k_max == 0.0
    assert enumerate_basis(grid).size == 2


def test_tick_lookup_and_off_grid_momentum():
    grid = build_grid(41, 0.25)
    assert grid.tick_of(0.5) == 2
    assert grid.tick_of(-5.0) == -20
    assert grid.tick_of(0.3) is None
    assert grid.tick_of(5.25) is None
    with pytest.raises(DomainError, match="nearest modes") as info:
        grid.require_tick(0.3)
    assert "0.25" in str(info.value)


# ============================================
# Sector basis
# ============================================

def test_basis_order_and_labels():
    basis = enumerate_basis(build_grid(3, 0.5))
    assert basis.size == 3 + 9
    assert [str(label) for label in basis.states[:4]] == ["A(-0.5)", "A(0)", "A(0.5)", "BC(-0.5,-0.5)"]
    assert str(basis.label(basis.size - 1)) == "BC(0.5,0.5)"


def test_index_helpers_round_trip():
    basis = enumerate_basis(build_grid(5, 0.25))
    assert basis.index_of_a(0) == 2
    for t1 in (-2, 0, 1):
        for t2 in (-1, 2):
            i = basis.index_of_bc(t1, t2)
            assert basis.label(i) == ("BC", t1 * 0.25, t2 * 0.25)


def test_pair_total_momentum_is_exact():
    basis = enumerate_basis(build_grid(41, 0.25))
    i = basis.index_of_bc(3, -1)
    assert basis.total_momenta[i] == 0.5
    assert basis.total_momenta[basis.index_of_a(-4)] == -1.0


def test_blocks_partition_the_basis():
    basis = enumerate_basis(build_grid(3, 0.5))
    blocks = basis.block_index
    assert sum(idx.size for idx in blocks.values()) == basis.size
    rest = basis.block(0.0)
    # A(0) first, then BC(-0.5,0.5), BC(0,0), BC(0.5,-0.5)
    assert rest.tolist() == [1, 3 + 2, 3 + 4, 3 + 6]
    assert np.all(np.diff(rest) > 0)
    assert basis.block(1.0).tolist() == [3 + 8]
    assert basis.block(2.0).size == 0
