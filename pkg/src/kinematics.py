"""
Boosted Decay Lab - Relativistic Kinematics and Momentum Lattice
Velocity/rapidity/gamma conversions, dispersion, and the single-excitation sector basis
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, NamedTuple, Optional, Union

import numpy as np

from .errors import ConfigurationError, DomainError


# Species codes stored in SectorBasis.species
SPECIES_A = 0
SPECIES_BC = 1


# ============================================================
# VELOCITY / RAPIDITY / GAMMA
# ============================================================

def _check_velocity(v: float) -> float:
    v = float(v)
    if not abs(v) < 1.0:
        raise DomainError(f"velocity {v!r} outside (-1, 1)")
    return v


def rapidity_from_velocity(v: float) -> float:
    """Rapidity beta with tanh(beta) = v."""
    return math.atanh(_check_velocity(v))


def gamma_factor(v: float) -> float:
    """Lorentz factor (1 - v^2)^(-1/2)."""
    v = _check_velocity(v)
    return 1.0 / math.sqrt((1.0 - v) * (1.0 + v))


def compose_velocities(v1: float, v2: float) -> float:
    """Relativistic addition: the single boost equal to v1 followed by v2."""
    v1, v2 = _check_velocity(v1), _check_velocity(v2)
    return (v1 + v2) / (1.0 + v1 * v2)


def velocity_from_momentum(p: float, m: float) -> float:
    """Velocity of a particle of mass m carrying momentum p."""
    return p / float(dispersion(m, p))


def dispersion(m: float, k: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Relativistic energy sqrt(m^2 + k^2); vectorized over k."""
    if not m > 0:
        raise DomainError(f"mass {m!r} must be positive")
    if np.ndim(k) == 0:
        return math.hypot(m, float(k))
    return np.hypot(m, np.asarray(k, dtype=float))


@dataclass(frozen=True)
class BoostParams:
    """A boost described three ways: velocity, rapidity, Lorentz factor."""
    v: float
    beta: float
    gamma: float

    @classmethod
    def from_velocity(cls, v: float) -> "BoostParams":
        return cls(v=float(v), beta=rapidity_from_velocity(v), gamma=gamma_factor(v))

    @classmethod
    def from_rapidity(cls, beta: float) -> "BoostParams":
        v = math.tanh(beta)
        return cls(v=v, beta=float(beta), gamma=math.cosh(beta))


# ============================================================
# MOMENTUM GRID
# ============================================================

@dataclass(frozen=True)
class MomentumGrid:
    """Symmetric uniform momentum modes k_j = tick_j * dk, tick in [-K, K]."""
    n_modes: int
    dk: float

    @property
    def half_width(self) -> int:
        return (self.n_modes - 1) // 2

    @property
    def k_max(self) -> float:
        return self.half_width * self.dk

    @cached_property
    def ticks(self) -> np.ndarray:
        return np.arange(-self.half_width, self.half_width + 1, dtype=np.int64)

    @cached_property
    def modes(self) -> np.ndarray:
        # Integer ticks keep k = 0 exact and pair totals exactly representable
        return self.ticks * self.dk

    def tick_of(self, p: float) -> Optional[int]:
        """Integer offset of momentum p, or None when p is not a mode."""
        tick = int(round(p / self.dk))
        if abs(tick) > self.half_width:
            return None
        if abs(tick * self.dk - p) > 1e-9 * max(1.0, abs(p)):
            return None
        return tick

    def nearest_modes(self, p: float, count: int = 2) -> List[float]:
        order = np.argsort(np.abs(self.modes - p), kind="stable")[:count]
        return sorted(float(self.modes[i]) for i in order)

    def require_tick(self, p: float) -> int:
        tick = self.tick_of(p)
        if tick is None:
            raise DomainError(
                f"momentum {p!r} is not a grid mode; nearest modes: {self.nearest_modes(p)}"
            )
        return tick


def build_grid(n_modes: int, dk: float) -> MomentumGrid:
    if isinstance(n_modes, bool) or int(n_modes) != n_modes:
        raise ConfigurationError(f"n_modes must be an integer, got {n_modes!r}")
    n_modes = int(n_modes)
    if n_modes < 1 or n_modes % 2 == 0:
        raise ConfigurationError(f"n_modes must be odd and >= 1, got {n_modes}")
    if not dk > 0:
        raise ConfigurationError(f"dk must be positive, got {dk!r}")
    return MomentumGrid(n_modes=n_modes, dk=float(dk))


# ============================================================
# SECTOR BASIS
# ============================================================

class StateLabel(NamedTuple):
    kind: str
    k1: float
    k2: Optional[float] = None

    def __str__(self) -> str:
        if self.kind == "A":
            return f"A({self.k1:g})"
        return f"BC({self.k1:g},{self.k2:g})"


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """
    One a-particle states A(p) followed by b+c pair states BC(k1, k2).
    Stored as integer tick arrays; pair ordering is lexicographic in (k1, k2).
    """
    grid: MomentumGrid
    species: np.ndarray
    tick1: np.ndarray
    tick2: np.ndarray

    @property
    def size(self) -> int:
        return int(self.species.shape[0])

    @cached_property
    def total_ticks(self) -> np.ndarray:
        return self.tick1 + np.where(self.species == SPECIES_BC, self.tick2, 0)

    @cached_property
    def total_momenta(self) -> np.ndarray:
        return self.total_ticks * self.grid.dk

    @cached_property
    def is_pair(self) -> np.ndarray:
        return self.species == SPECIES_BC

    @cached_property
    def _blocks_by_tick(self) -> Dict[int, np.ndarray]:
        order = np.argsort(self.total_ticks, kind="stable")
        sorted_ticks = self.total_ticks[order]
        cuts = np.flatnonzero(np.diff(sorted_ticks)) + 1
        return {int(chunk_ticks[0]): chunk
                for chunk, chunk_ticks in zip(np.split(order, cuts), np.split(sorted_ticks, cuts))}

    @cached_property
    def block_index(self) -> Dict[float, np.ndarray]:
        """Total momentum -> ascending state indices sharing it."""
        return {tick * self.grid.dk: idx for tick, idx in self._blocks_by_tick.items()}

    def block_of_tick(self, tick: int) -> np.ndarray:
        return self._blocks_by_tick.get(int(tick), np.empty(0, dtype=np.int64))

    def block(self, total: float) -> np.ndarray:
        tick = int(round(total / self.grid.dk))
        return self.block_of_tick(tick)

    def index_of_a(self, tick: int) -> int:
        return int(tick) + self.grid.half_width

    def index_of_bc(self, tick1: int, tick2: int) -> int:
        n, half = self.grid.n_modes, self.grid.half_width
        return n + (int(tick1) + half) * n + (int(tick2) + half)

    def label(self, i: int) -> StateLabel:
        dk = self.grid.dk
        if self.species[i] == SPECIES_A:
            return StateLabel("A", float(self.tick1[i] * dk))
        return StateLabel("BC", float(self.tick1[i] * dk), float(self.tick2[i] * dk))

    @property
    def states(self) -> List[StateLabel]:
        return [self.label(i) for i in range(self.size)]


def enumerate_basis(grid: MomentumGrid) -> SectorBasis:
    n = grid.n_modes
    ticks = grid.ticks
    species = np.concatenate([np.full(n, SPECIES_A, dtype=np.int8),
                              np.full(n * n, SPECIES_BC, dtype=np.int8)])
    tick1 = np.concatenate([ticks, np.repeat(ticks, n)])
    tick2 = np.concatenate([np.zeros(n, dtype=np.int64), np.tile(ticks, n)])
    return SectorBasis(grid=grid, species=species, tick1=tick1, tick2=tick2)
