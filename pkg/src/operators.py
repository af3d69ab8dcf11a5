"""
Boosted Decay Lab - Operator Forge
Dense Hermitian matrices of the Lee model on a momentum lattice, commutators,
spectral decompositions, unitary evolution and conjugation by boost exponentials
"""

import threading
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.linalg

from .errors import ConfigurationError, ConstructionError, NumericError
from .kinematics import SPECIES_A, SPECIES_BC, MomentumGrid, SectorBasis, dispersion, enumerate_basis, build_grid
from .logbook import LOGBOOK
from .schemas import ModelParams


DENSE_LIMIT = 4000
HERMITIAN_LOG_TOLERANCE = 1e-12
HERMITIAN_ABORT_TOLERANCE = 1e-8

ArrayLike = Union["HermitianOperator", np.ndarray]


# ============================================================
# CARRIER TYPES
# ============================================================

@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """
    Dense complex Hermitian matrix.
    Construction symmetrizes (X + X^H)/2; defects above 1e-12 are logged,
    above 1e-8 they abort.
    """
    entries: np.ndarray
    label: str = ""
    asymmetry: float = field(default=0.0, init=False)

    def __post_init__(self):
        X = np.array(self.entries, dtype=np.complex128)
        if X.ndim != 2 or X.shape[0] != X.shape[1]:
            raise ConstructionError(f"operator {self.label!r} is not square: shape {X.shape}")
        adjoint = X.conj().T
        scale = max(1.0, float(np.linalg.norm(X)))
        deviation = float(np.linalg.norm(X - adjoint)) / scale
        if deviation > HERMITIAN_ABORT_TOLERANCE:
            raise ConstructionError(
                f"operator {self.label!r} deviates from Hermitian by {deviation:.3e}", dim=X.shape[0]
            )
        if deviation > 0.0:
            X = 0.5 * (X + adjoint)
            if deviation > HERMITIAN_LOG_TOLERANCE:
                LOGBOOK.log("operators", f"symmetrized {self.label or 'operator'}: defect {deviation:.3e}")
        object.__setattr__(self, "entries", X)
        object.__setattr__(self, "asymmetry", deviation)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def is_diagonal(self) -> bool:
        return np.count_nonzero(self.entries) == np.count_nonzero(np.diagonal(self.entries))

    @cached_property
    def is_real(self) -> bool:
        return not np.any(self.entries.imag)

    @property
    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.entries).real.copy()

    @cached_property
    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.entries))

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        if self.is_diagonal:
            return self.diagonal * amplitudes
        return self.entries @ amplitudes

    def expectation(self, state: "StateVector") -> float:
        psi = state.amplitudes
        return float(np.vdot(psi, self.apply(psi)).real)

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        return HermitianOperator(self.entries + other.entries)

    def __sub__(self, other: "HermitianOperator") -> "HermitianOperator":
        return HermitianOperator(self.entries - other.entries)

    def __mul__(self, scalar: float) -> "HermitianOperator":
        return HermitianOperator(float(scalar) * self.entries, label=self.label)

    __rmul__ = __mul__

    def __neg__(self) -> "HermitianOperator":
        return HermitianOperator(-self.entries, label=self.label)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitudes over a SectorBasis with cached norm."""
    amplitudes: np.ndarray
    label: str = ""
    norm: float = field(default=0.0, init=False)

    def __post_init__(self):
        psi = np.array(self.amplitudes, dtype=np.complex128)
        object.__setattr__(self, "amplitudes", psi)
        object.__setattr__(self, "norm", float(np.linalg.norm(psi)))

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def normalized(self) -> "StateVector":
        if self.norm == 0.0:
            raise NumericError(f"state {self.label!r} has zero norm", dim=self.dim)
        return StateVector(self.amplitudes / self.norm, label=self.label)

    def inner(self, other: "StateVector") -> complex:
        """<self, other>, antilinear in self."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.amplitudes)


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """X = V diag(lambda) V^H with ascending eigenvalues."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.conj().T

    def reconstruction_error(self, X: ArrayLike) -> float:
        target = _entries(X)
        scale = float(np.linalg.norm(target)) or 1.0
        return float(np.linalg.norm(self.reconstruct() - target)) / scale

    def unitarity_error(self) -> float:
        V = self.eigenvectors
        return float(np.linalg.norm(V.conj().T @ V - np.eye(self.dim)))

    def function_apply(self, amplitudes: np.ndarray, phases: np.ndarray) -> np.ndarray:
        V = self.eigenvectors
        return V @ (phases * (V.conj().T @ amplitudes))

    def exp_apply(self, amplitudes: np.ndarray, beta: float) -> np.ndarray:
        """exp(i beta X) applied to a vector."""
        return self.function_apply(amplitudes, np.exp(1j * beta * self.eigenvalues))

    def overlap_series(self, bra: np.ndarray, ket: np.ndarray, t_grid: np.ndarray) -> np.ndarray:
        """<bra, exp(-i X t) ket> for every t in t_grid."""
        V = self.eigenvectors
        weights = np.conj(V.conj().T @ bra) * (V.conj().T @ ket)
        t_grid = np.asarray(t_grid, dtype=float)
        return np.exp(-1j * np.outer(t_grid, self.eigenvalues)) @ weights


def _entries(X: ArrayLike) -> np.ndarray:
    return X.entries if isinstance(X, HermitianOperator) else np.asarray(X)


# ============================================================
# VERTEX AND ENERGIES
# ============================================================

def form_factor(k: np.ndarray, lambda_ff: float) -> np.ndarray:
    return np.exp(-np.square(k) / (2.0 * lambda_ff ** 2))


def interaction_kernel(params: ModelParams, k1, k2, dk: float):
    """Vertex G(k1, k2) coupling A(k1 + k2) to BC(k1, k2), lattice measure included."""
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    denominator = 8.0 * dispersion(params.m_a, k1 + k2) * dispersion(params.m_b, k1) * dispersion(params.m_c, k2)
    return (params.g * form_factor(k1, params.lambda_ff) * form_factor(k2, params.lambda_ff)
            * np.sqrt(dk / denominator))


def free_energies(basis: SectorBasis, params: ModelParams, indices: Optional[np.ndarray] = None) -> np.ndarray:
    if indices is None:
        indices = np.arange(basis.size)
    dk = basis.grid.dk
    k1 = basis.tick1[indices] * dk
    k2 = basis.tick2[indices] * dk
    pair = basis.species[indices] == SPECIES_BC
    energies = dispersion(params.m_a, k1)
    energies[pair] = dispersion(params.m_b, k1[pair]) + dispersion(params.m_c, k2[pair])
    return energies


def coupled_pairs(basis: SectorBasis, params: ModelParams):
    """(A index, BC index, G) for every pair whose total momentum is a grid mode."""
    half = basis.grid.half_width
    bc = np.flatnonzero(basis.is_pair & (np.abs(basis.total_ticks) <= half))
    if params.g == 0.0:
        bc = bc[:0]
    a = basis.total_ticks[bc] + half
    dk = basis.grid.dk
    G = interaction_kernel(params, basis.tick1[bc] * dk, basis.tick2[bc] * dk, dk)
    return a, bc, G


# ============================================================
# BUILDERS
# ============================================================

def build_free_hamiltonian(basis: SectorBasis, params: ModelParams) -> HermitianOperator:
    return HermitianOperator(np.diag(free_energies(basis, params)).astype(np.complex128), label="H0")


def build_interaction(basis: SectorBasis, params: ModelParams) -> HermitianOperator:
    X = np.zeros((basis.size, basis.size), dtype=np.complex128)
    a, bc, G = coupled_pairs(basis, params)
    X[a, bc] = G
    X[bc, a] = G
    return HermitianOperator(X, label="H_int")


def build_momentum(basis: SectorBasis) -> HermitianOperator:
    return HermitianOperator(np.diag(basis.total_momenta).astype(np.complex128), label="P")


def particle_boost_matrix(grid: MomentumGrid, mass: float) -> np.ndarray:
    """
    One-particle generator (i/2)(w D + D w), D the central difference in k
    (one-sided on the two edge modes), Hermitian part returned.
    """
    n, dk = grid.n_modes, grid.dk
    if n < 3:
        return np.zeros((n, n), dtype=np.complex128)
    D = np.zeros((n, n))
    rows = np.arange(1, n - 1)
    D[rows, rows + 1] = 0.5 / dk
    D[rows, rows - 1] = -0.5 / dk
    D[0, 0], D[0, 1] = -1.0 / dk, 1.0 / dk
    D[-1, -2], D[-1, -1] = -1.0 / dk, 1.0 / dk
    w = dispersion(mass, grid.modes)
    M = 0.5j * (w[:, None] * D + D * w[None, :])
    return 0.5 * (M + M.conj().T)


@dataclass(frozen=True, eq=False)
class ParticleBoost:
    """Free boost generator in factored form: N_a on A states, N_b (x) 1 + 1 (x) N_c on pairs."""
    n_modes: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @classmethod
    def from_params(cls, grid: MomentumGrid, params: ModelParams) -> "ParticleBoost":
        return cls(n_modes=grid.n_modes,
                   a=particle_boost_matrix(grid, params.m_a),
                   b=particle_boost_matrix(grid, params.m_b),
                   c=particle_boost_matrix(grid, params.m_c))

    def dense(self) -> np.ndarray:
        n = self.n_modes
        eye = np.eye(n)
        N = np.zeros((n + n * n, n + n * n), dtype=np.complex128)
        N[:n, :n] = self.a
        N[n:, n:] = np.kron(self.b, eye) + np.kron(eye, self.c)
        return N

    def _split(self, amplitudes: np.ndarray):
        n = self.n_modes
        return amplitudes[:n], amplitudes[n:].reshape(n, n)

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        single, pairs = self._split(amplitudes)
        return np.concatenate([self.a @ single, (self.b @ pairs + pairs @ self.c.T).ravel()])

    @cached_property
    def _spectra(self):
        return tuple(spectral(HermitianOperator(m)) for m in (self.a, self.b, self.c))

    def exp_apply(self, amplitudes: np.ndarray, beta: float) -> np.ndarray:
        """exp(i beta N0) applied without forming the pair-space matrix."""
        sa, sb, sc = self._spectra
        single, pairs = self._split(amplitudes)
        Ub = _unitary(sb, beta)
        Uc = _unitary(sc, beta)
        return np.concatenate([sa.exp_apply(single, beta), (Ub @ pairs @ Uc.T).ravel()])


def _unitary(spectrum: SpectralDecomposition, beta: float) -> np.ndarray:
    V = spectrum.eigenvectors
    return (V * np.exp(1j * beta * spectrum.eigenvalues)) @ V.conj().T


def build_free_boost(basis: SectorBasis, params: ModelParams) -> HermitianOperator:
    return HermitianOperator(ParticleBoost.from_params(basis.grid, params).dense(), label="N0")


# ============================================================
# ALGEBRA AND SPECTRA
# ============================================================

def commutator(X: ArrayLike, Y: ArrayLike) -> np.ndarray:
    """XY - YX; diagonal operands take an elementwise path."""
    A, B = _entries(X), _entries(Y)
    if A.shape != B.shape:
        raise ValueError(f"commutator dimension mismatch: {A.shape} vs {B.shape}")
    if isinstance(X, HermitianOperator) and X.is_diagonal:
        d = X.diagonal
        return B * (d[:, None] - d[None, :])
    if isinstance(Y, HermitianOperator) and Y.is_diagonal:
        d = Y.diagonal
        return A * (d[None, :] - d[:, None])
    return A @ B - B @ A


def _eigh(matrix: np.ndarray):
    try:
        if not np.any(matrix.imag):
            values, vectors = scipy.linalg.eigh(matrix.real)
            return values, vectors.astype(np.complex128)
        return scipy.linalg.eigh(matrix)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed: {exc}", dim=matrix.shape[0]) from None


def spectral(X: HermitianOperator, blocks: Optional[Dict[float, np.ndarray]] = None) -> SpectralDecomposition:
    """
    Ascending eigen-decomposition. Diagonal input sorts exactly; with
    blocks, each index block is diagonalized on its own (entries outside
    the blocks must vanish).
    """
    n = X.dim
    if X.is_diagonal:
        d = X.diagonal
        order = np.argsort(d, kind="stable")
        return SpectralDecomposition(d[order], np.eye(n, dtype=np.complex128)[:, order])
    if blocks is None:
        values, vectors = _eigh(X.entries)
        return SpectralDecomposition(values, vectors)
    values = np.empty(n)
    vectors = np.zeros((n, n), dtype=np.complex128)
    column = 0
    for idx in blocks.values():
        size = idx.shape[0]
        block_values, block_vectors = _eigh(X.entries[np.ix_(idx, idx)])
        values[column:column + size] = block_values
        vectors[idx, column:column + size] = block_vectors
        column += size
    if column != n:
        raise NumericError(f"blocks cover {column} of {n} states", dim=n)
    order = np.argsort(values, kind="stable")
    return SpectralDecomposition(values[order], vectors[:, order])


def evolve(generator: HermitianOperator, state: StateVector, t: float,
           spectrum: Optional[SpectralDecomposition] = None) -> StateVector:
    """exp(-i X t) applied to a state."""
    if generator.dim != state.dim:
        raise ValueError(f"state of dim {state.dim} does not match operator dim {generator.dim}")
    if t == 0:
        return StateVector(state.amplitudes, label=state.label)
    spectrum = spectrum or spectral(generator)
    phases = np.exp(-1j * t * spectrum.eigenvalues)
    return StateVector(spectrum.function_apply(state.amplitudes, phases), label=state.label)


def conjugate_by_boost(X: HermitianOperator, N: HermitianOperator, beta: float,
                       spectrum: Optional[SpectralDecomposition] = None) -> HermitianOperator:
    """exp(i beta N) X exp(-i beta N) through the eigenbasis of N."""
    if X.dim != N.dim:
        raise ValueError(f"dimension mismatch: {X.dim} vs {N.dim}")
    if beta == 0:
        return X
    spectrum = spectrum or spectral(N)
    V = spectrum.eigenvectors
    phase = np.exp(1j * beta * spectrum.eigenvalues)
    Y = V.conj().T @ X.entries @ V
    Y *= phase[:, None] * np.conj(phase)[None, :]
    return HermitianOperator(V @ Y @ V.conj().T, label=X.label)


def dump_operator_csv(op: HermitianOperator, path: Union[str, Path], threshold: float = 1e-14) -> Path:
    """Write entries with modulus above threshold as row,col,re,im."""
    rows, cols = np.nonzero(np.abs(op.entries) > threshold)
    values = op.entries[rows, cols]
    frame = pd.DataFrame({"row": rows, "col": cols, "re": values.real, "im": values.imag})
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


# ============================================================
# LEE MODEL
# ============================================================

class LeeModel:
    """
    Single-excitation Lee model on a momentum lattice.
    Full operators are dense and limited to dense_limit states; block
    operators (one total momentum at a time) work for any grid.
    """

    def __init__(self, basis: SectorBasis, params: ModelParams, dense_limit: int = DENSE_LIMIT):
        self.basis = basis
        self.params = params
        self.dense_limit = dense_limit
        self._lock = threading.Lock()
        self._block_spectra: Dict[int, SpectralDecomposition] = {}

    @classmethod
    def from_grid(cls, n_modes: int, dk: float, params: ModelParams,
                  dense_limit: int = DENSE_LIMIT) -> "LeeModel":
        return cls(enumerate_basis(build_grid(n_modes, dk)), params, dense_limit)

    @property
    def grid(self) -> MomentumGrid:
        return self.basis.grid

    @property
    def is_dense_capable(self) -> bool:
        return self.basis.size <= self.dense_limit

    def require_dense(self, purpose: str):
        if not self.is_dense_capable:
            raise ConfigurationError(
                f"{purpose} needs dense operators on {self.basis.size} states, "
                f"above dense_limit={self.dense_limit}"
            )

    def free_variant(self) -> "LeeModel":
        """Same grid and masses with the coupling switched off."""
        return LeeModel(self.basis, self.params.model_copy(update={"g": 0.0}), self.dense_limit)

    # -- full operators --------------------------------------------------

    @cached_property
    def free_hamiltonian(self) -> HermitianOperator:
        self.require_dense("H0")
        return build_free_hamiltonian(self.basis, self.params)

    @cached_property
    def interaction(self) -> HermitianOperator:
        self.require_dense("H_int")
        return build_interaction(self.basis, self.params)

    @cached_property
    def hamiltonian(self) -> HermitianOperator:
        return HermitianOperator(self.free_hamiltonian.entries + self.interaction.entries, label="H")

    @cached_property
    def momentum(self) -> HermitianOperator:
        self.require_dense("P")
        return build_momentum(self.basis)

    @cached_property
    def particle_boost(self) -> ParticleBoost:
        return ParticleBoost.from_params(self.grid, self.params)

    @cached_property
    def free_boost(self) -> HermitianOperator:
        self.require_dense("N0")
        return HermitianOperator(self.particle_boost.dense(), label="N0")

    @cached_property
    def spectrum(self) -> SpectralDecomposition:
        return spectral(self.hamiltonian, blocks=self.basis.block_index)

    # -- block operators -------------------------------------------------

    def block_indices(self, total: float) -> np.ndarray:
        return self.basis.block(total)

    def block_hamiltonian(self, total: float) -> HermitianOperator:
        basis = self.basis
        idx = basis.block(total)
        X = np.diag(free_energies(basis, self.params, idx)).astype(np.complex128)
        if idx.size and basis.species[idx[0]] == SPECIES_A and self.params.g > 0.0:
            dk = basis.grid.dk
            pairs = np.arange(1, idx.size)
            G = interaction_kernel(self.params, basis.tick1[idx[pairs]] * dk, basis.tick2[idx[pairs]] * dk, dk)
            X[0, pairs] = G
            X[pairs, 0] = G
        return HermitianOperator(X, label=f"H[P={total:g}]")

    def block_momentum(self, total: float) -> HermitianOperator:
        idx = self.basis.block(total)
        tick = int(round(total / self.grid.dk))
        return HermitianOperator(np.eye(idx.size, dtype=np.complex128) * (tick * self.grid.dk),
                                 label=f"P[P={total:g}]")

    def block_spectrum(self, total: float) -> SpectralDecomposition:
        tick = int(round(total / self.grid.dk))
        with self._lock:
            cached = self._block_spectra.get(tick)
        if cached is not None:
            return cached
        decomposition = spectral(self.block_hamiltonian(tick * self.grid.dk))
        with self._lock:
            self._block_spectra.setdefault(tick, decomposition)
            return self._block_spectra[tick]

    def recurrence_guard(self, total: float) -> float:
        """pi over the mean level spacing of the block spectrum."""
        values = self.block_spectrum(total).eigenvalues
        if values.size < 2 or values[-1] == values[0]:
            return float("inf")
        spacing = (values[-1] - values[0]) / (values.size - 1)
        return float(np.pi / spacing)

    def support_blocks(self, *states: StateVector) -> Sequence[float]:
        """Total momenta (ascending) on which every given state has support."""
        common = None
        for state in states:
            ticks = set(np.unique(self.basis.total_ticks[state.support()]).tolist())
            common = ticks if common is None else common & ticks
        return [tick * self.grid.dk for tick in sorted(common or ())]
