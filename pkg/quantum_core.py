#!/usr/bin/env python3
"""
Small-dimension density-matrix arithmetic: distinguishability metrics,
noise channels and the purification formulas used by the router.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import unitary_group

logger = logging.getLogger(__name__)

# Invariant tolerance (hermiticity, trace, eigenvalue floor)
TOLERANCE = 1e-10
# Derived comparisons (clamping, inequality checks)
COMPARE_TOLERANCE = 1e-9
# Eigenvalues below this are rounding noise and are zeroed before a square root
EIGEN_FLOOR = 1e-14

MAX_DIM = 4


class QuantumStateError(ValueError):
    """Raised when a state, operator or channel violates its invariants."""


def as_complex_matrix(entries) -> np.ndarray:
    """Return ``entries`` as a read-only square complex matrix."""
    matrix = np.array(entries, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise QuantumStateError(f"expected a square matrix, got shape {matrix.shape}")
    if not 1 <= matrix.shape[0] <= MAX_DIM:
        raise QuantumStateError(f"dimension {matrix.shape[0]} outside 1..{MAX_DIM}")
    matrix.setflags(write=False)
    return matrix


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian PSD matrix via eigendecomposition.

    Eigenvalues below EIGEN_FLOOR are zeroed; anything below -TOLERANCE is an
    invariant violation.
    """
    values, vectors = linalg.eigh(matrix)
    if values.min() < -TOLERANCE:
        raise QuantumStateError(f"matrix is not positive semidefinite (eigenvalue {values.min():.3e})")
    values = np.where(values < EIGEN_FLOOR, 0.0, values)
    return (vectors * np.sqrt(values)) @ vectors.conj().T


def _clamp_unit(value: float, name: str) -> float:
    if value < -COMPARE_TOLERANCE or value > 1.0 + COMPARE_TOLERANCE:
        raise QuantumStateError(f"{name} {value!r} outside [0, 1] beyond tolerance")
    if value < 0.0 or value > 1.0:
        logger.debug("clamping %s from %.3e", name, value)
    return min(max(value, 0.0), 1.0)


def _check_probability(p: float, name: str = "p") -> float:
    if not 0.0 <= p <= 1.0:
        raise QuantumStateError(f"{name} must lie in [0, 1], got {p!r}")
    return float(p)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        matrix = as_complex_matrix(self.matrix)
        object.__setattr__(self, "matrix", matrix)
        if np.max(np.abs(matrix - matrix.conj().T)) > TOLERANCE:
            raise QuantumStateError("density matrix is not Hermitian")
        if abs(np.trace(matrix).real - 1.0) > TOLERANCE:
            raise QuantumStateError(f"density matrix trace is {np.trace(matrix).real!r}, expected 1")
        if linalg.eigvalsh(matrix).min() < -TOLERANCE:
            raise QuantumStateError("density matrix has a negative eigenvalue")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def diagonal(cls, *probabilities: float) -> "DensityMatrix":
        return cls(np.diag(np.asarray(probabilities, dtype=complex)))

    @classmethod
    def maximally_mixed(cls, dim: int = 2) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=complex) / dim)

    def allclose(self, other: "DensityMatrix", atol: float = COMPARE_TOLERANCE) -> bool:
        return self.dim == other.dim and bool(np.allclose(self.matrix, other.matrix, atol=atol))


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if not 1 <= amplitudes.size <= MAX_DIM:
            raise QuantumStateError(f"state dimension {amplitudes.size} outside 1..{MAX_DIM}")
        if abs(np.linalg.norm(amplitudes) - 1.0) > TOLERANCE:
            raise QuantumStateError(f"state norm is {np.linalg.norm(amplitudes)!r}, expected 1")
        amplitudes.setflags(write=False)
        object.__setattr__(self, "amplitudes", amplitudes)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @classmethod
    def from_bloch(cls, theta: float, phi: float) -> "PureState":
        """cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>"""
        return cls([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)])

    def density(self) -> DensityMatrix:
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))

    def expectation(self, operator: np.ndarray) -> float:
        return float(np.real(self.amplitudes.conj() @ operator @ self.amplitudes))


@dataclass(frozen=True, eq=False)
class UnitaryOp:
    matrix: np.ndarray

    def __post_init__(self):
        matrix = as_complex_matrix(self.matrix)
        identity = np.eye(matrix.shape[0])
        if np.max(np.abs(matrix @ matrix.conj().T - identity)) > TOLERANCE:
            raise QuantumStateError("operator is not unitary")
        object.__setattr__(self, "matrix", matrix)

    def conjugate(self, rho: DensityMatrix) -> DensityMatrix:
        """U rho U^dagger"""
        if rho.dim != self.matrix.shape[0]:
            raise QuantumStateError("unitary and state dimensions differ")
        out = self.matrix @ rho.matrix @ self.matrix.conj().T
        return DensityMatrix((out + out.conj().T) / 2)


PAULI_Z = UnitaryOp(np.array([[1, 0], [0, -1]], dtype=complex))
IDENTITY_2 = UnitaryOp(np.eye(2, dtype=complex))

KET_0 = PureState([1, 0])
KET_1 = PureState([0, 1])
KET_PLUS = PureState(np.array([1, 1]) / math.sqrt(2))


class ChannelKind(Enum):
    DEPOLARIZING = "depolarizing"
    DEPHASING = "dephasing"
    FIBER = "fiber"
    COMPOSED = "composed"


@dataclass(frozen=True)
class QuantumChannel:
    """A qubit CPTP map from one of three families, or a composition of them.

    Composed channels apply right to left: ``composed(a, b, c)`` is a(b(c(rho))).
    The empty composition is the identity channel.
    """
    kind: ChannelKind
    p: float = 0.0
    length_km: float = 0.0
    attenuation_db_per_km: float = 0.0
    channels: Tuple["QuantumChannel", ...] = field(default_factory=tuple)

    def __post_init__(self):
        _check_probability(self.p)
        if self.length_km < 0 or self.attenuation_db_per_km < 0:
            raise QuantumStateError("fiber length and attenuation must be non-negative")

    @classmethod
    def depolarizing(cls, p: float) -> "QuantumChannel":
        return cls(ChannelKind.DEPOLARIZING, p=_check_probability(p))

    @classmethod
    def dephasing(cls, p: float) -> "QuantumChannel":
        """(1-p) rho + p Z rho Z"""
        return cls(ChannelKind.DEPHASING, p=_check_probability(p))

    @classmethod
    def phase_damping(cls, p: float) -> "QuantumChannel":
        """Dephasing parameterized by the coherence-retention probability p."""
        return cls.dephasing(1.0 - _check_probability(p))

    @classmethod
    def fiber(cls, length_km: float, attenuation_db_per_km: float = 0.2) -> "QuantumChannel":
        return cls(ChannelKind.FIBER, length_km=float(length_km),
                   attenuation_db_per_km=float(attenuation_db_per_km))

    @classmethod
    def composed(cls, *channels: "QuantumChannel") -> "QuantumChannel":
        return cls(ChannelKind.COMPOSED, channels=tuple(channels))

    @classmethod
    def identity(cls) -> "QuantumChannel":
        return cls.composed()

    @property
    def fiber_dephasing_probability(self) -> float:
        return 1.0 - 10 ** (-self.length_km * self.attenuation_db_per_km / 10)

    def apply(self, rho: DensityMatrix) -> DensityMatrix:
        return apply_channel(self, rho)


def link_channel(p_depol: float, p_dephase: float, length_km: float,
                 attenuation_db_per_km: float = 0.2) -> QuantumChannel:
    """depolarizing(dephasing(fiber(rho)))"""
    return QuantumChannel.composed(
        QuantumChannel.depolarizing(p_depol),
        QuantumChannel.dephasing(p_dephase),
        QuantumChannel.fiber(length_km, attenuation_db_per_km),
    )


def _dephase(rho: DensityMatrix, p: float) -> DensityMatrix:
    z = PAULI_Z.matrix
    return DensityMatrix((1 - p) * rho.matrix + p * (z @ rho.matrix @ z))


def apply_channel(channel: QuantumChannel, rho: DensityMatrix) -> DensityMatrix:
    if channel.kind is ChannelKind.COMPOSED:
        for inner in reversed(channel.channels):
            rho = apply_channel(inner, rho)
        return rho
    if rho.dim != 2:
        raise QuantumStateError(f"{channel.kind.value} channel acts on qubits, got dimension {rho.dim}")
    if channel.kind is ChannelKind.DEPOLARIZING:
        return DensityMatrix((1 - channel.p) * rho.matrix + channel.p * np.eye(2) / 2)
    if channel.kind is ChannelKind.DEPHASING:
        return _dephase(rho, channel.p)
    return _dephase(rho, channel.fiber_dephasing_probability)


def _check_same_dim(rho: DensityMatrix, sigma: DensityMatrix):
    if rho.dim != sigma.dim:
        raise QuantumStateError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """D = 1/2 tr|rho - sigma|"""
    _check_same_dim(rho, sigma)
    eigenvalues = linalg.eigvalsh(rho.matrix - sigma.matrix)
    return _clamp_unit(0.5 * float(np.sum(np.abs(eigenvalues))), "trace distance")


def fidelity_uhlmann(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """F = tr sqrt(sqrt(rho) sigma sqrt(rho)), unsquared.

    Evaluated as the trace norm of sqrt(rho) sqrt(sigma), which equals the
    Uhlmann expression and needs no square root of the inner kernel.
    """
    _check_same_dim(rho, sigma)
    product = psd_sqrt(rho.matrix) @ psd_sqrt(sigma.matrix)
    value = float(np.sum(linalg.svdvals(product)))
    return _clamp_unit(value, "fidelity")


def fidelity_product_form(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """tr(sqrt(rho) sqrt(sigma)); agrees with the Uhlmann fidelity for commuting inputs."""
    _check_same_dim(rho, sigma)
    value = float(np.real(np.trace(psd_sqrt(rho.matrix) @ psd_sqrt(sigma.matrix))))
    return _clamp_unit(value, "fidelity")


def helstrom_success_probability(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Optimal probability of telling rho from sigma with one measurement, equal priors."""
    return 0.5 * (1.0 + trace_distance(rho, sigma))


def purity(rho: DensityMatrix) -> float:
    return float(np.real(np.trace(rho.matrix @ rho.matrix)))


def channel_state_fidelity(rho: DensityMatrix, channel: QuantumChannel) -> float:
    return fidelity_uhlmann(rho, apply_channel(channel, rho))


def phase_damping_fidelity(psi: PureState, p: float) -> float:
    """sqrt(p + (1-p) <psi|Z|psi>^2) for the phase-damping channel."""
    _check_probability(p)
    if psi.dim != 2:
        raise QuantumStateError("phase damping fidelity is defined for qubit states")
    z_expectation = psi.expectation(PAULI_Z.matrix)
    return math.sqrt(p + (1 - p) * z_expectation ** 2)


def min_channel_fidelity(channel: QuantumChannel, grid_resolution: int = 64) -> Tuple[float, PureState]:
    """Minimum of F(psi, channel(psi)) over a Bloch-sphere grid.

    The grid uses theta = pi*i/n and phi = 2*pi*j/n for i, j in 0..n-1, which
    contains the poles' north side and, for even n, the equator.
    """
    if grid_resolution < 2:
        raise QuantumStateError("grid_resolution must be at least 2")
    best_value, best_state = math.inf, KET_0
    for i in range(grid_resolution):
        theta = math.pi * i / grid_resolution
        for j in range(grid_resolution):
            phi = 2 * math.pi * j / grid_resolution
            state = PureState.from_bloch(theta, phi)
            value = channel_state_fidelity(state.density(), channel)
            if value < best_value:
                best_value, best_state = value, state
    return best_value, best_state


def pump_fidelity(f_current: float, f_base: float) -> float:
    """One entanglement-pumping round: (sqrt(f_current) + sqrt(f_base)) / 2."""
    _check_probability(f_current, "f_current")
    _check_probability(f_base, "f_base")
    return (math.sqrt(f_current) + math.sqrt(f_base)) / 2


@dataclass(frozen=True)
class PumpResult:
    final_fidelity: float
    rounds: int
    trajectory: List[float]
    converged: bool


def pump_until_threshold(f_initial_a: float, f_initial_b: float, threshold: float,
                         max_rounds: int = 10) -> PumpResult:
    """Pump against the base pair f_initial_b until the threshold is reached."""
    _check_probability(f_initial_a, "f_initial_a")
    _check_probability(f_initial_b, "f_initial_b")
    if not 0.0 < threshold <= 1.0:
        raise QuantumStateError(f"threshold must lie in (0, 1], got {threshold!r}")
    if max_rounds < 1:
        raise QuantumStateError("max_rounds must be positive")

    trajectory = []
    current = f_initial_a
    while len(trajectory) < max_rounds:
        current = pump_fidelity(current, f_initial_b)
        trajectory.append(current)
        if current >= threshold:
            break
    converged = current >= threshold
    if not converged:
        logger.info("pumping stopped after %d rounds at %.6f below threshold %.6f",
                    max_rounds, current, threshold)
    return PumpResult(current, len(trajectory), trajectory, converged)


@dataclass(frozen=True, eq=False)
class EnsembleItem:
    p: float
    q: float
    rho: DensityMatrix
    sigma: DensityMatrix


@dataclass(frozen=True, eq=False)
class StateEnsemble:
    items: Tuple[EnsembleItem, ...]

    def __post_init__(self):
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        if not items:
            raise QuantumStateError("ensemble is empty")
        for item in items:
            _check_probability(item.p, "p_i")
            _check_probability(item.q, "q_i")
            _check_same_dim(item.rho, item.sigma)
            _check_same_dim(items[0].rho, item.rho)
        if abs(sum(item.p for item in items) - 1.0) > TOLERANCE:
            raise QuantumStateError("source weights do not sum to 1")
        if abs(sum(item.q for item in items) - 1.0) > TOLERANCE:
            raise QuantumStateError("destination weights do not sum to 1")

    @classmethod
    def of(cls, entries: Sequence[Tuple[float, float, DensityMatrix, DensityMatrix]]) -> "StateEnsemble":
        return cls(tuple(EnsembleItem(*entry) for entry in entries))

    def source_mixture(self) -> DensityMatrix:
        return DensityMatrix(sum(item.p * item.rho.matrix for item in self.items))

    def destination_mixture(self) -> DensityMatrix:
        return DensityMatrix(sum(item.q * item.sigma.matrix for item in self.items))


@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    holds: bool


def ensemble_fidelity_inequality_check(ensemble: StateEnsemble) -> InequalityCheck:
    """F(sum p_i rho_i, sum q_i sigma_i) >= sum sqrt(p_i q_i) F(rho_i, sigma_i)"""
    lhs = fidelity_uhlmann(ensemble.source_mixture(), ensemble.destination_mixture())
    rhs = sum(math.sqrt(item.p * item.q) * fidelity_uhlmann(item.rho, item.sigma)
              for item in ensemble.items)
    return InequalityCheck(lhs, rhs, lhs >= rhs - COMPARE_TOLERANCE)


def make_state(alpha: float, beta: float) -> PureState:
    """Normalized alpha|0> + beta|1>."""
    norm = math.hypot(alpha, beta)
    if norm == 0:
        raise QuantumStateError("alpha and beta cannot both be zero")
    return PureState([alpha / norm, beta / norm])


# Seeded samplers

def random_pure_state(rng: np.random.Generator, dim: int = 2) -> PureState:
    vector = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return PureState(vector / np.linalg.norm(vector))


def random_density_matrix(rng: np.random.Generator, dim: int = 2, rank: int = None) -> DensityMatrix:
    """Ginibre-distributed mixed state of the given rank (full rank by default)."""
    rank = rank or dim
    ginibre = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    matrix = ginibre @ ginibre.conj().T
    matrix = matrix / np.trace(matrix).real
    return DensityMatrix((matrix + matrix.conj().T) / 2)


def random_unitary(rng: np.random.Generator, dim: int = 2) -> UnitaryOp:
    return UnitaryOp(unitary_group.rvs(dim, random_state=rng))
