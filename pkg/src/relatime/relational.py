"""Relational densities from global eigenstates.

Builds global eigenstates of the uncoupled total Hamiltonian (maximally
entangled, Schmidt-weighted, or deliberate non-eigenstate superpositions),
applies an environment-side conditioning density, and produces the
normalized system density together with its partition value.

The stored global state is always unit-norm; any normalization convention
of the branch sum is absorbed into the partition value, which is tracked
in shifted log-space so that large inverse temperatures neither overflow
nor underflow.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .hilbert import DensityMatrix, GlobalState, HermitianOperator, SpaceDims
from .propagator import ComplexTime, NumericsError, eigh

SUPPORT_TOL = 1e-30


@dataclass
class SystemSpectrumInput:
    """System eigenenergies with the unitary matrix whose columns are the eigenvectors.

    The default basis is the identity (energy eigenbasis = computational
    basis).  Columns must be orthonormal within 1e-11.
    """

    energies: np.ndarray
    basis: np.ndarray | None = None

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float).reshape(-1)
        d = self.energies.size
        if d < 1:
            raise ValueError("need at least one energy level")
        if self.basis is None:
            self.basis = np.eye(d, dtype=complex)
        else:
            self.basis = np.asarray(self.basis, dtype=complex)
            if self.basis.shape != (d, d):
                raise ValueError("incompatible dimensions")
            gram = self.basis.conj().T @ self.basis
            if float(np.max(np.abs(gram - np.eye(d)))) > 1e-11:
                raise ValueError("system basis is not unitary within 1e-11")

    @property
    def dim(self) -> int:
        return self.energies.size

    def hamiltonian(self) -> HermitianOperator:
        u = self.basis
        return HermitianOperator((u * self.energies) @ u.conj().T)


@dataclass
class EnvironmentModel:
    """Environment eigenenergies (diagonal basis) plus the total energy.

    The shifted energies ``energies - e_tot`` generate the environment
    side of the relational evolution.  For states built by this module the
    pairing E_J + eps_J = e_tot holds on every occupied branch.
    """

    energies: np.ndarray
    e_tot: float

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float).reshape(-1)
        self.e_tot = float(self.e_tot)

    @property
    def d_env(self) -> int:
        return self.energies.size

    @property
    def shifted_energies(self) -> np.ndarray:
        return self.energies - self.e_tot

    def hamiltonian(self) -> HermitianOperator:
        return HermitianOperator.from_diagonal(self.energies)


@dataclass
class SchmidtDecomposition:
    """Branch data of a bi-orthogonal state sum_J a_J |phi_J> (x) |J>.

    ``coefficients`` are real and nonnegative; they are renormalized to
    unit square sum with a warning if needed.  ``energies`` are the system
    eigenenergies paired branch by branch, ``basis`` holds the system
    vectors |phi_J> as columns (identity by default), and the environment
    vectors are the first ``len(coefficients)`` computational basis states
    of a ``d_env``-dimensional environment.
    """

    coefficients: np.ndarray
    energies: np.ndarray
    basis: np.ndarray | None = None
    d_env: int | None = None

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if a.size < 1:
            raise ValueError("need at least one branch")
        if np.any(a < 0):
            raise ValueError("Schmidt coefficients must be nonnegative")
        ssq = float(np.sum(a**2))
        if ssq <= 0:
            raise ValueError("Schmidt coefficients must not all vanish")
        if abs(ssq - 1.0) > 1e-12:
            warnings.warn("Schmidt coefficients renormalized to unit square sum")
            a = a / math.sqrt(ssq)
        self.coefficients = a
        self.energies = np.asarray(self.energies, dtype=float).reshape(-1)
        if self.energies.size != a.size:
            raise ValueError("incompatible dimensions")
        n = a.size
        if self.basis is None:
            self.basis = np.eye(n, dtype=complex)
        else:
            self.basis = np.asarray(self.basis, dtype=complex)
            if self.basis.ndim != 2 or self.basis.shape[1] != n:
                raise ValueError("incompatible dimensions")
            gram = self.basis.conj().T @ self.basis
            if float(np.max(np.abs(gram - np.eye(n)))) > 1e-11:
                raise ValueError("system branch vectors are not orthonormal within 1e-11")
        if self.d_env is None:
            self.d_env = n
        elif self.d_env < n:
            raise ValueError("environment too small")

    @property
    def n_branches(self) -> int:
        return self.coefficients.size

    @property
    def d_sys(self) -> int:
        return self.basis.shape[0]


@dataclass
class ConditioningDensity:
    """Environment-side weighting inserted into the partial trace.

    Either nonnegative ``weights`` diagonal in the environment energy
    eigenbasis, or a full Hermitian PSD ``matrix`` for the general case.
    Weights need not be normalized: only ratios matter, the rest is
    absorbed by the partition value.
    """

    weights: np.ndarray | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if (self.weights is None) == (self.matrix is None):
            raise ValueError("provide exactly one of weights or matrix")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if np.any(w < 0):
                raise ValueError("conditioning weights must be nonnegative")
            if not np.any(w > 0):
                raise ValueError("conditioning weights must not all vanish")
            self.weights = w
        else:
            m = np.asarray(self.matrix, dtype=complex)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("expected a square matrix")
            if float(np.max(np.abs(m - m.conj().T))) > 1e-12 * max(1.0, float(np.max(np.abs(m)))):
                raise ValueError("non-PSD rho_env: not Hermitian")
            ev = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
            if ev[0] < -1e-10 * max(1.0, float(np.max(np.abs(m)))):
                raise ValueError("non-PSD rho_env")
            if not np.any(ev > 0):
                raise ValueError("conditioning density must not vanish")
            self.matrix = 0.5 * (m + m.conj().T)

    @classmethod
    def uniform(cls, d_env: int) -> "ConditioningDensity":
        return cls(weights=np.ones(d_env))

    def as_matrix(self, d_env: int) -> np.ndarray:
        if self.weights is not None:
            if self.weights.size != d_env:
                raise ValueError("incompatible dimensions")
            return np.diag(self.weights).astype(complex)
        if self.matrix.shape[0] != d_env:
            raise ValueError("incompatible dimensions")
        return self.matrix


@dataclass(frozen=True)
class PartitionValue:
    """Partition value z with its shift-corrected logarithm.

    ``log_z`` is always finite; ``z = exp(log_z)`` may round to inf or 0
    at extreme parameters, so ratios should use ``log_z``.
    """

    z: float
    log_z: float

    def __post_init__(self):
        if not math.isfinite(self.log_z):
            raise ValueError("log_z must be finite")
        if not self.z > 0:
            raise ValueError("partition value must be positive")


def _safe_exp(x: float) -> float:
    with np.errstate(over="ignore"):
        return float(np.exp(x))


def _spacer_energies(e_tot: float, eps: np.ndarray, count: int) -> np.ndarray:
    # Offset in increments of max|eps|+1 so no spacer level can satisfy
    # the eigenstate pairing of an occupied branch.
    gap = float(np.max(np.abs(eps))) + 1.0 if eps.size else 1.0
    return e_tot + gap * np.arange(1, count + 1)


def _warn_on_branch_collisions(branch_energies: np.ndarray):
    if branch_energies.size < 2:
        return
    se = np.sort(branch_energies)
    if float(np.min(np.diff(se))) < 1e-9:
        warnings.warn(
            "colliding environment energies across branches (accidental degeneracy)"
        )


def _assemble_state(
    amps: np.ndarray,
    basis: np.ndarray,
    eps: np.ndarray,
    e_tot: float,
    d_env: int,
) -> tuple[GlobalState, EnvironmentModel]:
    n = amps.size
    d_sys = basis.shape[0]
    env_e = np.empty(d_env)
    env_e[:n] = e_tot - eps
    env_e[n:] = _spacer_energies(e_tot, eps, d_env - n)
    _warn_on_branch_collisions(env_e[:n])
    mat = np.zeros((d_sys, d_env), dtype=complex)
    mat[:, :n] = basis * amps
    psi = GlobalState(SpaceDims(d_sys, d_env), mat.reshape(-1), e_tot=e_tot)
    return psi, EnvironmentModel(env_e, e_tot)


def build_mes(
    spec: SystemSpectrumInput, e_tot: float, d_env: int
) -> tuple[GlobalState, EnvironmentModel]:
    """Maximally entangled global eigenstate (1/sqrt(D)) sum_J |phi_J> (x) |J>.

    Environment level J < D gets energy e_tot - eps_J so every branch is an
    exact eigencomponent; levels beyond D are spacers with energies offset
    away from all branch energies.
    """
    d = spec.dim
    if d_env < d:
        raise ValueError("environment too small")
    amps = np.full(d, 1.0 / math.sqrt(d))
    return _assemble_state(amps, spec.basis, spec.energies, float(e_tot), d_env)


def build_schmidt(
    schmidt: SchmidtDecomposition, e_tot: float
) -> tuple[GlobalState, EnvironmentModel]:
    """Global eigenstate sum_J a_J |phi_J> (x) |J> with branch pairing E_J = e_tot - eps_J."""
    return _assemble_state(
        schmidt.coefficients,
        schmidt.basis,
        schmidt.energies,
        float(e_tot),
        schmidt.d_env,
    )


def build_energy_superposition(
    spec: SystemSpectrumInput,
    e_tot: float,
    splitting: float,
    d_env: int | None = None,
) -> tuple[GlobalState, EnvironmentModel]:
    """Equal superposition of two maximally entangled states at total energies
    e_tot and e_tot + splitting, sharing one environment.

    Deliberately *not* an eigenstate; the claimed ``e_tot`` is the first
    branch energy, so invariance checks must detect the violation.
    """
    d = spec.dim
    if splitting == 0:
        raise ValueError("splitting must be nonzero")
    if d_env is None:
        d_env = 2 * d
    if d_env < 2 * d:
        raise ValueError("environment too small")
    eps = spec.energies
    env_e = np.empty(d_env)
    env_e[:d] = e_tot - eps
    env_e[d : 2 * d] = e_tot + splitting - eps
    env_e[2 * d :] = _spacer_energies(e_tot + abs(splitting), eps, d_env - 2 * d)
    mat = np.zeros((d, d_env), dtype=complex)
    mat[:, :d] = spec.basis / math.sqrt(2 * d)
    mat[:, d : 2 * d] = spec.basis / math.sqrt(2 * d)
    psi = GlobalState(SpaceDims(d, d_env), mat.reshape(-1), e_tot=float(e_tot))
    return psi, EnvironmentModel(env_e, float(e_tot))


def verify_invariance(psi: GlobalState, h_tot: HermitianOperator, t: ComplexTime) -> float:
    """2-norm of exp(L (H_tot - E_tot)) |psi> - |psi>.

    Near zero for eigenstates; grows like exp(|Re L| * ||H_tot - E_tot||)
    times machine epsilon in the worst case, so keep the product of
    inverse temperature and spectral radius at desk scale.
    """
    if psi.e_tot is None:
        raise ValueError("state does not carry a total energy")
    if h_tot.dim != psi.dims.total:
        raise ValueError("incompatible dimensions")
    spec = eigh(h_tot)
    w = spec.eigenvalues - psi.e_tot
    lam = t.to_complex()
    if float(np.max(np.real(lam) * w)) > 700.0:
        raise NumericsError("exponent overflow")
    coeffs = spec.eigenvectors.conj().T @ psi.amplitudes
    evolved = spec.eigenvectors @ (np.exp(lam * w) * coeffs)
    return float(np.linalg.norm(evolved - psi.amplitudes))


def _evolved_conditioning_masked(
    env: EnvironmentModel,
    cond: ConditioningDensity,
    t: ComplexTime,
    support: np.ndarray,
) -> tuple[np.ndarray, float]:
    """sigma(-L*) = exp(L* h_E) sigma(0) exp(L h_E) restricted to contributing levels.

    Returns the matrix scaled by exp(-2 s) together with the real shift s,
    chosen so that the largest contributing weight is O(1).
    """
    d_env = env.d_env
    sigma = cond.as_matrix(d_env)
    active = support & (np.real(np.diagonal(sigma)) > 0.0)
    if not np.any(active):
        raise NumericsError("state unsupported by conditioning")
    h = env.shifted_energies
    s = float(np.max(0.5 * t.gamma * h[active]))
    f = np.zeros(d_env, dtype=complex)
    f[active] = np.exp(np.conj(t.to_complex()) * h[active] - s)
    masked = np.where(np.outer(active, active), sigma, 0.0)
    return (f[:, None] * masked) * np.conj(f)[None, :], s


def relational_density(
    psi: GlobalState,
    env: EnvironmentModel,
    cond: ConditioningDensity,
    t: ComplexTime,
) -> tuple[DensityMatrix, PartitionValue]:
    """Normalized system density at complex parameter t, with its partition value.

    Parameters
    ----------
    psi : GlobalState
        Normalized global state (any state; eigenstates give the canonical
        behaviour).
    env : EnvironmentModel
        Environment energies and total energy defining the shifted
        generator for the environment-side evolution.
    cond : ConditioningDensity
        Environment weighting at parameter zero.
    t : ComplexTime
        Evolution parameter; the system density picks up the weight
        exp(-gamma * eps_J) per branch, and only the real part matters
        when the conditioning is diagonal.

    Returns
    -------
    (DensityMatrix, PartitionValue)
        The unit-trace system density and z = <psi| sigma(-L*) |psi>
        tracked in shifted log-space.
    """
    dims = psi.dims
    if env.d_env != dims.d_env:
        raise ValueError("incompatible dimensions")
    psi_mat = psi.as_matrix()
    support = psi.env_marginal() > SUPPORT_TOL
    sigma, s = _evolved_conditioning_masked(env, cond, t, support)
    m = np.einsum("jn,in,kj->ik", sigma, psi_mat, psi_mat.conj())
    z_shifted = float(np.real(np.trace(m)))
    if not np.isfinite(z_shifted) or z_shifted < 1e-300:
        raise NumericsError("state unsupported by conditioning")
    log_z = math.log(z_shifted) + 2.0 * s
    rho = DensityMatrix(m / z_shifted, normalized=True)
    return rho, PartitionValue(z=_safe_exp(log_z), log_z=log_z)


def environment_density(
    psi: GlobalState,
    env: EnvironmentModel,
    cond: ConditioningDensity,
    t: ComplexTime,
) -> DensityMatrix:
    """Normalized environment-side density sigma(-L*) / tr sigma(-L*).

    Restricted to the environment levels the state occupies: spacer levels
    carry no amplitude and are excluded, matching the branch sum that the
    global state actually realizes.
    """
    if env.d_env != psi.dims.d_env:
        raise ValueError("incompatible dimensions")
    support = psi.env_marginal() > SUPPORT_TOL
    sigma, _ = _evolved_conditioning_masked(env, cond, t, support)
    tr = float(np.real(np.trace(sigma)))
    if not np.isfinite(tr) or tr < 1e-300:
        raise NumericsError("state unsupported by conditioning")
    return DensityMatrix(sigma / tr, normalized=True)


def conditioning_evolved(
    cond: ConditioningDensity, env: EnvironmentModel, t: ComplexTime
) -> ConditioningDensity:
    """Conditioning pre-evolved by -L*: exp(L* h_E) sigma exp(L h_E), unmasked.

    Feeding the result into ``relational_density`` at parameter zero gives
    the same system density as evolving the original conditioning by t.
    """
    h = env.shifted_energies
    re = 0.5 * t.gamma * h
    if float(np.max(np.abs(re))) > 700.0:
        raise NumericsError("exponent overflow")
    f = np.exp(np.conj(t.to_complex()) * h)
    sigma = cond.as_matrix(env.d_env)
    return ConditioningDensity(matrix=(f[:, None] * sigma) * np.conj(f)[None, :])


def canonical_residual(
    psi: GlobalState,
    env: EnvironmentModel,
    cond: ConditioningDensity,
    t: ComplexTime,
    h_sys: HermitianOperator,
) -> float:
    """Max-abs deviation of the relational density from exp(-gamma H) rho_0 / Z.

    ``rho_0`` is the relational density at parameter zero.  Vanishes for a
    maximally entangled state (or any Schmidt state with compensating
    conditioning); a lopsided Schmidt state under plain tracing deviates.
    """
    rho_t, _ = relational_density(psi, env, cond, t)
    rho_0, _ = relational_density(psi, env, cond, ComplexTime(0.0, 0.0))
    spec = eigh(h_sys)
    w = spec.eigenvalues
    ref_shift = float(np.min(t.gamma * w))
    u = spec.eigenvectors
    weights = np.exp(-(t.gamma * w - ref_shift))
    gibbs_factor = (u * weights) @ u.conj().T
    raw = gibbs_factor @ rho_0.entries
    norm = float(np.real(np.trace(raw)))
    if norm <= 0.0:
        raise NumericsError("state unsupported by conditioning")
    return float(np.max(np.abs(rho_t.entries - raw / norm)))


def canonical_conditioning(schmidt: SchmidtDecomposition) -> ConditioningDensity:
    """Weights p_J = a_J**(-2) on the state's support, zero elsewhere.

    Compensates non-uniform Schmidt coefficients so the relational density
    becomes canonical.  Vanishing coefficients drop their branch with a
    warning.
    """
    a = schmidt.coefficients
    p = np.zeros(schmidt.d_env)
    zero = a == 0.0
    if np.any(zero):
        warnings.warn("zero Schmidt coefficient: branch excluded")
    p[: a.size][~zero] = a[~zero] ** -2.0
    return ConditioningDensity(weights=p)


def commutator_equivalence_check(
    psi: GlobalState,
    env: EnvironmentModel,
    cond: ConditioningDensity,
    h_sys: HermitianOperator,
) -> tuple[float, float]:
    """Max-abs norms (||[sigma, h_E]||, ||[rho, H]||) at parameter zero.

    A conditioning density that commutes with the shifted environment
    Hamiltonian yields a system density commuting with the system
    Hamiltonian (stationary in real time), and vice versa.
    """
    sigma = cond.as_matrix(env.d_env)
    h = env.shifted_energies
    lhs = float(np.max(np.abs(sigma * (h[None, :] - h[:, None]))))
    rho, _ = relational_density(psi, env, cond, ComplexTime(0.0, 0.0))
    comm = rho.entries @ h_sys.entries - h_sys.entries @ rho.entries
    rhs = float(np.max(np.abs(comm)))
    return lhs, rhs
