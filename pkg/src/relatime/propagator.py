"""Exact complex-parameter exponential maps built on Hermitian eigendecomposition.

Every exponential here goes through a full eigendecomposition, never a
series truncation: the identities checked downstream hold exactly and the
tests demand near-machine agreement.  Degenerate eigenvalues need no
special handling because only functions of the operator are formed (the
basis choice inside a degenerate block cancels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hilbert import DensityMatrix, HermitianOperator, SpaceDims, total_hamiltonian

EXP_OVERFLOW_LIMIT = 700.0


class NumericsError(RuntimeError):
    """Numerical failure: overflow, failed diagonalization, divergence."""


@dataclass(frozen=True)
class ComplexTime:
    """Evolution parameter pair: inverse temperature ``gamma`` and real time ``lam``.

    The combined complex parameter is ``gamma/2 + 1j*lam`` (units with
    hbar = k_B = 1).  Negative ``gamma`` (negative temperature) is allowed;
    every identity used in this package holds for it unchanged.
    """

    gamma: float
    lam: float = 0.0

    def to_complex(self) -> complex:
        return 0.5 * self.gamma + 1j * self.lam


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition of a Hermitian operator: ascending eigenvalues, unitary columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.eigenvalues, dtype=float)
        u = np.asarray(self.eigenvectors, dtype=complex)
        if np.any(np.diff(w) < -1e-12 * max(1.0, float(np.max(np.abs(w))))):
            raise NumericsError("diagonalization failed")
        gram = u.conj().T @ u
        if float(np.max(np.abs(gram - np.eye(u.shape[1])))) > 1e-11:
            raise NumericsError("diagonalization failed")
        object.__setattr__(self, "eigenvalues", w)
        object.__setattr__(self, "eigenvectors", u)


def eigh(a: HermitianOperator) -> Spectrum:
    """Eigendecomposition with a reconstruction-residual postcondition."""
    try:
        w, u = np.linalg.eigh(a.entries)
    except np.linalg.LinAlgError as exc:
        raise NumericsError("diagonalization failed") from exc
    spec = Spectrum(w, u)
    recon = (u * w) @ u.conj().T
    resid = float(np.max(np.abs(recon - a.entries)))
    if resid > 1e-10 * max(1.0, a.norm_max):
        raise NumericsError("diagonalization failed")
    return spec


def exp_map(a: HermitianOperator, c: complex) -> np.ndarray:
    """exp(c * A) for Hermitian A via eigendecomposition.

    For purely imaginary ``c`` the result is unitary; for real ``c`` it is
    Hermitian positive-definite.  Raises when the largest real exponent
    would overflow double precision.
    """
    if c == 0:
        return np.eye(a.dim, dtype=complex)
    spec = eigh(a)
    re = np.real(c) * spec.eigenvalues
    if float(np.max(re)) > EXP_OVERFLOW_LIMIT:
        raise NumericsError("exponent overflow")
    u = spec.eigenvectors
    return (u * np.exp(c * spec.eigenvalues)) @ u.conj().T


def two_sided_evolve(
    rho: DensityMatrix, h: HermitianOperator, t: ComplexTime
) -> DensityMatrix:
    """exp(-L H) rho exp(-L* H) with L = gamma/2 + i lam, unnormalized.

    Hermiticity and positivity are preserved for every parameter value;
    the trace is preserved only for purely real time (gamma = 0).
    """
    if rho.dim != h.dim:
        raise ValueError("incompatible dimensions")
    e = exp_map(h, -t.to_complex())
    out = e @ rho.entries @ e.conj().T
    return DensityMatrix(out, normalized=(rho.normalized and t.gamma == 0.0))


def factorization_check(
    h_sys: HermitianOperator,
    h_env: HermitianOperator,
    dims: SpaceDims,
    t: ComplexTime,
    e_tot: float,
) -> float:
    """Max-abs residual of exp(L (H_tot - E)) = exp(L H) (x) exp(L (H_E - E)).

    Holds exactly when there is no coupling, because the two embedded
    generators commute; the shifted environment generator carries the
    total-energy offset.
    """
    if h_sys.dim != dims.d_sys or h_env.dim != dims.d_env:
        raise ValueError("incompatible dimensions")
    lam = t.to_complex()
    h_tot = total_hamiltonian(h_sys, h_env)
    lhs = exp_map(h_tot.shifted(e_tot), lam)
    rhs = np.kron(exp_map(h_sys, lam), exp_map(h_env.shifted(e_tot), lam))
    return float(np.max(np.abs(lhs - rhs)))
