"""Composite Hilbert-space algebra: tensor products, partial traces, conditioned traces.

Index convention, fixed package-wide: the composite basis index is
``k = i_sys * d_env + j_env`` (system factor first).  A global vector of
length ``d_sys * d_env`` therefore reshapes to a ``(d_sys, d_env)`` matrix
in C order, and operators embed as ``kron(A_sys, B_env)``.

All values are immutable after construction and every operation is a pure
function, so everything here is safe to use from multiple threads.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_DIM_CAP = 4096
HERMITICITY_TOL = 1e-12


def dimension_cap() -> int:
    """Maximum allowed composite dimension (override with RELATIME_DIM_CAP)."""
    raw = os.environ.get("RELATIME_DIM_CAP")
    if raw is None:
        return DEFAULT_DIM_CAP
    cap = int(raw)
    if cap < 1:
        raise ValueError("RELATIME_DIM_CAP must be a positive integer")
    return cap


def _max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


@dataclass(frozen=True)
class SpaceDims:
    """Dimensions of the bipartition: system (d_sys) and environment (d_env)."""

    d_sys: int
    d_env: int

    def __post_init__(self):
        if self.d_sys < 1 or self.d_env < 1:
            raise ValueError("dimensions must be positive")

    @property
    def total(self) -> int:
        return self.d_sys * self.d_env


class HermitianOperator:
    """Dense complex Hermitian matrix.

    Entries are symmetrized to (A + A^dag)/2 at construction; a warning is
    issued when the asymmetry exceeds 1e-12 * max(1, max|A|).
    """

    def __init__(self, entries):
        a = np.array(entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError("expected a square matrix")
        asym = _max_abs(a - a.conj().T)
        if asym > HERMITICITY_TOL * max(1.0, _max_abs(a)):
            warnings.warn(
                f"matrix asymmetry {asym:.3e} exceeds tolerance; symmetrizing",
                stacklevel=2,
            )
        a = 0.5 * (a + a.conj().T)
        a.flags.writeable = False
        self._entries = a

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def norm_max(self) -> float:
        return _max_abs(self._entries)

    @classmethod
    def identity(cls, dim: int) -> "HermitianOperator":
        return cls(np.eye(dim, dtype=complex))

    @classmethod
    def from_diagonal(cls, values) -> "HermitianOperator":
        return cls(np.diag(np.asarray(values, dtype=float)).astype(complex))

    def shifted(self, offset: float) -> "HermitianOperator":
        """A - offset * identity."""
        return HermitianOperator(self._entries - offset * np.eye(self.dim))

    def __repr__(self):
        return f"HermitianOperator(dim={self.dim})"


class GlobalState:
    """Normalized pure state on the composite space.

    ``e_tot`` is set when the state is an eigenstate of the total
    Hamiltonian; builders that deliberately produce non-eigenstates may
    still claim an ``e_tot`` so that invariance violations can be probed.
    """

    def __init__(self, dims: SpaceDims, amplitudes, e_tot: float | None = None):
        v = np.array(amplitudes, dtype=complex).reshape(-1)
        if v.size != dims.total:
            raise ValueError("incompatible dimensions")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state norm {norm!r} deviates from unity beyond 1e-12")
        v.flags.writeable = False
        self.dims = dims
        self._amplitudes = v
        self.e_tot = None if e_tot is None else float(e_tot)

    @property
    def amplitudes(self) -> np.ndarray:
        return self._amplitudes

    def as_matrix(self) -> np.ndarray:
        """(d_sys, d_env) view of the amplitudes; row = system index."""
        return self._amplitudes.reshape(self.dims.d_sys, self.dims.d_env)

    def projector(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self._amplitudes, self._amplitudes.conj()))

    def env_marginal(self) -> np.ndarray:
        """Occupation probability of each environment level."""
        return np.sum(np.abs(self.as_matrix()) ** 2, axis=0)

    def __repr__(self):
        return f"GlobalState(d_sys={self.dims.d_sys}, d_env={self.dims.d_env}, e_tot={self.e_tot})"


class DensityMatrix:
    """Hermitian positive-semidefinite matrix; unit trace when ``normalized``.

    Unnormalized densities (partial results whose trace is absorbed into a
    partition value later) carry ``normalized=False``.  The PSD tolerance
    scales with the largest entry so that unnormalized intermediates with
    large magnitude are judged fairly.
    """

    def __init__(self, entries, normalized: bool = True, psd_tol: float = 1e-10):
        a = np.array(entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError("expected a square matrix")
        asym = _max_abs(a - a.conj().T)
        if asym > HERMITICITY_TOL * max(1.0, _max_abs(a)):
            warnings.warn(
                f"density asymmetry {asym:.3e} exceeds tolerance; symmetrizing",
                stacklevel=2,
            )
        a = 0.5 * (a + a.conj().T)
        w = np.linalg.eigvalsh(a)
        scale = max(1.0, _max_abs(a))
        if w[0] < -psd_tol * scale:
            raise ValueError(f"not positive semidefinite (min eigenvalue {w[0]:.3e})")
        tr = float(np.real(np.trace(a)))
        if normalized and abs(tr - 1.0) > 1e-10:
            raise ValueError(f"trace {tr!r} deviates from unity beyond 1e-10")
        a.flags.writeable = False
        self._entries = a
        self.normalized = bool(normalized)

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self._entries)))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self._entries)

    def normalize(self) -> "DensityMatrix":
        tr = self.trace
        if tr <= 0.0:
            raise ValueError("cannot normalize a density with nonpositive trace")
        return DensityMatrix(self._entries / tr, normalized=True)

    def __repr__(self):
        return f"DensityMatrix(dim={self.dim}, normalized={self.normalized})"


def tensor_op(a: HermitianOperator, b: HermitianOperator) -> HermitianOperator:
    """Kronecker product a (x) b under the system-major index convention."""
    total = a.dim * b.dim
    if total > dimension_cap():
        raise ValueError("dimension cap exceeded")
    return HermitianOperator(np.kron(a.entries, b.entries))


def total_hamiltonian(
    h_sys: HermitianOperator,
    h_env: HermitianOperator,
    v: HermitianOperator | None = None,
) -> HermitianOperator:
    """H (x) 1_E + 1 (x) H_E + V (V omitted means no coupling)."""
    total = h_sys.dim * h_env.dim
    if total > dimension_cap():
        raise ValueError("dimension cap exceeded")
    h = np.kron(h_sys.entries, np.eye(h_env.dim)) + np.kron(np.eye(h_sys.dim), h_env.entries)
    if v is not None:
        if v.dim != total:
            raise ValueError("incompatible dimensions")
        h = h + v.entries
    return HermitianOperator(h)


def partial_trace_env(rho_global: DensityMatrix, dims: SpaceDims) -> DensityMatrix:
    """Trace out the environment: rho_sys[i,k] = sum_j rho[(i,j),(k,j)]."""
    if rho_global.dim != dims.total:
        raise ValueError("incompatible dimensions")
    r = rho_global.entries.reshape(dims.d_sys, dims.d_env, dims.d_sys, dims.d_env)
    out = np.trace(r, axis1=1, axis2=3)
    return DensityMatrix(out, normalized=rho_global.normalized)


def conditioned_trace(
    p_psi: DensityMatrix, rho_env: DensityMatrix, dims: SpaceDims
) -> DensityMatrix:
    """Environment-weighted trace tr_E[(1 (x) rho_env) P_psi], unnormalized.

    ``p_psi`` must be a rank-1 projector of a normalized global state; the
    trace of the result equals <psi| 1 (x) rho_env |psi>.
    """
    if p_psi.dim != dims.total or rho_env.dim != dims.d_env:
        raise ValueError("incompatible dimensions")
    purity = float(np.sum(np.abs(p_psi.entries) ** 2))
    if abs(p_psi.trace - 1.0) > 1e-8 or abs(purity - 1.0) > 1e-6:
        raise ValueError("conditioned trace requires a rank-1 global projector")
    p = p_psi.entries.reshape(dims.d_sys, dims.d_env, dims.d_sys, dims.d_env)
    out = np.einsum("jn,inkj->ik", rho_env.entries, p)
    return DensityMatrix(out, normalized=False)
