"""Thermodynamic observables and identities for relational densities.

Entropy is measured in nats (k_B = 1) so the entropy-partition identity
S = gamma <H> + ln Z carries no conversion constants.  The partition
convention used for that identity is pinned: Z(gamma) sums exp(-gamma *
eps) over the system spectrum, i.e. the D-fold multiple of the trace of
exp(-gamma H) against the maximally mixed parameter-zero density.  The
identity only holds for one fixed convention, so it is computed here and
not taken from the relational partition value (which absorbs arbitrary
conditioning normalization).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hilbert import DensityMatrix, GlobalState, HermitianOperator
from .propagator import ComplexTime, eigh
from .relational import (
    ConditioningDensity,
    EnvironmentModel,
    environment_density,
    relational_density,
)

ENTROPY_EIGENVALUE_CLIP = 1e-14


@dataclass(frozen=True)
class ThermoPoint:
    """Observables of one sweep point: entropy, mean energies, pinned log Z."""

    gamma: float
    entropy: float
    mean_energy: float
    env_mean_energy: float
    log_z: float

    def __post_init__(self):
        if self.entropy < -1e-12:
            raise ValueError("entropy must be nonnegative")


def logsumexp(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    m = float(np.max(x))
    return m + float(np.log(np.sum(np.exp(x - m))))


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """S = -sum w ln w over the eigenvalues, with 0 ln 0 := 0.

    Eigenvalues below 1e-14 are clipped to zero (below the resolution of
    the trace normalization in double precision).
    """
    w = rho.eigenvalues()
    if float(w[0]) < -1e-8:
        raise ValueError("not a density matrix")
    w = w[w > ENTROPY_EIGENVALUE_CLIP]
    if w.size == 0:
        return 0.0
    return max(float(-np.sum(w * np.log(w))), 0.0)


def mean_energy(rho: DensityMatrix, h: HermitianOperator) -> float:
    """Real part of tr(H rho); the imaginary part must be negligible."""
    if rho.dim != h.dim:
        raise ValueError("incompatible dimensions")
    val = complex(np.trace(h.entries @ rho.entries))
    if abs(val.imag) > 1e-12 * max(1.0, abs(val.real)):
        raise ValueError(f"mean energy has imaginary part {val.imag:.3e}")
    return float(val.real)


def pinned_log_z(h_sys: HermitianOperator, gamma: float) -> float:
    """ln sum_J exp(-gamma eps_J) over the system spectrum (the pinned convention)."""
    return logsumexp(-gamma * eigh(h_sys).eigenvalues)


def entropy_partition_residual(point: ThermoPoint) -> float:
    """|S - (gamma <H> + ln Z)| with the pinned partition convention."""
    return abs(point.entropy - (point.gamma * point.mean_energy + point.log_z))


def thermodynamic_relation_residual(sweep: list[ThermoPoint], gamma_step: float) -> float:
    """Max central-difference residual of dS = gamma d<H> on a uniform grid.

    Second-order accurate: the residual shrinks by ~4x when the step
    halves.
    """
    if len(sweep) < 3:
        raise ValueError("insufficient grid")
    gammas = np.array([p.gamma for p in sweep])
    if float(np.max(np.abs(np.diff(gammas) - gamma_step))) > 1e-9 * max(1.0, abs(gamma_step)):
        raise ValueError("insufficient grid")
    s = np.array([p.entropy for p in sweep])
    e = np.array([p.mean_energy for p in sweep])
    ds = (s[2:] - s[:-2]) / (2.0 * gamma_step)
    de = (e[2:] - e[:-2]) / (2.0 * gamma_step)
    return float(np.max(np.abs(ds - gammas[1:-1] * de)))


def env_mean_energy(
    psi: GlobalState,
    env: EnvironmentModel,
    cond: ConditioningDensity,
    t: ComplexTime,
) -> float:
    """tr(H_E sigma(-L*)) / tr sigma(-L*) over the state-occupied levels."""
    sigma = environment_density(psi, env, cond, t)
    return float(np.real(np.sum(env.energies * np.diagonal(sigma.entries))))


def energy_sum_residual(
    psi: GlobalState,
    env: EnvironmentModel,
    cond: ConditioningDensity,
    t: ComplexTime,
    h_sys: HermitianOperator,
) -> float:
    """|E_tot - <H> - <H_E>| with both means taken at the same parameter.

    Exact for a maximally entangled state under uniform conditioning at
    every (gamma, lam); a lopsided Schmidt state breaks it because the
    system mean picks up the Schmidt weights while the environment side
    does not.
    """
    rho, _ = relational_density(psi, env, cond, t)
    return abs(env.e_tot - mean_energy(rho, h_sys) - env_mean_energy(psi, env, cond, t))


def canonical_sweep(
    psi: GlobalState,
    env: EnvironmentModel,
    cond: ConditioningDensity,
    h_sys: HermitianOperator,
    gammas,
    lam: float = 0.0,
) -> list[ThermoPoint]:
    """Thermo observables across a gamma grid at fixed real time."""
    spectrum = eigh(h_sys).eigenvalues
    ln_d = float(np.log(h_sys.dim))
    points = []
    for gamma in np.asarray(gammas, dtype=float):
        t = ComplexTime(float(gamma), lam)
        rho, _ = relational_density(psi, env, cond, t)
        entropy = von_neumann_entropy(rho)
        if entropy > ln_d + 1e-9:
            raise ValueError("entropy exceeds ln(D)")
        points.append(
            ThermoPoint(
                gamma=float(gamma),
                entropy=entropy,
                mean_energy=mean_energy(rho, h_sys),
                env_mean_energy=env_mean_energy(psi, env, cond, t),
                log_z=logsumexp(-float(gamma) * spectrum),
            )
        )
    return points
