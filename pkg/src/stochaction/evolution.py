"""Wave-layer propagation: Crank-Nicolson stepping and the
diagonalization reference, plus initial states and moments.

Everything works on the dense operator matrices from ``hamiltonian``;
problem sizes stay small enough (n <= 2048) that dense linear algebra is
the simplest correct choice.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, NumericalError, ShapeError
from .hamiltonian import QuantumOperator
from .lattice import GridSpec, integrate

SPECTRAL_MAX_N = 1024


@dataclass(frozen=True)
class WaveState:
    psi: np.ndarray
    hbar_eff: float
    t: float
    grid: GridSpec


def _check_state(state: WaveState) -> None:
    if state.psi.shape != (state.grid.n,):
        raise ShapeError(f"psi has shape {state.psi.shape}, expected ({state.grid.n},)")
    if not np.all(np.isfinite(state.psi.view(float))):
        raise ShapeError("psi contains non-finite entries")
    if state.hbar_eff <= 0:
        raise ConfigurationError(f"hbar_eff must be positive, got {state.hbar_eff}")


def norm_squared(state: WaveState) -> float:
    return integrate(np.abs(state.psi) ** 2, state.grid)


def normalized(state: WaveState) -> WaveState:
    return replace(state, psi=state.psi / np.sqrt(norm_squared(state)))


def gaussian_packet(grid: GridSpec, center: float = 0.0, sigma: float = 1.0,
                    momentum: float = 0.0, hbar_eff: float = 1.0) -> WaveState:
    """Normalized packet with |psi|^2 variance sigma^2 and mean momentum."""
    if sigma <= 0:
        raise ConfigurationError(f"packet width must be positive, got {sigma}")
    q = grid.points()
    psi = np.exp(-((q - center) ** 2) / (4.0 * sigma * sigma)
                 + 1j * momentum * q / hbar_eff)
    return normalized(WaveState(psi=psi, hbar_eff=hbar_eff, t=0.0, grid=grid))


def coherent_state(grid: GridSpec, m: float = 1.0, omega: float = 1.0,
                   center: float = 0.0, momentum: float = 0.0,
                   hbar_eff: float = 1.0) -> WaveState:
    """Displaced oscillator ground state; width sqrt(hbar/2 m omega)."""
    return gaussian_packet(grid, center=center,
                           sigma=np.sqrt(hbar_eff / (2.0 * m * omega)),
                           momentum=momentum, hbar_eff=hbar_eff)


def propagate_crank_nicolson(state: WaveState, H: QuantumOperator,
                             dt: float, steps: int) -> WaveState:
    """Unitary Cayley stepping (1 + i dt H / 2hbar)^-1 (1 - i dt H / 2hbar)."""
    _check_state(state)
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if steps < 0:
        raise ConfigurationError(f"steps must be >= 0, got {steps}")
    if H.matrix.shape != (state.grid.n, state.grid.n):
        raise ShapeError("operator size does not match the state grid")
    if steps == 0:
        return state
    X = (0.5j * dt / state.hbar_eff) * H.matrix
    eye = np.eye(state.grid.n)
    try:
        lu, piv = scipy.linalg.lu_factor(eye + X)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - pathological dt
        raise NumericalError(f"Crank-Nicolson system is singular: {exc}") from exc
    B = eye - X
    psi = state.psi.astype(complex)
    for _ in range(steps):
        psi = scipy.linalg.lu_solve((lu, piv), B @ psi)
    if not np.all(np.isfinite(psi.view(float))):
        raise NumericalError("Crank-Nicolson produced non-finite amplitudes")
    return WaveState(psi=psi, hbar_eff=state.hbar_eff,
                     t=state.t + dt * steps, grid=state.grid)


def propagate_eigen_oracle(state: WaveState, H: QuantumOperator, t: float) -> WaveState:
    """Reference propagator exp(-i H t / hbar) by full diagonalization."""
    _check_state(state)
    if state.grid.n > SPECTRAL_MAX_N:
        raise ConfigurationError(
            f"eigen-oracle propagation is limited to n <= {SPECTRAL_MAX_N}")
    evals, evecs = np.linalg.eigh(H.matrix)
    coeff = evecs.conj().T @ state.psi
    psi = evecs @ (np.exp(-1j * evals * t / state.hbar_eff) * coeff)
    return WaveState(psi=psi, hbar_eff=state.hbar_eff, t=state.t + t, grid=state.grid)


def spectral_filter(state: WaveState, H: QuantumOperator,
                    e_cut: float) -> WaveState:
    """Keep only eigenmode content with energy <= e_cut; renormalize.

    Every retained mode satisfies the wall boundary on its own, so the
    filtered state's wall cells hold nothing but slowly rotating content.
    Polar-form integration needs initial data of exactly this kind: fast
    spectral components are invisible in the interior but dominate the
    deep wall tail, where their beating sweeps the density through zero.
    """
    _check_state(state)
    if state.grid.n > SPECTRAL_MAX_N:
        raise ConfigurationError(
            f"spectral filtering is limited to n <= {SPECTRAL_MAX_N}")
    if H.matrix.shape != (state.grid.n, state.grid.n):
        raise ShapeError("operator size does not match the state grid")
    evals, evecs = np.linalg.eigh(H.matrix)
    keep = evals <= e_cut
    if not bool(np.any(keep)):
        raise ConfigurationError(
            f"energy cutoff {e_cut} lies below the entire spectrum")
    sub = evecs[:, keep]
    psi = sub @ (sub.conj().T @ state.psi)
    return normalized(replace(state, psi=psi))


def ground_state(H: QuantumOperator) -> tuple[float, WaveState]:
    """Lowest eigenpair, unit trapezoid norm, real-positive at mid-grid."""
    evals, evecs = np.linalg.eigh(H.matrix)
    psi = evecs[:, 0].astype(complex)
    mid = H.grid.n // 2
    anchor = psi[mid]
    if abs(anchor) < 1e-300:
        anchor = psi[np.argmax(np.abs(psi))]
    psi = psi * (np.conj(anchor) / abs(anchor))
    state = normalized(WaveState(psi=psi, hbar_eff=H.hbar_eff, t=0.0, grid=H.grid))
    return float(evals[0]), state


def eigenpairs(H: QuantumOperator, k: int) -> tuple[np.ndarray, np.ndarray]:
    evals, evecs = np.linalg.eigh(H.matrix)
    return evals[:k], evecs[:, :k]


def aggregate_density(weighted_states: list[tuple[WaveState, float]]) -> np.ndarray:
    """Mixture density sum_k w_k |psi_k|^2 over the scale ensemble."""
    if len(weighted_states) == 0:
        raise ConfigurationError("need at least one (state, weight) pair")
    weights = np.asarray([w for _, w in weighted_states], dtype=float)
    if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-12:
        raise ConfigurationError("weights must be nonnegative and sum to 1")
    grid = weighted_states[0][0].grid
    dens = np.zeros(grid.n)
    for st, w in weighted_states:
        if st.psi.shape != (grid.n,):
            raise ShapeError("state grid does not match aggregation grid")
        dens += w * np.abs(st.psi) ** 2
    return dens


def mean_position(state: WaveState) -> float:
    q = state.grid.points()
    rho = np.abs(state.psi) ** 2
    return integrate(q * rho, state.grid) / integrate(rho, state.grid)


def position_variance(state: WaveState) -> float:
    q = state.grid.points()
    rho = np.abs(state.psi) ** 2
    z = integrate(rho, state.grid)
    mu = integrate(q * rho, state.grid) / z
    return integrate((q - mu) ** 2 * rho, state.grid) / z


def energy_expectation(state: WaveState, H: QuantumOperator) -> float:
    from .lattice import quadrature_weights
    w = quadrature_weights(state.grid)
    num = np.real(np.sum(np.conj(state.psi) * w * (H.matrix @ state.psi)))
    den = np.sum(w * np.abs(state.psi) ** 2)
    return float(num / den)


def l2_distance(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    """sqrt integral |a - b|^2 dq."""
    return float(np.sqrt(integrate(np.abs(np.asarray(a) - np.asarray(b)) ** 2, grid)))
