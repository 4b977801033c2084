"""Classical system definitions and their quantized counterparts.

A system is the triple (g, A, V): inverse-mass profile, gauge potential,
scalar potential, with H(q, p) = g(q)/2 (p - A)^2 + V(q).  The quantum
build keeps g(q) between the two shifted-momentum factors, discretized as
first differences onto link midpoints with a symmetric phase split of A,
so the matrix is Hermitian by construction for any position-dependent g
and A.  Naive g*p^2 / p^2*g builds are kept around as the contrast case.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NodeError, ShapeError
from .lattice import NODE_EPS, GridSpec, check_field, gradient

PRESETS = ("free", "harmonic", "variable_mass", "gauged")


@dataclass(frozen=True)
class ClassicalSpec:
    """Callables for (g, A, V) and their derivatives, plus bookkeeping."""

    name: str
    g: Callable
    A: Callable
    V: Callable
    dg: Callable
    dA: Callable
    dV: Callable
    # True when g or A depends on q, which makes the kinetic term
    # position-dependent and forces the implicit classical stepper
    kinetic_q_dependent: bool = False
    params: dict = field(default_factory=dict)


def make_system(preset: str, **params) -> ClassicalSpec:
    """Build one of the shipped (g, A, V) presets."""
    if preset == "free":
        allowed = {"m": 1.0}
    elif preset == "harmonic":
        allowed = {"m": 1.0, "omega": 1.0}
    elif preset == "variable_mass":
        allowed = {"m": 1.0, "omega": 1.0, "beta": 0.3}
    elif preset == "gauged":
        allowed = {"m": 1.0, "omega": 1.0, "a0": 0.0, "a1": 0.0}
    else:
        raise ConfigurationError(f"unknown system preset {preset!r}")
    unknown = set(params) - set(allowed)
    if unknown:
        raise ConfigurationError(f"preset {preset!r} got unknown parameters {sorted(unknown)}")
    p = dict(allowed, **params)
    m = float(p.get("m", 1.0))
    if m <= 0:
        raise ConfigurationError(f"mass must be positive, got {m}")

    zero = lambda q: np.zeros_like(np.asarray(q, dtype=float))

    if preset == "free":
        return ClassicalSpec(
            name=preset,
            g=lambda q: np.full_like(np.asarray(q, dtype=float), 1.0 / m),
            A=zero, V=zero, dg=zero, dA=zero, dV=zero,
            kinetic_q_dependent=False, params=p)
    if preset == "harmonic":
        w = float(p["omega"])
        return ClassicalSpec(
            name=preset,
            g=lambda q: np.full_like(np.asarray(q, dtype=float), 1.0 / m),
            A=zero,
            V=lambda q: 0.5 * m * w * w * np.asarray(q, dtype=float) ** 2,
            dg=zero, dA=zero,
            dV=lambda q: m * w * w * np.asarray(q, dtype=float),
            kinetic_q_dependent=False, params=p)
    if preset == "variable_mass":
        w = float(p["omega"])
        b = float(p["beta"])
        if b < 0:
            raise ConfigurationError(f"beta must be >= 0, got {b}")

        def g(q):
            q = np.asarray(q, dtype=float)
            return 1.0 / (m * (1.0 + b * q * q))

        def dg(q):
            q = np.asarray(q, dtype=float)
            return -2.0 * b * q / (m * (1.0 + b * q * q) ** 2)

        return ClassicalSpec(
            name=preset, g=g, A=zero,
            V=lambda q: 0.5 * m * w * w * np.asarray(q, dtype=float) ** 2,
            dg=dg, dA=zero,
            dV=lambda q: m * w * w * np.asarray(q, dtype=float),
            kinetic_q_dependent=b != 0.0, params=p)
    # gauged
    w = float(p["omega"])
    a0 = float(p["a0"])
    a1 = float(p["a1"])
    return ClassicalSpec(
        name=preset,
        g=lambda q: np.full_like(np.asarray(q, dtype=float), 1.0 / m),
        A=lambda q: a0 + a1 * np.asarray(q, dtype=float),
        V=lambda q: 0.5 * m * w * w * np.asarray(q, dtype=float) ** 2,
        dg=zero,
        dA=lambda q: np.full_like(np.asarray(q, dtype=float), a1),
        dV=lambda q: m * w * w * np.asarray(q, dtype=float),
        kinetic_q_dependent=a1 != 0.0, params=p)


def classical_velocity(q, p, spec: ClassicalSpec):
    """dq/dt = g(q) (p - A(q))."""
    return spec.g(q) * (p - spec.A(q))


def hamiltonian_value(q, p, spec: ClassicalSpec):
    dp = p - spec.A(q)
    return 0.5 * spec.g(q) * dp * dp + spec.V(q)


def node_floor(omega: np.ndarray) -> float:
    return NODE_EPS * float(np.max(omega))


def require_node_free(omega: np.ndarray, what: str = "density") -> None:
    omega = np.asarray(omega)
    if float(np.min(omega)) < node_floor(omega):
        raise NodeError(
            f"{what} has min/max ratio below {NODE_EPS:g}; "
            "amplitude-dividing operations are unreliable near nodes")


def theta_of_S(S: np.ndarray, spec: ClassicalSpec, grid: GridSpec) -> np.ndarray:
    """Divergence of the action-gradient velocity field, d/dq[g (dS/dq - A)].

    This is the decay rate attached to each path segment; a uniformly
    compressing flow gives a positive constant.  Depends on S only through
    its gradient.
    """
    S = check_field(S, grid, "action field")
    pts = grid.points()
    return gradient(spec.g(pts) * (gradient(S, grid) - spec.A(pts)), grid)


def momentum_field(S: np.ndarray, omega: np.ndarray, lam: float,
                   spec: ClassicalSpec, grid: GridSpec) -> np.ndarray:
    """p(q) = dS/dq + (lam/2) * (dOmega/dq) / Omega.

    The second piece is the osmotic shift carried by the signed action
    scale lam; it flips sign with lam while the first piece does not.
    """
    S = check_field(S, grid, "action field")
    omega = check_field(omega, grid, "density field")
    require_node_free(omega)
    return gradient(S, grid) + 0.5 * lam * gradient(omega, grid) / omega


@dataclass(frozen=True)
class QuantumOperator:
    matrix: np.ndarray
    hbar_eff: float
    grid: GridSpec


def _link_data(spec: ClassicalSpec, grid: GridSpec, hbar_eff: float):
    if hbar_eff <= 0:
        raise ConfigurationError(f"hbar_eff must be positive, got {hbar_eff}")
    mids = grid.midpoints()
    g_mid = np.asarray(spec.g(mids), dtype=float)
    if np.any(g_mid <= 0):
        raise ConfigurationError("inverse-mass profile g must be positive on all links")
    # full accumulated phase across one link
    phase = np.asarray(spec.A(mids), dtype=float) * grid.dq / hbar_eff
    return g_mid, phase


def _assemble(g_mid: np.ndarray, phase: np.ndarray, V: np.ndarray,
              grid: GridSpec, hbar_eff: float) -> np.ndarray:
    """Tridiagonal (p-A) g (p-A)/2 + V with hard-wall (zero ghost) closure."""
    n = grid.n
    pref = hbar_eff * hbar_eff / (2.0 * grid.dq * grid.dq)
    H = np.zeros((n, n), dtype=complex)
    diag = pref * (g_mid[:-1] + g_mid[1:]) + V
    hop = -pref * g_mid[1:-1] * np.exp(-1j * phase[1:-1])
    idx = np.arange(n)
    H[idx, idx] = diag
    H[idx[:-1], idx[:-1] + 1] = hop
    H[idx[:-1] + 1, idx[:-1]] = np.conj(hop)
    return H


def build_quantum_hamiltonian(spec: ClassicalSpec, grid: GridSpec,
                              hbar_eff: float) -> QuantumOperator:
    """Sandwich-ordered Hamiltonian: g(q) evaluated on links, between the
    two shifted-difference factors.  Hermitian by construction."""
    g_mid, phase = _link_data(spec, grid, hbar_eff)
    V = np.asarray(spec.V(grid.points()), dtype=float)
    return QuantumOperator(_assemble(g_mid, phase, V, grid, hbar_eff), hbar_eff, grid)


def build_naive_ordering(spec: ClassicalSpec, grid: GridSpec, hbar_eff: float,
                         ordering: str) -> QuantumOperator:
    """Contrast operators g(q) p^2 / 2 or p^2 g(q) / 2 (plus V), with g at
    the grid points and no symmetrization.  Not Hermitian for varying g."""
    if ordering not in ("g_pp", "pp_g"):
        raise ConfigurationError(f"ordering must be 'g_pp' or 'pp_g', got {ordering!r}")
    g_mid, phase = _link_data(spec, grid, hbar_eff)
    pts = grid.points()
    V = np.asarray(spec.V(pts), dtype=float)
    # squared shifted momentum alone: sandwich with g == 1 on every link
    P2 = 2.0 * _assemble(np.ones_like(g_mid), phase, np.zeros_like(V), grid, hbar_eff)
    g_pts = np.asarray(spec.g(pts), dtype=float)
    if ordering == "g_pp":
        M = 0.5 * g_pts[:, None] * P2
    else:
        M = 0.5 * P2 * g_pts[None, :]
    M[np.arange(grid.n), np.arange(grid.n)] += V
    return QuantumOperator(M, hbar_eff, grid)


def hermiticity_defect(op) -> float:
    """max |M - M^dagger| entrywise; zero for a Hermitian matrix."""
    M = op.matrix if isinstance(op, QuantumOperator) else np.asarray(op)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"hermiticity defect needs a square matrix, got {M.shape}")
    return float(np.max(np.abs(M - M.conj().T)))
