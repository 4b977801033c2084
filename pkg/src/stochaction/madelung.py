"""Polar (R, S) representation of the wave and direct integration of the
coupled amplitude/phase PDEs for the signed action scale.

A single branch carries amplitude R, phase-action S and its signed scale
lam.  The co-evolved pair (+|lam|, -|lam|) shares one density because the
sign-odd transport terms cancel between the branches; the signed
single-branch form is exposed separately as a diagnostic and is expected
to blow up for the anti-diffusive sign — the guard reports that instead
of regularizing it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, NumericalError, ShapeError
from .evolution import WaveState
from .hamiltonian import ClassicalSpec, require_node_free
from .kernels import run_madelung_window
from .lattice import (GridSpec, check_field, gradient, gradient_uniform,
                      integrate, second_derivative, second_derivative_uniform)

# per-step norm growth beyond this factor aborts the integration
NORM_GROWTH_LIMIT = 1.01

# weight of the stability bound dt <= C * dq^2 / (max g * |lam|)
STABILITY_FACTOR = 0.1


@dataclass(frozen=True)
class MadelungState:
    R: np.ndarray
    S: np.ndarray
    lam: float  # signed action scale; |lam| is the effective Planck constant
    t: float
    grid: GridSpec


@dataclass(frozen=True)
class PhasePair:
    plus: MadelungState
    minus: MadelungState
    S0: float  # constant phase offset S_plus - S_minus


def _check_madelung(m: MadelungState, name: str = "state") -> None:
    check_field(m.R, m.grid, f"{name}.R")
    check_field(m.S, m.grid, f"{name}.S")
    if m.lam == 0 or not np.isfinite(m.lam):
        raise ConfigurationError(f"{name}.lam must be nonzero and finite, got {m.lam}")
    if np.any(m.R < 0):
        raise ShapeError(f"{name}.R must be nonnegative")
    norm = integrate(m.R ** 2, m.grid)
    if abs(norm - 1.0) > 1e-6:
        raise ShapeError(f"{name} norm^2 = {norm!r}, expected 1 within 1e-6")


def _check_pair(pair: PhasePair) -> None:
    _check_madelung(pair.plus, "plus branch")
    _check_madelung(pair.minus, "minus branch")
    if pair.plus.lam <= 0 or pair.minus.lam >= 0:
        raise ConfigurationError("pair must hold lam > 0 in plus and lam < 0 in minus")
    if abs(pair.plus.lam + pair.minus.lam) > 1e-15 * abs(pair.plus.lam):
        raise ConfigurationError("pair branches must carry opposite equal scales")


def to_polar(state: WaveState, lam: float | None = None) -> MadelungState:
    """Amplitude |psi| and phase-action hbar_eff * arg(psi), unwrapped
    left to right and pinned to the principal branch at mid-grid."""
    if lam is None:
        lam = state.hbar_eff
    if abs(lam) != state.hbar_eff:
        raise ConfigurationError(
            f"|lam| = {abs(lam)} must equal the state scale {state.hbar_eff}")
    R = np.abs(state.psi)
    require_node_free(R ** 2, "|psi|^2")
    phase = np.unwrap(np.angle(state.psi))
    mid = state.grid.n // 2
    # unwrap fixes differences only; shift by the exact whole number of
    # turns that puts the midpoint back on its principal value
    turns = round((phase[mid] - float(np.angle(state.psi[mid]))) / (2.0 * np.pi))
    phase = phase - 2.0 * np.pi * turns
    return MadelungState(R=R, S=state.hbar_eff * phase, lam=float(lam),
                         t=state.t, grid=state.grid)


def from_polar(m: MadelungState) -> WaveState:
    """psi = R exp(i S / |lam|) with hbar_eff = |lam|."""
    _check_madelung(m)
    hbar_eff = abs(m.lam)
    psi = m.R * np.exp(1j * m.S / hbar_eff)
    return WaveState(psi=psi, hbar_eff=hbar_eff, t=m.t, grid=m.grid)


def pair_from_wave(state: WaveState, offset_quanta: int = 0) -> PhasePair:
    """Build the (+hbar_eff, -hbar_eff) pair from one wave state.

    The branches share R; the minus branch starts at S - S0 with
    S0 = offset_quanta * 2*pi*hbar_eff, the whole-quantum offset that keeps
    both branches mapping to the same single-valued wave.
    """
    plus = to_polar(state, lam=state.hbar_eff)
    S0 = offset_quanta * 2.0 * np.pi * state.hbar_eff
    minus = MadelungState(R=plus.R.copy(), S=plus.S - S0, lam=-state.hbar_eff,
                          t=state.t, grid=state.grid)
    return PhasePair(plus=plus, minus=minus, S0=S0)


def check_phase_offset(pair: PhasePair) -> tuple[float, float]:
    """Spatial mean of S_plus - S_minus and the max deviation from it."""
    diff = pair.plus.S - pair.minus.S
    S0 = float(np.mean(diff))
    return S0, float(np.max(np.abs(diff - S0)))


def quantum_potential(R: np.ndarray, spec: ClassicalSpec, grid: GridSpec,
                      lam: float) -> np.ndarray:
    """The lam^2 correction term -(lam^2/2)(g d2R + dg dR)/R."""
    R = check_field(R, grid, "amplitude")
    require_node_free(R ** 2, "R^2")
    pts = grid.points()
    g = np.asarray(spec.g(pts), dtype=float)
    dg = np.asarray(spec.dg(pts), dtype=float)
    return -0.5 * lam * lam * (g * second_derivative(R, grid)
                               + dg * gradient(R, grid)) / R


def continuity_rate_signed(m: MadelungState, spec: ClassicalSpec) -> np.ndarray:
    """Signed single-branch density rate
    -d/dq[g (dS/dq - A) Omega] - (lam/2) d/dq[g dOmega/dq].

    The lam-term is anti-diffusive for lam > 0, so this rate is integrated
    only by the diagnostic single-branch stepper.
    """
    _check_madelung(m)
    pts = m.grid.points()
    g = np.asarray(spec.g(pts), dtype=float)
    A = np.asarray(spec.A(pts), dtype=float)
    omega = m.R ** 2
    adv = gradient(g * (gradient(m.S, m.grid) - A) * omega, m.grid)
    diff = gradient(g * gradient(omega, m.grid), m.grid)
    return -adv - 0.5 * m.lam * diff


def continuity_rate_pair(m: MadelungState, spec: ClassicalSpec) -> np.ndarray:
    """Density rate with the sign-odd term cancelled: -d/dq[g (dS/dq - A) Omega]."""
    _check_madelung(m)
    pts = m.grid.points()
    g = np.asarray(spec.g(pts), dtype=float)
    A = np.asarray(spec.A(pts), dtype=float)
    omega = m.R ** 2
    return -gradient(g * (gradient(m.S, m.grid) - A) * omega, m.grid)


def phase_rate(m: MadelungState, spec: ClassicalSpec) -> np.ndarray:
    """dS/dt = -(g (dS/dq - A)^2 / 2 + V + quantum_potential)."""
    _check_madelung(m)
    pts = m.grid.points()
    g = np.asarray(spec.g(pts), dtype=float)
    A = np.asarray(spec.A(pts), dtype=float)
    V = np.asarray(spec.V(pts), dtype=float)
    dp = gradient(m.S, m.grid) - A
    return -(0.5 * g * dp * dp + V + quantum_potential(m.R, spec, m.grid, m.lam))


def default_timestep(grid: GridSpec, spec: ClassicalSpec, lam_abs: float) -> float:
    """Stability bound 0.1 dq^2 / (max g * |lam|) for the explicit scheme."""
    g_max = float(np.max(spec.g(grid.points())))
    return STABILITY_FACTOR * grid.dq * grid.dq / (g_max * lam_abs)


def _field_tables(spec: ClassicalSpec, grid: GridSpec):
    pts = grid.points()
    return (np.ascontiguousarray(spec.g(pts), dtype=float),
            np.ascontiguousarray(spec.dg(pts), dtype=float),
            np.ascontiguousarray(spec.A(pts), dtype=float),
            np.ascontiguousarray(spec.V(pts), dtype=float))


def _advance_branch(m: MadelungState, spec: ClassicalSpec, dt: float,
                    steps: int, backend: str | None) -> MadelungState:
    # the kernel updates these in place; copy so the caller's state stays
    # immutable (ascontiguousarray would alias an already-contiguous array)
    omega = np.ascontiguousarray(m.R ** 2, dtype=float)
    S = np.array(m.S, dtype=float, order="C")
    g, dg, A, V = _field_tables(spec, m.grid)
    run_madelung_window(omega, S, g, dg, A, V, m.grid.dq, dt, steps,
                        abs(m.lam), backend=backend)
    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(S))):
        raise NumericalError(
            "polar integration produced non-finite fields; "
            "reduce dt below the stability bound")
    # machine-negligible undershoot in the deep tail is clamped; anything
    # larger means the scheme is failing
    if float(np.min(omega)) < -1e-9 * float(np.max(omega)):
        raise NumericalError(
            "density went significantly negative during polar integration; "
            "the state is leaving the resolvable node-free regime")
    omega = np.maximum(omega, 0.0)
    return replace(m, R=np.sqrt(omega), S=S, t=m.t + dt * steps)


def _guarded_advance(m: MadelungState, spec: ClassicalSpec, dt: float,
                     steps: int, backend: str | None) -> MadelungState:
    out = _advance_branch(m, spec, dt, steps, backend)
    norm0 = integrate(m.R ** 2, m.grid)
    norm1 = integrate(out.R ** 2, out.grid)
    if norm1 > norm0 * NORM_GROWTH_LIMIT ** steps or norm1 < norm0 / NORM_GROWTH_LIMIT ** steps:
        raise NumericalError(
            f"norm changed by more than {NORM_GROWTH_LIMIT - 1:.0%} per step "
            f"({norm0!r} -> {norm1!r} over {steps} steps)")
    return out


def step_coupled_pde(pair: PhasePair, spec: ClassicalSpec, dt: float,
                     steps: int = 1, backend: str | None = None,
                     check_every: int = 200) -> PhasePair:
    """Advance both branches of the pair by `steps` explicit RK4 steps.

    Co-evolution uses the pair-cancelled continuity rate for each branch
    (the sign-odd transport terms of the two branches cancel identically
    when the amplitudes agree), so the integration is stable in both
    branches and preserves amplitude symmetry and the S0 offset.

    The node-free precondition is checked once on entry; during the run
    stability failures surface through the norm blow-up guard, applied
    every `check_every` steps.
    """
    _check_pair(pair)
    require_node_free(pair.plus.R ** 2, "pair density")
    if dt <= 0 or not np.isfinite(dt):
        raise ConfigurationError(f"dt must be positive and finite, got {dt}")
    if steps < 1:
        raise ConfigurationError(f"steps must be >= 1, got {steps}")
    bound = default_timestep(pair.plus.grid, spec, abs(pair.plus.lam))
    if dt > 10.0 * bound:
        raise ConfigurationError(
            f"dt = {dt} is far above the stability bound {bound:.3e}")
    plus, minus = pair.plus, pair.minus
    done = 0
    while done < steps:
        chunk = min(check_every, steps - done)
        plus = _guarded_advance(plus, spec, dt, chunk, backend)
        minus = _guarded_advance(minus, spec, dt, chunk, backend)
        done += chunk
    return PhasePair(plus=plus, minus=minus, S0=pair.S0)


def evolve_pair(pair: PhasePair, spec: ClassicalSpec, dt: float, steps: int,
                backend: str | None = None) -> PhasePair:
    """Alias for a multi-step step_coupled_pde call, for long runs."""
    return step_coupled_pde(pair, spec, dt, steps=steps, backend=backend)


def step_single_branch(m: MadelungState, spec: ClassicalSpec, dt: float) -> MadelungState:
    """Diagnostic: one RK4 step of the literal signed single-branch system.

    For lam > 0 the density equation is anti-diffusive and the integration
    is expected to fail the norm guard after a short horizon.
    """
    _check_madelung(m)
    if dt <= 0 or not np.isfinite(dt):
        raise ConfigurationError(f"dt must be positive and finite, got {dt}")

    def rhs(omega, S):
        pts = m.grid.points()
        g = np.asarray(spec.g(pts), dtype=float)
        A = np.asarray(spec.A(pts), dtype=float)
        V = np.asarray(spec.V(pts), dtype=float)
        dg = np.asarray(spec.dg(pts), dtype=float)
        dS = gradient_uniform(S, m.grid.dq)
        adv = gradient_uniform(g * (dS - A) * omega, m.grid.dq)
        diff = gradient_uniform(g * gradient_uniform(omega, m.grid.dq), m.grid.dq)
        dom = -adv - 0.5 * m.lam * diff
        R = np.sqrt(np.maximum(omega, 0.0))
        qp = -0.5 * m.lam * m.lam * (g * second_derivative_uniform(R, m.grid.dq)
                                     + dg * gradient_uniform(R, m.grid.dq)) / np.maximum(R, 1e-300)
        dSdt = -(0.5 * g * (dS - A) ** 2 + V + qp)
        return dom, dSdt

    omega = m.R ** 2
    S = m.S.copy()
    k1o, k1s = rhs(omega, S)
    k2o, k2s = rhs(omega + 0.5 * dt * k1o, S + 0.5 * dt * k1s)
    k3o, k3s = rhs(omega + 0.5 * dt * k2o, S + 0.5 * dt * k2s)
    k4o, k4s = rhs(omega + dt * k3o, S + dt * k3s)
    omega_new = omega + dt / 6.0 * (k1o + 2.0 * k2o + 2.0 * k3o + k4o)
    S_new = S + dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
    if not (np.all(np.isfinite(omega_new)) and np.all(np.isfinite(S_new))):
        raise NumericalError("single-branch step produced non-finite fields")
    norm0 = integrate(omega, m.grid)
    norm1 = float(np.trapezoid(np.abs(omega_new), dx=m.grid.dq))
    if norm1 > norm0 * NORM_GROWTH_LIMIT:
        raise NumericalError(
            f"single-branch norm grew {norm1 / norm0 - 1.0:.2%} in one step; "
            "anti-diffusive branch is blowing up as expected")
    if np.any(omega_new < 0):
        omega_new = np.maximum(omega_new, 0.0)
    return replace(m, R=np.sqrt(omega_new), S=S_new, t=m.t + dt)


def pair_density(pair: PhasePair) -> np.ndarray:
    """Equal-weight mixture density of the two branches."""
    return 0.5 * (pair.plus.R ** 2 + pair.minus.R ** 2)
